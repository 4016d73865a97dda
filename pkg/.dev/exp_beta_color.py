import time, torch, numpy as np
from scipy import stats
from tristyle.data import generate_scene_dataset, apply_style_transform, save_image
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig
from tristyle.schedule import NoiseSchedule
from tristyle.lora import LoraAdapter, StageDataset, finetune_stage
from tristyle.pipeline import DiffusionStack, PipelineConfig, image_style_transfer, text_stylization, channel_shares
from tristyle.metrics import PerceptualDistance
from tristyle.ddim import ddim_sample
from tristyle.seeding import generator

state = torch.load("/root/pkg/.dev/exp1.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(state["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(state["dn"]); dn.eval()
sched = NoiseSchedule.linear()

images, captions = generate_scene_dataset(192, seed=7)
save_image(apply_style_transform(images[100]), "/tmp/style.png")
adapter = LoraAdapter.for_denoiser(dn, rank=8, seed=11)
ds = StageDataset(stage=1, image_paths=("/tmp/style.png",), captions=("a house beside a tree",), quota=5)
tr = finetune_stage(dn, ae, adapter, ds, sched, steps=800, batch_size=4, lr=1e-3, seed=11)
print(f"lora 800 steps: loss {np.mean(tr[:20]):.4f}->{np.mean(tr[-20:]):.4f}", flush=True)

stack = DiffusionStack(ae, dn, sched, adapter)
content = images[:20]
perc = PerceptualDistance(ae, dn)

# 1) base model color conditioning from pure noise
for scale in (1.0, 3.0):
    outs = {}
    for prompt in ("a red house", "a green house"):
        cond = dn.embed_prompt(prompt)
        noise = torch.randn((12,)+ae.latent_shape, generator=generator(5, "probe"))
        z, _ = ddim_sample(dn, sched, noise, sched.T, cond, num_steps=50, guidance_scale=scale)
        outs[prompt] = channel_shares(ae.decode(z).data)
    red = outs["a red house"][:,0].mean() - outs["a green house"][:,0].mean()
    grn = outs["a green house"][:,1].mean() - outs["a red house"][:,1].mean()
    print(f"txt2img scale={scale}: red-share delta {red:+.4f}, green-share delta {grn:+.4f}", flush=True)

# 2) beta sweep at higher thresholds
for (ts, tl) in ((600, 800),):
    dvals = {}
    for beta in (0.0, 0.8, 1.0):
        cfg = PipelineConfig(t_small=ts, t_large=tl, beta=beta, seed=9)
        res = image_style_transfer(stack, content, cfg, "")
        d = np.array([perc(res.output.data[i:i+1], content[i:i+1]) for i in range(20)])
        dvals[beta] = d
        print(f"ts={ts},tl={tl} beta={beta}: content dist {d.mean():.5f}", flush=True)
    for b in (0.8, 1.0):
        w = stats.wilcoxon(dvals[b], dvals[0.0], alternative='less')
        print(f"  beta {b} < 0: wilcoxon p={w.pvalue:.3e}", flush=True)

# 3) color edit with style-pass guidance 3
for scale in (1.0, 3.0):
    cfg = PipelineConfig(t_small=300, t_large=800, beta=0.6, seed=9, guidance_scale=scale)
    neutral = text_stylization(stack, content, "a house", cfg, "")
    red = text_stylization(stack, content, "a red house", cfg, "")
    sn = channel_shares(neutral.output.data)[:,0]; sr = channel_shares(red.output.data)[:,0]
    w = stats.wilcoxon(sr.numpy(), sn.numpy(), alternative='greater')
    print(f"coloredit scale={scale} tl=800: diff {(sr-sn).mean():+.4f} p={w.pvalue:.3e}", flush=True)
