import time, torch, numpy as np
from scipy import stats
from tristyle.data import generate_scene_dataset, apply_style_transform, save_image
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig, train_denoiser, encode_dataset
from tristyle.schedule import NoiseSchedule
from tristyle.lora import LoraAdapter, StageDataset, finetune_stage
from tristyle.pipeline import DiffusionStack, PipelineConfig, image_style_transfer, text_stylization, ddim_img2img, channel_shares
from tristyle.metrics import PerceptualDistance, BottleneckEmbedder, frechet_distance
from tristyle.text import encode_prompt
from tristyle.ddim import ddim_sample, ddim_invert
from tristyle.seeding import generator

state = torch.load("/root/pkg/.dev/exp1.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(state["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
sched = NoiseSchedule.linear()
images, captions = generate_scene_dataset(192, seed=7)
latents = encode_dataset(ae, images)
cond_ids = torch.stack([encode_prompt(c) for c in captions])

# longer base training
dn = Denoiser(DenoiserConfig(base_channels=32))
t0=time.time()
tr = train_denoiser(dn, latents, cond_ids, sched, steps=3000, batch_size=12, lr=2e-3, seed=2)
print(f"denoiser 3000 steps: {time.time()-t0:.0f}s loss {np.mean(tr[-30:]):.4f}", flush=True)

# color conditioning probe
for scale in (1.0, 2.0):
    outs = {}
    for prompt in ("a red house", "a green house"):
        cond = dn.embed_prompt(prompt)
        noise = torch.randn((12,)+ae.latent_shape, generator=generator(5, "probe"))
        z, _ = ddim_sample(dn, sched, noise, sched.T, cond, num_steps=50, guidance_scale=scale)
        outs[prompt] = channel_shares(ae.decode(z).data)
    red = outs["a red house"][:,0].mean() - outs["a green house"][:,0].mean()
    print(f"txt2img scale={scale}: red delta {red:+.4f}", flush=True)

# roundtrip check
x0 = latents[:20]
cond = dn.embed_prompt("")
fi, _ = ddim_invert(dn, sched, x0, cond, num_steps=50)
rec, _ = ddim_sample(dn, sched, fi, sched.T, cond, num_steps=50)
print(f"roundtrip ratio: {(rec.data-x0).abs().mean()/x0.std():.3f}", flush=True)

# strong LoRA
save_image(apply_style_transform(images[100]), "/tmp/style.png")
adapter = LoraAdapter.for_denoiser(dn, rank=8, seed=11)
ds = StageDataset(stage=1, image_paths=("/tmp/style.png",), captions=("a house beside a tree",), quota=5)
t0=time.time()
tr = finetune_stage(dn, ae, adapter, ds, sched, steps=2000, batch_size=4, lr=2e-3, seed=11)
print(f"lora 2000 steps lr2e-3: {time.time()-t0:.0f}s loss {np.mean(tr[:20]):.4f}->{np.mean(tr[-20:]):.4f}", flush=True)

stack = DiffusionStack(ae, dn, sched, adapter)
content = images[:20]
perc = PerceptualDistance(ae, dn)
emb = BottleneckEmbedder(ae)
style_set = apply_style_transform(generate_scene_dataset(24, seed=99)[0])
e_style = emb.embed_images(style_set)

def content_dists(out):
    return np.array([perc(out[i:i+1], content[i:i+1]) for i in range(20)])

for (ts, tl) in ((300, 600), (600, 800)):
    base = ddim_img2img(stack, content, ts, "", seed=9, adapter=adapter)
    print(f"ts={ts} styled img2img content dist {content_dists(base.data).mean():.5f}", flush=True)
    dvals = {}
    for beta in (0.0, 0.8, 1.0):
        cfg = PipelineConfig(t_small=ts, t_large=tl, beta=beta, seed=9)
        res = image_style_transfer(stack, content, cfg, "")
        dvals[beta] = content_dists(res.output.data)
        fid = frechet_distance(emb.embed_images(res.output.data), e_style)
        print(f"  ts={ts},tl={tl} beta={beta}: content {dvals[beta].mean():.5f} styleFID {fid:.2f}", flush=True)
    for b in (0.8, 1.0):
        w = stats.wilcoxon(dvals[b], dvals[0.0], alternative='less')
        t_, tp = stats.ttest_rel(dvals[b], dvals[0.0], alternative='less')
        print(f"  beta {b} < 0: wilcoxon p={w.pvalue:.3e} t p={tp:.3e}", flush=True)

fid_u = frechet_distance(emb.embed_images(content), e_style)
print(f"untransferred FID {fid_u:.2f}", flush=True)

# color edit
cfg = PipelineConfig(t_small=300, t_large=800, beta=0.6, seed=9)
neutral = text_stylization(stack, content, "a house", cfg, "")
red = text_stylization(stack, content, "a red house", cfg, "")
sn = channel_shares(neutral.output.data)[:,0]; sr = channel_shares(red.output.data)[:,0]
w = stats.wilcoxon(sr.numpy(), sn.numpy(), alternative='greater')
print(f"coloredit tl=800: diff {(sr-sn).mean():+.5f} p={w.pvalue:.3e}", flush=True)
torch.save({"dn3000": dn.state_dict(), "adapter2000": adapter.state_dict()}, "/root/pkg/.dev/exp4.pt")
