import time, torch
from tristyle.data import generate_scene_dataset, apply_style_transform, save_image
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig, encode_dataset
from tristyle.schedule import NoiseSchedule
from tristyle.lora import LoraAdapter, StageDataset, finetune_stage
from tristyle.pipeline import DiffusionStack, PipelineConfig, image_style_transfer, text_stylization, ddim_img2img, channel_shares
from tristyle.metrics import PerceptualDistance, BottleneckEmbedder
import numpy as np

state = torch.load("/root/pkg/.dev/exp1.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(state["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(state["dn"]); dn.eval()
sched = NoiseSchedule.linear()

images, captions = generate_scene_dataset(192, seed=7)
style_img = apply_style_transform(images[100])
save_image(style_img, "/tmp/style.png")

# stage-1 LoRA on the style image
t0=time.time()
adapter = LoraAdapter.for_denoiser(dn, rank=8, seed=11)
ds = StageDataset(stage=1, image_paths=("/tmp/style.png",), captions=("a house beside a tree",), quota=5)
tr = finetune_stage(dn, ae, adapter, ds, sched, steps=400, batch_size=4, lr=1e-3, seed=11)
print(f"lora: {time.time()-t0:.0f}s loss {np.mean(tr[:20]):.4f}->{np.mean(tr[-20:]):.4f}", flush=True)

stack = DiffusionStack(ae, dn, sched, adapter)
zero_stack = DiffusionStack(ae, dn, sched, LoraAdapter.for_denoiser(dn, seed=1))
content = images[:20]
caption = ""
perc = PerceptualDistance(ae, dn)

# 1) reduction law bit-identity
from tristyle.attention import InjectionPolicy
pol_off = InjectionPolicy(target_layers=dn.decoder_attention_layers, swap_kv=False, fuse_query=False)
cfg = PipelineConfig(t_small=300, t_large=600, seed=9, policy=pol_off)
r = image_style_transfer(zero_stack, content[:2], cfg, caption)
base = ddim_img2img(zero_stack, content[:2], 300, caption, seed=9)
print("reduction bit-identical:", torch.equal(r.output.data, base.data), flush=True)

# 2) beta trend: content distance at beta=0.8 vs 0.0
t0=time.time()
outs = {}
for beta in (0.0, 0.8):
    cfg = PipelineConfig(t_small=300, t_large=600, beta=beta, seed=9)
    res = image_style_transfer(stack, content, cfg, caption)
    d = [perc(res.output.data[i:i+1], content[i:i+1]) for i in range(20)]
    outs[beta] = np.array(d)
    print(f"beta={beta}: mean content dist {np.mean(d):.5f}", flush=True)
from scipy import stats
tstat, p = stats.ttest_rel(outs[0.8], outs[0.0], alternative='less')
w = stats.wilcoxon(outs[0.8], outs[0.0], alternative='less')
print(f"beta 0.8 < 0.0: t-p={p:.2e} wilcoxon-p={w.pvalue:.2e} ({time.time()-t0:.0f}s)", flush=True)

# 3) t_small trend (content dist non-decreasing in t_small)
t0=time.time()
ds_by_t = {}
for ts in (200, 400, 600):
    cfg = PipelineConfig(t_small=ts, t_large=800, beta=0.6, seed=9)
    res = image_style_transfer(stack, content, cfg, caption)
    d = [perc(res.output.data[i:i+1], content[i:i+1]) for i in range(20)]
    ds_by_t[ts] = np.array(d)
    print(f"t_small={ts}: mean content dist {np.mean(d):.5f}", flush=True)
xs = np.repeat([200,400,600], 20); ys = np.concatenate([ds_by_t[t] for t in (200,400,600)])
rho, p = stats.spearmanr(xs, ys, alternative='greater')
print(f"spearman rho={rho:.3f} p={p:.2e} ({time.time()-t0:.0f}s)", flush=True)

# 4) t_large trend: style distance non-increasing in t_large
emb = BottleneckEmbedder(ae)
style_set = apply_style_transform(generate_scene_dataset(24, seed=99)[0])
centroid = emb.embed_images(style_set).mean(axis=0)
for tl in (400, 600, 800):
    cfg = PipelineConfig(t_small=200, t_large=tl, beta=0.6, seed=9)
    res = image_style_transfer(stack, content, cfg, caption)
    e = emb.embed_images(res.output.data)
    print(f"t_large={tl}: style dist {np.linalg.norm(e-centroid,axis=1).mean():.4f}", flush=True)

# 5) color edit: red prompt
t0=time.time()
cfg = PipelineConfig(t_small=300, t_large=600, beta=0.6, seed=9)
neutral = text_stylization(stack, content, "a house", cfg, caption)
red = text_stylization(stack, content, "a red house", cfg, caption)
sn = channel_shares(neutral.output.data)[:,0]; sr = channel_shares(red.output.data)[:,0]
print(f"red share neutral {sn.mean():.4f} red {sr.mean():.4f} diff {(sr-sn).mean():+.4f} ({time.time()-t0:.0f}s)")
w = stats.wilcoxon(sr.numpy(), sn.numpy(), alternative='greater')
print(f"red>neutral wilcoxon p={w.pvalue:.2e}", flush=True)

# 6) FID: transferred vs untransferred against style set
e_style = emb.embed_images(style_set)
from tristyle.metrics import frechet_distance
cfg = PipelineConfig(t_small=300, t_large=600, beta=0.6, seed=9)
res = image_style_transfer(stack, content, cfg, caption)
fid_t = frechet_distance(emb.embed_images(res.output.data), e_style)
fid_u = frechet_distance(emb.embed_images(content), e_style)
print(f"FID transferred {fid_t:.3f} vs untransferred {fid_u:.3f} -> {'PASS' if fid_t < fid_u else 'FAIL'}", flush=True)
