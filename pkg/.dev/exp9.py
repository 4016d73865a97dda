import torch, numpy as np
from scipy import stats
from tristyle.data import generate_scene_dataset, apply_style_transform, save_image
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig, train_denoiser, encode_dataset
from tristyle.schedule import NoiseSchedule, forward_diffuse
from tristyle.lora import LoraAdapter, StageDataset, finetune_stage
from tristyle.attention import AttentionCache, CaptureHooks, InjectionPolicy, install
from tristyle.ddim import ddim_sample, ddim_invert
from tristyle.metrics import PerceptualDistance
from tristyle.seeding import generator
from tristyle.text import encode_prompt

sched = NoiseSchedule.linear()
images, captions = generate_scene_dataset(192, seed=7)
content = images[:32]

def triple(dn, ae, adapter, beta, ts, tl, capture_adapter, seed=9):
    f0 = ae.encode(content).data
    cond = dn.embed_prompt("")
    layers = dn.decoder_attention_layers
    pol = InjectionPolicy(target_layers=layers, beta=beta)
    noise_l = torch.randn(f0.shape, generator=generator(seed, "noise/style"))
    f_l = forward_diffuse(sched, f0, tl, noise_l)
    style = AttentionCache("style")
    ddim_sample(dn, sched, f_l, tl, cond, hooks=CaptureHooks(style, layers), adapter=adapter)
    f_i, _ = ddim_invert(dn, sched, f0, cond, adapter=None)
    inv = AttentionCache("inv")
    ddim_sample(dn, sched, f_i.data, sched.T, cond, hooks=CaptureHooks(inv, layers), adapter=capture_adapter)
    noise_s = torch.randn(f0.shape, generator=generator(seed, "noise/main"))
    f_s = forward_diffuse(sched, f0, ts, noise_s)
    hooks = install(pol, {"style": style, "inversion": inv})
    z, _ = ddim_sample(dn, sched, f_s, ts, cond, hooks=hooks, adapter=adapter)
    return ae.decode(z).data

def betacmp(label, dn, ae, adapter, ts, tl, cap_adapted):
    perc = PerceptualDistance(ae, dn)
    cap = adapter if cap_adapted else None
    out = {b: triple(dn, ae, adapter, b, ts, tl, cap) for b in (0.0, 0.8)}
    d0 = np.array([perc(out[0.0][i:i+1], content[i:i+1]) for i in range(32)])
    d8 = np.array([perc(out[0.8][i:i+1], content[i:i+1]) for i in range(32)])
    w = stats.wilcoxon(d8, d0, alternative='less')
    print(f"{label} ts={ts} tl={tl} cap={'adapted' if cap_adapted else 'base'}: "
          f"b0={d0.mean():.5f} b8={d8.mean():.5f} frac={(d8<d0).mean():.2f} p={w.pvalue:.3e}", flush=True)

# conftest model, capture-base
payload = torch.load("/root/pkg/tests/_cache/stack-970c78f827b49a07.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(payload["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(payload["denoiser"]); dn.eval()
ad = LoraAdapter.for_denoiser(dn, rank=8); ad.load_state_dict(payload["adapter"]); ad.eval()
betacmp("seed2-h4", dn, ae, ad, 300, 600, False)
betacmp("seed2-h4", dn, ae, ad, 300, 800, False)

# num_heads=2 retrain (same AE), seed 2
latents = encode_dataset(ae, images)
cond_ids = torch.stack([encode_prompt(c) for c in captions])
torch.manual_seed(2)
dn2 = Denoiser(DenoiserConfig(base_channels=32, num_heads=2))
train_denoiser(dn2, latents, cond_ids, sched, steps=3000, batch_size=12, lr=2e-3, seed=2)
save_image(apply_style_transform(images[100]), "/tmp/style.png")
ad2 = LoraAdapter.for_denoiser(dn2, rank=8, seed=11)
ds = StageDataset(stage=1, image_paths=("/tmp/style.png",), captions=("a house beside a tree",), quota=5)
finetune_stage(dn2, ae, ad2, ds, sched, steps=2000, batch_size=4, lr=2e-3, seed=11)
torch.save({"dn2": dn2.state_dict(), "ad2": ad2.state_dict()}, "/root/pkg/.dev/exp9_h2.pt")
print("h2 model trained", flush=True)
betacmp("seed2-h2", dn2, ae, ad2, 300, 600, True)
betacmp("seed2-h2", dn2, ae, ad2, 300, 600, False)
betacmp("seed2-h2", dn2, ae, ad2, 300, 800, True)
