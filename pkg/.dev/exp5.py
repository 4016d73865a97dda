import torch, numpy as np, time
from scipy import stats
from tristyle.data import generate_scene_dataset, apply_style_transform, save_image
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig
from tristyle.schedule import NoiseSchedule, forward_diffuse
from tristyle.lora import LoraAdapter
from tristyle.attention import AttentionCache, CaptureHooks, InjectionPolicy, install
from tristyle.ddim import ddim_sample, ddim_invert
from tristyle.metrics import PerceptualDistance
from tristyle.seeding import generator

state1 = torch.load("/root/pkg/.dev/exp1.pt", weights_only=False)
state4 = torch.load("/root/pkg/.dev/exp4.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(state1["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(state4["dn3000"]); dn.eval()
adapter = LoraAdapter.for_denoiser(dn, rank=8); adapter.load_state_dict(state4["adapter2000"]); adapter.eval()
sched = NoiseSchedule.linear()

images, _ = generate_scene_dataset(192, seed=7)
content = images[:32]
f0 = ae.encode(content).data
perc_full = PerceptualDistance(ae, dn)

def perc_encoder_only(a, b):
    za, zb = ae.encode(a).data, ae.encode(b).data
    fa, fb = dn.encoder_features(za), dn.encoder_features(zb)
    total = 0.0
    for x, y in zip(fa, fb):
        xn = x / x.norm(dim=1, keepdim=True).clamp_min(1e-8)
        yn = y / y.norm(dim=1, keepdim=True).clamp_min(1e-8)
        total += float(((xn-yn)**2).mean())
    return total / len(fa)

def triple(beta, ts, tl, capture_adapter, seed=9):
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

for ts, tl in ((300, 600), (400, 600)):
    for cap_ad, lbl in ((None, "capture-base"), (adapter, "capture-adapted")):
        outs = {b: triple(b, ts, tl, cap_ad) for b in (0.0, 0.8)}
        for name, fn in (("full", lambda a,b: perc_full(a,b)), ("encoder", perc_encoder_only)):
            d0 = np.array([fn(outs[0.0][i:i+1], content[i:i+1]) for i in range(32)])
            d8 = np.array([fn(outs[0.8][i:i+1], content[i:i+1]) for i in range(32)])
            w = stats.wilcoxon(d8, d0, alternative='less')
            t_, tp = stats.ttest_rel(d8, d0, alternative='less')
            frac = (d8 < d0).mean()
            print(f"ts={ts} tl={tl} {lbl} {name}: b0={d0.mean():.5f} b8={d8.mean():.5f} "
                  f"frac-improved={frac:.2f} wilcoxon p={w.pvalue:.3e} t p={tp:.3e}", flush=True)
