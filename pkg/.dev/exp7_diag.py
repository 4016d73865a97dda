import torch, numpy as np, math
from tristyle.data import generate_scene_dataset
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig
from tristyle.schedule import NoiseSchedule, forward_diffuse
from tristyle.lora import LoraAdapter
from tristyle.attention import AttentionCache, CaptureHooks
from tristyle.seeding import generator

sched = NoiseSchedule.linear()
images, _ = generate_scene_dataset(8, seed=7)

def load_fix():
    payload = torch.load("/root/pkg/tests/_cache/stack-970c78f827b49a07.pt", weights_only=False)
    ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(payload["ae"]); ae.eval()
    dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(payload["denoiser"]); dn.eval()
    ad = LoraAdapter.for_denoiser(dn, rank=8); ad.load_state_dict(payload["adapter"]); ad.eval()
    return ae, dn, ad

def load_exp4():
    s1 = torch.load("/root/pkg/.dev/exp1.pt", weights_only=False)
    s4 = torch.load("/root/pkg/.dev/exp4.pt", weights_only=False)
    ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(s1["ae"]); ae.eval()
    dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(s4["dn3000"]); dn.eval()
    ad = LoraAdapter.for_denoiser(dn, rank=8); ad.load_state_dict(s4["adapter2000"]); ad.eval()
    return ae, dn, ad

for label, loader in (("conftest", load_fix), ("exp4", load_exp4)):
    ae, dn, ad = loader()
    f0 = ae.encode(images).data
    t = 300
    noise = torch.randn(f0.shape, generator=generator(9, "noise/main"))
    x_t = forward_diffuse(sched, f0, t, noise)
    cond = dn.embed_prompt("")
    cache = AttentionCache("d")
    dn.predict_noise(x_t, t, cond, hooks=CaptureHooks(cache), adapter=ad)
    print(f"== {label}")
    for layer in dn.decoder_attention_layers:
        e = cache.get(layer, t)
        q, k, v = e["q"], e["k"], e["v"]
        b, n, c = q.shape
        heads = dn.config.num_heads
        d = c // heads
        qs = q.reshape(b, n, heads, d).permute(0,2,1,3)
        ks = k.reshape(b, n, heads, d).permute(0,2,1,3)
        attn = torch.softmax(qs @ ks.transpose(-1,-2) / math.sqrt(d), dim=-1)
        ent = -(attn * attn.clamp_min(1e-12).log()).sum(-1).mean()
        max_ent = math.log(n)
        # query sensitivity: replace q with a shuffled-batch q
        perm = torch.randperm(b, generator=torch.Generator().manual_seed(0))
        attn_p = torch.softmax(qs[perm] @ ks.transpose(-1,-2) / math.sqrt(d), dim=-1)
        vs = v.reshape(b, n, heads, d).permute(0,2,1,3)
        out, out_p = attn @ vs, attn_p @ vs
        sens = (out - out_p).norm() / out.norm()
        print(f"  {layer}: tokens={n} entropy={ent:.3f}/{max_ent:.3f} q-sensitivity={sens:.4f}")
