import time, torch
from tristyle.data import generate_scene_dataset
from tristyle.autoencoder import train_autoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig, train_denoiser, encode_dataset
from tristyle.schedule import NoiseSchedule
from tristyle.ddim import ddim_invert, ddim_sample
from tristyle.text import encode_prompt

t0 = time.time()
images, captions = generate_scene_dataset(192, seed=7)
print(f"dataset: {time.time()-t0:.1f}s", flush=True)

t0 = time.time()
ae, trace, eps_rec = train_autoencoder(images, steps=600, batch_size=16, lr=2e-3, seed=1)
print(f"AE train: {time.time()-t0:.1f}s eps_rec={eps_rec:.4f} loss {trace[0]:.4f}->{sum(trace[-50:])/50:.5f}", flush=True)

latents = encode_dataset(ae, images)
print("latent std:", latents.std().item(), "mean:", latents.mean().item(), flush=True)

sched = NoiseSchedule.linear()
model = Denoiser(DenoiserConfig(base_channels=32))
cond_ids = torch.stack([encode_prompt(c) for c in captions])
t0 = time.time()
tr = train_denoiser(model, latents, cond_ids, sched, steps=1200, batch_size=12, lr=2e-3, seed=2)
print(f"denoiser train: {time.time()-t0:.1f}s loss {sum(tr[:30])/30:.4f}->{sum(tr[-30:])/30:.4f}", flush=True)

# round trip on 20 images, batched
t0 = time.time()
x0 = latents[:20]
cond = model.embed_prompt("")
for steps in (50, 10):
    fi, _ = ddim_invert(model, sched, x0, cond, num_steps=steps)
    rec, _ = ddim_sample(model, sched, fi, sched.T, cond, num_steps=steps)
    mae = (rec.data - x0).abs().mean().item()
    print(f"steps={steps}: MAE={mae:.4f}  latent_std={x0.std().item():.4f}  ratio={mae/x0.std().item():.3f}", flush=True)
print(f"roundtrip: {time.time()-t0:.1f}s", flush=True)
torch.save({"ae": ae.state_dict(), "dn": model.state_dict()}, "/root/pkg/.dev/exp1.pt")
