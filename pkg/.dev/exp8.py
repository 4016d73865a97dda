import torch, numpy as np
from scipy import stats
from tristyle.data import generate_scene_dataset
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig
from tristyle.schedule import NoiseSchedule
from tristyle.lora import LoraAdapter
from tristyle.pipeline import DiffusionStack, PipelineConfig, image_style_transfer
from tristyle.metrics import PerceptualDistance

payload = torch.load("/root/pkg/tests/_cache/stack-970c78f827b49a07.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(payload["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(payload["denoiser"]); dn.eval()
adapter = LoraAdapter.for_denoiser(dn, rank=8); adapter.load_state_dict(payload["adapter"]); adapter.eval()
sched = NoiseSchedule.linear()

images, _ = generate_scene_dataset(192, seed=7)
content = images[:32]
perc = PerceptualDistance(ae, dn)

def betacmp(ts, tl, scale, n=32, seed=9):
    adapter.scale = scale
    stack = DiffusionStack(ae, dn, sched, adapter)
    dvals = {}
    for beta in (0.0, 0.8):
        cfg = PipelineConfig(t_small=ts, t_large=tl, beta=beta, seed=seed)
        res = image_style_transfer(stack, content[:n], cfg, "")
        dvals[beta] = np.array([perc(res.output.data[i:i+1], content[i:i+1]) for i in range(n)])
    w = stats.wilcoxon(dvals[0.8], dvals[0.0], alternative='less')
    frac = (dvals[0.8] < dvals[0.0]).mean()
    print(f"scale={scale} ts={ts} tl={tl}: b0={dvals[0.0].mean():.5f} b8={dvals[0.8].mean():.5f} "
          f"frac={frac:.2f} p={w.pvalue:.3e}", flush=True)

betacmp(300, 600, 1.5)
betacmp(300, 600, 2.0)
betacmp(300, 800, 2.0)
