import torch, numpy as np
from scipy import stats
from tristyle.data import generate_scene_dataset
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig
from tristyle.schedule import NoiseSchedule
from tristyle.lora import LoraAdapter
from tristyle.pipeline import DiffusionStack, PipelineConfig, text_stylization, channel_shares

payload = torch.load("/root/pkg/tests/_cache/stack-970c78f827b49a07.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(payload["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(payload["denoiser"]); dn.eval()
ad = LoraAdapter.for_denoiser(dn, rank=8); ad.load_state_dict(payload["adapter"]); ad.eval()
stack = DiffusionStack(ae, dn, NoiseSchedule.linear(), ad)
images, _ = generate_scene_dataset(192, seed=7)
content = images[:20]

NEUTRAL, RED = "a house beside a tree", "a red house beside a red tree"
for scale in (1.0, 2.0):
    for seed in (9, 10):
        cfg = PipelineConfig(t_small=300, t_large=800, seed=seed, guidance_scale=scale)
        sn = channel_shares(text_stylization(stack, content, NEUTRAL, cfg, "").output.data)[:,0].numpy()
        sr = channel_shares(text_stylization(stack, content, RED, cfg, "").output.data)[:,0].numpy()
        w = stats.wilcoxon(sr, sn, alternative='greater')
        print(f"scale={scale} seed={seed}: diff {(sr-sn).mean():+.5f} frac={(sr>sn).mean():.2f} p={w.pvalue:.3e}", flush=True)
