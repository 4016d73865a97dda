"""Dump side-by-side grids: content | img2img | beta=0 | beta=0.8 | beta=1 | style img."""
import torch, numpy as np
from tristyle.data import generate_scene_dataset, apply_style_transform, save_image
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig
from tristyle.schedule import NoiseSchedule
from tristyle.lora import LoraAdapter
from tristyle.pipeline import DiffusionStack, PipelineConfig, image_style_transfer, ddim_img2img
from PIL import Image

payload = torch.load("/root/pkg/tests/_cache/stack-970c78f827b49a07.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(payload["ae"]); ae.eval()
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(payload["denoiser"]); dn.eval()
ad = LoraAdapter.for_denoiser(dn, rank=8); ad.load_state_dict(payload["adapter"]); ad.eval()
sched = NoiseSchedule.linear()
stack = DiffusionStack(ae, dn, sched, ad)

images, _ = generate_scene_dataset(192, seed=7)
content = images[:6]
style_img = apply_style_transform(images[100])

cols = [content]
cols.append(ddim_img2img(stack, content, 300, "", seed=9, adapter=ad).data)
for beta in (0.0, 0.8, 1.0):
    cfg = PipelineConfig(t_small=300, t_large=600, beta=beta, seed=9)
    cols.append(image_style_transfer(stack, content, cfg, "").output.data)
cols.append(style_img.unsqueeze(0).expand(6, -1, -1, -1))

rows = []
for i in range(6):
    rows.append(torch.cat([c[i] for c in cols], dim=2))
grid = torch.cat(rows, dim=1)
save_image(grid, "/root/pkg/.dev/beta_grid.png")
print("saved .dev/beta_grid.png  cols: content | img2img | b0 | b0.8 | b1 | style")
