import torch, numpy as np
from scipy import stats
from tristyle.data import generate_scene_dataset
from tristyle.autoencoder import ImageAutoencoder, AutoencoderConfig
from tristyle.denoiser import Denoiser, DenoiserConfig
from tristyle.schedule import NoiseSchedule
from tristyle.lora import LoraAdapter
from tristyle.pipeline import DiffusionStack, PipelineConfig, text_stylization, channel_shares, image_style_transfer
from tristyle.metrics import PerceptualDistance

payload = torch.load("/root/pkg/tests/_cache/stack-970c78f827b49a07.pt", weights_only=False)
ae = ImageAutoencoder(AutoencoderConfig()); ae.load_state_dict(payload["ae"]); ae.eval()
for p in ae.parameters(): p.requires_grad_(False)
dn = Denoiser(DenoiserConfig(base_channels=32)); dn.load_state_dict(payload["denoiser"]); dn.eval()
ad = LoraAdapter.for_denoiser(dn, rank=8); ad.load_state_dict(payload["adapter"]); ad.eval()
sched = NoiseSchedule.linear()
stack = DiffusionStack(ae, dn, sched, ad)
images, _ = generate_scene_dataset(192, seed=7)
content = images[:20]

def color_probe(tl, scale, prompt_red, prompt_neutral, n=20, seed=9):
    cfg = PipelineConfig(t_small=300, t_large=tl, beta=0.6, seed=seed, guidance_scale=scale)
    neutral = text_stylization(stack, content[:n], prompt_neutral, cfg, "")
    red = text_stylization(stack, content[:n], prompt_red, cfg, "")
    sn = channel_shares(neutral.output.data)[:,0].numpy(); sr = channel_shares(red.output.data)[:,0].numpy()
    w = stats.wilcoxon(sr, sn, alternative='greater')
    print(f"tl={tl} scale={scale} '{prompt_red}' vs '{prompt_neutral}': "
          f"diff {(sr-sn).mean():+.5f} frac={(sr>sn).mean():.2f} p={w.pvalue:.3e}", flush=True)

color_probe(800, 1.0, "a red house", "a house")
color_probe(800, 2.0, "a red house", "a house")
color_probe(800, 3.0, "a red house", "a house")
color_probe(1000, 2.0, "a red house", "a house")
color_probe(800, 2.0, "a red house beside a red tree", "a house beside a tree")

# also beta=1 module example at (300,600), capture-base, n=32
perc = PerceptualDistance(ae, dn)
dv = {}
for beta in (0.0, 1.0):
    cfg = PipelineConfig(t_small=300, t_large=600, beta=beta, seed=9)
    res = image_style_transfer(stack, images[:32], cfg, "")
    dv[beta] = np.array([perc(res.output.data[i:i+1], images[i:i+1]) for i in range(32)])
print(f"beta1: b0={dv[0.0].mean():.5f} b1={dv[1.0].mean():.5f} frac={(dv[1.0]<dv[0.0]).mean():.2f}", flush=True)
