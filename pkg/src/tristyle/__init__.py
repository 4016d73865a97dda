"""Desk-scale style-transfer lab.

Trains a toy latent diffusion stack, fine-tunes style LoRA adapters with
human-feedback curation, and runs a training-free triple diffusion process
for image-driven style transfer, text-driven stylization and color editing.
"""

__version__ = "0.1.0"
