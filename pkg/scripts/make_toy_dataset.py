#!/usr/bin/env python3
"""Generate the synthetic scene dataset plus style-transformed reference sets.

Writes three directories under --out:
  train/   captioned scenes for autoencoder/denoiser training
  content/ held-out scenes to be style-transferred
  style/   the same held-out scenes with the fixed style transform applied
and a single style.png reference image for stage-1 fine-tuning.
"""

import argparse
from pathlib import Path

from tristyle.data import (
    apply_style_transform,
    generate_scene_dataset,
    save_image,
    write_dataset,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="toy_data")
    parser.add_argument("--n-train", type=int, default=192)
    parser.add_argument("--n-content", type=int, default=24)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = Path(args.out)
    train_images, train_captions = generate_scene_dataset(args.n_train, seed=args.seed)
    write_dataset(out / "train", train_images, train_captions)

    content_images, content_captions = generate_scene_dataset(
        args.n_content, seed=args.seed + 1
    )
    write_dataset(out / "content", content_images, content_captions)
    write_dataset(
        out / "style", apply_style_transform(content_images), content_captions
    )
    save_image(apply_style_transform(train_images[0]), out / "style.png")
    print(f"dataset written under {out}/ (train={args.n_train}, content={args.n_content})")


if __name__ == "__main__":
    main()
