"""Command-line entry point tying the whole workflow together.

Subcommands: train-ae, train-denoiser, caption, finetune, generate,
serve, transfer, stylize, coloredit, sweep, evaluate.

Config precedence is flags > environment (TRISTYLE_<NAME>) > config file
> built-in defaults.  Every run writes a directory with exactly one
manifest; failures emit machine-readable error JSON and exit 3 for
validation errors, 4 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import torch

from . import __version__
from .errors import NumericalFailureError, TristyleError
from .manifest import RunManifest, hash_inputs

ENV_PREFIX = "TRISTYLE_"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


def _resolve(args: argparse.Namespace, defaults: dict, config_file: str | None) -> dict:
    """Merge flag/env/file/default values; flags win, then env, file, defaults."""
    file_cfg = {}
    if config_file:
        file_cfg = json.loads(Path(config_file).read_text())
    resolved = {}
    for key, default in defaults.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
            continue
        env_key = ENV_PREFIX + key.upper()
        if env_key in os.environ:
            raw = os.environ[env_key]
            resolved[key] = type(default)(raw) if default is not None and not isinstance(default, bool) else raw
            if isinstance(default, bool):
                resolved[key] = raw.lower() in ("1", "true", "yes")
            continue
        if key in file_cfg:
            resolved[key] = file_cfg[key]
            continue
        resolved[key] = default
    return resolved


def _run_dir(resolved: dict, command: str) -> Path:
    run_dir = resolved.get("out")
    if run_dir is None:
        run_dir = f"runs/{command}-{time.strftime('%Y%m%d-%H%M%S')}"
        resolved["out"] = run_dir
    return Path(run_dir)


def _load_stack(resolved: dict, need_adapter: bool = False):
    from .autoencoder import ImageAutoencoder
    from .denoiser import Denoiser
    from .errors import StateError
    from .lora import LoraAdapter
    from .pipeline import DiffusionStack
    from .schedule import NoiseSchedule

    schedule = NoiseSchedule.linear(T=resolved.get("t_steps", 1000))
    ae = ImageAutoencoder.load(resolved["ae"])
    denoiser = Denoiser.load(resolved["denoiser"])
    adapter = None
    if resolved.get("adapter"):
        if not Path(resolved["adapter"]).exists():
            raise StateError(f"LoRA adapter not found: {resolved['adapter']}")
        adapter = LoraAdapter.load(resolved["adapter"])
    elif need_adapter:
        raise StateError("this command requires --adapter (fine-tuned LoRA weights)")
    return DiffusionStack(autoencoder=ae, denoiser=denoiser, schedule=schedule, adapter=adapter)


# -- subcommand implementations -------------------------------------------


def cmd_train_ae(args) -> int:
    from .autoencoder import AutoencoderConfig, train_autoencoder
    from .data import load_dataset

    defaults = {"data": None, "out": None, "steps": 600, "batch_size": 16,
                "lr": 2e-3, "seed": 0, "latent_channels": 4, "base_channels": 32}
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, "train-ae")
    images, _, _ = load_dataset(resolved["data"])
    cfg = AutoencoderConfig(
        latent_channels=resolved["latent_channels"],
        base_channels=resolved["base_channels"],
        image_size=images.shape[-1],
    )
    model, trace, eps_rec = train_autoencoder(
        images, cfg, steps=resolved["steps"], batch_size=resolved["batch_size"],
        lr=resolved["lr"], seed=resolved["seed"],
    )
    ckpt = run_dir / "autoencoder.pt"
    model.save(ckpt, extra_manifest={"eps_rec": eps_rec, "seed": resolved["seed"]})
    (run_dir / "loss_trace.json").write_text(json.dumps(trace))
    RunManifest(
        command="train-ae", config=resolved,
        seeds={"root": resolved["seed"]},
        input_hashes=hash_inputs([resolved["data"]]),
        artifacts=[str(ckpt)],
        timings={"eps_rec": eps_rec},
    ).write(run_dir)
    print(f"autoencoder trained: eps_rec={eps_rec:.4f} -> {ckpt}")
    return EXIT_OK


def cmd_train_denoiser(args) -> int:
    from .autoencoder import ImageAutoencoder
    from .data import load_dataset
    from .denoiser import Denoiser, DenoiserConfig, encode_dataset, train_denoiser
    from .schedule import NoiseSchedule
    from .text import encode_prompt

    defaults = {"data": None, "ae": None, "out": None, "steps": 1200, "batch_size": 12,
                "lr": 2e-3, "seed": 0, "t_steps": 1000, "base_channels": 32}
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, "train-denoiser")
    images, captions, _ = load_dataset(resolved["data"])
    ae = ImageAutoencoder.load(resolved["ae"])
    latents = encode_dataset(ae, images)
    cond_ids = torch.stack([encode_prompt(c) for c in captions])
    schedule = NoiseSchedule.linear(T=resolved["t_steps"])
    torch.manual_seed(resolved["seed"])
    model = Denoiser(DenoiserConfig(
        base_channels=resolved["base_channels"],
        latent_size=ae.config.latent_size,
        in_channels=ae.config.latent_channels,
    ))
    trace = train_denoiser(
        model, latents, cond_ids, schedule, steps=resolved["steps"],
        batch_size=resolved["batch_size"], lr=resolved["lr"], seed=resolved["seed"],
    )
    ckpt = run_dir / "denoiser.pt"
    model.save(ckpt, extra_manifest={"schedule_T": schedule.T, "seed": resolved["seed"]})
    (run_dir / "loss_trace.json").write_text(json.dumps(trace))
    RunManifest(
        command="train-denoiser", config=resolved,
        seeds={"root": resolved["seed"]},
        input_hashes=hash_inputs([resolved["data"], resolved["ae"]]),
        artifacts=[str(ckpt)],
        timings={"final_loss": trace[-1] if trace else None},
    ).write(run_dir)
    print(f"denoiser trained: final loss {trace[-1] if trace else float('nan'):.4f} -> {ckpt}")
    return EXIT_OK


def cmd_caption(args) -> int:
    from .captions import (
        HttpCaptioner, HttpLlm, MockCaptioner, PairStore, RuleLlm,
        StyleLexicon, build_training_pair,
    )

    defaults = {"images": None, "out": None, "store": None,
                "captioner": "mock", "llm": "rule", "lexicon": None}
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, "caption")
    lexicon = StyleLexicon.load(resolved["lexicon"])
    captioner = (
        MockCaptioner() if resolved["captioner"] == "mock"
        else HttpCaptioner(resolved["captioner"])
    )
    llm = RuleLlm(lexicon) if resolved["llm"] == "rule" else HttpLlm(resolved["llm"])
    store_path = resolved["store"] or (run_dir / "caption_pairs.jsonl")
    store = PairStore(store_path)
    images = Path(resolved["images"])
    files = sorted(images.glob("*.png")) if images.is_dir() else [images]
    pairs = [build_training_pair(f, captioner, llm, store, lexicon) for f in files]
    RunManifest(
        command="caption", config=resolved,
        input_hashes=hash_inputs(files),
        artifacts=[str(store_path)],
        timings={"pairs": len(pairs)},
    ).write(run_dir)
    for pair in pairs:
        print(f"{Path(pair.image_ref).name}: '{pair.t_clip}' -> '{pair.t_wo_style}'")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .lora import LoraAdapter, StageDataset, finetune_stage

    defaults = {"stage": 1, "ae": None, "denoiser": None, "adapter": None, "out": None,
                "dataset": None, "reference": None, "caption": None, "quota": 50,
                "steps": None, "batch_size": 4, "lr": 1e-3, "seed": 0, "rank": 8,
                "scale": 1.0, "t_steps": 1000, "resume": True}
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, "finetune")
    stage = resolved["stage"]
    if resolved["steps"] is None:
        resolved["steps"] = {1: 1000, 2: 800, 3: 800}[stage]
    stack = _load_stack(resolved, need_adapter=False)

    if resolved["dataset"]:
        dataset = StageDataset.from_manifest(json.loads(Path(resolved["dataset"]).read_text()))
        if dataset.stage != stage:
            raise TristyleError(
                f"dataset manifest is stage {dataset.stage}, expected {stage}"
            )
    else:
        if stage != 1 or not resolved["reference"]:
            raise TristyleError("stages 2/3 need --dataset; stage 1 needs --reference")
        dataset = StageDataset(
            stage=1, image_paths=(resolved["reference"],),
            captions=(resolved["caption"] or "",), quota=resolved["quota"],
        )

    if resolved["adapter"] and resolved["resume"]:
        adapter = LoraAdapter.load(resolved["adapter"])
    else:
        adapter = LoraAdapter.for_denoiser(
            stack.denoiser, rank=resolved["rank"], scale=resolved["scale"],
            seed=resolved["seed"],
        )
    trace = finetune_stage(
        stack.denoiser, stack.autoencoder, adapter, dataset, stack.schedule,
        steps=resolved["steps"], batch_size=resolved["batch_size"],
        lr=resolved["lr"], seed=resolved["seed"],
    )
    ckpt = run_dir / f"lora_stage{stage}.pt"
    adapter.save(ckpt)
    (run_dir / "loss_trace.json").write_text(json.dumps(trace))
    RunManifest(
        command="finetune", config=resolved,
        seeds={"root": resolved["seed"]},
        input_hashes=hash_inputs(list(dataset.image_paths)),
        artifacts=[str(ckpt)],
        timings={"final_loss": trace[-1] if trace else None},
    ).write(run_dir)
    print(f"stage {stage} adapter -> {ckpt}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .curation import SessionStore
    from .lora import generate_candidates

    defaults = {"ae": None, "denoiser": None, "adapter": None, "out": None,
                "prompt": "", "n": 50, "seed": 0, "stage": 1, "num_steps": 50,
                "t_steps": 1000, "session": None, "curation_root": None}
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, "generate")
    stack = _load_stack(resolved, need_adapter=True)
    records = generate_candidates(
        stack.denoiser, stack.autoencoder, stack.adapter, stack.schedule,
        prompt=resolved["prompt"], n=resolved["n"], seed=resolved["seed"],
        out_dir=run_dir / "candidates", stage=resolved["stage"],
        num_steps=resolved["num_steps"],
    )
    if resolved["session"]:
        store = SessionStore(resolved["curation_root"] or "curation")
        added = store.add_candidates(resolved["session"], records)
        print(f"registered {added} candidates into session {resolved['session']}")
    RunManifest(
        command="generate", config=resolved,
        seeds={"root": resolved["seed"]},
        artifacts=[r["path"] for r in records],
        timings={"n": len(records)},
    ).write(run_dir)
    print(f"{len(records)} candidates -> {run_dir / 'candidates'}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .curation import SessionStore
    from .service import serve

    defaults = {"root": "curation", "host": "127.0.0.1", "port": 8008, "frontend": None}
    resolved = _resolve(args, defaults, args.config)
    store = SessionStore(resolved["root"])
    print(f"curation service on http://{resolved['host']}:{resolved['port']}/api/v1")
    serve(store, host=resolved["host"], port=resolved["port"],
          frontend_dir=resolved["frontend"])
    return EXIT_OK


def _pipeline_defaults() -> dict:
    return {"content": None, "ae": None, "denoiser": None, "adapter": None,
            "out": None, "caption": None, "prompt": None, "main_prompt": None,
            "t_small": None, "t_large": None, "beta": 0.6, "seed": 0,
            "num_steps": 50, "guidance_scale": 1.0, "t_steps": 1000,
            "no_swap_kv": False, "no_fuse_query": False, "policy": None}


def _build_config(resolved: dict, schedule_T: int):
    from .attention import InjectionPolicy
    from .pipeline import PipelineConfig
    from .schedule import NoiseSchedule

    schedule = NoiseSchedule.linear(T=schedule_T)
    steps = schedule.inference_steps(resolved["num_steps"])
    stride = steps[1] - steps[0]
    t_small = resolved["t_small"] if resolved["t_small"] is not None else round(0.3 * schedule_T / stride) * stride
    t_large = resolved["t_large"] if resolved["t_large"] is not None else round(0.6 * schedule_T / stride) * stride
    policy = None
    if resolved.get("policy"):
        policy = InjectionPolicy.from_json(Path(resolved["policy"]).read_text())
    elif resolved["no_swap_kv"] or resolved["no_fuse_query"]:
        policy = "flags"  # resolved after the stack is loaded (needs layer names)
    config = PipelineConfig(
        t_small=int(t_small), t_large=int(t_large), beta=resolved["beta"],
        prompt=resolved["prompt"], main_prompt=resolved["main_prompt"],
        lora_id=resolved.get("adapter"), seed=resolved["seed"],
        num_steps=resolved["num_steps"], guidance_scale=resolved["guidance_scale"],
        policy=None if policy == "flags" else policy,
    )
    config.validate(schedule)
    return config, policy == "flags"


def _run_pipeline(args, mode: str) -> int:
    from dataclasses import replace

    from .attention import InjectionPolicy
    from .data import load_image, save_image
    from .metrics import PerceptualDistance
    from .pipeline import channel_shares, color_edit, image_style_transfer, text_stylization

    defaults = _pipeline_defaults()
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, mode)
    config, flags_policy = _build_config(resolved, resolved["t_steps"])
    stack = _load_stack(resolved, need_adapter=True)
    if flags_policy:
        config = replace(config, policy=InjectionPolicy(
            target_layers=stack.denoiser.decoder_attention_layers,
            beta=resolved["beta"],
            swap_kv=not resolved["no_swap_kv"],
            fuse_query=not resolved["no_fuse_query"],
        ))
    content = load_image(resolved["content"]).unsqueeze(0)
    caption = resolved["caption"] or ""

    if mode == "transfer":
        result = image_style_transfer(stack, content, config, caption)
    elif mode == "stylize":
        result = text_stylization(stack, content, resolved["prompt"] or "", config, caption)
    else:
        result = color_edit(stack, content, resolved["prompt"] or "", config, caption)

    out_png = run_dir / "result.png"
    save_image(result.output.data[0], out_png)
    (run_dir / "config.json").write_text(json.dumps(
        {**resolved, "policy": None if config.policy is None else json.loads(config.policy.to_json()),
         "resolved_t_small": config.t_small, "resolved_t_large": config.t_large},
        indent=2, sort_keys=True, default=str))

    perceptual = PerceptualDistance(stack.autoencoder, stack.denoiser)
    shares = channel_shares(result.output.data)[0]
    with (run_dir / "metrics.csv").open("w") as fh:
        fh.write("metric,value\n")
        fh.write(f"content_distance,{perceptual(result.output.data, content):.6f}\n")
        fh.write(f"red_share,{shares[0]:.6f}\n")
        fh.write(f"green_share,{shares[1]:.6f}\n")
        fh.write(f"blue_share,{shares[2]:.6f}\n")
        fh.write(f"timing_s,{result.timing_s:.3f}\n")
    RunManifest(
        command=mode, config={**resolved, "resolved_t_small": config.t_small,
                              "resolved_t_large": config.t_large},
        seeds={"root": resolved["seed"]},
        input_hashes=hash_inputs([resolved["content"]]),
        artifacts=[str(out_png)],
        timings={"pipeline_s": result.timing_s},
    ).write(run_dir)
    print(f"{mode} result -> {out_png}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .data import load_dataset, load_image
    from .metrics import BottleneckEmbedder, PerceptualDistance
    from .pipeline import threshold_sweep

    defaults = {**_pipeline_defaults(), "grid": None, "style_refs": None}
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, "sweep")
    stack = _load_stack(resolved, need_adapter=True)
    base_config, _ = _build_config(resolved, resolved["t_steps"])

    content_path = Path(resolved["content"])
    if content_path.is_dir():
        content, _, _ = load_dataset(content_path)
    else:
        content = load_image(content_path).unsqueeze(0)
    grid = []
    for part in (resolved["grid"] or f"{base_config.t_small}:{base_config.t_large}").split(","):
        lo, hi = part.split(":")
        grid.append((int(lo), int(hi)))
    style_images = None
    if resolved["style_refs"]:
        style_images, _, _ = load_dataset(resolved["style_refs"])
    report = threshold_sweep(
        stack, content, grid, base_config,
        content_caption=resolved["caption"] or "",
        perceptual=PerceptualDistance(stack.autoencoder, stack.denoiser),
        embedder=BottleneckEmbedder(stack.autoencoder),
        style_images=style_images,
    )
    report.to_csv(run_dir / "sweep.csv")
    report.save_grid(run_dir / "grid.png")
    RunManifest(
        command="sweep", config=resolved,
        seeds={"root": resolved["seed"]},
        input_hashes=hash_inputs([resolved["content"]]),
        artifacts=[str(run_dir / "sweep.csv"), str(run_dir / "grid.png")],
        timings={"points": len(grid)},
    ).write(run_dir)
    print(f"sweep over {len(grid)} grid points -> {run_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .autoencoder import ImageAutoencoder
    from .data import load_dataset
    from .denoiser import Denoiser
    from .metrics import (
        BottleneckEmbedder, HistogramJointEmbedder, PerceptualDistance,
        evaluate_metrics, write_reports,
    )

    defaults = {"samples": None, "refs": None, "metrics": "fid,clipi,lpips",
                "embedder": "bottleneck", "ae": None, "denoiser": None,
                "prompt": None, "out": None}
    resolved = _resolve(args, defaults, args.config)
    run_dir = _run_dir(resolved, "evaluate")
    samples, _, _ = load_dataset(resolved["samples"])
    refs, _, _ = load_dataset(resolved["refs"])
    ae = ImageAutoencoder.load(resolved["ae"]) if resolved["ae"] else None
    dn = Denoiser.load(resolved["denoiser"]) if resolved["denoiser"] else None
    if resolved["embedder"] == "bottleneck":
        if ae is None:
            raise TristyleError("embedder 'bottleneck' requires --ae")
        embedder = BottleneckEmbedder(ae)
    elif resolved["embedder"] == "histogram":
        embedder = HistogramJointEmbedder()
    else:
        raise TristyleError(f"unknown embedder '{resolved['embedder']}'")
    reports = evaluate_metrics(
        samples, refs, resolved["metrics"].split(","), embedder,
        perceptual=PerceptualDistance(ae, dn), prompt=resolved["prompt"],
    )
    write_reports(reports, run_dir / "metrics.csv", run_dir / "metrics.json")
    RunManifest(
        command="evaluate", config=resolved,
        input_hashes=hash_inputs([resolved["samples"], resolved["refs"]]),
        artifacts=[str(run_dir / "metrics.csv"), str(run_dir / "metrics.json")],
        timings={},
    ).write(run_dir)
    for report in reports:
        print(f"{report.metric}: {report.value:.6f}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tristyle",
        description="Toy style-transfer lab: training, curation, triple-pass transfer, metrics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (lowest precedence after defaults)")
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
        return p

    intf = {"type": int}
    floatf = {"type": float}
    boolf = {"action": "store_true", "default": None}

    add("train-ae", cmd_train_ae, {
        "--data": {"required": True}, "--out": {}, "--steps": intf,
        "--batch-size": {**intf, "dest": "batch_size"}, "--lr": floatf,
        "--seed": intf, "--latent-channels": {**intf, "dest": "latent_channels"},
        "--base-channels": {**intf, "dest": "base_channels"},
    })
    add("train-denoiser", cmd_train_denoiser, {
        "--data": {"required": True}, "--ae": {"required": True}, "--out": {},
        "--steps": intf, "--batch-size": {**intf, "dest": "batch_size"},
        "--lr": floatf, "--seed": intf, "--t-steps": {**intf, "dest": "t_steps"},
        "--base-channels": {**intf, "dest": "base_channels"},
    })
    add("caption", cmd_caption, {
        "--images": {"required": True}, "--out": {}, "--store": {},
        "--captioner": {}, "--llm": {}, "--lexicon": {},
    })
    add("finetune", cmd_finetune, {
        "--stage": {**intf, "required": True}, "--ae": {"required": True},
        "--denoiser": {"required": True}, "--adapter": {}, "--out": {},
        "--dataset": {}, "--reference": {}, "--caption": {}, "--quota": intf,
        "--steps": intf, "--batch-size": {**intf, "dest": "batch_size"},
        "--lr": floatf, "--seed": intf, "--rank": intf, "--scale": floatf,
        "--t-steps": {**intf, "dest": "t_steps"},
        "--no-resume": {"action": "store_false", "dest": "resume", "default": None},
    })
    add("generate", cmd_generate, {
        "--ae": {"required": True}, "--denoiser": {"required": True},
        "--adapter": {"required": True}, "--out": {}, "--prompt": {},
        "--n": intf, "--seed": intf, "--stage": intf,
        "--num-steps": {**intf, "dest": "num_steps"},
        "--t-steps": {**intf, "dest": "t_steps"},
        "--session": {}, "--curation-root": {"dest": "curation_root"},
    })
    add("serve", cmd_serve, {
        "--root": {}, "--host": {}, "--port": intf, "--frontend": {},
    })
    pipeline_flags = {
        "--content": {"required": True}, "--ae": {"required": True},
        "--denoiser": {"required": True}, "--adapter": {"required": True},
        "--out": {}, "--caption": {}, "--prompt": {},
        "--main-prompt": {"dest": "main_prompt"},
        "--t-small": {**intf, "dest": "t_small"},
        "--t-large": {**intf, "dest": "t_large"},
        "--beta": floatf, "--seed": intf,
        "--num-steps": {**intf, "dest": "num_steps"},
        "--guidance-scale": {**floatf, "dest": "guidance_scale"},
        "--t-steps": {**intf, "dest": "t_steps"},
        "--no-swap-kv": {**boolf, "dest": "no_swap_kv"},
        "--no-fuse-query": {**boolf, "dest": "no_fuse_query"},
        "--policy": {},
    }
    add("transfer", lambda a: _run_pipeline(a, "transfer"), pipeline_flags)
    add("stylize", lambda a: _run_pipeline(a, "stylize"), pipeline_flags)
    add("coloredit", lambda a: _run_pipeline(a, "coloredit"), pipeline_flags)
    add("sweep", cmd_sweep, {**pipeline_flags, "--grid": {}, "--style-refs": {"dest": "style_refs"}})
    add("evaluate", cmd_evaluate, {
        "--samples": {"required": True}, "--refs": {"required": True},
        "--metrics": {}, "--embedder": {}, "--ae": {}, "--denoiser": {},
        "--prompt": {}, "--out": {},
    })
    return parser


def _error_payload(exc: Exception) -> dict:
    return {"error": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericalFailureError as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return EXIT_NUMERICAL
    except TristyleError as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
