#!/usr/bin/env python3
"""Drive the full toy workflow end to end through the CLI.

train-ae -> train-denoiser -> caption -> finetune stage 1 -> generate ->
human-feedback promote (quota 5, via the HTTP API in-process) -> finetune
stage 2 -> transfer -> evaluate.

Exits non-zero on the first failing step.  Sized to finish in minutes on
one CPU; pass --full for paper-scale quotas and training lengths.
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path


def run(argv: list[str]) -> None:
    print(f"$ {' '.join(argv)}", flush=True)
    result = subprocess.run([sys.executable, "-m", "tristyle.cli", *argv])
    if result.returncode != 0:
        sys.exit(result.returncode)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="toy_run")
    parser.add_argument("--full", action="store_true", help="paper-scale quotas/steps")
    args = parser.parse_args()

    w = Path(args.workdir)
    w.mkdir(parents=True, exist_ok=True)
    quota = 50 if args.full else 5
    ae_steps = "600" if args.full else "200"
    dn_steps = "3000" if args.full else "200"
    ft_steps = "1000" if args.full else "60"
    n_cand = str(quota + 3)
    num_steps = "50" if args.full else "10"

    subprocess.run(
        [sys.executable, "scripts/make_toy_dataset.py", "--out", str(w / "data"),
         "--n-train", "192" if args.full else "48"],
        check=True,
    )
    data = w / "data"

    run(["train-ae", "--data", str(data / "train"), "--out", str(w / "ae"),
         "--steps", ae_steps, "--seed", "1"])
    run(["train-denoiser", "--data", str(data / "train"), "--ae", str(w / "ae/autoencoder.pt"),
         "--out", str(w / "dn"), "--steps", dn_steps, "--seed", "2"])
    run(["caption", "--images", str(data / "style.png"), "--out", str(w / "cap"),
         "--store", str(w / "cap/pairs.jsonl")])

    pairs = [json.loads(line) for line in (w / "cap/pairs.jsonl").read_text().splitlines()]
    stripped = pairs[0]["t_wo_style"]
    print(f"stripped caption: '{stripped}'")

    run(["finetune", "--stage", "1", "--ae", str(w / "ae/autoencoder.pt"),
         "--denoiser", str(w / "dn/denoiser.pt"), "--reference", str(data / "style.png"),
         "--caption", stripped, "--quota", str(quota), "--steps", ft_steps,
         "--out", str(w / "ft1"), "--seed", "3"])
    run(["generate", "--ae", str(w / "ae/autoencoder.pt"), "--denoiser", str(w / "dn/denoiser.pt"),
         "--adapter", str(w / "ft1/lora_stage1.pt"), "--prompt", stripped,
         "--n", n_cand, "--seed", "4", "--stage", "1", "--num-steps", num_steps,
         "--out", str(w / "gen1")])

    # Human-feedback selection through the HTTP contract (in-process client).
    from fastapi.testclient import TestClient

    from tristyle.curation import SessionStore
    from tristyle.service import make_app

    store = SessionStore(w / "curation")
    client = TestClient(make_app(store))
    resp = client.post("/api/v1/sessions", json={
        "reference_image": str(data / "style.png"),
        "reference_caption": stripped,
        "quota": quota,
        "session_id": "workflow",
    })
    assert resp.status_code == 201, resp.text
    records = [json.loads(line) for line in (w / "gen1/candidates/candidates.jsonl").read_text().splitlines()]
    store.add_candidates("workflow", records)
    ids = [c["id"] for c in client.get(
        "/api/v1/sessions/workflow/candidates", params={"page_size": 200}
    ).json()["items"]]
    assert client.post("/api/v1/sessions/workflow/select", json={"ids": ids[:quota]}).status_code == 200
    promoted = client.post("/api/v1/sessions/workflow/promote", json={"ids": []})
    assert promoted.status_code == 200, promoted.text
    manifest = promoted.json()["manifest"]
    print(f"promoted to stage {promoted.json()['stage']} with {promoted.json()['dataset_size']} images")
    (w / "stage2.json").write_text(json.dumps(manifest))

    run(["finetune", "--stage", "2", "--ae", str(w / "ae/autoencoder.pt"),
         "--denoiser", str(w / "dn/denoiser.pt"), "--adapter", str(w / "ft1/lora_stage1.pt"),
         "--dataset", str(w / "stage2.json"), "--steps", ft_steps,
         "--out", str(w / "ft2"), "--seed", "5"])

    content_png = sorted((data / "content").glob("*.png"))[0]
    run(["transfer", "--content", str(content_png), "--ae", str(w / "ae/autoencoder.pt"),
         "--denoiser", str(w / "dn/denoiser.pt"), "--adapter", str(w / "ft2/lora_stage2.pt"),
         "--caption", stripped, "--num-steps", num_steps, "--out", str(w / "transfer"),
         "--seed", "6"])
    run(["evaluate", "--samples", str(data / "content"), "--refs", str(data / "style"),
         "--metrics", "fid,clipi,lpips", "--embedder", "bottleneck",
         "--ae", str(w / "ae/autoencoder.pt"), "--out", str(w / "eval")])
    print("workflow complete")


if __name__ == "__main__":
    main()
