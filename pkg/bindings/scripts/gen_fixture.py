#!/usr/bin/env python3
"""Regenerate the parity fixture for the bindings tests.

Builds a fixed corpus of random volume pairs, runs the toolkit CLI on each
(the same external surface the bindings use), and freezes inputs and outputs
into test/fixtures/corpus.json.  Buffers are base64 of little-endian float32
in x-fastest order.

Usage: python3 scripts/gen_fixture.py   (from the bindings directory)
"""

import base64
import json
import pathlib
import subprocess
import sys
import tempfile

import numpy as np

SHAPE = (8, 8, 8)
ALPHA = 0.5
K = 2
RHO = 2.0
N_PAIRS = 10
CLI = ["curvitopo"]


def b64(flat32: np.ndarray) -> str:
    return base64.b64encode(flat32.astype("<f4").tobytes()).decode()


def run(args):
    proc = subprocess.run(CLI + args, capture_output=True, text=True, check=True)
    return proc.stdout


def main() -> None:
    sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[2] / "src"))
    from curvitopo.volume import Volume, read_volume, write_volume

    pairs = []
    for seed in range(N_PAIRS):
        rng = np.random.default_rng(seed)
        pred = Volume((0.05 + 0.9 * rng.random(SHAPE)).astype(np.float32))
        target = Volume((0.05 + 0.9 * rng.random(SHAPE)).astype(np.float32))
        with tempfile.TemporaryDirectory() as td:
            td = pathlib.Path(td)
            write_volume(pred, td / "pred.npy")
            write_volume(target, td / "gt.npy")
            loss_out = json.loads(run([
                "loss-eval", "--pred", str(td / "pred.npy"),
                "--gt", str(td / "gt.npy"), "--loss", "gats",
                "--alpha", str(ALPHA), "--k", str(K),
                "--grad-out", str(td / "grad.npy"),
            ]))
            grad = read_volume(td / "grad.npy")
            metrics_out = json.loads(run([
                "metrics", "--pred", str(td / "pred.npy"),
                "--gt", str(td / "gt.npy"), "--k", str(K),
                "--rho", str(RHO), "--out-format", "json",
            ]).strip().splitlines()[0])
        metrics_out.pop("pred", None)
        metrics_out.pop("gt", None)
        pairs.append({
            "pred": b64(pred.ravel()),
            "target": b64(target.ravel()),
            "gats": {
                "loss": loss_out["loss"],
                "flags": loss_out["flags"],
                "grad": b64(grad.ravel()),
            },
            "metrics": metrics_out,
        })

    fixture = {
        "shape": list(SHAPE),
        "alpha": ALPHA,
        "k": K,
        "rho": RHO,
        "pairs": pairs,
    }
    out = pathlib.Path(__file__).resolve().parents[1] / "test" / "fixtures" / "corpus.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(fixture))
    print(f"wrote {out} ({len(pairs)} pairs)")


if __name__ == "__main__":
    main()
