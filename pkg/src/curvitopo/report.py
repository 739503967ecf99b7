"""Thinning-progress report: difference histograms as CSV plus rendered figures.

Compares soft skeletonization against topological smoothing on one volume.
The histogram bins |input - step image| over the structure's voxels, where
"step image" is the working image after that many rounds (min-pool erosion
vs average pooling): erosion guts the structure, so its differences pile up
near 1, while smoothing keeps the image close to the input and its
differences concentrate at low intensities.  CSV is the primary output; PNG
figures land alongside it.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .morphology import thinning_progress
from .volume import Volume


def write_report(v: Volume, k: int, out_dir: str, step: int | None = None,
                 bins: int = 20) -> dict:
    """Run both algorithms for k rounds and drop CSV + figures into out_dir.

    step picks which round the difference histogram compares against the
    input (default: round 2, clamped to k).  Returns a manifest of written
    files and summary numbers; also saved as report.json.
    """
    if k < 1:
        raise ValueError("report needs k >= 1")
    step = min(k, 2 if step is None else step)
    if step < 1:
        raise ValueError("step must be >= 1")
    os.makedirs(out_dir, exist_ok=True)

    sk_res, sk_img = thinning_progress(v, k, smooth=False)
    sm_res, sm_img = thinning_progress(v, k, smooth=True)
    support = v.data > 0
    diff_sk = np.abs(v.data - sk_img[step - 1].data)[support]
    diff_sm = np.abs(v.data - sm_img[step - 1].data)[support]

    edges = np.linspace(0.0, 1.0, bins + 1)
    h_sk, _ = np.histogram(diff_sk, bins=edges)
    h_sm, _ = np.histogram(diff_sm, bins=edges)

    csv_path = os.path.join(out_dir, "difference_histogram.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count_skeletonize", "count_smoothing"])
        for i in range(bins):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                        int(h_sk[i]), int(h_sm[i])])

    hist_png = os.path.join(out_dir, "difference_histogram.png")
    fig, ax = plt.subplots(figsize=(6, 4))
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    ax.bar(centers - width / 4, h_sk, width=width / 2, label="skeletonize")
    ax.bar(centers + width / 4, h_sm, width=width / 2, label="smooth")
    ax.set_xlabel(f"|input - step {step} image| over the structure")
    ax.set_ylabel("voxel count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(hist_png, dpi=120)
    plt.close(fig)

    montage_png = os.path.join(out_dir, "iterates.png")
    zmid = v.shape[2] // 2
    rows = [("skeletonize", sk_img, sk_res), ("smooth", sm_img, sm_res)]
    fig, axes = plt.subplots(2, k + 2, figsize=(2.2 * (k + 2), 4.6), squeeze=False)
    for row, (label, imgs, res) in enumerate(rows):
        axes[row][0].imshow(v.data[:, :, zmid].T, vmin=0, vmax=1, cmap="gray")
        axes[row][0].set_title("input")
        axes[row][0].set_ylabel(label)
        for i, s in enumerate(imgs):
            axes[row][i + 1].imshow(s.data[:, :, zmid].T, vmin=0, vmax=1, cmap="gray")
            axes[row][i + 1].set_title(f"step {i + 1}")
        axes[row][k + 1].imshow(res[-1].data[:, :, zmid].T, vmin=0, vmax=1, cmap="gray")
        axes[row][k + 1].set_title("residue")
    for ax in axes.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(montage_png, dpi=120)
    plt.close(fig)

    low = int(edges.searchsorted(0.25))
    manifest = {
        "k": k,
        "step": step,
        "csv": csv_path,
        "figures": [hist_png, montage_png],
        "skeleton_mass": float(sk_res[-1].data.sum()),
        "smooth_mass": float(sm_res[-1].data.sum()),
        "low_intensity_mass": {
            "threshold": 0.25,
            "skeletonize": int(h_sk[:low].sum()),
            "smoothing": int(h_sm[:low].sum()),
        },
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
