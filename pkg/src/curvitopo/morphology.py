"""Differentiable pooling and the two iterative thinning/smoothing algorithms.

Both algorithms share one control flow: extract a residue S from the input,
then for k rounds erode the working image, extract a new residue Delta, and
accumulate S <- S + relu(Delta - S*Delta).  Soft skeletonization erodes with
min pooling and opens with maxpool(minpool(.)); topological smoothing
replaces every pooling call with average pooling, which keeps the iterates
close to the input intensities instead of carving them down to a skeleton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .volume import Volume


@dataclass(frozen=True)
class PoolKernel:
    """Centered cubic pooling window; stride 1, truncated at boundaries."""

    kind: str = "max"  # min | max | avg
    window: int = 3

    def __post_init__(self):
        if self.kind not in ("min", "max", "avg"):
            raise ValueError(f"kind must be min/max/avg, got {self.kind!r}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")


def pool(v: Volume, k: PoolKernel) -> Volume:
    """Min/max/mean over the in-bounds part of each centered window.

    The mean divides by the in-bounds count, not the full window volume, so
    constants are fixed points of all three pools.
    """
    fn = {"min": K.minpool, "max": K.maxpool, "avg": K.avgpool}[k.kind]
    return v.with_data(fn(v.data, k.window))


def _relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, np.float32(0.0))


def _iterate(data: np.ndarray, k: int, erode, open_, record: bool):
    """Shared loop of the skeletonization/smoothing algorithms.

    Returns (final residue, residue iterates, working-image iterates)."""
    if k < 0:
        raise ValueError("iteration count must be >= 0")
    image = data
    skel = _relu(image - open_(image))
    steps, images = [], []
    for _ in range(k):
        image = erode(image)
        delta = _relu(image - open_(image))
        skel = skel + _relu(delta - skel * delta)
        if record:
            steps.append(skel)
            images.append(image)
    return skel, steps, images


def soft_skeletonize(v: Volume, k: int) -> Volume:
    """Iterated min/max-pooling skeleton; k of 0 keeps only the initial residue."""
    out, _, _ = _iterate(
        v.data, k, K.minpool, lambda a: K.maxpool(K.minpool(a)), record=False
    )
    return v.with_data(out)


def topo_smooth(v: Volume, k: int) -> Volume:
    """Average-pooling variant: same control flow, every pool is an avg pool.

    Unlike min-pool erosion, average pooling spreads intensity outward, so the
    residue is restricted to the input's support at the end; that keeps the
    support-containment guarantee shared with soft_skeletonize and is a no-op
    wherever the input is strictly positive.
    """
    out, _, _ = _iterate(
        v.data, k, K.avgpool, lambda a: K.avgpool(K.avgpool(a)), record=False
    )
    return v.with_data(out * (v.data > 0))


def smoothing_trace(v: Volume, k: int) -> list[Volume]:
    """S iterate after each smoothing round; the last equals topo_smooth(v, k)."""
    if k < 1:
        raise ValueError("trace needs k >= 1")
    _, steps, _ = _iterate(
        v.data, k, K.avgpool, lambda a: K.avgpool(K.avgpool(a)), record=True
    )
    support = v.data > 0
    return [v.with_data(s * support) for s in steps]


def skeleton_trace(v: Volume, k: int) -> list[Volume]:
    """Like smoothing_trace but for the min/max-pooling skeletonization."""
    if k < 1:
        raise ValueError("trace needs k >= 1")
    _, steps, _ = _iterate(
        v.data, k, K.minpool, lambda a: K.maxpool(K.minpool(a)), record=True
    )
    return [v.with_data(s) for s in steps]


def thinning_progress(v: Volume, k: int, smooth: bool):
    """(residue iterates, working-image iterates) of one algorithm run.

    The working images are what the difference histogram of the report
    compares against the input: erosion guts the structure while averaging
    keeps it close to the original intensities.
    """
    if k < 1:
        raise ValueError("progress needs k >= 1")
    if smooth:
        erode, open_ = K.avgpool, lambda a: K.avgpool(K.avgpool(a))
    else:
        erode, open_ = K.minpool, lambda a: K.maxpool(K.minpool(a))
    _, steps, images = _iterate(v.data, k, erode, open_, record=True)
    if smooth:
        support = v.data > 0
        steps = [s * support for s in steps]
    return [v.with_data(s) for s in steps], [v.with_data(i) for i in images]
