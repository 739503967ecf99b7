"""Dense pooling kernels shared by the morphology and loss modules.

All pools use a centered cubic window, stride 1, with boundary windows
truncated to in-bounds voxels, so output shape equals input shape.

Floating-point reductions here are permutation-invariant: window means and
whole-volume sums sort their summands before accumulating, which makes every
consumer bit-identical under axis-aligned 90-degree rotations and flips of
its inputs.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

# Window offsets ordered by ascending linear index of the window element
# (x-fastest volume order), so argmin/argmax tie-breaks pick the first
# attaining element in raster order.
def _offsets(window: int):
    r = window // 2
    rng = range(-r, r + 1)
    return [(dx, dy, dz) for dz in rng for dy in rng for dx in rng]


_OFF3 = _offsets(3)


def _shift_slices(shape, off):
    dst, src = [], []
    for n, d in zip(shape, off):
        dst.append(slice(max(0, -d), n - max(0, d)))
        src.append(slice(max(0, d), n - max(0, -d)))
    return tuple(dst), tuple(src)


def window_stack(a: np.ndarray, fill: float, window: int = 3) -> np.ndarray:
    """(w^3, *shape) stack where stack[i][v] = a[v + offset_i], fill when OOB."""
    offs = _OFF3 if window == 3 else _offsets(window)
    out = np.full((len(offs),) + a.shape, fill, dtype=np.float64)
    for i, off in enumerate(offs):
        dst, src = _shift_slices(a.shape, off)
        out[i][dst] = a[src]
    return out


def inbounds_count(shape, window: int = 3) -> np.ndarray:
    """Per-voxel count of in-bounds window elements (separable product)."""
    r = window // 2
    axes = []
    for n in shape:
        c = np.minimum(np.arange(n) + r, n - 1) - np.maximum(np.arange(n) - r, 0) + 1
        axes.append(c.astype(np.float64))
    return axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]


def minpool(a: np.ndarray, window: int = 3) -> np.ndarray:
    # 'nearest' padding duplicates in-window edge values, so for min/max it
    # equals the truncated-window reduction exactly
    return ndi.minimum_filter(a, size=window, mode="nearest")


def maxpool(a: np.ndarray, window: int = 3) -> np.ndarray:
    return ndi.maximum_filter(a, size=window, mode="nearest")


def avgpool(a: np.ndarray, window: int = 3) -> np.ndarray:
    """Mean over the in-bounds window, accumulated in sorted float64 order."""
    stack = window_stack(a, 0.0, window)  # adding 0.0 is exact, keeps sums honest
    stack.sort(axis=0)
    acc = stack[0].copy()
    for i in range(1, stack.shape[0]):
        acc += stack[i]
    out = acc / inbounds_count(a.shape, window)
    return out.astype(a.dtype, copy=False)


def pool_argext(a: np.ndarray, kind: str, window: int = 3):
    """Pooled values plus, per output voxel, the winning window offset index.

    Ties resolve to the first attaining element in raster order (the stack is
    built in that order and argmin/argmax return the first occurrence).
    """
    if kind == "min":
        stack = window_stack(a, np.inf, window)
        arg = np.argmin(stack, axis=0)
    elif kind == "max":
        stack = window_stack(a, -np.inf, window)
        arg = np.argmax(stack, axis=0)
    else:
        raise ValueError(kind)
    pooled = np.take_along_axis(stack, arg[None], axis=0)[0]
    return pooled.astype(a.dtype, copy=False), arg


def scatter_argext(adj: np.ndarray, arg: np.ndarray, window: int = 3) -> np.ndarray:
    """Backward of min/max pool: route each adjoint to its winning input voxel."""
    offs = np.array(_OFF3 if window == 3 else _offsets(window))
    nx, ny, nz = adj.shape
    x, y, z = np.indices(adj.shape)
    tx = x + offs[arg, 0]
    ty = y + offs[arg, 1]
    tz = z + offs[arg, 2]
    flat = ((tx * ny) + ty) * nz + tz
    grad = np.zeros(adj.size, dtype=np.float64)
    np.add.at(grad, flat.ravel(), adj.ravel())
    return grad.reshape(adj.shape)


def avgpool_backward(adj: np.ndarray, shape, window: int = 3) -> np.ndarray:
    """Backward of avg pool: spread adjoint/count over each in-bounds window."""
    w = adj / inbounds_count(shape, window)
    grad = np.zeros(shape, dtype=np.float64)
    offs = _OFF3 if window == 3 else _offsets(window)
    for off in offs:
        dst, src = _shift_slices(shape, off)
        grad[src] += w[dst]
    return grad


def stable_sum(a: np.ndarray) -> float:
    """Permutation-invariant whole-array sum (sorted float64 accumulation)."""
    flat = np.sort(np.asarray(a, dtype=np.float64), axis=None)
    return float(np.sum(flat))
