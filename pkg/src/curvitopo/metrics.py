"""Evaluation scores: soft Dice, topological precision/sensitivity and their
harmonic means over skeletons (clDice) or smoothed outputs (GATS), tolerance
Dice for centerlines, adjusted Rand index, and Betti numbers of binary volumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from ._kernels import stable_sum
from .errors import ShapeMismatch
from .morphology import soft_skeletonize, topo_smooth
from .volume import BinaryVolume, Volume

EPS = 1e-6

_CONN26 = np.ones((3, 3, 3), dtype=int)


@dataclass(frozen=True)
class BettiTriple:
    b0: int
    b1: int
    b2: int

    def euler(self) -> int:
        return self.b0 - self.b1 + self.b2

    def as_tuple(self):
        return (self.b0, self.b1, self.b2)


@dataclass(frozen=True)
class MetricReport:
    """One row of scores for a (prediction, ground truth) pair.

    Fields are None when the corresponding metric was not requested.  Column
    order for CSV output: dice, cldice, rho_dice, ari, betti0/1 errors.
    """

    dice: float | None = None
    cldice: float | None = None
    rho_dice: float | None = None
    ari: float | None = None
    betti0_error: float | None = None
    betti1_error: float | None = None
    flags: frozenset[str] = field(default_factory=frozenset)

    CSV_COLUMNS = ("dice", "cldice", "rho_dice", "ari", "betti0_error", "betti1_error")

    def to_json(self) -> dict:
        out = {c: getattr(self, c) for c in self.CSV_COLUMNS if getattr(self, c) is not None}
        if self.flags:
            out["flags"] = sorted(self.flags)
        return out

    def csv_row(self) -> list[str]:
        return [
            "" if getattr(self, c) is None else repr(float(getattr(self, c)))
            for c in self.CSV_COLUMNS
        ]


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} vs {b.shape}")


def dice(p: Volume, g: Volume, eps: float = EPS) -> float:
    """Soft Dice 2*sum(p*g) / (sum(p) + sum(g) + eps); set Dice on binary input."""
    _check_same_shape(p, g)
    pa = p.data.astype(np.float64)
    ga = g.data.astype(np.float64)
    inter = stable_sum(pa * ga)
    return 2.0 * inter / (stable_sum(pa) + stable_sum(ga) + eps)


def tprec(s_p: Volume, v_l: Volume, eps: float = EPS):
    """Topological precision |S_P ∩ V_L| / |S_P| with soft masses.

    Returns (score, empty_flag); an empty skeleton scores 0 and is flagged.
    """
    _check_same_shape(s_p, v_l)
    sa = s_p.data.astype(np.float64)
    mass = stable_sum(sa)
    score = stable_sum(sa * v_l.data.astype(np.float64)) / (mass + eps)
    return score, mass < eps


def tsens(s_l: Volume, v_p: Volume, eps: float = EPS):
    """Topological sensitivity |S_L ∩ V_P| / |S_L|; mirrors tprec."""
    return tprec(s_l, v_p, eps)


def _harmonic(tp: float, ts: float) -> float:
    if tp + ts == 0:
        return 0.0
    return 2.0 * tp * ts / (tp + ts)


def cldice_score(v_p: Volume, v_l: Volume, k: int, eps: float = EPS):
    """Harmonic mean of Tprec/Tsens over soft skeletons of both volumes."""
    s_p = soft_skeletonize(v_p, k)
    s_l = soft_skeletonize(v_l, k)
    tp, ep = tprec(s_p, v_l, eps)
    ts, el = tsens(s_l, v_p, eps)
    flags = set()
    if ep:
        flags.add("empty_pred_skeleton")
    if el:
        flags.add("empty_gt_skeleton")
    return _harmonic(tp, ts), frozenset(flags)


def gats_score(v_p: Volume, v_l: Volume, k: int, eps: float = EPS):
    """Same harmonic-mean structure with topologically smoothed outputs."""
    t_p = topo_smooth(v_p, k)
    t_l = topo_smooth(v_l, k)
    tp, ep = tprec(t_p, v_l, eps)
    ts, el = tsens(t_l, v_p, eps)
    flags = set()
    if ep:
        flags.add("empty_pred_smoothing")
    if el:
        flags.add("empty_gt_smoothing")
    return _harmonic(tp, ts), frozenset(flags)


def _euclidean_ball(rho: float) -> np.ndarray:
    r = int(math.floor(rho))
    rng = np.arange(-r, r + 1)
    dx, dy, dz = np.meshgrid(rng, rng, rng, indexing="ij")
    return (dx * dx + dy * dy + dz * dz) <= rho * rho


def rho_dice(p_centerline: BinaryVolume, g_centerline: BinaryVolume, rho: float = 2.0):
    """Tolerance Dice for centerlines: voxels count as hits when they fall
    inside the Euclidean-ball dilation (radius rho) of the other centerline.
    Both empty -> 1 by convention, flagged.
    """
    _check_same_shape(p_centerline, g_centerline)
    if rho < 0:
        raise ValueError("rho must be >= 0")
    p = p_centerline.bits
    g = g_centerline.bits
    np_, ng = int(p.sum()), int(g.sum())
    if np_ == 0 and ng == 0:
        return 1.0, frozenset({"both_empty"})
    ball = _euclidean_ball(rho)
    gd = ndi.binary_dilation(g, structure=ball)
    pd = ndi.binary_dilation(p, structure=ball)
    tp_p = int((p & gd).sum())
    tp_g = int((g & pd).sum())
    return (tp_p + tp_g) / (np_ + ng), frozenset()


def ari(p: BinaryVolume, g: BinaryVolume) -> float:
    """Adjusted Rand index of the two foreground/background voxel partitions.

    Exact integer contingency arithmetic (permutation-model formula); the
    degenerate case where expected equals maximum index returns 1.
    """
    _check_same_shape(p, g)
    a = p.bits.ravel()
    b = g.bits.ravel()
    n = a.size
    n11 = int(np.count_nonzero(a & b))
    n10 = int(np.count_nonzero(a & ~b))
    n01 = int(np.count_nonzero(~a & b))
    n00 = n - n11 - n10 - n01
    sum_ij = sum(math.comb(x, 2) for x in (n11, n10, n01, n00))
    sum_a = math.comb(n11 + n10, 2) + math.comb(n01 + n00, 2)
    sum_b = math.comb(n11 + n01, 2) + math.comb(n10 + n00, 2)
    total = math.comb(n, 2)
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


def _khalimsky_euler(bits: np.ndarray) -> int:
    """Euler characteristic of the cubical complex spanned by the voxels:
    chi = V - E + F - C counted on a doubled (Khalimsky-style) grid where
    even coordinates are vertices and odd ones are higher cells.
    """
    nx, ny, nz = bits.shape
    K = np.zeros((2 * nx + 1, 2 * ny + 1, 2 * nz + 1), dtype=bool)
    for a in range(3):
        for b in range(3):
            for c in range(3):
                K[a::2, b::2, c::2][:nx, :ny, :nz] |= bits
    chi = 0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                sign = -1 if (a + b + c) % 2 else 1
                chi += sign * int(np.count_nonzero(K[a::2, b::2, c::2]))
    return chi


def betti(b: BinaryVolume) -> BettiTriple:
    """Betti numbers with fg 26 / bg 6 adjacency.

    b0: foreground 26-components; b2: background 6-components sealed off from
    the padded exterior; b1 from the Euler identity b1 = b0 + b2 - chi with
    chi counted on the voxel cubical complex.
    """
    if b.fg_connectivity != 26:
        raise ValueError("betti requires fg 26 / bg 6 connectivity")
    bits = b.bits
    if not bits.any():
        return BettiTriple(0, 0, 0)
    _, b0 = ndi.label(bits, structure=_CONN26)
    bg = np.pad(~bits, 1, constant_values=True)
    _, nbg = ndi.label(bg)  # default structure = 6-adjacency
    b2 = nbg - 1  # everything reachable from the pad shell is one component
    chi = _khalimsky_euler(bits)
    b1 = b0 + b2 - chi
    return BettiTriple(int(b0), int(b1), int(b2))


def betti_error(p: BinaryVolume, g: BinaryVolume, normalized: bool = False):
    """(e0, e1) absolute Betti-number differences; optionally per-voxel."""
    _check_same_shape(p, g)
    bp = betti(p)
    bg = betti(g)
    e0 = abs(bp.b0 - bg.b0)
    e1 = abs(bp.b1 - bg.b1)
    if normalized:
        n = float(np.prod(p.shape))
        return e0 / n, e1 / n
    return float(e0), float(e1)
