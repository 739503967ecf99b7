"""Differentiable losses over a recorded computation tape.

The tape records a closed set of primitives (min/max/avg pool, relu,
elementwise add/sub/mul, whole-volume sum, scalar arithmetic) in forward
order; the backward sweep visits nodes exactly once in reverse.  Gradient
conventions: relu routes no adjoint at exactly 0, and min/max-pool ties route
the adjoint to the first attaining window element in raster order, so
gradients are deterministic across runs and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ShapeMismatch
from .volume import Volume

EPS = 1e-6


class Tape:
    """Ordered record of primitive ops; creation order is topological order."""

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value) -> "Var":
        return Var(value, self)

    def backward(self, out: "Var") -> None:
        for n in self.nodes:
            n.grad = None
        out.grad = 1.0
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, vjp in node._parents:
                contrib = vjp(node.grad)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib


class Var:
    """One tape node holding a float64 array or python float."""

    __slots__ = ("value", "tape", "grad", "_parents")

    def __init__(self, value, tape: Tape, parents=()):
        self.value = value
        self.tape = tape
        self.grad = None
        self._parents = parents
        tape.nodes.append(self)

    # scalar arithmetic (Var or float operands)
    def __add__(self, other):
        if isinstance(other, Var):
            return Var(self.value + other.value, self.tape,
                       [(self, lambda a: a), (other, lambda a: a)])
        return Var(self.value + other, self.tape, [(self, lambda a: a)])

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return Var(self.value - other.value, self.tape,
                       [(self, lambda a: a), (other, lambda a: -a)])
        return Var(self.value - other, self.tape, [(self, lambda a: a)])

    def __rsub__(self, other):
        return Var(other - self.value, self.tape, [(self, lambda a: -a)])

    def __mul__(self, other):
        if isinstance(other, Var):
            return Var(self.value * other.value, self.tape,
                       [(self, lambda a, o=other.value: a * o),
                        (other, lambda a, s=self.value: a * s)])
        return Var(self.value * other, self.tape,
                   [(self, lambda a, o=other: a * o)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return Var(self.value / other.value, self.tape,
                       [(self, lambda a, o=other.value: a / o),
                        (other, lambda a, s=self.value, o=other.value: -a * s / (o * o))])
        return Var(self.value / other, self.tape,
                   [(self, lambda a, o=other: a / o)])


def vmul(a: Var, b) -> Var:
    """Elementwise product of a tape node with a node or a constant array."""
    if isinstance(b, Var):
        return Var(a.value * b.value, a.tape,
                   [(a, lambda adj, o=b.value: adj * o),
                    (b, lambda adj, s=a.value: adj * s)])
    b = np.asarray(b, dtype=np.float64)
    return Var(a.value * b, a.tape, [(a, lambda adj, o=b: adj * o)])


def vsub(a: Var, b: Var) -> Var:
    return Var(a.value - b.value, a.tape,
               [(a, lambda adj: adj), (b, lambda adj: -adj)])


def vrelu(a: Var) -> Var:
    mask = a.value > 0  # subgradient 0 at exactly 0
    return Var(np.where(mask, a.value, 0.0), a.tape,
               [(a, lambda adj, m=mask: adj * m)])


def vminpool(a: Var) -> Var:
    pooled, arg = K.pool_argext(a.value, "min")
    return Var(pooled, a.tape, [(a, lambda adj, g=arg: K.scatter_argext(adj, g))])


def vmaxpool(a: Var) -> Var:
    pooled, arg = K.pool_argext(a.value, "max")
    return Var(pooled, a.tape, [(a, lambda adj, g=arg: K.scatter_argext(adj, g))])


def vavgpool(a: Var) -> Var:
    shape = a.value.shape
    return Var(K.avgpool(a.value), a.tape,
               [(a, lambda adj, s=shape: K.avgpool_backward(adj, s))])


def vsum(a: Var) -> Var:
    shape = a.value.shape
    return Var(K.stable_sum(a.value), a.tape,
               [(a, lambda adj, s=shape: np.full(s, adj, dtype=np.float64))])


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: Volume
    flags: frozenset[str] = field(default_factory=frozenset)


def _tape_soft_skeletonize(p: Var, k: int) -> Var:
    image = p
    opened = vmaxpool(vminpool(image))
    skel = vrelu(vsub(image, opened))
    for _ in range(k):
        image = vminpool(image)
        opened = vmaxpool(vminpool(image))
        delta = vrelu(vsub(image, opened))
        skel = vrelu(vsub(delta, vmul(skel, delta))) + skel
    return skel


def _tape_topo_smooth(p: Var, k: int) -> Var:
    image = p
    opened = vavgpool(vavgpool(image))
    skel = vrelu(vsub(image, opened))
    for _ in range(k):
        image = vavgpool(image)
        opened = vavgpool(vavgpool(image))
        delta = vrelu(vsub(image, opened))
        skel = vrelu(vsub(delta, vmul(skel, delta))) + skel
    # support containment: avg pooling spreads mass outward; mask it back.
    # The indicator is constant wrt p (zero subgradient), and all-ones for
    # strictly positive predictions.
    return vmul(skel, (p.value > 0).astype(np.float64))


def _forward_transform(arr: np.ndarray, k: int, smooth: bool) -> np.ndarray:
    """Constant-side (no-gradient) skeleton/smoothing transform."""
    if smooth:
        erode, open_ = K.avgpool, lambda a: K.avgpool(K.avgpool(a))
    else:
        erode, open_ = K.minpool, lambda a: K.maxpool(K.minpool(a))
    image = arr
    skel = np.maximum(image - open_(image), 0.0)
    for _ in range(k):
        image = erode(image)
        delta = np.maximum(image - open_(image), 0.0)
        skel = skel + np.maximum(delta - skel * delta, 0.0)
    if smooth:
        skel = skel * (arr > 0)
    return skel


def _combined_loss(pred: np.ndarray, target: np.ndarray, alpha: float, k: int,
                   smooth: bool, eps: float):
    """Build L = (1-alpha)(1-Dice) + alpha(1-Score) on a fresh tape.

    Score is the harmonic mean of topological precision/sensitivity over the
    smoothed (GATS) or skeletonized (clDice) transform of the prediction.
    Returns (loss Var, prediction leaf, flags).
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"shape {pred.shape} vs {target.shape}")
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    tape = Tape()
    p = tape.leaf(pred.astype(np.float64))
    g = target.astype(np.float64)
    flags = set()

    inter = vsum(vmul(p, g))
    d = (2.0 * inter) / (vsum(p) + (K.stable_sum(g) + eps))
    loss = (1.0 - alpha) * (1.0 - d)

    if alpha > 0:
        t_p = _tape_topo_smooth(p, k) if smooth else _tape_soft_skeletonize(p, k)
        t_l = _forward_transform(g, k, smooth)
        mass_p = vsum(t_p)
        if mass_p.value < eps:
            flags.add("empty_pred_skeleton" if not smooth else "empty_pred_smoothing")
        mass_l = K.stable_sum(t_l)
        if mass_l < eps:
            flags.add("empty_gt_skeleton" if not smooth else "empty_gt_smoothing")
        tp = vsum(vmul(t_p, g)) / (mass_p + eps)
        ts = vsum(vmul(p, t_l)) / (mass_l + eps)
        if tp.value + ts.value == 0:
            score = 0.0  # both-zero harmonic mean convention; no gradient path
            loss = loss + alpha * 1.0
        else:
            score = (2.0 * tp * ts) / (tp + ts)
            loss = loss + alpha * (1.0 - score)
    return loss, p, flags


def _finish(loss, leaf, flags) -> LossValue:
    loss.tape.backward(loss)
    grad = leaf.grad
    if grad is None or np.isscalar(grad):
        grad = np.zeros(leaf.value.shape, dtype=np.float64)
    return LossValue(
        value=float(loss.value),
        gradient=Volume(grad.astype(np.float32)),
        flags=frozenset(flags),
    )


def gats_loss(pred: Volume, target: Volume, alpha: float = 0.5, k: int = 3,
              eps: float = EPS) -> LossValue:
    """(1-alpha)(1-Dice) + alpha(1-GATS) with reverse-mode gradient."""
    loss, leaf, flags = _combined_loss(pred.data, target.data, alpha, k,
                                       smooth=True, eps=eps)
    return _finish(loss, leaf, flags)


def cldice_loss(pred: Volume, target: Volume, alpha: float = 0.65, k: int = 3,
                eps: float = EPS) -> LossValue:
    """Same combination with clDice over soft skeletons instead of GATS."""
    loss, leaf, flags = _combined_loss(pred.data, target.data, alpha, k,
                                       smooth=False, eps=eps)
    return _finish(loss, leaf, flags)


def multihead_loss(seg_loss: float, cl_loss: float, alpha: float = 0.8) -> float:
    """Two-head combination (1-alpha)(1-seg) + alpha(1-cl), applied verbatim."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    return (1.0 - alpha) * (1.0 - seg_loss) + alpha * (1.0 - cl_loss)


def _loss_forward_value(name: str, pred: np.ndarray, target: np.ndarray,
                        alpha: float, k: int, eps: float) -> float:
    if name == "quadratic":
        tape = Tape()
        p = tape.leaf(pred.astype(np.float64))
        return float(vsum(vmul(p, p)).value)
    smooth = {"gats": True, "cldice": False}[name]
    loss, _, _ = _combined_loss(pred, target, alpha, k, smooth, eps)
    return float(loss.value)


def _loss_gradient(name: str, pred: np.ndarray, target: np.ndarray,
                   alpha: float, k: int, eps: float) -> np.ndarray:
    tape = Tape()
    if name == "quadratic":
        p = tape.leaf(pred.astype(np.float64))
        out = vsum(vmul(p, p))
        tape.backward(out)
        return p.grad
    smooth = {"gats": True, "cldice": False}[name]
    loss, leaf, _ = _combined_loss(pred, target, alpha, k, smooth, eps)
    loss.tape.backward(loss)
    grad = leaf.grad
    if grad is None or np.isscalar(grad):
        grad = np.zeros(pred.shape, dtype=np.float64)
    return grad


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    n_checked: int
    violations: tuple  # ((x, y, z), analytic, numeric, rel_error)
    threshold: float

    @property
    def passed(self) -> bool:
        return len(self.violations) == 0

    def to_json(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "mean_rel_error": self.mean_rel_error,
            "n_checked": self.n_checked,
            "threshold": self.threshold,
            "passed": self.passed,
            "violations": [
                {"coord": list(c), "analytic": a, "numeric": n, "rel_error": r}
                for c, a, n, r in self.violations
            ],
        }


def grad_check(lossfn: str, pred: Volume, target: Volume, step: float = 1e-4,
               alpha: float = 0.5, k: int = 3, eps: float = EPS,
               max_coords: int = 64, seed: int = 0,
               rel_threshold: float = 1e-3, grad_floor: float = 1e-6) -> GradCheckReport:
    """Compare the analytic gradient against central finite differences.

    Checks every coordinate when the volume is small, otherwise a seeded
    random subset of at least max_coords.  Relative error is measured only at
    coordinates where |analytic gradient| > grad_floor; pool ties and relu
    kinks inside the step window surface as violations rather than being
    masked.
    """
    if lossfn not in ("gats", "cldice", "quadratic"):
        raise ValueError(f"unknown loss {lossfn!r}")
    parr = pred.data.astype(np.float64)
    garr = target.data.astype(np.float64)
    analytic = _loss_gradient(lossfn, parr, garr, alpha, k, eps)

    size = parr.size
    if size <= max_coords:
        coords = np.arange(size)
    else:
        coords = np.random.default_rng(seed).choice(size, size=max_coords, replace=False)
    shape = parr.shape
    rels, violations = [], []
    for flat in coords:
        idx = np.unravel_index(int(flat), shape)
        a = float(analytic[idx])
        if abs(a) <= grad_floor:
            continue
        bumped = parr.copy()
        bumped[idx] = parr[idx] + step
        f_hi = _loss_forward_value(lossfn, bumped, garr, alpha, k, eps)
        bumped[idx] = parr[idx] - step
        f_lo = _loss_forward_value(lossfn, bumped, garr, alpha, k, eps)
        num = (f_hi - f_lo) / (2.0 * step)
        rel = abs(a - num) / max(abs(a), abs(num))
        rels.append(rel)
        if rel >= rel_threshold:
            violations.append((tuple(int(i) for i in idx), a, num, rel))
    return GradCheckReport(
        max_rel_error=max(rels) if rels else 0.0,
        mean_rel_error=float(np.mean(rels)) if rels else 0.0,
        n_checked=len(rels),
        violations=tuple(violations),
        threshold=rel_threshold,
    )
