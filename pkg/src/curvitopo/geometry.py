"""2D geometric assessment (Canny, exact EDT, medial axis), the mean-pixel-radius
iteration estimator, and topology-preserving 3D thinning to single-voxel
centerlines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from ._kernels import stable_sum
from .errors import AllSlicesEmpty, NoBackground, NotEnoughPlanes
from .volume import BinaryVolume, Volume

_AXIS_NAMES = "xyz"


@dataclass(frozen=True)
class Slice2D:
    """2D plane extracted verbatim from a volume; source = (axis, index)."""

    data: np.ndarray
    source: tuple[int, int]

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class MprResult:
    """Outcome of the mean-pixel-radius estimate over N random slices.

    per_slice_maxdist holds one entry per sampled slice, None for slices whose
    binarization was empty (those contribute 0 to the mean).
    """

    k: int
    per_slice_maxdist: tuple
    slices_used: tuple
    seed: int
    flags: frozenset[str] = field(default_factory=frozenset)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "per_slice_maxdist": [
                None if m is None else float(m) for m in self.per_slice_maxdist
            ],
            "slices_used": [[_AXIS_NAMES[a], int(i)] for a, i in self.slices_used],
            "seed": int(self.seed),
        }


def extract_slices(v: Volume, n: int, seed: int, axes: str = "xyz") -> list[Slice2D]:
    """Sample n distinct (axis, index) planes uniformly, without replacement.

    Deterministic per seed.  axes restricts which plane orientations take part
    (default: all three).
    """
    if n < 1:
        raise ValueError("need n >= 1 slices")
    ax_ids = sorted({_AXIS_NAMES.index(a) for a in axes})
    planes = [(a, i) for a in ax_ids for i in range(v.shape[a])]
    if n > len(planes):
        raise NotEnoughPlanes(f"asked for {n} slices, only {len(planes)} planes exist")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(planes), size=n, replace=False)
    out = []
    for p in picks:
        a, i = planes[int(p)]
        if a == 0:
            plane = v.data[i, :, :]
        elif a == 1:
            plane = v.data[:, i, :]
        else:
            plane = v.data[:, :, i]
        out.append(Slice2D(plane, (a, i)))
    return out


# ---------------------------------------------------------------------------
# Canny edge detection
# ---------------------------------------------------------------------------

def canny2d(s: Slice2D | np.ndarray, sigma: float = 1.0, low: float = 0.1,
            high: float = 0.2) -> np.ndarray:
    """Edge map via Gaussian smoothing, Sobel, NMS, hysteresis.

    low/high are fractions of the maximum gradient magnitude.  Weak pixels
    survive only when 8-connected to a strong pixel.  A constant slice has
    zero gradient everywhere and yields an empty map.
    """
    if not (0 < low < high <= 1):
        raise ValueError(f"need 0 < low < high <= 1, got low={low} high={high}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    img = np.asarray(s.data if isinstance(s, Slice2D) else s, dtype=np.float64)
    sm = ndi.gaussian_filter(img, sigma, truncate=4.0)
    gx = ndi.sobel(sm, axis=1)
    gy = ndi.sobel(sm, axis=0)
    mag = np.hypot(gx, gy)
    gmax = mag.max()
    if gmax == 0:
        return np.zeros(img.shape, dtype=bool)

    # quantize gradient direction into 4 sectors and suppress non-maxima;
    # ties on plateaus break toward the forward neighbor (strict > backward)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    sect = np.zeros(img.shape, dtype=np.int8)
    sect[(ang >= 22.5) & (ang < 67.5)] = 1
    sect[(ang >= 67.5) & (ang < 112.5)] = 2
    sect[(ang >= 112.5) & (ang < 157.5)] = 3
    P = np.pad(mag, 1)

    def nb(dy, dx):
        return P[1 + dy : P.shape[0] - 1 + dy, 1 + dx : P.shape[1] - 1 + dx]

    fwd_back = {0: ((0, 1), (0, -1)), 1: ((1, -1), (-1, 1)),
                2: ((1, 0), (-1, 0)), 3: ((-1, -1), (1, 1))}
    keep = np.zeros(img.shape, dtype=bool)
    for sid, (f, b) in fwd_back.items():
        m = sect == sid
        keep |= m & (mag >= nb(*f)) & (mag > nb(*b))
    nms = np.where(keep, mag, 0.0)

    strong = nms >= high * gmax
    weak = nms >= low * gmax
    if not strong.any():
        return np.zeros(img.shape, dtype=bool)
    lab, _ = ndi.label(weak, structure=np.ones((3, 3), dtype=int))
    good = np.unique(lab[strong])
    return np.isin(lab, good[good > 0])


# ---------------------------------------------------------------------------
# Exact squared Euclidean distance transform (two-pass separable)
# ---------------------------------------------------------------------------

_EDT_INF = float(1 << 40)


def _edt_1d(f: np.ndarray) -> np.ndarray:
    """Lower-envelope-of-parabolas pass; exact for integer-valued f."""
    n = f.shape[0]
    d = np.empty(n)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def edt2d(b: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance from each foreground pixel to the
    nearest background pixel (int64).  Raises NoBackground when no background
    pixel exists; callers must pad or reject, no border convention is applied.
    """
    b = np.asarray(b, dtype=bool)
    if b.all():
        raise NoBackground("mask has no background pixel")
    if not b.any():
        return np.zeros(b.shape, dtype=np.int64)
    g = np.where(b, _EDT_INF, 0.0)
    for axis in range(2):
        g = np.apply_along_axis(_edt_1d, axis, g)
    return np.rint(g).astype(np.int64)


# ---------------------------------------------------------------------------
# 2D medial axis (Guo-Hall two-subiteration thinning)
# ---------------------------------------------------------------------------

def _gh_delete_mask(img: np.ndarray, subiter: int) -> np.ndarray:
    P = np.pad(img, 1)
    p2 = P[:-2, 1:-1]
    p3 = P[:-2, 2:]
    p4 = P[1:-1, 2:]
    p5 = P[2:, 2:]
    p6 = P[2:, 1:-1]
    p7 = P[2:, :-2]
    p8 = P[1:-1, :-2]
    p9 = P[:-2, :-2]
    C = (
        (~p2 & (p3 | p4)).astype(np.int8)
        + (~p4 & (p5 | p6))
        + (~p6 & (p7 | p8))
        + (~p8 & (p9 | p2))
    )
    N1 = (p9 | p2).astype(np.int8) + (p3 | p4) + (p5 | p6) + (p7 | p8)
    N2 = (p2 | p3).astype(np.int8) + (p4 | p5) + (p6 | p7) + (p8 | p9)
    N = np.minimum(N1, N2)
    if subiter == 0:
        m = (p6 | p7 | ~p9) & p8
    else:
        m = (p2 | p3 | ~p5) & p4
    return img & (C == 1) & (N >= 2) & (N <= 3) & ~m


def guo_hall_thin(b: np.ndarray) -> np.ndarray:
    """Two-subiteration thinning to a 1-pixel-wide, topology-preserving skeleton."""
    img = np.asarray(b, dtype=bool).copy()
    while True:
        changed = False
        for sub in (0, 1):
            kill = _gh_delete_mask(img, sub)
            if kill.any():
                img &= ~kill
                changed = True
        if not changed:
            return img


def medial_axis2d(b: np.ndarray):
    """(skeleton mask, radius map): thinning skeleton plus sqrt-EDT radii on it.

    The maximum of the radius map is the maximal inscribed-disk radius along
    the skeleton.
    """
    b = np.asarray(b, dtype=bool)
    sq = edt2d(b)  # NoBackground propagates
    skel = guo_hall_thin(b)
    radius = np.sqrt(sq.astype(np.float64)) * skel
    return skel, radius


# ---------------------------------------------------------------------------
# Mean pixel radius
# ---------------------------------------------------------------------------

def mpr(v: Volume, n: int, seed: int, binarize_threshold: float = 0.5,
        axes: str = "xyz") -> MprResult:
    """Estimate the smoothing/thinning iteration count from N random slices.

    Per slice: binarize, take the maximal medial-axis radius, accumulate twice
    that value; the result is int(2 * mean), truncated toward zero.  Empty
    slices contribute 0 and are recorded as None.
    """
    slices = extract_slices(v, n, seed, axes=axes)
    maxdists: list[float | None] = []
    flags = set()
    for s in slices:
        fg = s.data >= binarize_threshold
        if not fg.any():
            maxdists.append(None)
            continue
        if fg.all():
            # degenerate all-foreground plane: measure against a virtual
            # 1-pixel background ring so the estimate stays total
            padded = np.pad(fg, 1)
            _, radius = medial_axis2d(padded)
            maxdists.append(float(radius.max()))
            flags.add("slice_without_background")
            continue
        _, radius = medial_axis2d(fg)
        maxdists.append(float(radius.max()))
    if all(m is None for m in maxdists):
        raise AllSlicesEmpty(
            f"no slice has foreground at threshold {binarize_threshold}"
        )
    if any(m is None for m in maxdists):
        flags.add("empty_slices")
    contrib = np.array([0.0 if m is None else 2.0 * m for m in maxdists])
    d = stable_sum(contrib)
    k = int(2.0 * (d / n))
    return MprResult(
        k=k,
        per_slice_maxdist=tuple(maxdists),
        slices_used=tuple(s.source for s in slices),
        seed=seed,
        flags=frozenset(flags),
    )


# ---------------------------------------------------------------------------
# 3D thinning via sequential simple-point deletion
# ---------------------------------------------------------------------------

def _build_neighborhood_tables():
    cells = list(itertools.product(range(3), repeat=3))
    index = {c: i for i, c in enumerate(cells)}
    center = index[(1, 1, 1)]

    def cheb(a, b):
        return max(abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2]))

    def city(a, b):
        return abs(a[0] - b[0]) + abs(a[1] - b[1]) + abs(a[2] - b[2])

    adj26 = [[] for _ in cells]
    for a in cells:
        for b in cells:
            if a != b and index[a] != center and index[b] != center and cheb(a, b) == 1:
                adj26[index[a]].append(index[b])
    n18 = [index[c] for c in cells if index[c] != center and city(c, (1, 1, 1)) <= 2]
    n18set = set(n18)
    adj6_18 = {i: [] for i in n18}
    for a in cells:
        ia = index[a]
        if ia not in n18set:
            continue
        for b in cells:
            ib = index[b]
            if ib in n18set and city(a, b) == 1:
                adj6_18[ia].append(ib)
    faces = [index[c] for c in cells if city(c, (1, 1, 1)) == 1]
    return center, adj26, n18, adj6_18, faces


_CENTER, _ADJ26, _N18, _ADJ6_18, _FACES = _build_neighborhood_tables()
_simple_cache: dict[bytes, bool] = {}


def _is_simple(block: np.ndarray) -> bool:
    """Simple-point test for the center voxel of a 3x3x3 block (26/6 pairing).

    The center may be flipped without changing topology iff the foreground of
    the punctured neighborhood has exactly one 26-component and the background
    within the 18-neighborhood has exactly one 6-component touching a face
    neighbor (local topological numbers T26 = T6 = 1).
    """
    key = block.tobytes()
    hit = _simple_cache.get(key)
    if hit is not None:
        return hit
    bits = block.ravel()

    seen = bytearray(27)
    comp26 = 0
    for c in range(27):
        if c == _CENTER or not bits[c] or seen[c]:
            continue
        comp26 += 1
        if comp26 > 1:
            break
        stack = [c]
        seen[c] = 1
        while stack:
            u = stack.pop()
            for w in _ADJ26[u]:
                if bits[w] and not seen[w]:
                    seen[w] = 1
                    stack.append(w)
    ok = comp26 == 1
    if ok:
        seen = bytearray(27)
        comp6 = 0
        for c in _FACES:
            if bits[c] or seen[c]:
                continue
            comp6 += 1
            if comp6 > 1:
                break
            stack = [c]
            seen[c] = 1
            while stack:
                u = stack.pop()
                for w in _ADJ6_18[u]:
                    if not bits[w] and not seen[w]:
                        seen[w] = 1
                        stack.append(w)
        ok = comp6 == 1
    _simple_cache[key] = ok
    return ok


_DIRECTIONS = [(0, 0, 1), (0, 0, -1), (0, 1, 0), (0, -1, 0), (1, 0, 0), (-1, 0, 0)]


def thin3d(b: BinaryVolume) -> BinaryVolume:
    """Erode to a single-voxel-wide centerline, preserving topology exactly.

    Border voxels that are simple points and not curve endpoints (<= 1
    foreground 26-neighbor) are deleted sequentially, sweeping 6 directional
    sub-passes (U, D, N, S, E, W) in lexicographic voxel order, until no
    deletion happens.  Idempotent; every output voxel is an input voxel.
    """
    if b.fg_connectivity != 26:
        raise ValueError("thin3d requires fg 26 / bg 6 connectivity")
    P = np.pad(b.bits, 1)
    cur = P[1:-1, 1:-1, 1:-1]  # live view, stays in sync with deletions
    changed = True
    while changed:
        changed = False
        for d in _DIRECTIONS:
            nb = np.zeros_like(cur)
            dst = tuple(
                slice(max(0, -o), cur.shape[i] - max(0, o)) for i, o in enumerate(d)
            )
            src = tuple(
                slice(max(0, o), cur.shape[i] - max(0, -o)) for i, o in enumerate(d)
            )
            nb[dst] = cur[src]
            for x, y, z in np.argwhere(cur & ~nb):
                if not P[x + 1, y + 1, z + 1]:
                    continue
                block = P[x : x + 3, y : y + 3, z : z + 3]
                n_fg = int(block.sum()) - 1
                if n_fg <= 1:  # curve endpoint, keep
                    continue
                if _is_simple(np.ascontiguousarray(block)):
                    P[x + 1, y + 1, z + 1] = False
                    changed = True
    return BinaryVolume(cur.copy(), fg_connectivity=26)
