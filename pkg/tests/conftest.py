import numpy as np
import pytest

from curvitopo.volume import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_volume(rng, shape=(6, 7, 8), lo=0.0, hi=1.0):
    return Volume((lo + (hi - lo) * rng.random(shape)).astype(np.float32))


def ball_mask(shape, center, r):
    """Solid ball: voxels within Euclidean distance r of center."""
    idx = np.indices(shape, dtype=np.float64)
    d2 = sum((idx[i] - center[i]) ** 2 for i in range(3))
    return d2 <= r * r


def independent_euler(bits):
    """chi of the voxel cubical complex by directly counting covered cells.

    A lattice cell with extent e (0 point-like, 1 extended) along an axis is
    covered iff one of the voxels bounding it is foreground: two candidate
    voxels along point-like axes, one along extended axes.  Independent of
    the doubled-grid counting inside the metrics module.
    """
    n = bits.shape
    Q = np.pad(bits, 1)

    def count(extents):
        starts = [((0, 1) if e == 0 else (1,)) for e in extents]
        lens = [n[i] + 1 - extents[i] for i in range(3)]
        out = np.zeros(lens, bool)
        for sx in starts[0]:
            for sy in starts[1]:
                for sz in starts[2]:
                    out |= Q[sx : sx + lens[0], sy : sy + lens[1], sz : sz + lens[2]]
        return int(out.sum())

    V = count((0, 0, 0))
    E = count((1, 0, 0)) + count((0, 1, 0)) + count((0, 0, 1))
    F = count((0, 1, 1)) + count((1, 0, 1)) + count((1, 1, 0))
    C = int(bits.sum())
    return V - E + F - C
