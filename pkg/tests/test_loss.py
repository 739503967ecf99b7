import numpy as np
import pytest

from curvitopo.errors import ShapeMismatch
from curvitopo.loss import (
    Tape,
    cldice_loss,
    gats_loss,
    grad_check,
    multihead_loss,
    vmul,
    vsum,
)
from curvitopo.metrics import dice
from curvitopo.phantom import PhantomSpec, generate
from curvitopo.volume import Volume, flip, rotate90

from conftest import random_volume


def bounded_volume(rng, shape=(8, 8, 8)):
    return Volume((0.05 + 0.9 * rng.random(shape)).astype(np.float32))


def test_shape_mismatch():
    a = Volume(np.zeros((4, 4, 4), np.float32))
    b = Volume(np.zeros((4, 4, 5), np.float32))
    with pytest.raises(ShapeMismatch):
        gats_loss(a, b)


def test_alpha_validation():
    a = Volume(np.zeros((4, 4, 4), np.float32))
    with pytest.raises(ValueError):
        gats_loss(a, a, alpha=1.5)


def test_perfect_prediction_minimum():
    for spec in [
        PhantomSpec("straight_tube", (24, 24, 24), radius=3.0, length=12.0),
        PhantomSpec("torus", (28, 28, 28), radius=3.0, major_radius=8.0),
    ]:
        v, _ = generate(spec)
        assert gats_loss(v, v, 0.5, 3).value <= 1e-5
        assert cldice_loss(v, v, 0.65, 3).value <= 1e-5


def test_alpha_zero_equals_soft_dice_bitwise(rng):
    p = random_volume(rng, (8, 8, 8))
    g = random_volume(rng, (8, 8, 8))
    lv = gats_loss(p, g, 0.0, 2)
    assert lv.value == 1.0 - dice(p, g)
    lc = cldice_loss(p, g, 0.0, 2)
    assert lc.value == lv.value


def test_alpha_one_empty_skeleton_flagged():
    pred = Volume(np.full((12, 12, 12), 0.4, np.float32))  # constant: no skeleton
    tube, _ = generate(PhantomSpec("straight_tube", (12, 12, 12), radius=2.0))
    lv = cldice_loss(pred, tube, alpha=1.0, k=2)
    assert lv.value == pytest.approx(1.0, abs=1e-9)
    assert "empty_pred_skeleton" in lv.flags


def test_loss_range(rng):
    for _ in range(5):
        p = random_volume(rng, (6, 6, 6))
        g = random_volume(rng, (6, 6, 6))
        for fn, alpha in ((gats_loss, 0.5), (cldice_loss, 0.65)):
            val = fn(p, g, alpha, 2).value
            assert 0.0 <= val <= 1.0 + 1e-6


def test_multihead_formula():
    assert multihead_loss(1.0, 1.0, 0.8) == 0.0
    assert multihead_loss(1.0, 0.0, 0.8) == pytest.approx(0.8)
    assert multihead_loss(0.9, 0.7, 0.8) == pytest.approx(0.26)


def test_quadratic_grad_check_machine_precision(rng):
    q = bounded_volume(rng, (6, 6, 6))
    rep = grad_check("quadratic", q, q, step=1e-4)
    assert rep.passed
    assert rep.max_rel_error < 1e-8


def test_gats_gradient_matches_finite_differences(rng):
    p = bounded_volume(rng)
    g = bounded_volume(rng)
    rep = grad_check("gats", p, g, step=1e-4, alpha=0.5, k=2, seed=11)
    assert rep.passed, rep.violations[:3]
    assert rep.max_rel_error < 1e-3


def test_cldice_gradient_matches_finite_differences(rng):
    p = bounded_volume(rng)
    g = bounded_volume(rng)
    rep = grad_check("cldice", p, g, step=1e-4, alpha=0.65, k=2, seed=11)
    assert rep.passed, rep.violations[:3]
    assert rep.max_rel_error < 1e-3


def test_pool_tie_reported_not_masked():
    # a thin ridge on an exactly-constant background: the background voxels
    # tie inside every min/max window they share, the analytic subgradient
    # routes whole adjoints to the first element in raster order while the
    # central difference sees the averaged two-sided slope, and the checker
    # must surface those coordinates instead of passing silently
    data = np.full((8, 8, 8), 0.1, np.float32)
    data[4, 4, 1:7] = 0.9
    pred = Volume(data)
    target, _ = generate(PhantomSpec("straight_tube", (8, 8, 8), radius=1.0))
    rep = grad_check("cldice", pred, target, step=1e-4, alpha=1.0, k=1,
                     max_coords=600)
    assert not rep.passed
    assert rep.n_checked > 0
    assert all(r >= rep.threshold for *_q, r in rep.violations)


def test_gradient_zero_outside_receptive_field():
    # alpha=1 isolates the pooling term; the dice term has global support by
    # construction (its denominator sums every voxel)
    shape = (16, 16, 16)
    data = np.zeros(shape, np.float32)
    data[8, 8, 7:10] = 1.0
    v = Volume(data)
    k = 1
    for fn in (gats_loss, cldice_loss):
        lv = fn(v, v, alpha=1.0, k=k)
        grad = lv.gradient.data
        idx = np.indices(shape)
        cheb = np.maximum.reduce(
            [np.abs(idx[0] - 8), np.abs(idx[1] - 8), np.abs(idx[2] - 8)]
        )
        far = cheb > (2 * k + 3) + 1  # halo: structure spans z 7..9
        assert not grad[far].any()


def test_loss_value_equivariant(rng):
    p = random_volume(rng, (6, 6, 6))
    g = random_volume(rng, (6, 6, 6))
    base_g = gats_loss(p, g, 0.5, 2).value
    base_c = cldice_loss(p, g, 0.65, 2).value
    for axis in "xyz":
        rp, rg = rotate90(p, axis, 1), rotate90(g, axis, 1)
        assert gats_loss(rp, rg, 0.5, 2).value == base_g
        assert cldice_loss(rp, rg, 0.65, 2).value == base_c
        fp, fg = flip(p, axis), flip(g, axis)
        assert gats_loss(fp, fg, 0.5, 2).value == base_g
        assert cldice_loss(fp, fg, 0.65, 2).value == base_c


def test_gradient_shape_and_finiteness(rng):
    p = random_volume(rng, (7, 6, 5))
    g = random_volume(rng, (7, 6, 5))
    lv = gats_loss(p, g, 0.5, 2)
    assert lv.gradient.shape == p.shape
    assert np.isfinite(lv.gradient.data).all()


def test_tape_backward_visits_each_node_once(rng):
    # sum(p*p) has gradient 2p through one mul and one vsum node
    tape = Tape()
    arr = rng.random((4, 4, 4))
    p = tape.leaf(arr)
    out = vsum(vmul(p, p))
    tape.backward(out)
    assert np.allclose(p.grad, 2 * arr)
