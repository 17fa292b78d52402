import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshretarget.geometry import Mesh, ObjectBox, apply_motion, build_rigid_mesh
from meshretarget.objective import (
    LossWeights,
    Objective,
    RetargetJob,
    boundary_loss,
    edge_weights,
    geometric_loss,
    object_loss,
    total_loss,
)


def brute_object_loss(img, warped, boxes_in, boxes_out):
    """Pixel loop over integer boxes with s = 1 (the scaled crop is the crop itself)."""
    total = 0.0
    for bi, bo in zip(boxes_in, boxes_out):
        hi, wi = int(bi.height), int(bi.width)
        ho, wo = int(bo.height), int(bo.width)
        hc, wc = max(hi, ho), max(wi, wo)
        acc = 0.0
        for r in range(hc):
            for c in range(wc):
                for ch in range(img.shape[2]):
                    a = img[int(bi.y0) + r, int(bi.x0) + c, ch] if r < hi and c < wi else 0.0
                    b = warped[int(bo.y0) + r, int(bo.x0) + c, ch] if r < ho and c < wo else 0.0
                    acc += (a - b) ** 2
        total += acc / (hc * wc * img.shape[2])
    return total / len(boxes_in)


def test_object_loss_constant_crops():
    img = np.zeros((40, 40, 1))
    img[0:20, 0:20] = 1.0
    out = np.zeros((20, 20, 1))
    out[0:8, 0:10] = 1.0
    loss = object_loss(img, out, [ObjectBox(0, 0, 20, 20)], [ObjectBox(0, 0, 10, 8)], 0.5)
    assert loss == pytest.approx(0.2, abs=1e-12)


def test_object_loss_matches_pixel_loop(rng):
    img = rng.random((30, 30, 3))
    out = rng.random((25, 25, 3))
    bi = [ObjectBox(2, 3, 12, 10), ObjectBox(15, 15, 28, 29)]
    bo = [ObjectBox(1, 1, 9, 12), ObjectBox(10, 12, 24, 20)]
    assert object_loss(img, out, bi, bo, 1.0) == pytest.approx(brute_object_loss(img, out, bi, bo), rel=1e-12)


def test_object_loss_zero_at_exact_scale(rng):
    # uniform 0.5 scale: the warp is the same resampling as the crop rescale
    img = rng.random((224, 224, 3))
    box = ObjectBox(56, 56, 168, 168)
    job = RetargetJob(224, 224, 112, 112, boxes=(box,))
    assert job.s == 0.5
    report = total_loss(img, job.zero_motion(), job)
    assert report.object < 1e-12
    assert report.geometric == 0.0


def test_geometric_loss_examples():
    mi = build_rigid_mesh(224, 224)
    box = ObjectBox(50, 50, 180, 180)
    s = math.sqrt(0.5)
    scaled = Mesh(8, 8, 224 * s, 224 * s, mi.vertices * s)
    assert geometric_loss(mi, scaled, [box], s) == 0.0
    assert geometric_loss(mi, mi, [], s) == 0.0
    # a box holding exactly one horizontal edge: (28,28) -> (56,28)
    one = ObjectBox(27, 27, 57, 29)
    bh, bv = edge_weights(mi, [one])
    assert bh.sum() == 1 and bv.sum() == 0
    expected = 28 * (1 - s)
    assert geometric_loss(mi, mi, [one], s) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(8.201, abs=1e-3)


def test_edge_weights_need_one_box_for_both_endpoints():
    mi = build_rigid_mesh(224, 224)
    # the two boxes touch vertex columns 1 and 2 separately
    bh, bv = edge_weights(mi, [ObjectBox(20, 20, 40, 40), ObjectBox(50, 20, 60, 40)])
    assert bh.sum() == 0 and bv.sum() == 0
    bh, _ = edge_weights(mi, [ObjectBox(28, 28, 56, 28.5)])
    assert bh[1, 1] and bh.sum() == 1


def test_geometric_loss_translation_invariant(rng):
    mi = build_rigid_mesh(224, 224)
    mf = apply_motion(build_rigid_mesh(112, 224), rng.normal(0, 2, (9, 9, 2)))
    moved = apply_motion(mf, np.broadcast_to([13.0, -4.0], (9, 9, 2)))
    boxes = [ObjectBox(10, 10, 150, 200)]
    a = geometric_loss(mi, mf, boxes, 0.7)
    assert geometric_loss(mi, moved, boxes, 0.7) == pytest.approx(a, rel=1e-12)


def test_geometric_loss_vanishes_for_edge_free_box(rng):
    mi = build_rigid_mesh(224, 224)
    mf = apply_motion(mi, rng.normal(0, 2, (9, 9, 2)))
    assert geometric_loss(mi, mf, [ObjectBox(30, 30, 50, 50)], 0.7) == 0.0


def test_geometric_loss_variants(rng):
    mi = build_rigid_mesh(224, 224)
    mf = apply_motion(mi, rng.normal(0, 2, (9, 9, 2)))
    boxes = [ObjectBox(0, 0, 224, 224)]
    raw = geometric_loss(mi, mf, boxes, 0.8)
    count = 2 * 8 * 9
    assert geometric_loss(mi, mf, boxes, 0.8, normalize=True) == pytest.approx(raw / count, rel=1e-12)
    rh = 0.8 * np.diff(mi.vertices, axis=1) - np.diff(mf.vertices, axis=1)
    rv = 0.8 * np.diff(mi.vertices, axis=0) - np.diff(mf.vertices, axis=0)
    sq = np.sum(rh ** 2) + np.sum(rv ** 2)
    assert geometric_loss(mi, mf, boxes, 0.8, squared=True) == pytest.approx(sq, rel=1e-12)


def test_boundary_loss_examples():
    mo = build_rigid_mesh(112, 224)
    d_u, d_v = 112 / 16, 224 / 16
    f = np.zeros((9, 9, 2))
    assert boundary_loss(f, mo, d_u, d_v) == 0.0
    f[0, 3] = (0, 3)
    assert boundary_loss(f, mo, d_u, d_v) == 3.0
    f[0, 3] = (10, 0)
    assert d_u == 7.0
    assert boundary_loss(f, mo, d_u, d_v) == 3.0


def test_boundary_corner_counts_in_both_groups():
    mo = build_rigid_mesh(112, 224)
    f = np.zeros((9, 9, 2))
    f[0, 0] = (2.0, 3.0)
    # |f_y| on the top row + |f_x| on the left column
    assert boundary_loss(f, mo, 7.0, 14.0) == 5.0


@settings(max_examples=50, deadline=None)
@given(t=st.floats(-7.0, 7.0))
def test_boundary_uniform_horizontal_shift(t):
    mo = build_rigid_mesh(112, 224)
    f = np.zeros((9, 9, 2))
    f[..., 0] = t
    assert boundary_loss(f, mo, 7.0, 14.0) == pytest.approx(2 * 9 * abs(t), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.01, 20))
def test_loss_components_non_negative_and_decompose(seed, sigma):
    r = np.random.default_rng(seed)
    img = r.random((48, 48, 3))
    job = RetargetJob(48, 48, 24, 48, rows=4, cols=4, boxes=(ObjectBox(5, 5, 30, 40),),
                      weights=LossWeights(1.0, 0.1, 0.01))
    motion = r.normal(0, sigma, job.zero_motion().shape)
    rep = total_loss(img, motion, job)
    assert rep.object >= 0 and rep.geometric >= 0 and rep.boundary >= 0
    combined = rep.object + 0.1 * rep.geometric + 0.01 * rep.boundary
    assert rep.total == pytest.approx(combined, rel=1e-12, abs=1e-300)


def test_identity_job_total_is_zero(rng):
    img = rng.random((224, 224, 3))
    job = RetargetJob(224, 224, 224, 224, boxes=(ObjectBox(30, 40, 150, 190),))
    assert total_loss(img, job.zero_motion(), job).total <= 1e-9


def test_pure_scale_has_positive_geometric_term(rng):
    img = rng.random((224, 224, 3))
    job = RetargetJob(224, 224, 112, 224, boxes=(ObjectBox(56, 56, 168, 168),))
    rep = total_loss(img, job.zero_motion(), job)
    assert rep.geometric > 0
    # horizontal edges shrink to 14 px, vertical stay 28; each is off from s*28
    s = math.sqrt(0.5)
    bh, bv = edge_weights(job.mesh_in, job.boxes)
    expected = bh.sum() * abs(s * 28 - 14) + bv.sum() * abs(s * 28 - 28)
    assert rep.geometric == pytest.approx(expected, rel=1e-12)


def test_default_job_settings():
    job = RetargetJob(224, 224, 112, 224)
    assert (job.weights.lambda_o, job.weights.lambda_g, job.weights.lambda_b) == (1.0, 0.1, 0.01)
    assert (job.rows, job.cols) == (8, 8)
    assert job.s == pytest.approx(math.sqrt(0.5), rel=1e-15)
    assert (job.d_u, job.d_v) == (7.0, 14.0)
    assert RetargetJob(224, 224, 112, 224, scale_s=1.0).s == 1.0


def test_boxes_are_remapped_from_the_current_mesh(rng):
    img = rng.random((224, 224, 3))
    job = RetargetJob(224, 224, 112, 224, boxes=(ObjectBox(56, 56, 168, 168),))
    obj = Objective(img, job)
    motion = job.zero_motion()
    motion[2:7, 2:7, 0] += 3.0
    ev = obj.evaluate(motion)
    b = ev.boxes_out[0]
    assert (b.x0, b.x1) == pytest.approx((31.0, 87.0), abs=1e-9)
    assert (b.y0, b.y1) == pytest.approx((56.0, 168.0), abs=1e-9)


def test_job_validation():
    with pytest.raises(ValueError):
        RetargetJob(0, 10, 10, 10)
    with pytest.raises(ValueError):
        RetargetJob(10, 10, 10, 10, scale_s=0)
    with pytest.raises(ValueError):
        LossWeights(lambda_o=-1)
