import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshretarget.errors import DegenerateInputError, UnsupportedOperationError
from meshretarget.geometry import ObjectBox, build_rigid_mesh
from meshretarget.metric import (
    VANISHED,
    baseline_cr,
    baseline_scl,
    best_crop_window,
    covered_area,
    distortion_error,
    measure_result,
)

boxes_st = st.lists(
    st.tuples(st.floats(0, 150), st.floats(0, 150), st.floats(2, 70), st.floats(2, 70)),
    min_size=1, max_size=4,
).map(lambda ts: [ObjectBox(x, y, x + w, y + h, str(k)) for k, (x, y, w, h) in enumerate(ts)])


def test_distortion_error_examples():
    a = [ObjectBox(0, 0, 40, 20, "a"), ObjectBox(10, 10, 30, 50, "b")]
    assert distortion_error(a, a).mean_error == 0.0
    rep = distortion_error(a, [VANISHED, a[1]])
    assert rep.mean_error == 0.5 and rep.vanished_count == 1
    assert rep.per_object[0].error == 1.0 and rep.per_object[0].aspect_out == 0.0
    with pytest.raises(DegenerateInputError):
        distortion_error([], [])


@settings(max_examples=60, deadline=None)
@given(boxes=boxes_st, k=st.sampled_from([0.5, 0.75, 1.25, 1.5, 1.75]))
def test_scl_closed_form(boxes, k):
    _, rule = baseline_scl(np.zeros((10, 10)), round(10 * k) or 1, 10)
    out = [b.scaled(k, 1.0) for b in boxes]
    assert abs(distortion_error(boxes, out).mean_error - abs(1 - k)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(boxes=boxes_st, c=st.floats(0.05, 20))
def test_metric_is_scale_invariant(boxes, c):
    out = [ObjectBox(b.x0, b.y0, b.x0 + b.width * 1.3, b.y1) for b in boxes]
    base = distortion_error(boxes, out).mean_error
    scaled = distortion_error([b.scaled(c, c) for b in boxes], [b.scaled(c, c) for b in out]).mean_error
    assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(boxes=boxes_st)
def test_errors_are_non_negative_and_zero_when_aspect_kept(boxes):
    rep = distortion_error(boxes, [b.scaled(0.7, 0.7) for b in boxes])
    assert all(o.error >= 0 for o in rep.per_object)
    assert rep.mean_error == pytest.approx(0.0, abs=1e-12)


def test_measure_result_identity_and_scale():
    src = build_rigid_mesh(224, 224)
    boxes = [ObjectBox(30, 30, 100, 140), ObjectBox(120, 40, 200, 90)]
    assert measure_result(src, src, boxes, (224, 224)).mean_error == 0.0
    half = build_rigid_mesh(112, 224)
    assert measure_result(src, half, boxes, (112, 224)).mean_error == pytest.approx(0.5, abs=1e-12)


def test_measure_result_marks_clipped_objects_vanished():
    src = build_rigid_mesh(224, 224)
    dst = build_rigid_mesh(224, 224)
    shifted = type(dst)(8, 8, 224, 224, dst.vertices + [220.0, 0.0])
    boxes = [ObjectBox(0, 0, 150, 50)]
    rep = measure_result(src, shifted, boxes, (224, 224))
    assert rep.vanished_count == 1 and rep.mean_error == 1.0


def test_scl_baseline_image():
    img = np.random.default_rng(0).random((20, 30, 3))
    out, rule = baseline_scl(img, 30, 20)
    assert np.array_equal(out, img)
    out, rule = baseline_scl(img, 45, 20)
    assert out.shape == (20, 45, 3)
    b = rule(ObjectBox(2, 2, 10, 12))
    assert (b.x0, b.x1, b.y0, b.y1) == (3, 15, 2, 12)


def test_cr_keeps_inner_object_exact():
    img = np.zeros((224, 224, 3))
    box = ObjectBox(80, 50, 140, 150)
    out, rule, win = baseline_cr(img, [box], 112, 224)
    assert out.shape == (224, 112, 3)
    assert distortion_error([box], [rule(box)]).mean_error == 0.0


def test_cr_clips_wide_object():
    box = ObjectBox(20, 50, 200, 150)
    _, rule, _ = baseline_cr(np.zeros((224, 224)), [box], 112, 224)
    assert distortion_error([box], [rule(box)]).mean_error > 0


def test_cr_opposite_objects_one_vanishes():
    boxes = [ObjectBox(0, 80, 60, 140, "l"), ObjectBox(164, 80, 224, 140, "r")]
    _, rule, win = baseline_cr(np.zeros((224, 224)), boxes, 100, 224)
    mapped = [rule(b) for b in boxes]
    assert sum(m is VANISHED for m in mapped) == 1
    assert distortion_error(boxes, mapped).mean_error >= 0.5
    # exhaustive scan agrees on the best coverage
    best = max(covered_area(boxes, x, 0, 100, 224) for x in range(0, 125))
    assert win.covered == best


def test_cr_refuses_enlargement():
    with pytest.raises(UnsupportedOperationError):
        baseline_cr(np.zeros((10, 10)), [ObjectBox(1, 1, 5, 5)], 12, 10)


def test_cr_window_beats_random_windows():
    rng = np.random.default_rng(9)
    W, H, w, h = 640, 427, 400, 427
    boxes = []
    for k in range(4):
        x0, y0 = rng.uniform(0, W - 100), rng.uniform(0, H - 100)
        boxes.append(ObjectBox(x0, y0, x0 + rng.uniform(20, 100), y0 + rng.uniform(20, 100), str(k)))
    win = best_crop_window(boxes, W, H, w, h)
    assert 0 <= win.x <= W - w and 0 <= win.y <= H - h
    for x in rng.uniform(0, W - w, 1000):
        assert win.covered >= covered_area(boxes, x, 0, w, h) - 1e-9
