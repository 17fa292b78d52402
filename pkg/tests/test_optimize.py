import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshretarget.geometry import Mesh, ObjectBox, apply_motion, build_rigid_mesh, check_foldover
from meshretarget.objective import Objective, RetargetJob, geometric_loss, total_loss
from meshretarget.optimize import (
    AdamState,
    OptimConfig,
    _reject_folds,
    adam_step,
    grad_boundary,
    grad_geometric,
    grad_object_fd,
    optimize_motion,
)
from meshretarget.synthetic import make_fixture


def ramp_image(size=224):
    y, x = np.mgrid[0:size, 0:size] + 0.5
    return np.stack([0.1 + 0.8 * x / size, 0.1 + 0.8 * y / size, 0.1 + 0.4 * (x + y) / size], -1)


def brute_object_gradient(img, motion, job, step):
    obj = Objective(img, job)
    grad = np.zeros_like(motion)
    for idx in np.ndindex(motion.shape):
        a = motion.copy()
        a[idx] += step
        b = motion.copy()
        b[idx] -= step
        grad[idx] = (obj.evaluate(a).report.object - obj.evaluate(b).report.object) / (2 * step)
    return grad


def test_geometric_gradient_zero_at_exact_scale():
    job = RetargetJob(224, 224, 112, 112, boxes=(ObjectBox(20, 20, 200, 200),))
    assert np.all(grad_geometric(job.mesh_in, job.zero_motion(), job) == 0)


def test_geometric_gradient_without_boxes_is_zero(rng):
    job = RetargetJob(224, 224, 112, 224)
    assert np.all(grad_geometric(job.mesh_in, rng.normal(0, 3, (9, 9, 2)), job) == 0)


def test_geometric_gradient_single_edge_fd(rng):
    box = ObjectBox(27, 27, 57, 29)
    job = RetargetJob(224, 224, 112, 224, boxes=(box,))
    motion = job.zero_motion()
    motion[1, 2] = (1.3, -0.4)
    g = grad_geometric(job.mesh_in, motion, job)
    h = 1e-4
    for idx in [(1, 1, 0), (1, 1, 1), (1, 2, 0), (1, 2, 1)]:
        a, b = motion.copy(), motion.copy()
        a[idx] += h
        b[idx] -= h
        fa = geometric_loss(job.mesh_in, apply_motion(job.mesh_out, a), [box], job.s)
        fb = geometric_loss(job.mesh_in, apply_motion(job.mesh_out, b), [box], job.s)
        num = (fa - fb) / (2 * h)
        assert abs(g[idx] - num) <= 1e-5 * max(abs(num), 1e-12)
    assert np.count_nonzero(g) == 4


def test_boundary_gradient_examples():
    job = RetargetJob(224, 224, 112, 224)
    f = job.zero_motion()
    assert np.all(grad_boundary(f, job) == 0)
    f[0, 3] = (0.0, 3.0)
    g = grad_boundary(f, job)
    assert g[0, 3, 1] == 1.0 and np.count_nonzero(g) == 1
    f[0, 3] = (10.0, 0.0)
    g = grad_boundary(f, job)
    assert g[0, 3, 0] == 1.0 and np.count_nonzero(g) == 1
    f[0, 3] = (-6.0, 0.0)  # inside the slack
    assert np.all(grad_boundary(f, job) == 0)


def test_object_gradient_flat_minimum():
    img = np.full((224, 224, 3), 0.3)
    img[56:168, 56:168] = (0.8, 0.2, 0.5)
    job = RetargetJob(224, 224, 112, 112, boxes=(ObjectBox(56, 56, 168, 168),))
    assert np.abs(grad_object_fd(img, job.zero_motion(), job)).max() < 1e-6


def test_object_gradient_matches_full_fd():
    rng = np.random.default_rng(4)
    img = rng.random((64, 64, 3))
    job = RetargetJob(64, 64, 40, 64, rows=4, cols=4,
                      boxes=(ObjectBox(4, 6, 30, 40), ObjectBox(40, 20, 60, 30)))
    motion = rng.normal(0, 0.8, job.zero_motion().shape)
    fast, evaluated = grad_object_fd(img, motion, job, 0.5, return_mask=True)
    slow = brute_object_gradient(img, motion, job, 0.5)
    assert np.allclose(fast, slow, rtol=0, atol=1e-10)
    # vertices that were skipped are exactly zero in the full FD as well
    assert np.all(slow[~evaluated] == 0)


def test_far_vertex_is_short_circuited():
    img = np.random.default_rng(5).random((224, 224, 3))
    job = RetargetJob(224, 224, 112, 224, boxes=(ObjectBox(10, 10, 50, 50),))
    g, evaluated = grad_object_fd(img, job.zero_motion(), job, return_mask=True)
    assert not evaluated[8, 8].any()
    assert np.all(g[8, 8] == 0)
    slow = brute_object_gradient(img, job.zero_motion(), job, 0.5)
    assert np.all(slow[8, 8] == 0)


def test_object_gradient_stable_under_step_halving():
    # exact resampling of a linear ramp keeps the loss smooth away from box moves
    job = RetargetJob(224, 224, 112, 224, boxes=(ObjectBox(30, 30, 190, 190),))
    motion = np.random.default_rng(0).normal(0, 1.0, job.zero_motion().shape)
    img = ramp_image()
    g1 = grad_object_fd(img, motion, job, 0.5)
    g2 = grad_object_fd(img, motion, job, 0.25)
    inner = (slice(3, 6), slice(3, 6))
    assert np.linalg.norm(g1[inner] - g2[inner]) <= 0.05 * np.linalg.norm(g2[inner])


def test_adam_zero_gradient_keeps_params():
    cfg = OptimConfig()
    p = np.arange(6.0).reshape(3, 2)
    state = AdamState.zeros(p.shape)
    for t in range(5):
        p2 = adam_step(state, p, np.zeros_like(p), t, cfg)
        assert np.array_equal(p2, p)


@settings(max_examples=50, deadline=None)
@given(g=st.floats(1e-3, 1e3), sign=st.sampled_from([-1.0, 1.0]), lr=st.floats(1e-3, 2.0))
def test_adam_first_step_has_size_lr(g, sign, lr):
    cfg = OptimConfig(learning_rate=lr, adam_eps=0.0)
    state = AdamState.zeros((1,))
    p = adam_step(state, np.zeros(1), np.array([sign * g]), 0, cfg)
    assert p[0] == pytest.approx(-sign * lr, rel=1e-12)


def test_adam_learning_rate_decays():
    cfg = OptimConfig(learning_rate=1.0, decay=0.5, adam_eps=0.0, adam_beta1=0.0, adam_beta2=0.0)
    state = AdamState.zeros((1,))
    p = adam_step(state, np.zeros(1), np.ones(1), 3, cfg)
    assert p[0] == pytest.approx(-0.125, rel=1e-12)


def test_adam_quadratic_smoke():
    cfg = OptimConfig(learning_rate=0.05, decay=1.0)
    target = np.array([1.5, -2.0, 0.3])
    x = np.zeros(3)
    state = AdamState.zeros(3)
    for t in range(2000):
        x = adam_step(state, x, 2 * (x - target), t, cfg)
        if np.linalg.norm(x - target) < 1e-3:
            break
    assert np.linalg.norm(x - target) < 1e-3


def test_config_validation():
    for bad in (dict(learning_rate=0), dict(decay=0), dict(decay=1.5), dict(fd_step=0), dict(max_iters=0)):
        with pytest.raises(ValueError):
            OptimConfig(**bad)


def test_identity_job_stays_at_zero(rng):
    img = rng.random((224, 224, 3))
    job = RetargetJob(224, 224, 224, 224, boxes=(ObjectBox(30, 40, 150, 190),))
    obj = Objective(img, job)
    ev = obj.evaluate(job.zero_motion())
    assert ev.report.total <= 1e-9
    assert np.all(grad_geometric(job.mesh_in, job.zero_motion(), job) == 0)
    assert np.all(grad_boundary(job.zero_motion(), job) == 0)
    assert np.all(grad_object_fd(img, job.zero_motion(), job) == 0)
    res = optimize_motion(img, job)
    assert res.iterations <= 50
    assert not np.any(res.motion)
    assert res.best_loss < 1e-6


@pytest.fixture(scope="module")
def fixture_run():
    img, boxes = make_fixture(1)
    job = RetargetJob(224, 224, 112, 224, boxes=tuple(boxes))
    cfg = OptimConfig(max_iters=40)
    return img, job, cfg, optimize_motion(img, job, cfg)


def test_optimizer_beats_pure_scale(fixture_run):
    img, job, _, res = fixture_run
    scale_loss = total_loss(img, job.zero_motion(), job).total
    assert res.best_loss < scale_loss
    assert res.trace[0]["total"] == pytest.approx(scale_loss, rel=1e-12)
    assert total_loss(img, res.motion, job).total == pytest.approx(res.best_loss, rel=1e-12)


def test_best_so_far_is_non_increasing(fixture_run):
    _, _, _, res = fixture_run
    best = np.minimum.accumulate([e["total"] for e in res.trace])
    assert np.all(np.diff(best) <= 0)
    assert best[-1] == pytest.approx(res.best_loss, rel=1e-12)


def test_optimizer_is_deterministic(fixture_run):
    img, job, cfg, res = fixture_run
    again = optimize_motion(img, job, cfg)
    assert np.array_equal(again.motion, res.motion)
    assert again.trace == res.trace


def test_optimised_mesh_is_fold_free(fixture_run):
    _, job, _, res = fixture_run
    assert not res.foldover
    assert check_foldover(apply_motion(job.mesh_out, res.motion)) == []


def test_fold_steps_are_reverted():
    base = build_rigid_mesh(112, 224).vertices
    old = np.zeros_like(base)
    new = old.copy()
    new[3, 3, 0] = 30.0  # crosses the right neighbour at +14 px
    new[6, 6, 1] = 2.0   # harmless
    fixed, reverted = _reject_folds(base, old, new)
    assert fixed[3, 3, 0] == 0.0 and fixed[6, 6, 1] == 2.0
    assert reverted >= 1
    assert not check_foldover(Mesh(8, 8, 112, 224, base + fixed))
