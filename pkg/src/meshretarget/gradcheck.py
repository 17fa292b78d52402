"""Finite-difference check of the analytic geometric and boundary gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ObjectBox, apply_motion
from .objective import RetargetJob, boundary_loss, geometric_loss, _edge_residuals, edge_weights
from .optimize import grad_boundary, grad_geometric

__all__ = ["GradcheckReport", "default_job", "run_gradcheck", "smooth_loss"]

FD_STEP = 1e-4
REL_TOL = 1e-4
MAX_SKIP_FRACTION = 0.05


@dataclass
class GradcheckReport:
    trials: int
    components: int
    skipped: int
    max_rel_error: float
    worst_trial: int

    @property
    def skip_fraction(self) -> float:
        return self.skipped / max(self.components, 1)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= REL_TOL and self.skip_fraction <= MAX_SKIP_FRACTION

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "components": self.components,
            "skipped": self.skipped,
            "skip_fraction": self.skip_fraction,
            "max_rel_error": self.max_rel_error,
            "worst_trial": self.worst_trial,
            "passed": self.passed,
        }


def default_job() -> RetargetJob:
    """224x224 -> 112x224 on an 8x8 mesh with two boxes covering several cells."""
    boxes = (ObjectBox(20.0, 30.0, 100.0, 150.0, "a"), ObjectBox(120.0, 60.0, 210.0, 200.0, "b"))
    return RetargetJob(224, 224, 112, 224, boxes=boxes)


def smooth_loss(job: RetargetJob, motion) -> float:
    """``lambda_g * l_g + lambda_b * l_b`` at ``motion``."""
    mesh_f = apply_motion(job.mesh_out, motion)
    w = job.weights
    geo = geometric_loss(job.mesh_in, mesh_f, job.boxes, job.s, job.normalize_losses, job.squared_geometric)
    bnd = boundary_loss(motion, job.mesh_out, job.d_u, job.d_v, job.normalize_losses)
    return w.lambda_g * geo + w.lambda_b * bnd


def analytic_gradient(job: RetargetJob, motion) -> np.ndarray:
    w = job.weights
    return w.lambda_g * grad_geometric(job.mesh_in, motion, job) + w.lambda_b * grad_boundary(motion, job)


def _kink_mask(job: RetargetJob, motion, radius: float) -> np.ndarray:
    """Components within ``radius`` of a point where the loss is not differentiable."""
    f = np.asarray(motion)
    near = np.zeros(f.shape, dtype=bool)
    edge = np.zeros(f.shape[:2], dtype=bool)
    edge[[0, -1], :] = True
    edge[:, [0, -1]] = True
    top = np.zeros(f.shape[:2], dtype=bool)
    top[[0, -1], :] = True
    side = np.zeros(f.shape[:2], dtype=bool)
    side[:, [0, -1]] = True
    ax = np.abs(f[..., 0])
    ay = np.abs(f[..., 1])
    near[..., 1] |= top & (ay < radius)
    near[..., 0] |= top & (np.abs(ax - job.d_u) < radius)
    near[..., 0] |= side & (ax < radius)
    near[..., 1] |= side & (np.abs(ay - job.d_v) < radius)
    if not job.squared_geometric and job.boxes:
        bh, bv = edge_weights(job.mesh_in, job.boxes)
        rh, rv = _edge_residuals(job.mesh_in.vertices, job.mesh_out.vertices + f, job.s)
        # a vertex moves each incident edge by at most radius per component
        kh = bh & (np.linalg.norm(rh, axis=-1) < 2 * radius)
        kv = bv & (np.linalg.norm(rv, axis=-1) < 2 * radius)
        bad = np.zeros(f.shape[:2], dtype=bool)
        bad[:, :-1] |= kh
        bad[:, 1:] |= kh
        bad[:-1, :] |= kv
        bad[1:, :] |= kv
        near |= bad[..., None]
    return near


def numeric_gradient(job: RetargetJob, motion, step: float = FD_STEP) -> np.ndarray:
    motion = np.asarray(motion, dtype=np.float64)
    grad = np.zeros_like(motion)
    work = motion.copy()
    for idx in np.ndindex(motion.shape):
        orig = work[idx]
        work[idx] = orig + step
        fp = smooth_loss(job, work)
        work[idx] = orig - step
        fm = smooth_loss(job, work)
        work[idx] = orig
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def relative_errors(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    return np.divide(np.abs(a - n), scale, out=np.zeros_like(a), where=scale > 1e-12)


def run_gradcheck(seed: int = 0, trials: int = 20, job: RetargetJob | None = None,
                  sigma: float = 3.0, corrupt: bool = False) -> GradcheckReport:
    """Compare analytic and central-difference gradients at random motion fields.

    Components whose FD stencil could straddle a kink (within
    ``max(1e-6, step)`` of it) are skipped and counted.  ``corrupt`` perturbs
    the analytic gradient and must make the check fail.
    """
    job = job or default_job()
    rng = np.random.default_rng(seed)
    radius = max(1e-6, FD_STEP)
    worst, worst_trial, skipped, total = 0.0, -1, 0, 0
    for t in range(trials):
        motion = rng.normal(0.0, sigma, size=job.zero_motion().shape)
        a = analytic_gradient(job, motion)
        if corrupt:
            a = a * 1.01 + 1e-3
        n = numeric_gradient(job, motion)
        skip = _kink_mask(job, motion, radius)
        rel = relative_errors(a, n)[~skip]
        skipped += int(skip.sum())
        total += motion.size
        if rel.size and rel.max() > worst:
            worst, worst_trial = float(rel.max()), t
    return GradcheckReport(trials, total, skipped, worst, worst_trial)
