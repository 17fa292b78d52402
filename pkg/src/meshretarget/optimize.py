"""Per-image minimisation of the retargeting objective over the motion field."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import OptimizationError
from .geometry import apply_motion, foldover_mask
from .objective import Evaluation, Objective, RetargetJob, boundary_vertex_count, _edge_residuals

logger = logging.getLogger(__name__)

__all__ = [
    "AdamState",
    "OptimConfig",
    "OptimResult",
    "adam_step",
    "grad_boundary",
    "grad_geometric",
    "grad_object_fd",
    "optimize_motion",
]


@dataclass(frozen=True)
class OptimConfig:
    """Optimizer settings.

    The step is in pixels of vertex displacement; the defaults were fixed on
    the synthetic fixture suite (see README).  ``seed`` is kept for
    reproducibility bookkeeping; the optimizer itself draws no random numbers.
    """

    learning_rate: float = 1.0
    decay: float = 0.98
    max_iters: int = 150
    tolerance: float = 1e-5
    fd_step: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    window: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def grad_geometric(mesh_in, motion, job: RetargetJob) -> np.ndarray:
    """Exact gradient of the geometric loss with respect to the motion field.

    Edges whose residual is below 1e-12 contribute nothing (subgradient 0).
    """
    motion = np.asarray(motion, dtype=np.float64)
    grad = np.zeros_like(motion)
    if not job.boxes:
        return grad
    from .objective import edge_weights

    bh, bv = edge_weights(mesh_in, job.boxes)
    count = int(bh.sum() + bv.sum())
    if count == 0:
        return grad
    mesh_f = job.mesh_out.vertices + motion
    rh, rv = _edge_residuals(mesh_in.vertices, mesh_f, job.s)

    def coef(r, mask):
        if job.squared_geometric:
            c = 2.0 * r
        else:
            n = np.sqrt(np.sum(r * r, axis=-1, keepdims=True))
            c = np.divide(r, n, out=np.zeros_like(r), where=n >= 1e-12)
        return c * mask[..., None]

    ch = coef(rh, bh)
    cv = coef(rv, bv)
    # residual r = s*e - (q_end - q_start)
    grad[:, 1:] -= ch
    grad[:, :-1] += ch
    grad[1:, :] -= cv
    grad[:-1, :] += cv
    if job.normalize_losses:
        grad /= count
    return grad


def grad_boundary(motion, job: RetargetJob) -> np.ndarray:
    """Subgradient of the boundary loss; 0 at every kink."""
    f = np.asarray(motion, dtype=np.float64)
    grad = np.zeros_like(f)
    rows = [0, f.shape[0] - 1]
    cols = [0, f.shape[1] - 1]
    tb = f[rows]
    lr = f[:, cols]
    grad[rows, :, 1] += np.sign(tb[..., 1])
    grad[rows, :, 0] += np.sign(tb[..., 0]) * (np.abs(tb[..., 0]) > job.d_u)
    grad[:, cols, 0] += np.sign(lr[..., 0])
    grad[:, cols, 1] += np.sign(lr[..., 1]) * (np.abs(lr[..., 1]) > job.d_v)
    if job.normalize_losses:
        grad /= boundary_vertex_count(job.rows, job.cols)
    return grad


def grad_object_fd(image, motion, job: RetargetJob, step: float = 0.5, *,
                   objective: Objective | None = None, evaluation: Evaluation | None = None,
                   return_mask: bool = False):
    """Central finite differences of the object loss.

    Each perturbed evaluation re-maps the output boxes through the perturbed
    mesh.  Vertices whose incident cells touch no output crop and that do not
    move any mapped box get exactly 0 without any evaluation, and objects
    already matched exactly (zero error) are skipped since they sit at the
    loss minimum.
    """
    objective = objective or Objective(image, job)
    if evaluation is None:
        evaluation = objective.evaluate(motion)
    shape = (job.rows + 1, job.cols + 1, 2)
    grad = np.zeros(shape)
    evaluated = np.zeros(shape[:2], dtype=bool)
    if evaluation.warped is not None and evaluation.active.any():
        _kernels.object_fd_gradient(
            objective.image, objective.mesh_in.vertices, evaluation.mesh_f.vertices,
            job.rows, job.cols, evaluation.warped, evaluation.cell_map, evaluation.uv_map,
            evaluation.crops, evaluation.targets, evaluation.weights, evaluation.active,
            float(step), grad, evaluated, objective.samples, objective.target_shapes, evaluation.terms,
        )
    if return_mask:
        return grad, evaluated
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


def adam_step(state: AdamState, params, gradient, iteration: int, cfg: OptimConfig,
              learning_rate: float | None = None) -> np.ndarray:
    """One bias-corrected Adam update; ``iteration`` counts from 0.

    The step size at iteration ``t`` is ``learning_rate * decay**t``.
    """
    g = np.asarray(gradient, dtype=np.float64)
    lr = (cfg.learning_rate if learning_rate is None else learning_rate) * cfg.decay ** iteration
    t = iteration + 1
    state.m *= cfg.adam_beta1
    state.m += (1.0 - cfg.adam_beta1) * g
    state.v *= cfg.adam_beta2
    state.v += (1.0 - cfg.adam_beta2) * (g * g)
    m_hat = state.m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = state.v / (1.0 - cfg.adam_beta2 ** t)
    return np.asarray(params, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class OptimResult:
    motion: np.ndarray
    trace: list = field(default_factory=list)
    iterations: int = 0
    best_loss: float = math.inf
    foldover: bool = False
    restarted: bool = False
    rejected_steps: int = 0


def _reject_folds(base, old, new):
    """Revert vertices of inverted quads to their previous position until none remain."""
    new = new.copy()
    reverted = 0
    for _ in range(base.shape[0] * base.shape[1]):
        bad = foldover_mask(base + new)
        if not bad.any():
            break
        touched = np.zeros(base.shape[:2], dtype=bool)
        touched[:-1, :-1] |= bad
        touched[:-1, 1:] |= bad
        touched[1:, :-1] |= bad
        touched[1:, 1:] |= bad
        touched &= np.any(new != old, axis=-1)
        if not touched.any():
            break
        new[touched] = old[touched]
        reverted += int(touched.sum())
    return new, reverted


def combined_gradient(objective: Objective, evaluation: Evaluation, cfg: OptimConfig) -> np.ndarray:
    job = objective.job
    w = job.weights
    motion = evaluation.motion
    grad = w.lambda_g * grad_geometric(objective.mesh_in, motion, job)
    grad += w.lambda_b * grad_boundary(motion, job)
    if w.lambda_o > 0 and job.boxes:
        grad += w.lambda_o * grad_object_fd(None, motion, job, cfg.fd_step,
                                            objective=objective, evaluation=evaluation)
    return grad


def _run(objective: Objective, cfg: OptimConfig, learning_rate: float) -> OptimResult:
    job = objective.job
    base = objective.mesh_out.vertices
    motion = job.zero_motion()
    state = AdamState.zeros(motion.shape)
    result = OptimResult(motion.copy())
    best_hist = []
    for it in range(cfg.max_iters):
        ev = objective.evaluate(motion)
        report = ev.report
        entry = report.to_json(it)
        result.trace.append(entry)
        if not math.isfinite(report.total):
            raise OptimizationError(f"non-finite loss at iteration {it}", result.trace)
        if report.total < result.best_loss and not report.foldover:
            result.best_loss = report.total
            result.motion = motion.copy()
        best_hist.append(result.best_loss)
        result.iterations = it + 1
        if it >= cfg.window:
            prev = best_hist[it - cfg.window]
            if prev - result.best_loss <= cfg.tolerance * max(abs(prev), 1e-300):
                break
        grad = combined_gradient(objective, ev, cfg)
        if not np.all(np.isfinite(grad)):
            raise OptimizationError(f"non-finite gradient at iteration {it}", result.trace)
        proposal = adam_step(state, motion, grad, it, cfg, learning_rate)
        motion, reverted = _reject_folds(base, motion, proposal)
        result.rejected_steps += reverted
    return result


def optimize_motion(image, job: RetargetJob, cfg: OptimConfig | None = None) -> OptimResult:
    """Minimise the total loss from zero motion; returns the best iterate.

    Steps that would invert a quad are undone vertex by vertex.  If the best
    mesh is still folded the run restarts once at half the learning rate and
    the result is flagged.
    """
    cfg = cfg or OptimConfig()
    objective = Objective(image, job)
    result = _run(objective, cfg, cfg.learning_rate)
    mesh = apply_motion(objective.mesh_out, result.motion)
    if foldover_mask(mesh.vertices).any():
        logger.warning("fold-over in optimised mesh; restarting at half learning rate")
        result = _run(objective, cfg, cfg.learning_rate / 2)
        result.restarted = True
        mesh = apply_motion(objective.mesh_out, result.motion)
        result.foldover = bool(foldover_mask(mesh.vertices).any())
    logger.debug("optimised in %d iterations, best loss %.6g", result.iterations, result.best_loss)
    return result
