"""Coarse-to-fine minimisation of the cost over TPS parameters.

Each annealing stage fixes the KDE bandwidths and runs limited-memory BFGS
with an Armijo backtracking line search, so the objective never increases
inside a stage. Gradients with respect to the kernel weights are projected
onto the subspace satisfying the TPS side conditions; every search direction
is built from projected gradients and therefore stays in that subspace.
"""

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cost import TERMS, CostConfig, full_cost
from .density import as_cloud
from .transform import (
    PenaltyParams,
    TpsTransform,
    grid_control_points,
    kmeans_control_points,
    side_condition_basis,
    tps_fit_landmarks,
)

log = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    """Non-finite cost or gradient during optimisation."""

    def __init__(self, message, stage=None, iterate=None, params=None):
        super().__init__(message)
        self.stage = stage
        self.iterate = iterate
        self.params = params


@dataclass(frozen=True)
class SolverConfig:
    max_outer: int = 4
    anneal_factor: float = 0.5
    initial_h: float = 0.5
    inner_iters: int = 200
    grad_tol: float = 1e-6
    ftol: float = 1e-10
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    memory: int = 10
    anneal_hc: bool = False
    controls: str = "grid"
    grid_size: int = None
    n_kmeans: int = 64
    warm_start_ridge: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.anneal_factor < 1.0:
            raise ValueError("anneal_factor must lie in (0, 1)")
        if self.max_outer < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not (self.grad_tol > 0 and self.ftol > 0 and self.initial_h > 0):
            raise ValueError("tolerances and initial_h must be > 0")
        if not (0.0 < self.shrink < 1.0 and 0.0 < self.armijo < 1.0):
            raise ValueError("line-search parameters must lie in (0, 1)")
        if self.controls not in ("grid", "kmeans"):
            raise ValueError("controls must be 'grid' or 'kmeans'")


TRACE_FIELDS = ("stage", "iterate", "h", "step", "grad_norm") + TERMS + ("total",)


@dataclass
class SolveReport:
    transform: TpsTransform
    trace: list
    stage_boundaries: list
    converged: bool
    initial_total: float
    warm_started: bool = False
    wall_time: float = field(default=0.0, compare=False)

    @property
    def final_total(self):
        return self.trace[-1]["total"]

    def write_trace(self, path):
        write_trace(path, self.trace)


def write_trace(path, trace):
    """CSV, one row per iterate, columns in ``TRACE_FIELDS`` order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for rec in trace:
            w.writerow(
                [rec[k] if k in ("stage", "iterate") else f"{rec[k]:.17g}" for k in TRACE_FIELDS]
            )


def anneal_schedule(cfg):
    """Bandwidths ``initial_h * anneal_factor**s`` for each stage ``s``."""
    return [cfg.initial_h * cfg.anneal_factor**s for s in range(cfg.max_outer)]


def evaluate_fit(transform, pairs):
    """Root-mean-square distance between ``phi(x_k)`` and ``y_k``."""
    resid = transform(pairs.sources) - pairs.targets
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))


def default_controls(source, dim, cfg):
    if cfg.controls == "kmeans":
        return kmeans_control_points(source, cfg.n_kmeans, seed=cfg.seed)
    return grid_control_points(dim, cfg.grid_size)


def stage_config(cost_cfg, h, stage, solver_cfg):
    """Cost configuration of one annealing stage (bandwidth ``h``).

    The inlier fraction ramps linearly from 1 at the first stage to its
    configured value at the last: at coarse bandwidths outliers sit inside
    every kernel and the full-mass balance is the right one.
    """
    ht_sq = cost_cfg.ht_sq
    if ht_sq is not None:
        ratio = ht_sq / cost_cfg.h_sq if cost_cfg.h_sq > 0 else 1.0
        ht_sq = h * h * ratio
    hc_sq = cost_cfg.hc_sq
    if solver_cfg.anneal_hc:
        hc_sq = hc_sq * solver_cfg.anneal_factor ** (2 * stage)
    n = solver_cfg.max_outer
    frac = 1.0 - (1.0 - cost_cfg.inlier_fraction) * (stage / (n - 1) if n > 1 else 1.0)
    return replace(cost_cfg, h_sq=h * h, ht_sq=ht_sq, hc_sq=hc_sq, inlier_fraction=frac)


def _lbfgs_direction(g, history):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def solve(
    target,
    source,
    correspondences=None,
    cost_cfg=None,
    solver_cfg=None,
    penalties=None,
    control_points=None,
    initial=None,
):
    """Estimate the transform minimising the cost, stage by stage.

    Starts from ``initial`` if given, else from the identity; when
    correspondences are supplied a ridge landmark fit is tried as warm start
    and kept if its cost is not higher than the identity's.
    """
    t0 = time.perf_counter()
    cost_cfg = CostConfig() if cost_cfg is None else cost_cfg
    solver_cfg = SolverConfig() if solver_cfg is None else solver_cfg
    penalties = PenaltyParams() if penalties is None else penalties
    y = as_cloud(target)
    x = as_cloud(source, dim=y.shape[1])
    d = y.shape[1]
    if initial is not None:
        control_points = initial.control_points
    if control_points is None:
        control_points = default_controls(x, d, solver_cfg)
    control_points = np.asarray(control_points, dtype=float)
    Q = side_condition_basis(control_points)
    m = len(control_points)
    w0 = d * d + d

    schedule = anneal_schedule(solver_cfg)

    def evaluate(theta, cfg, stage, iterate):
        t = TpsTransform.from_params(control_points, theta)
        with np.errstate(over="ignore", invalid="ignore"):
            mapped_ok = np.all(np.isfinite(t(x)))
        br = full_cost(y, x, correspondences, t, cfg, penalties, all_terms=False) if mapped_ok else None
        if br is None or not (np.isfinite(br.total) and np.all(np.isfinite(br.gradient))):
            raise NumericalFailure(
                f"non-finite cost at stage {stage}, iterate {iterate}",
                stage=stage, iterate=iterate, params=theta,
            )
        g = br.gradient.copy()
        gW = g[w0:].reshape(m, d)
        g[w0:] = (gW - Q @ (Q.T @ gW)).ravel()
        return br, g

    cfg0 = stage_config(cost_cfg, schedule[0], 0, solver_cfg)
    start = TpsTransform.identity(control_points) if initial is None else initial
    theta = start.params()
    warm = False
    if initial is None and correspondences is not None and len(correspondences) >= d + 1:
        try:
            fit = tps_fit_landmarks(correspondences.sources, correspondences.targets,
                                    ridge=solver_cfg.warm_start_ridge,
                                    control_points=control_points)
        except ValueError as exc:
            log.warning("landmark warm start failed: %s", exc)
        else:
            f_id = evaluate(theta, cfg0, 0, 0)[0].total
            f_fit = evaluate(fit.params(), cfg0, 0, 0)[0].total
            if f_fit <= f_id:
                theta, warm = fit.params(), True

    trace = []
    boundaries = []
    converged = True
    initial_total = None
    for stage, h in enumerate(schedule):
        cfg = stage_config(cost_cfg, h, stage, solver_cfg)
        boundaries.append(len(trace))
        br, g = evaluate(theta, cfg, stage, 0)
        if initial_total is None:
            initial_total = br.total
        trace.append(_record(stage, 0, h, 0.0, g, br))
        f = br.total
        history = []
        stage_done = False
        for it in range(1, solver_cfg.inner_iters + 1):
            gnorm = np.linalg.norm(g)
            if gnorm < solver_cfg.grad_tol:
                stage_done = True
                break
            p = _lbfgs_direction(g, history)
            slope = np.dot(g, p)
            if slope >= 0 or not history:
                history.clear()
                p = -g
                slope = -gnorm**2
                step = min(1.0, 0.05 / np.max(np.abs(g)))
            else:
                step = 1.0
            accepted = False
            for _ in range(solver_cfg.max_backtracks):
                cand = theta + step * p
                br_new, g_new = evaluate(cand, cfg, stage, it)
                if br_new.total <= f + solver_cfg.armijo * step * slope:
                    accepted = True
                    break
                step *= solver_cfg.shrink
            if not accepted:
                # no descent along p: restart from steepest descent once
                if history:
                    history.clear()
                    continue
                stage_done = True
                break
            s = cand - theta
            yv = g_new - g
            sy = np.dot(s, yv)
            if sy > 1e-12 * np.dot(yv, yv):
                history.append((s, yv, 1.0 / sy))
                if len(history) > solver_cfg.memory:
                    history.pop(0)
            decrease = f - br_new.total
            theta, f, g = cand, br_new.total, g_new
            trace.append(_record(stage, it, h, step, g, br_new))
            if decrease <= solver_cfg.ftol * max(1.0, abs(f)):
                stage_done = True
                break
        converged = converged and stage_done
        log.debug("stage %d (h=%.4g): %d iterates, total %.6g", stage, h,
                  len(trace) - boundaries[-1], f)

    return SolveReport(
        transform=TpsTransform.from_params(control_points, theta),
        trace=trace,
        stage_boundaries=boundaries,
        converged=converged,
        initial_total=initial_total,
        warm_started=warm,
        wall_time=time.perf_counter() - t0,
    )


def _record(stage, iterate, h, step, g, br):
    rec = {"stage": stage, "iterate": iterate, "h": h, "step": float(step),
           "grad_norm": float(np.linalg.norm(g))}
    rec.update(br.as_dict())
    return rec
