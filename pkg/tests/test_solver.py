import csv

import numpy as np
import pytest

from robustot.cost import CostConfig, full_cost
from robustot.density import Correspondences
from robustot.solver import (
    TRACE_FIELDS,
    NumericalFailure,
    SolverConfig,
    anneal_schedule,
    evaluate_fit,
    solve,
    stage_config,
)
from robustot.synthetic import add_outliers, fish_cloud, random_warp, uniform_cloud
from robustot.transform import TpsTransform, grid_control_points

FAST = SolverConfig(max_outer=3, inner_iters=60)


def test_schedule_examples():
    assert anneal_schedule(SolverConfig()) == [0.5, 0.25, 0.125, 0.0625]
    assert anneal_schedule(SolverConfig(max_outer=1, initial_h=0.3)) == [0.3]
    cfg = SolverConfig(max_outer=6, initial_h=0.7, anneal_factor=0.6)
    s = anneal_schedule(cfg)
    assert s[-1] == 0.7 * 0.6**5
    assert all(a > b for a, b in zip(s, s[1:]))


def test_solver_config_validation():
    for bad in (
        dict(anneal_factor=1.0),
        dict(max_outer=0),
        dict(inner_iters=0),
        dict(grad_tol=0),
        dict(shrink=1.5),
        dict(controls="random"),
    ):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_stage_config_ramps_inlier_fraction():
    base = CostConfig(mode="combined", inlier_fraction=0.7, h_sq=0.04, ht_sq=0.08, hc_sq=0.01)
    sc = SolverConfig(max_outer=4)
    fr = [stage_config(base, h, s, sc).inlier_fraction for s, h in enumerate(anneal_schedule(sc))]
    assert fr[0] == 1.0 and fr[-1] == pytest.approx(0.7)
    c = stage_config(base, 0.25, 1, sc)
    assert c.h_sq == 0.0625 and c.ht_sq == pytest.approx(0.125) and c.hc_sq == 0.01
    c = stage_config(base, 0.25, 2, SolverConfig(anneal_hc=True))
    assert c.hc_sq == pytest.approx(0.01 * 0.5**4)
    assert stage_config(CostConfig(), 0.1, 0, sc).ht_sq is None


def test_evaluate_fit_examples(rng):
    x = rng.uniform(size=(10, 2))
    t = TpsTransform.identity(grid_control_points(2))
    assert evaluate_fit(t, Correspondences(x, x)) == 0.0
    c = np.array([0.3, -0.4])
    assert evaluate_fit(t, Correspondences(x + c, x)) == pytest.approx(0.5)
    w = random_warp(seed=1)
    y = rng.uniform(size=(10, 2))
    ref = np.sqrt(np.mean([np.sum((w(a) - b) ** 2) for a, b in zip(x, y)]))
    assert evaluate_fit(w, Correspondences(y, x)) == pytest.approx(ref, rel=1e-12)


def test_self_registration_stays_at_identity():
    x = fish_cloud(120, seed=2)
    rep = solve(x, x, solver_cfg=FAST)
    disp = np.linalg.norm(rep.transform(x) - x, axis=1).mean()
    assert disp <= 1e-3


def test_affine_recovery():
    x = uniform_cloud(200, seed=3)
    A = np.array([[1.08, 0.05], [-0.04, 0.95]])
    b = np.array([0.02, -0.03])
    y = x @ A.T + b
    rep = solve(y, x)
    assert evaluate_fit(rep.transform, Correspondences(y, x)) <= 0.02


def _monotone_within_stages(rep):
    totals = [r["total"] for r in rep.trace]
    bounds = rep.stage_boundaries + [len(totals)]
    for a, b in zip(bounds, bounds[1:]):
        seg = totals[a:b]
        assert all(q <= p for p, q in zip(seg, seg[1:]))


@pytest.mark.parametrize("mode", ["legacy", "combined"])
def test_trace_descends_and_is_deterministic(tmp_path, mode):
    x = fish_cloud(100, seed=4)
    y = random_warp(seed=5)(x)
    cfg = CostConfig(mode=mode, lam=0.0, hc_sq=0.0025)
    a = solve(y, x, cost_cfg=cfg, solver_cfg=FAST)
    b = solve(y, x, cost_cfg=cfg, solver_cfg=FAST)
    _monotone_within_stages(a)
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.transform.params(), b.transform.params())
    assert a.final_total <= a.initial_total
    p = tmp_path / "trace.csv"
    a.write_trace(p)
    rows = list(csv.reader(open(p)))
    assert tuple(rows[0]) == TRACE_FIELDS
    assert len(rows) == len(a.trace) + 1
    assert float(rows[-1][-1]) == a.final_total


def test_final_cost_not_above_initial_each_stage():
    x = uniform_cloud(80, seed=6)
    y = random_warp(seed=7, affine=0.1)(x)
    rep = solve(y, x, solver_cfg=FAST)
    ident = TpsTransform.identity(grid_control_points(2))
    cfg0 = stage_config(CostConfig(), 0.5, 0, FAST)
    assert rep.trace[0]["total"] == full_cost(y, x, None, ident, cfg0, all_terms=False).total


def test_warm_start_dominance():
    x = fish_cloud(100, seed=8)
    warp = random_warp(seed=9, affine=0.15)
    y = warp(x)
    corr = Correspondences(y[:20], x[:20])
    cfg = CostConfig(mode="combined", hc_sq=0.0025)
    warm = solve(y, x, corr, cfg, FAST)
    cold = solve(y, x, corr, cfg, FAST, initial=TpsTransform.identity(grid_control_points(2)))
    assert warm.warm_started and not cold.warm_started
    assert warm.initial_total <= cold.initial_total


def test_kmeans_controls_and_initial():
    x = uniform_cloud(100, seed=10)
    y = x + 0.03
    rep = solve(y, x, solver_cfg=SolverConfig(max_outer=2, inner_iters=40, controls="kmeans", n_kmeans=12))
    assert rep.transform.n_controls == 12
    rep2 = solve(y, x, solver_cfg=SolverConfig(max_outer=1, inner_iters=40), initial=rep.transform)
    assert rep2.transform.n_controls == 12


def test_three_d_and_one_d():
    rng = np.random.default_rng(0)
    x3 = rng.uniform(0.2, 0.8, (60, 3))
    rep = solve(x3 + 0.05, x3, solver_cfg=SolverConfig(max_outer=3, inner_iters=50))
    assert evaluate_fit(rep.transform, Correspondences(x3 + 0.05, x3)) < 0.02
    x1 = rng.uniform(0.2, 0.8, (50, 1))
    rep = solve(1.1 * x1 - 0.02, x1, solver_cfg=SolverConfig(max_outer=3, inner_iters=50))
    assert evaluate_fit(rep.transform, Correspondences(1.1 * x1 - 0.02, x1)) < 0.02


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_reports_iterate():
    x = np.full((5, 2), 1e200) * np.arange(1, 6)[:, None]
    with pytest.raises(NumericalFailure) as info:
        solve(x, x, solver_cfg=FAST)
    assert info.value.stage == 0 and info.value.iterate == 0
    assert info.value.params is not None


def test_outlier_helper():
    pts = np.zeros((70, 2))
    out = add_outliers(pts, 0.3, seed=1)
    assert len(out) == 100
    np.testing.assert_array_equal(out[:70], pts)
