"""Oracle self-checks and frozen reference values.

The frozen numbers were produced by the trapezoid oracle on fine grids and
are pinned so later changes to either side get caught.
"""

import math

import numpy as np
import pytest

from robustot.cost import CostConfig, l2_divergence, robust_ot_sup, robust_ot_unsup
from robustot.density import Correspondences, KdeModel, SemiSupervised, Supervised, Unsupervised
from robustot.kernel import gaussian_pdf
from robustot.oracle import (
    GridTooCoarse,
    QuadratureGrid,
    covering_grid,
    fd_gradient,
    joint_grid,
    quad_expectation,
    quad_flat_prior_overlap,
    quad_l2,
    quad_mass,
)
from robustot.transform import TpsTransform, grid_control_points

Y = np.array([[0.1], [0.45], [0.8]])
YS = np.array([[0.2], [0.5]])
HC_SQ = 0.03

FROZEN_L2 = 0.436297144351214
FROZEN_UNSUP = -0.8901259246693085
FROZEN_SUP = -1.54677434326923


def robust_cost_fn(hc_sq):
    return lambda y, yt: -gaussian_pdf(y, yt, hc_sq)


def _unsup():
    return Unsupervised(KdeModel(Y, 0.01), KdeModel(YS, 0.02))


def _sup():
    return Supervised([[0.3], [0.7]], [[0.35], [0.6]], 0.01, 0.02)


def test_frozen_l2():
    a, b = KdeModel(Y, 0.01), KdeModel(YS, 0.02)
    assert quad_l2(a, b) == pytest.approx(FROZEN_L2, abs=1e-9)
    assert l2_divergence(a, b) == pytest.approx(FROZEN_L2, abs=1e-12)


def test_frozen_robust_terms():
    cfg = CostConfig(h_sq=0.01, ht_sq=0.02, hc_sq=HC_SQ, mode="combined")
    u = _unsup()
    q = quad_expectation(robust_cost_fn(HC_SQ), u, extra_variances=(HC_SQ,))
    assert q == pytest.approx(FROZEN_UNSUP, abs=1e-7)
    assert robust_ot_unsup(Y, YS, cfg) == pytest.approx(FROZEN_UNSUP, abs=1e-12)
    s = _sup()
    q = quad_expectation(robust_cost_fn(HC_SQ), s, extra_variances=(HC_SQ,))
    assert q == pytest.approx(FROZEN_SUP, abs=1e-7)
    corr = Correspondences([[0.3], [0.7]], [[0.35], [0.6]])
    ident = TpsTransform.identity(grid_control_points(1))
    assert robust_ot_sup(corr, ident, cfg) == pytest.approx(FROZEN_SUP, abs=1e-12)


def test_identical_models_l2_zero():
    a = KdeModel(Y, 0.01)
    assert quad_l2(a, a) <= 1e-10


def test_l2_grid_refinement_converges():
    a, b = KdeModel(Y, 0.01), KdeModel(YS, 0.02)
    g1 = covering_grid([Y, YS], [0.01, 0.02], 1, points=2001)
    g2 = QuadratureGrid(g1.lo, g1.hi, 4001)
    assert abs(quad_l2(a, b, g1) - quad_l2(a, b, g2)) < 1e-8


def test_grid_too_coarse():
    a = KdeModel(Y, 1e-6)
    with pytest.raises(GridTooCoarse):
        quad_l2(a, a, QuadratureGrid(-1, 2, 101))


def test_quadrature_dimension_limits(rng):
    a = KdeModel(rng.uniform(size=(3, 3)), 0.01)
    with pytest.raises(ValueError):
        quad_l2(a, a)
    with pytest.raises(ValueError):
        quad_l2(KdeModel(Y, 0.0), KdeModel(Y, 0.01))
    u2 = Unsupervised(KdeModel(rng.uniform(size=(2, 2)), 0.01), KdeModel(rng.uniform(size=(2, 2)), 0.01))
    with pytest.raises(ValueError):
        joint_grid(u2)


def test_mass_2d(rng):
    m = KdeModel(rng.uniform(size=(4, 2)), 0.02)
    assert quad_mass(m) == pytest.approx(1.0, abs=1e-6)


def test_one_perfect_pair():
    h, ht, hc = 0.01, 0.02, HC_SQ
    s = Supervised([[0.4]], [[0.4]], h, ht)
    q = quad_expectation(robust_cost_fn(hc), s, extra_variances=(hc,))
    assert q == pytest.approx(-(2 * math.pi * (h + ht + hc)) ** -0.5, abs=1e-6)


def test_semi_supervised_linear_combination():
    u, s = _unsup(), _sup()
    semi = SemiSupervised(u, s, 0.3)
    f = robust_cost_fn(HC_SQ)
    q = quad_expectation(f, semi, extra_variances=(HC_SQ,))
    ref = 0.7 * quad_expectation(f, u, extra_variances=(HC_SQ,)) + 0.3 * quad_expectation(
        f, s, extra_variances=(HC_SQ,)
    )
    assert q == pytest.approx(ref, abs=1e-5)


def test_flat_prior_overlap_identity():
    # with a very wide prior on yt, <gamma_m|gamma> is the negated robust
    # transport cost times the prior's peak value
    a = 1e4
    u = _unsup()
    val = quad_flat_prior_overlap(u, HC_SQ, prior_var=a)
    peak = (2 * math.pi * a) ** -0.5
    assert val / peak == pytest.approx(-FROZEN_UNSUP, rel=1e-4)


def test_fd_gradient_quadratic():
    Q = np.array([[3.0, 1.0], [1.0, 2.0]])
    f = lambda x: 0.5 * x @ Q @ x + x[0]
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(fd_gradient(f, x), Q @ x + [1, 0], atol=1e-9)


def test_fd_gradient_order():
    f = lambda x: math.sin(3 * x[0]) + math.exp(x[1])
    x = np.array([0.4, 0.2])
    exact = np.array([3 * math.cos(1.2), math.exp(0.2)])
    e1 = np.abs(fd_gradient(f, x, step=1e-2) - exact).max()
    e2 = np.abs(fd_gradient(f, x, step=5e-3) - exact).max()
    assert 3.0 < e1 / e2 < 5.0


def test_fd_gradient_errors():
    with pytest.raises(ValueError):
        fd_gradient(lambda x: 0.0, np.zeros(2), step=0)
    with pytest.raises(FloatingPointError):
        fd_gradient(lambda x: float("nan"), np.zeros(2))
