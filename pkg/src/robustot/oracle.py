"""Brute-force reference computations.

Trapezoid quadrature over explicit grids (d <= 2) and central finite
differences. Nothing here uses the closed-form convolution identities of
:mod:`robustot.cost`, so the two can be checked against each other.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .density import Supervised, SemiSupervised, Unsupervised, joint_eval, kde_eval
from .kernel import gaussian_pdf

COVER_SIGMAS = 6.0


class GridTooCoarse(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    """Axis-aligned product grid; the same axis is used in every dimension."""

    lo: float
    hi: float
    points: int
    dim: int = 1

    @property
    def axis(self):
        return np.linspace(self.lo, self.hi, self.points)

    @property
    def spacing(self):
        return (self.hi - self.lo) / (self.points - 1)

    def check(self, min_std):
        if self.spacing > min_std / 4.0:
            raise GridTooCoarse(
                f"grid spacing {self.spacing:.3g} exceeds a quarter of the "
                f"smallest kernel width {min_std:.3g}"
            )

    def mesh(self):
        return np.stack(np.meshgrid(*([self.axis] * self.dim), indexing="ij"), axis=-1)

    def integrate(self, values):
        out = values
        for _ in range(self.dim):
            out = trapezoid(out, self.axis, axis=0)
        return float(out)


def covering_grid(clouds, variances, dim, points=None):
    """Grid spanning every centre +- 6 of the widest kernel standard deviation."""
    pts = np.concatenate([np.asarray(c, dtype=float).reshape(-1) for c in clouds])
    pad = COVER_SIGMAS * np.sqrt(max(variances))
    if points is None:
        points = 2001 if dim == 1 else 401
    return QuadratureGrid(pts.min() - pad, pts.max() + pad, points, dim)


def quad_l2(model_a, model_b, grid=None):
    """Trapezoid estimate of the integral of ``(mu_a - mu_b)^2``."""
    if model_a.dim > 2:
        raise ValueError("quadrature is limited to d <= 2")
    if model_a.is_dirac or model_b.is_dirac:
        raise ValueError("quadrature needs positive bandwidths")
    variances = [model_a.bandwidth_sq, model_b.bandwidth_sq]
    if grid is None:
        grid = covering_grid([model_a.support, model_b.support], variances, model_a.dim)
    grid.check(np.sqrt(min(variances)))
    mesh = grid.mesh()
    diff = kde_eval(model_a, mesh) - kde_eval(model_b, mesh)
    return grid.integrate(diff**2)


def quad_mass(model, grid=None):
    if grid is None:
        grid = covering_grid([model.support], [model.bandwidth_sq], model.dim)
    grid.check(np.sqrt(model.bandwidth_sq))
    return grid.integrate(kde_eval(model, grid.mesh()))


def _joint_parts(joint):
    if isinstance(joint, Unsupervised):
        return (
            [joint.target.support, joint.transformed_source.support],
            [joint.target.bandwidth_sq, joint.transformed_source.bandwidth_sq],
        )
    if isinstance(joint, Supervised):
        return [joint.targets, joint.transformed_sources], [joint.h_sq, joint.ht_sq]
    if isinstance(joint, SemiSupervised):
        c1, v1 = _joint_parts(joint.unsup)
        c2, v2 = _joint_parts(joint.sup)
        return c1 + c2, v1 + v2
    raise TypeError(type(joint).__name__)


def joint_grid(joint, extra_variances=(), points=601):
    clouds, variances = _joint_parts(joint)
    if joint.dim != 1:
        raise ValueError("joint quadrature is limited to d = 1 per variable")
    grid = covering_grid(clouds, variances, 1, points=points)
    grid.check(np.sqrt(min(list(variances) + list(extra_variances))))
    return grid


def quad_expectation(cost, joint, grid=None, extra_variances=()):
    """Integral of ``cost(y, yt) * gamma(y, yt)`` over the (y, yt) plane.

    ``cost`` must broadcast over arrays of shape ``(N, 1, 1)`` and
    ``(1, N, 1)``. ``extra_variances`` lists kernel widths inside ``cost``
    that the grid must also resolve.
    """
    if grid is None:
        grid = joint_grid(joint, extra_variances)
    ax = grid.axis
    y = ax[:, None, None]
    yt = ax[None, :, None]
    vals = np.asarray(cost(y, yt)) * joint_eval(joint, y, yt)
    return float(trapezoid(trapezoid(vals, ax, axis=1), ax, axis=0))


def quad_joint_mass(joint, grid=None):
    return quad_expectation(lambda y, yt: np.ones(np.broadcast_shapes(y.shape[:-1], yt.shape[:-1])), joint, grid)


def quad_marginal(joint, y, which, grid=None):
    """Integrate the joint over the other variable at fixed points ``y``."""
    if grid is None:
        grid = joint_grid(joint)
    ax = grid.axis
    y = np.asarray(y, dtype=float).reshape(-1)[:, None, None]
    other = ax[None, :, None]
    vals = joint_eval(joint, y, other) if which == "target" else joint_eval(joint, other, y)
    return trapezoid(vals, ax, axis=1)


def quad_flat_prior_overlap(joint, hc_sq, prior_var=1e4, grid=None):
    """``<gamma_m | gamma>`` for ``gamma_m = N(y; yt, hc^2) N(yt; 0, a)``."""

    def model(y, yt):
        return gaussian_pdf(y, yt, hc_sq) * gaussian_pdf(yt, np.zeros(1), prior_var)

    return quad_expectation(model, joint, grid, extra_variances=(hc_sq,))


def fd_gradient(f, theta, step=1e-5):
    """Central differences with per-coordinate step ``step * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    if not step > 0:
        raise ValueError("step must be > 0")
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        fp, fm = f(tp), f(tm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def _tile_hessian_integral(transform, x0, x1, y0, y1, points):
    """Trapezoid integral of the squared Hessian norm over one rectangle.

    The sampled grid extends two cells past the rectangle so every retained
    node has central second differences.
    """
    hx = (x1 - x0) / (points - 1)
    hy = (y1 - y0) / (points - 1)
    ax = x0 + hx * np.arange(-2, points + 2)
    ay = y0 + hy * np.arange(-2, points + 2)
    X, Y = np.meshgrid(ax, ay, indexing="ij")
    out = transform(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(len(ax), len(ay), 2)
    total = np.zeros(X.shape)
    for k in range(2):
        f = out[..., k]
        fx = np.gradient(f, hx, axis=0)
        fxx = np.gradient(fx, hx, axis=0)
        fxy = np.gradient(fx, hy, axis=1)
        fyy = np.gradient(np.gradient(f, hy, axis=1), hy, axis=1)
        total += fxx**2 + 2.0 * fxy**2 + fyy**2
    inner = total[2:-2, 2:-2]
    return float(trapezoid(trapezoid(inner, ax[2:-2], axis=0), ay[2:-2]))


def quad_bending_energy(transform, lo=0.0, hi=1.0, points=801, rings=0):
    """Integral of the squared Hessian Frobenius norm of a 2-D map.

    Second derivatives come from finite differences of the sampled map, the
    integral from the trapezoid rule. The base domain is ``[lo, hi]^2``; each
    of ``rings`` further levels surrounds the current square with eight
    squares of its own size (so the side triples), sampled on their own grids.
    The TPS Hessian decays like ``1/r^2``, so about six rings are needed to
    approach the whole-plane value.
    """
    if transform.dim != 2:
        raise ValueError("bending quadrature is implemented for d = 2")
    total = _tile_hessian_integral(transform, lo, hi, lo, hi, points)
    a, side = lo, hi - lo
    n_ring = max(points // 2, 101)
    for _ in range(rings):
        for i in range(3):
            for j in range(3):
                if i == 1 and j == 1:
                    continue
                x0 = a - side + i * side
                y0 = a - side + j * side
                total += _tile_hessian_integral(transform, x0, x0 + side, y0, y0 + side, n_ring)
        a, side = a - side, 3 * side
    return total
