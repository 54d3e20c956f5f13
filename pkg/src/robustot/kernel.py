"""Isotropic Gaussian kernels and the robust loss family.

Everything here is a pure function of its arguments. Variances (not standard
deviations) are passed around so that the product-of-Gaussians identity

    int N(y; a, v1 I) N(y; b, v2 I) dy = N(0; a - b, (v1 + v2) I)

is a plain addition.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class IsoGaussian:
    """N(z; mean, variance * I) in ``dim`` dimensions."""

    dim: int
    variance: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.variance > 0:
            raise ValueError("variance must be > 0")

    @property
    def normaliser(self):
        return (2.0 * math.pi * self.variance) ** (-self.dim / 2.0)

    def __call__(self, z, mean=None):
        z = np.asarray(z, dtype=float)
        mean = np.zeros(self.dim) if mean is None else mean
        return gaussian_pdf(z, mean, self.variance)


def log_normaliser(dim, variance):
    return -0.5 * dim * (LOG_2PI + math.log(variance))


def _check_pair(z, mean):
    z = np.asarray(z, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if z.ndim == 0:
        z = z[None]
    if mean.ndim == 0:
        mean = mean[None]
    if z.shape[-1] != mean.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {z.shape[-1]} vs {mean.shape[-1]}"
        )
    return z, mean


def gaussian_pdf(z, mean, variance):
    """Isotropic normal density N(z; mean, variance * I).

    Broadcasts over leading axes; the last axis is the dimension. Evaluated in
    log space so small variances in 3-D do not lose precision.
    """
    if not variance > 0:
        raise ValueError(f"variance must be > 0, got {variance}")
    z, mean = _check_pair(z, mean)
    d = z.shape[-1]
    sq = np.sum((z - mean) ** 2, axis=-1)
    out = np.exp(log_normaliser(d, variance) - 0.5 * sq / variance)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_conv_value(a, b, v1, v2):
    """Overlap integral of N(.; a, v1 I) and N(.; b, v2 I).

    Either variance may be zero (a Dirac), not both.
    """
    if v1 < 0 or v2 < 0:
        raise ValueError("variances must be nonnegative")
    if not v1 + v2 > 0:
        raise ValueError("Dirac-Dirac product is undefined (v1 + v2 == 0)")
    a, b = _check_pair(a, b)
    return gaussian_pdf(a - b, np.zeros(a.shape[-1]), v1 + v2)


@dataclass(frozen=True)
class RobustCostParams:
    h_c: float
    offset_A: float = 0.0

    def __post_init__(self):
        if not self.h_c > 0:
            raise ValueError("h_c must be > 0")
        if self.offset_A < 0:
            raise ValueError("offset_A must be >= 0")


def robust_cost(y, y_tilde, p):
    """Gaussian robust transport cost ``A - N(y; y_tilde, h_c^2 I)``.

    Related to the Welsch-Leclerc loss with ``sigma = h_c`` by

        rho_G(|y - y_tilde|) = 1 + (robust_cost - A) * (2 pi h_c^2)^(d/2)
    """
    y, y_tilde = _check_pair(y, y_tilde)
    return p.offset_A - gaussian_pdf(y, y_tilde, p.h_c**2)


def welsch_from_robust_cost(cost, p, dim):
    """Undo the Gaussian normalisation of :func:`robust_cost`."""
    return 1.0 + (np.asarray(cost) - p.offset_A) * (
        2.0 * math.pi * p.h_c**2
    ) ** (dim / 2.0)


_LOSS_NAMES = ("ls", "abs", "welsch", "gm")


@dataclass(frozen=True)
class LossKind:
    """One member of the loss family. ``scale`` is ignored for ls/abs."""

    name: str
    scale: float = 1.0

    def __post_init__(self):
        if self.name not in _LOSS_NAMES:
            raise ValueError(f"unknown loss {self.name!r}")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")

    @classmethod
    def least_squares(cls):
        return cls("ls")

    @classmethod
    def absolute(cls):
        return cls("abs")

    @classmethod
    def welsch(cls, scale=1.0):
        return cls("welsch", scale)

    @classmethod
    def geman_mcclure(cls, scale=1.0):
        return cls("gm", scale)

    @property
    def scaled(self):
        return self.name in ("welsch", "gm")

    @property
    def label(self):
        if self.scaled:
            return f"{self.name}_s{self.scale:g}"
        return self.name


def rho(kind, eps):
    """Evaluate a loss of the family at residual magnitude(s) ``eps``."""
    eps = np.asarray(eps, dtype=float)
    if np.any(eps < 0):
        raise ValueError("eps must be nonnegative")
    if kind.name == "ls":
        out = eps**2
    elif kind.name == "abs":
        out = eps.copy()
    elif kind.name == "welsch":
        out = -np.expm1(-0.5 * (eps / kind.scale) ** 2)
    else:
        u2 = (eps / kind.scale) ** 2
        out = u2 / (u2 + 1.0)
    return float(out) if out.ndim == 0 else out


def rho_taylor(kind, eps):
    """Leading-order small-residual expansion of a scaled loss."""
    eps = np.asarray(eps, dtype=float)
    u2 = (eps / kind.scale) ** 2
    if kind.name == "welsch":
        return 0.5 * u2
    if kind.name == "gm":
        return u2
    raise ValueError(f"{kind.name} has no scale to expand in")


def emit_loss_curves(kinds, eps_grid):
    """Tabulate each loss (and its Taylor column when scaled) on a grid.

    Returns an ordered dict-like mapping column name -> 1-D array; the first
    column is ``eps``.
    """
    eps = np.asarray(eps_grid, dtype=float).ravel()
    if eps.size == 0:
        raise ValueError("eps grid must be non-empty")
    if np.any(np.diff(eps) < 0):
        raise ValueError("eps grid must be sorted ascending")
    cols = {"eps": eps}
    for k in kinds:
        cols[k.label] = np.asarray(rho(k, eps), dtype=float).reshape(-1)
        if k.scaled:
            cols[k.label + "_taylor"] = rho_taylor(k, eps).reshape(-1)
    return cols


def loss_curves_csv(columns):
    """Serialise :func:`emit_loss_curves` output, 9 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(names)
    for row in zip(*(columns[n] for n in names)):
        w.writerow([f"{v:.9g}" for v in row])
    return buf.getvalue()
