"""Thin-plate spline transfer functions.

A transform maps ``x`` (row vector, dimension ``d``) to

    phi(x) = A x + b + sum_m W[m] U(|x - c_m|)

with radial kernel ``U`` chosen by dimension: ``r**3`` (d=1), ``r**2 log r``
(d=2) and ``-r`` (d=3). The kernel weights obey the side conditions
``sum_m W[m] = 0`` and ``sum_m c_m W[m]^T = 0`` so that the bending energy
``trace(W^T K W)`` is finite and vanishes exactly for affine maps.

``phi`` is linear in its parameters; they are flattened as
``[A (row major), b, W (row major)]``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.spatial.distance import cdist

KERNEL_NAMES = {1: "r3", 2: "r2logr", 3: "neg_r"}


class SingularSystemError(ValueError):
    """The landmark configuration does not determine a TPS."""


def tps_kernel(r, dim):
    """Radial basis ``U(r)`` for a spline in ``dim`` dimensions."""
    r = np.asarray(r, dtype=float)
    if dim == 3:
        return -r
    if dim == 2:
        out = np.zeros_like(r)
        nz = r > 0
        out[nz] = r[nz] ** 2 * np.log(r[nz])
        return out
    if dim == 1:
        return r**3
    raise ValueError(f"no TPS kernel for dimension {dim}")


def kernel_matrix(x, controls):
    dim = controls.shape[1]
    return tps_kernel(cdist(x, controls), dim)


def grid_control_points(dim, size=None, lo=0.0, hi=1.0):
    """Regular ``size**dim`` grid over the box; 5 per axis in 3-D, 7 in 2-D."""
    if size is None:
        size = {1: 9, 2: 7, 3: 5}.get(dim, 5)
    axis = np.linspace(lo, hi, size)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def kmeans_control_points(points, k, seed=0):
    from scipy.cluster.vq import kmeans2

    pts = np.asarray(points, dtype=float)
    k = min(k, len(np.unique(pts, axis=0)))
    centroids, _ = kmeans2(pts, k, minit="++", seed=seed)
    return centroids


def side_condition_basis(controls):
    """Orthonormal basis ``Q`` of the span of ``[1, c]`` (m x (d+1))."""
    P = np.hstack([np.ones((len(controls), 1)), controls])
    Q, R = np.linalg.qr(P)
    if np.min(np.abs(np.diag(R))) < 1e-10 * max(1.0, np.abs(R).max()):
        raise SingularSystemError("control points are not affinely independent")
    return Q


def project_side_conditions(W, controls, Q=None):
    """Remove the component of ``W`` violating the side conditions."""
    Q = side_condition_basis(controls) if Q is None else Q
    return W - Q @ (Q.T @ W)


@dataclass(frozen=True)
class TpsTransform:
    control_points: np.ndarray
    A: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        c = np.array(self.control_points, dtype=float)
        if c.ndim != 2:
            raise ValueError("control_points must be (m, d)")
        m, d = c.shape
        A = np.array(self.A, dtype=float).reshape(d, d)
        b = np.array(self.b, dtype=float).reshape(d)
        W = np.array(self.W, dtype=float).reshape(m, d)
        if d not in KERNEL_NAMES:
            raise ValueError(f"no TPS kernel for dimension {d}")
        if np.any(W):
            P = np.hstack([np.ones((m, 1)), c])
            scale = max(1.0, np.abs(W).max()) * max(1.0, np.abs(c).max()) * m
            if np.abs(P.T @ W).max() > 1e-10 * scale:
                raise ValueError("kernel weights violate the TPS side conditions")
        for arr in (c, A, b, W):
            arr.flags.writeable = False
        object.__setattr__(self, "control_points", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "W", W)

    @classmethod
    def identity(cls, control_points):
        c = np.asarray(control_points, dtype=float)
        m, d = c.shape
        return cls(c, np.eye(d), np.zeros(d), np.zeros((m, d)))

    @classmethod
    def affine(cls, A, b, control_points):
        c = np.asarray(control_points, dtype=float)
        return cls(c, A, b, np.zeros_like(c))

    @classmethod
    def from_params(cls, control_points, theta):
        c = np.asarray(control_points, dtype=float)
        m, d = c.shape
        theta = np.asarray(theta, dtype=float)
        if theta.size != d * d + d + m * d:
            raise ValueError("parameter vector has the wrong length")
        A = theta[: d * d].reshape(d, d)
        b = theta[d * d : d * d + d]
        W = theta[d * d + d :].reshape(m, d)
        return cls(c, A, b, W)

    @property
    def dim(self):
        return self.control_points.shape[1]

    @property
    def n_controls(self):
        return self.control_points.shape[0]

    @property
    def kernel_kind(self):
        return KERNEL_NAMES[self.dim]

    @property
    def n_params(self):
        d, m = self.dim, self.n_controls
        return d * d + d + m * d

    def params(self):
        return np.concatenate([self.A.ravel(), self.b, self.W.ravel()])

    def with_params(self, theta):
        return TpsTransform.from_params(self.control_points, theta)

    def features(self, x):
        """Basis ``[x, 1, U(|x - c_m|)]`` for each row of ``x``."""
        x = _as_rows(x, self.dim)
        return np.hstack([x, np.ones((len(x), 1)), kernel_matrix(x, self.control_points)])

    def __call__(self, x):
        return tps_apply(self, x)

    def side_condition_residual(self):
        P = np.hstack([np.ones((self.n_controls, 1)), self.control_points])
        return np.abs(P.T @ self.W).max()


def _as_rows(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if dim > 1 or x.size == 1 else x[:, None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {x.shape[-1]}")
    return x


def tps_apply(t, x):
    """Apply ``t`` to a point ``(d,)`` or a stack of points ``(n, d)``."""
    single = np.ndim(x) == 1 and np.size(x) == t.dim
    X = _as_rows(x, t.dim)
    out = X @ t.A.T + t.b
    if np.any(t.W):
        out = out + kernel_matrix(X, t.control_points) @ t.W
    return out[0] if single else out


def chain_params(t, features, grad_out):
    """Pull back ``d cost / d phi(x)`` (n, d) to the flat parameter vector.

    ``features`` is ``t.features(x)``; the map is exact since phi is linear in
    its parameters.
    """
    d = t.dim
    X = features[:, :d]
    U = features[:, d + 1 :]
    gA = grad_out.T @ X
    gb = grad_out.sum(axis=0)
    gW = U.T @ grad_out
    return np.concatenate([gA.ravel(), gb, gW.ravel()])


def tps_param_jacobian(t, x):
    """Jacobian ``d phi(x) / d theta`` as a ``(d, n_params)`` matrix."""
    f = t.features(np.atleast_2d(x))[0]
    d, m = t.dim, t.n_controls
    eye = np.eye(d)
    JA = np.kron(eye, f[:d])  # row r picks A[r, :]
    Jb = eye
    JW = np.kron(f[d + 1 :], eye)  # W[m, r] -> output r
    return np.hstack([JA, Jb, JW])


def bending_energy(t):
    """``trace(W^T K W)`` with ``K[i, j] = U(|c_i - c_j|)``.

    For d = 2 and d = 3 the continuous integral of the squared Hessian
    Frobenius norm over all of space equals ``8 pi`` times this value.
    """
    if not np.any(t.W):
        return 0.0
    K = kernel_matrix(t.control_points, t.control_points)
    return float(np.sum(t.W * (K @ t.W)))


def bending_energy_grad(t, K=None):
    """Gradient of :func:`bending_energy` with respect to ``W``."""
    if K is None:
        K = kernel_matrix(t.control_points, t.control_points)
    return 2.0 * K @ t.W


@dataclass(frozen=True)
class PenaltyParams:
    """Weights for the range (``lambda2``) and smoothness (``lambda3``) terms."""

    lambda2: float = 0.1
    lambda3: float = 1e-3
    range_lo: float = 0.0
    range_hi: float = 1.0

    def __post_init__(self):
        if self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("penalty weights must be >= 0")
        if not np.all(np.asarray(self.range_lo) < np.asarray(self.range_hi)):
            raise ValueError("range_lo must be < range_hi")


def range_penalty(points, p=None, grad=False):
    """Mean (over points) squared distance outside the box, summed over dims.

    With ``grad=True`` returns ``(value, d value / d points)``; the gradient is
    taken as 0 on the box boundary.
    """
    p = PenaltyParams() if p is None else p
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    below = np.maximum(0.0, p.range_lo - pts)
    above = np.maximum(0.0, pts - p.range_hi)
    n = len(pts)
    val = float(np.sum((below + above) ** 2) / n)
    if not grad:
        return val
    return val, 2.0 * (above - below) / n


def tps_fit_landmarks(sources, targets, ridge=1e-8, control_points=None):
    """Fit a TPS sending ``sources`` onto ``targets``.

    Minimises the summed squared landmark error plus ``ridge`` times the
    bending energy. By default the landmarks are their own control points
    (``ridge=0`` then interpolates exactly). Passing ``control_points`` fits
    in that fixed basis instead, which is how the solver warm-starts.
    """
    X = np.asarray(sources, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    if X.shape != Y.shape:
        raise ValueError("sources and targets must have the same shape")
    n, d = X.shape
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    P = np.hstack([X, np.ones((n, 1))])
    if n < d + 1 or np.linalg.matrix_rank(P) < d + 1:
        raise SingularSystemError(
            f"need {d + 1} affinely independent landmarks in {d}-D"
        )

    if control_points is None:
        K = kernel_matrix(X, X)
        L = np.zeros((n + d + 1, n + d + 1))
        L[:n, :n] = K + ridge * np.eye(n)
        L[:n, n:] = P
        L[n:, :n] = P.T
        rhs = np.vstack([Y, np.zeros((d + 1, d))])
        try:
            sol = np.linalg.solve(L, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(str(exc)) from exc
        W = sol[:n]
        A = sol[n : n + d].T
        b = sol[n + d]
        return TpsTransform(X, A, b, W)

    C = np.asarray(control_points, dtype=float)
    side_condition_basis(C)
    # W = N @ Omega satisfies the side conditions for any Omega
    N = null_space(np.hstack([np.ones((len(C), 1)), C]).T)
    Kc = kernel_matrix(C, C)
    F = np.hstack([P, kernel_matrix(X, C) @ N])
    R = np.zeros((F.shape[1], F.shape[1]))
    R[d + 1 :, d + 1 :] = N.T @ Kc @ N
    lhs = F.T @ F + ridge * R
    try:
        sol = np.linalg.lstsq(lhs, F.T @ Y, rcond=None)[0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    A = sol[:d].T
    b = sol[d]
    W = N @ sol[d + 1 :]
    return TpsTransform(C, A, b, W)


def _fmt(values):
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dumps_transform(t, extra=None):
    """Key-value text record; floats round-trip exactly (``repr``).

    Format, one ``key = value`` per line (``#`` starts a comment)::

        dim = 2
        kernel = r2logr
        n_controls = 49
        control_points = <m*d floats, row major>
        A = <d*d floats, row major>
        b = <d floats>
        W = <m*d floats, row major>

    Additional keys in ``extra`` are written after these and ignored by
    :func:`loads_transform` except for being returned in ``meta``.
    """
    lines = [
        "# tps-transform v1",
        f"dim = {t.dim}",
        f"kernel = {t.kernel_kind}",
        f"n_controls = {t.n_controls}",
        f"control_points = {_fmt(t.control_points)}",
        f"A = {_fmt(t.A)}",
        f"b = {_fmt(t.b)}",
        f"W = {_fmt(t.W)}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {_fmt(v) if not isinstance(v, str) else v}")
    return "\n".join(lines) + "\n"


def loads_transform(text, with_meta=False):
    rec = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        rec[k.strip()] = v.strip()
    try:
        d = int(rec.pop("dim"))
        m = int(rec.pop("n_controls"))
        kind = rec.pop("kernel")
        c = np.array(rec.pop("control_points").split(), dtype=float).reshape(m, d)
        A = np.array(rec.pop("A").split(), dtype=float).reshape(d, d)
        b = np.array(rec.pop("b").split(), dtype=float).reshape(d)
        W = np.array(rec.pop("W").split(), dtype=float).reshape(m, d)
    except KeyError as exc:
        raise ValueError(f"transform record is missing {exc}") from exc
    if kind != KERNEL_NAMES.get(d):
        raise ValueError(f"kernel {kind!r} does not match dimension {d}")
    t = TpsTransform(c, A, b, W)
    return (t, rec) if with_meta else t


def save_transform(path, t, extra=None):
    with open(path, "w") as fh:
        fh.write(dumps_transform(t, extra))


def load_transform(path, with_meta=False):
    with open(path) as fh:
        return loads_transform(fh.read(), with_meta=with_meta)
