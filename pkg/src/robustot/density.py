"""Point clouds, Gaussian KDEs and the joint transport-plan models.

Point clouds are plain ``(n, d)`` float arrays. Three joint models over
``(y, y_tilde)`` are provided:

* :class:`Unsupervised`: product of the target KDE and the KDE of the
  transformed source samples (no pairing between them);
* :class:`Supervised`: a mixture of paired kernels, one per correspondence;
* :class:`SemiSupervised`: ``(1 - lam) * unsupervised + lam * supervised``.

A bandwidth of zero denotes the empirical (Dirac) measure. Densities are not
defined there, but moments are.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .kernel import gaussian_pdf


def as_cloud(points, dim=None):
    """Validate and return ``points`` as a C-contiguous ``(n, d)`` array."""
    pts = np.ascontiguousarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) array, got {pts.shape}")
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"expected dimension {dim}, got {pts.shape[1]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite values")
    return pts


@dataclass(frozen=True)
class Correspondences:
    """Paired samples: ``targets[k]`` is where ``sources[k]`` should map.

    Sources are stored untransformed; repeated pairs are allowed and simply
    count twice.
    """

    targets: np.ndarray
    sources: np.ndarray

    def __post_init__(self):
        t = as_cloud(self.targets)
        s = as_cloud(self.sources, dim=t.shape[1])
        if len(t) != len(s):
            raise ValueError("targets and sources must have equal length")
        t.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "sources", s)

    def __len__(self):
        return len(self.targets)

    @property
    def dim(self):
        return self.targets.shape[1]


@dataclass(frozen=True)
class KdeModel:
    """Uniform-weight isotropic Gaussian mixture centred on ``support``."""

    support: np.ndarray
    bandwidth_sq: float

    def __post_init__(self):
        if self.bandwidth_sq < 0:
            raise ValueError("bandwidth_sq must be >= 0")
        pts = as_cloud(self.support)
        pts.flags.writeable = False
        object.__setattr__(self, "support", pts)

    @property
    def dim(self):
        return self.support.shape[1]

    @property
    def is_dirac(self):
        return self.bandwidth_sq == 0

    def __call__(self, y):
        return kde_eval(self, y)

    def mean(self):
        return self.support.mean(axis=0)

    def covariance(self):
        # mixture covariance: spread of the centres plus the kernel variance
        c = self.support - self.mean()
        cov = c.T @ c / len(self.support)
        return cov + self.bandwidth_sq * np.eye(self.dim)


def _eval_points(y, dim):
    y = np.asarray(y, dtype=float)
    if dim == 1 and (y.ndim == 0 or y.shape[-1] != 1):
        y = y[..., None]
    if y.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}")
    return y


def kde_eval(model, y):
    """Evaluate the mixture density at ``y`` (a point or a stack of points)."""
    if model.is_dirac:
        raise ValueError(
            "a Dirac (bandwidth 0) model has no density; use its moments or "
            "the closed-form convolution terms instead"
        )
    y = _eval_points(y, model.dim)
    vals = gaussian_pdf(y[..., None, :], model.support, model.bandwidth_sq)
    out = np.mean(vals, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Unsupervised:
    target: KdeModel
    transformed_source: KdeModel

    def __post_init__(self):
        if self.target.dim != self.transformed_source.dim:
            raise ValueError("target and source models differ in dimension")

    @property
    def dim(self):
        return self.target.dim


@dataclass(frozen=True)
class Supervised:
    """Paired kernels around ``(targets[k], transformed_sources[k])``."""

    targets: np.ndarray
    transformed_sources: np.ndarray
    h_sq: float
    ht_sq: float

    def __post_init__(self):
        c = Correspondences(self.targets, self.transformed_sources)
        object.__setattr__(self, "targets", c.targets)
        object.__setattr__(self, "transformed_sources", c.sources)
        if self.h_sq < 0 or self.ht_sq < 0:
            raise ValueError("bandwidths must be >= 0")

    @property
    def dim(self):
        return self.targets.shape[1]


@dataclass(frozen=True)
class SemiSupervised:
    unsup: Unsupervised
    sup: Supervised
    lam: float = field(default=0.5)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.unsup.dim != self.sup.dim:
            raise ValueError("unsupervised and supervised parts differ in dimension")

    @property
    def dim(self):
        return self.unsup.dim


def joint_eval(model, y, y_tilde):
    """Evaluate a joint model at ``(y, y_tilde)``; broadcasts over batches."""
    if not isinstance(model, (Unsupervised, Supervised, SemiSupervised)):
        raise TypeError(f"not a joint model: {type(model).__name__}")
    d = model.dim
    y = _eval_points(y, d)
    y_tilde = _eval_points(y_tilde, d)
    if isinstance(model, Unsupervised):
        return kde_eval(model.target, y) * kde_eval(model.transformed_source, y_tilde)
    if isinstance(model, Supervised):
        if model.h_sq == 0 or model.ht_sq == 0:
            raise ValueError("a Dirac supervised model has no density")
        a = gaussian_pdf(y[..., None, :], model.targets, model.h_sq)
        b = gaussian_pdf(y_tilde[..., None, :], model.transformed_sources, model.ht_sq)
        out = np.mean(a * b, axis=-1)
        return float(out) if np.ndim(out) == 0 else out
    if isinstance(model, SemiSupervised):
        u = joint_eval(model.unsup, y, y_tilde)
        s = joint_eval(model.sup, y, y_tilde)
        return (1.0 - model.lam) * u + model.lam * s


def marginal_eval(model, y, which):
    """Marginal density of a joint model; ``which`` is 'target' or 'source'."""
    if which not in ("target", "source"):
        raise ValueError("which must be 'target' or 'source'")
    if isinstance(model, Unsupervised):
        kde = model.target if which == "target" else model.transformed_source
        return kde_eval(kde, y)
    if isinstance(model, Supervised):
        if which == "target":
            return kde_eval(KdeModel(model.targets, model.h_sq), y)
        return kde_eval(KdeModel(model.transformed_sources, model.ht_sq), y)
    if isinstance(model, SemiSupervised):
        u = marginal_eval(model.unsup, y, which)
        s = marginal_eval(model.sup, y, which)
        return (1.0 - model.lam) * u + model.lam * s
    raise TypeError(f"not a joint model: {type(model).__name__}")


@dataclass(frozen=True)
class AffineRecord:
    """Per-dimension map ``raw = offset + scale * normalised``.

    Degenerate (constant) dimensions have ``scale == 0`` and normalise to 0.5.
    """

    offset: np.ndarray
    scale: np.ndarray
    degenerate: tuple = ()

    def normalize(self, points):
        pts = as_cloud(points, dim=len(self.offset))
        out = np.full_like(pts, 0.5)
        ok = self.scale != 0
        out[:, ok] = (pts[:, ok] - self.offset[ok]) / self.scale[ok]
        return out

    def denormalize(self, points):
        pts = as_cloud(points, dim=len(self.offset))
        ok = self.scale != 0
        out = np.empty_like(pts)
        out[:, ok] = self.offset[ok] + self.scale[ok] * pts[:, ok]
        out[:, ~ok] = self.offset[~ok]
        return out


def normalize_cloud(points):
    """Min-max scale each dimension into [0, 1].

    Returns ``(normalised, record)``; ``record.denormalize`` inverts the map.
    """
    pts = as_cloud(points)
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    degenerate = tuple(int(i) for i in np.flatnonzero(span == 0))
    offset = lo.copy()
    offset[list(degenerate)] = pts[0, list(degenerate)]
    rec = AffineRecord(offset=offset, scale=span, degenerate=degenerate)
    return rec.normalize(pts), rec


def subsample(points, max_n, seed):
    """Uniform sample without replacement, kept in input order."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    pts = as_cloud(points)
    if len(pts) <= max_n:
        return pts
    idx = np.random.default_rng(seed).choice(len(pts), size=max_n, replace=False)
    return pts[np.sort(idx)]


class CsvFormatError(ValueError):
    """Raised for malformed point or correspondence files."""


def _read_rows(path):
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells) or cells[0].startswith("#"):
                continue
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                if not rows and width is None:
                    # header line
                    width = len(cells)
                    continue
                raise CsvFormatError(f"{path}:{lineno}: non-numeric value in {row!r}")
            if width is None:
                width = len(vals)
            if len(vals) != width:
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def load_points_csv(path):
    """One point per row, ``d`` columns, optional header line."""
    return as_cloud(_read_rows(path))


def load_correspondences_csv(path, dim=None, colour=False):
    """Rows of ``2d`` columns: target ``y`` then source ``x``.

    With ``colour=True`` the file holds two RGB triplets per row, either in
    [0, 1] or in 0..255; the latter is detected by a maximum value above 1.
    """
    arr = _read_rows(path)
    if arr.shape[1] % 2:
        raise CsvFormatError(f"{path}: expected an even number of columns")
    d = arr.shape[1] // 2
    if dim is not None and d != dim:
        raise CsvFormatError(f"{path}: expected {2 * dim} columns, got {arr.shape[1]}")
    if colour and arr.max() > 1.0:
        arr = arr / 255.0
    return Correspondences(arr[:, :d], arr[:, d:])


def save_points_csv(path, points, header=None):
    pts = as_cloud(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for p in pts:
            w.writerow([repr(float(v)) for v in p])
