"""Closed-form cost terms and their gradients.

Two data-term modes are supported:

``legacy``
    ``t2 + lambda1 * t3`` where the unpaired cross term carries the factor 2
    of the L2 expansion and both Gaussians use variance ``h^2 + ht^2``.
``combined``
    ``(1 - lam) * <c|gamma_u> + lam * <c|gamma_s>`` for the Gaussian robust
    transport cost ``c = -N(y; yt, hc^2 I)``; kernels use variance
    ``h^2 + ht^2 + hc^2`` and no factor 2.

Both are negative (attractive under minimisation). The entropy terms ``t0``
and ``t1`` and the penalties are shared by the two modes.

Pair sums are evaluated in fixed row blocks and reduced in a fixed order, so
results are bit-identical whatever the number of worker threads.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .density import as_cloud
from .kernel import log_normaliser
from .transform import (
    PenaltyParams,
    bending_energy_grad,
    chain_params,
    kernel_matrix,
    range_penalty,
)

BLOCK_ROWS = 256
MODES = ("legacy", "combined")


@dataclass(frozen=True)
class CostConfig:
    """Bandwidths (as variances) and weights of the objective.

    ``lambda1`` weighs the paired term in legacy mode, ``lam`` mixes the two
    plans in combined mode. ``entropy_weight`` multiplies ``t0`` and ``t1``.

    Left as ``None``, ``ht_sq`` and ``entropy_weight`` follow the mode:

    * legacy: ``ht_sq = h_sq`` and weight 1 (plain L2 expansion);
    * combined: ``ht_sq = h_sq + hc_sq`` and weight ``(1 - lam) / 2``. The
      unpaired transport term lacks the factor 2 of the L2 cross term and
      smooths the target by the extra ``hc_sq``; these choices restore the
      L2 balance so that the unpaired part is minimised when the mapped
      source coincides with the target.

    ``inlier_fraction`` scales the default entropy weight. Below 1 the mapped
    source only has to explain that share of the target mass, which keeps
    it from spreading over a diffuse outlier background.
    """

    h_sq: float = 0.01
    ht_sq: float = None
    hc_sq: float = 0.01
    mode: str = "legacy"
    lambda1: float = 1.0
    lam: float = 0.5
    include_t0: bool = False
    include_t1: bool = True
    entropy_weight: float = None
    inlier_fraction: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.h_sq < 0 or (self.ht_sq is not None and self.ht_sq < 0):
            raise ValueError("h_sq and ht_sq must be >= 0")
        if not self.hc_sq > 0:
            raise ValueError("hc_sq must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be >= 0")
        if self.entropy_weight is not None and self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        if not 0.0 < self.inlier_fraction <= 1.0:
            raise ValueError("inlier_fraction must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def h_tilde_sq(self):
        if self.ht_sq is not None:
            return self.ht_sq
        return self.h_sq if self.mode == "legacy" else self.h_sq + self.hc_sq

    @property
    def entropy_w(self):
        if self.entropy_weight is not None:
            return self.entropy_weight
        base = 1.0 if self.mode == "legacy" else 0.5 * (1.0 - self.lam)
        return base * self.inlier_fraction

    @property
    def legacy_variance(self):
        return self.h_sq + self.h_tilde_sq

    @property
    def ot_variance(self):
        return self.h_sq + self.h_tilde_sq + self.hc_sq

    @property
    def data_variance(self):
        return self.legacy_variance if self.mode == "legacy" else self.ot_variance


TERMS = ("t0", "t1", "t2", "t3", "ot_unsup", "ot_sup", "combined_T", "t4", "t5")


@dataclass
class CostBreakdown:
    """Per-term values of one evaluation. Inactive terms are left at 0."""

    t0: float = 0.0
    t1: float = 0.0
    t2: float = 0.0
    t3: float = 0.0
    ot_unsup: float = 0.0
    ot_sup: float = 0.0
    combined_T: float = 0.0
    t4: float = 0.0
    t5: float = 0.0
    total: float = 0.0
    gradient: np.ndarray = field(default=None, repr=False)
    notes: tuple = ()

    def recompute_total(self, cfg, penalties):
        total = 0.0
        if cfg.include_t0:
            total += cfg.entropy_w * self.t0
        if cfg.include_t1:
            total += cfg.entropy_w * self.t1
        if cfg.mode == "legacy":
            total += self.t2 + cfg.lambda1 * self.t3
        else:
            total += self.combined_T
        total += penalties.lambda2 * self.t4 + penalties.lambda3 * self.t5
        return total

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name in TERMS + ("total",)}

    def to_record(self):
        """``name=value`` pairs, 17 significant digits, stable order."""
        return " ".join(f"{k}={v:.17g}" for k, v in self.as_dict().items())

    @classmethod
    def from_record(cls, text):
        vals = dict(kv.split("=", 1) for kv in text.split())
        return cls(**{k: float(v) for k, v in vals.items()})


def _block_sums(a, b, v, want_grad):
    """Sum of N(0; a_i - b_j, v) over a row block (and its gradient in a)."""
    d = a.shape[1]
    diff = a[:, None, :] - b[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    vals = np.exp(log_normaliser(d, v) - 0.5 * sq / v)
    total = np.sum(vals)
    if not want_grad:
        return total, None
    g = -np.einsum("ij,ijk->ik", vals, diff) / v
    return total, g


def pair_sum(a, b, v, grad=False, workers=1):
    """``sum_ij N(0; a_i - b_j, v I)`` and optionally its gradient in ``a``.

    Rows of ``a`` are processed in blocks of ``BLOCK_ROWS``; block results are
    reduced in block order, so the value does not depend on ``workers``.
    """
    if not v > 0:
        raise ValueError("combined variance must be > 0")
    starts = range(0, len(a), BLOCK_ROWS)
    jobs = [(a[s : s + BLOCK_ROWS], b, v, grad) for s in starts]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda j: _block_sums(*j), jobs))
    else:
        parts = [_block_sums(*j) for j in jobs]
    total = float(np.sum(np.array([p[0] for p in parts])))
    if not grad:
        return total
    return total, np.vstack([p[1] for p in parts])


def paired_sum(a, b, v, grad=False):
    """``sum_k N(0; a_k - b_k, v I)`` (single sum over aligned rows)."""
    if not v > 0:
        raise ValueError("combined variance must be > 0")
    d = a.shape[1]
    diff = a - b
    vals = np.exp(log_normaliser(d, v) - 0.5 * np.einsum("ij,ij->i", diff, diff) / v)
    total = float(np.sum(vals))
    if not grad:
        return total
    return total, -vals[:, None] * diff / v


def _check_dirac(var, name):
    if not var > 0:
        raise ValueError(f"{name}: bandwidth must be > 0 (the Dirac self-term is infinite)")


def term_T0(target, h_sq, workers=1):
    """``||mu||^2``: mean pairwise overlap of the target KDE with itself."""
    _check_dirac(h_sq, "term_T0")
    y = as_cloud(target)
    return pair_sum(y, y, 2.0 * h_sq, workers=workers) / len(y) ** 2


def term_T1(transformed_source, ht_sq, grad=False, workers=1):
    """``||mu_tilde||^2``; with ``grad`` also returns d/d(points)."""
    _check_dirac(ht_sq, "term_T1")
    ys = as_cloud(transformed_source)
    n2 = len(ys) ** 2
    if not grad:
        return pair_sum(ys, ys, 2.0 * ht_sq, workers=workers) / n2
    s, g = pair_sum(ys, ys, 2.0 * ht_sq, grad=True, workers=workers)
    # both arguments move together: the two symmetric halves are equal
    return s / n2, 2.0 * g / n2


def term_T2(target, transformed_source, cfg, grad=False):
    """``-2/(n nt) sum_ij N(0; yt_i - y_j, v I)`` with ``v = cfg.data_variance``."""
    y = as_cloud(target)
    ys = as_cloud(transformed_source, dim=y.shape[1])
    c = -2.0 / (len(y) * len(ys))
    out = pair_sum(ys, y, cfg.data_variance, grad=grad, workers=cfg.workers)
    if not grad:
        return c * out
    return c * out[0], c * out[1]


def _empty(corr):
    if corr is None or len(corr) == 0:
        warnings.warn("empty correspondence set: supervised term is 0", stacklevel=3)
        return True
    return False


def _paired_term(corr, transform, v, grad):
    mapped = transform(corr.sources)
    s = paired_sum(mapped, corr.targets, v, grad=grad)
    c = -1.0 / len(corr)
    if not grad:
        return c * s
    return c * s[0], c * s[1]


def term_T3(correspondences, transform, cfg, grad=False):
    """Single sum over pairs ``-1/K sum_k N(0; phi(x_k) - y_k, v I)``.

    The ``lambda1`` weight is applied by :func:`full_cost`.
    """
    if _empty(correspondences):
        return (0.0, None) if grad else 0.0
    return _paired_term(correspondences, transform, cfg.data_variance, grad)


def robust_ot_unsup(target, transformed_source, cfg, grad=False):
    """Robust transport cost under the independent plan ``gamma_u`` (A = 0)."""
    y = as_cloud(target)
    ys = as_cloud(transformed_source, dim=y.shape[1])
    c = -1.0 / (len(y) * len(ys))
    out = pair_sum(ys, y, cfg.ot_variance, grad=grad, workers=cfg.workers)
    if not grad:
        return c * out
    return c * out[0], c * out[1]


def robust_ot_sup(correspondences, transform, cfg, grad=False):
    """Robust transport cost under the paired plan ``gamma_s`` (A = 0)."""
    if _empty(correspondences):
        return (0.0, None) if grad else 0.0
    return _paired_term(correspondences, transform, cfg.ot_variance, grad)


def mix(u, s, lam):
    return (1.0 - lam) * u + lam * s


def robust_ot_combined(target, transformed_source, correspondences, transform, cfg):
    """Robust transport cost under the mixed plan ``gamma_{s+u}``."""
    u = robust_ot_unsup(target, transformed_source, cfg)
    s = robust_ot_sup(correspondences, transform, cfg)
    return mix(u, s, cfg.lam)


def full_cost(
    target,
    source,
    correspondences,
    transform,
    cfg,
    penalties=None,
    all_terms=True,
    gradient=True,
):
    """Evaluate the whole objective at ``transform``.

    ``source`` holds the untransformed samples ``x``. With ``all_terms`` the
    data terms of the inactive mode (and ``t0`` if excluded) are evaluated for
    reporting too; they never enter ``total`` or the gradient.
    """
    penalties = PenaltyParams() if penalties is None else penalties
    y = as_cloud(target)
    x = as_cloud(source, dim=y.shape[1])
    if transform.dim != y.shape[1]:
        raise ValueError("transform and clouds differ in dimension")
    have_corr = correspondences is not None and len(correspondences) > 0
    legacy = cfg.mode == "legacy"
    if not legacy and cfg.lam == 1.0 and not have_corr:
        raise ValueError("all data terms are empty: lam=1 needs correspondences")

    feats = transform.features(x)
    d = transform.dim
    ys = feats[:, :d] @ transform.A.T + transform.b
    if np.any(transform.W):
        ys = ys + feats[:, d + 1 :] @ transform.W
    g_src = np.zeros_like(ys)
    g_corr = None
    corr_feats = None
    if have_corr:
        corr_feats = transform.features(correspondences.sources)
        g_corr = np.zeros((len(correspondences), d))

    br = CostBreakdown()
    notes = []
    if not have_corr and (cfg.mode == "combined" and cfg.lam > 0 or legacy and cfg.lambda1 > 0):
        notes.append("no correspondences: supervised term is 0")

    if cfg.include_t0 or all_terms:
        if cfg.h_sq > 0:
            br.t0 = term_T0(y, cfg.h_sq, workers=cfg.workers)
    if cfg.include_t1:
        br.t1, g1 = term_T1(ys, cfg.h_tilde_sq, grad=True, workers=cfg.workers)
        g_src += cfg.entropy_w * g1
    elif all_terms and cfg.h_tilde_sq > 0:
        br.t1 = term_T1(ys, cfg.h_tilde_sq, workers=cfg.workers)

    if legacy:
        br.t2, g2 = term_T2(y, ys, cfg, grad=True)
        g_src += g2
        if have_corr:
            br.t3, g3 = term_T3(correspondences, transform, cfg, grad=True)
            g_corr += cfg.lambda1 * g3
    elif all_terms:
        lcfg = replace(cfg, mode="legacy")
        br.t2 = term_T2(y, ys, lcfg)
        if have_corr:
            br.t3 = term_T3(correspondences, transform, lcfg)

    if not legacy:
        br.ot_unsup, gu = robust_ot_unsup(y, ys, cfg, grad=True)
        g_src += (1.0 - cfg.lam) * gu
        if have_corr:
            br.ot_sup, gs = robust_ot_sup(correspondences, transform, cfg, grad=True)
            g_corr += cfg.lam * gs
        br.combined_T = mix(br.ot_unsup, br.ot_sup, cfg.lam)
    elif all_terms:
        ocfg = replace(cfg, mode="combined")
        br.ot_unsup = robust_ot_unsup(y, ys, ocfg)
        if have_corr:
            br.ot_sup = robust_ot_sup(correspondences, transform, ocfg)
        br.combined_T = mix(br.ot_unsup, br.ot_sup, cfg.lam)

    br.t4, g4 = range_penalty(ys, penalties, grad=True)
    g_src += penalties.lambda2 * g4
    K = kernel_matrix(transform.control_points, transform.control_points)
    br.t5 = float(np.sum(transform.W * (K @ transform.W))) if np.any(transform.W) else 0.0

    br.total = br.recompute_total(cfg, penalties)
    br.notes = tuple(notes)
    if not gradient:
        return br
    grad = chain_params(transform, feats, g_src)
    if have_corr:
        grad += chain_params(transform, corr_feats, g_corr)
    gW = penalties.lambda3 * bending_energy_grad(transform, K)
    grad[d * d + d :] += gW.ravel()
    br.gradient = grad
    return br


def l2_divergence(model_a, model_b, workers=1):
    """``||mu_a - mu_b||^2`` between two Gaussian KDEs, in closed form."""
    if model_a.is_dirac or model_b.is_dirac:
        raise ValueError("l2_divergence needs positive bandwidths")
    if model_a.dim != model_b.dim:
        raise ValueError("models differ in dimension")
    ya, yb = model_a.support, model_b.support
    aa = term_T0(ya, model_a.bandwidth_sq, workers=workers)
    bb = term_T0(yb, model_b.bandwidth_sq, workers=workers)
    ab = pair_sum(ya, yb, model_a.bandwidth_sq + model_b.bandwidth_sq, workers=workers)
    val = aa + bb - 2.0 * ab / (len(ya) * len(yb))
    return max(val, 0.0)


def crossproduct_diagnostic(correspondences, transform, h_sq, ht_sq):
    """Double-sum overlap ``<mu|mu_tilde>`` of the two correspondence KDEs.

    This is what reading the paired term as an inner product of densities
    would give; it mixes every target with every mapped source and so differs
    from the single paired sum in general.
    """
    if not h_sq + ht_sq > 0:
        raise ValueError("combined variance must be > 0")
    mapped = transform(correspondences.sources)
    k = len(correspondences)
    return pair_sum(correspondences.targets, mapped, h_sq + ht_sq) / k**2


def wasserstein_limit_loss(correspondences, transform, cfg):
    """Rescale the paired robust term into a squared-residual estimate.

    ``2 v (1 - (2 pi v)^(d/2) * (-ot_sup))`` tends to the mean squared
    residual as ``hc -> inf`` (``v`` is the full OT variance).
    """
    v = cfg.ot_variance
    d = correspondences.dim
    s = robust_ot_sup(correspondences, transform, cfg)
    welsch_mean = -math.expm1(math.log(-s) + 0.5 * d * math.log(2 * math.pi * v))
    return 2.0 * v * welsch_mean
