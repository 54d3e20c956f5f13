"""File-level runs: colour transfer between images, point-set registration,
cost inspection. Each run writes a JSON manifest next to its main output.

Colour transfer convention: the colours of the image being recoloured form
the *source* cloud ``x``; the palette image's colours form the *target* cloud
``y``. The estimated map sends source colours onto the palette.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .cost import CostConfig, full_cost, l2_divergence
from .density import (
    AffineRecord,
    Correspondences,
    KdeModel,
    as_cloud,
    load_correspondences_csv,
    load_points_csv,
    normalize_cloud,
    subsample,
)
from .solver import NumericalFailure, SolverConfig, evaluate_fit, solve
from .transform import (
    PenaltyParams,
    TpsTransform,
    grid_control_points,
    load_transform,
    save_transform,
)

log = logging.getLogger(__name__)

REPORT_BANDWIDTH = 0.05
MAP_BLOCK = 4096
MANIFEST_VERSION = 1


class ImageError(ValueError):
    """Unreadable, empty or undecodable image."""


@dataclass(frozen=True)
class ImageBuffer:
    """RGB pixels in [0, 1], row major, shape ``(height * width, 3)``.

    ``alpha`` keeps the 8-bit alpha plane of the input, if any, untouched.
    """

    width: int
    height: int
    pixels: np.ndarray
    alpha: np.ndarray = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ImageError("image must have at least one pixel")
        px = np.asarray(self.pixels, dtype=float)
        if px.shape != (self.width * self.height, 3):
            raise ImageError(f"pixels must have shape ({self.width * self.height}, 3)")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ImageError("channel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_uint8(cls, rgb, alpha=None):
        rgb = np.asarray(rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.size == 0:
            raise ImageError("expected a non-empty (height, width, 3) array")
        h, w, _ = rgb.shape
        return cls(w, h, rgb.reshape(-1, 3).astype(float) / 255.0, alpha)

    def to_uint8(self):
        q = np.rint(np.clip(self.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
        return q.reshape(self.height, self.width, 3)


def load_image(path):
    try:
        with Image.open(path) as im:
            im.load()
            alpha = None
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                im = im.convert("RGBA")
                alpha = np.asarray(im)[..., 3].copy()
            rgb = np.asarray(im.convert("RGB"))
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc
    return ImageBuffer.from_uint8(rgb, alpha)


def save_image(path, img):
    """8-bit PNG with fixed encoder settings, so equal pixels give equal bytes."""
    rgb = img.to_uint8()
    if img.alpha is not None:
        im = Image.fromarray(np.dstack([rgb, img.alpha]), mode="RGBA")
    else:
        im = Image.fromarray(rgb, mode="RGB")
    im.save(path, format="PNG", optimize=False, compress_level=6)


def image_to_cloud(img, max_samples, seed):
    """Pixel colours as 3-D points, uniformly subsampled (deterministic per seed)."""
    return subsample(img.pixels, max_samples, seed)


def map_colours(img, transform, workers=1):
    """Apply ``transform`` to every pixel, clamped to [0, 1].

    The map is evaluated once per distinct 8-bit colour. Blocks of distinct
    colours have a fixed size, so results do not depend on ``workers``.
    """
    q = img.to_uint8().reshape(-1, 3)
    colours, inverse = np.unique(q, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    c = colours.astype(float) / 255.0
    starts = range(0, len(c), MAP_BLOCK)

    def block(s):
        return np.clip(transform(c[s : s + MAP_BLOCK]), 0.0, 1.0)

    if workers > 1 and len(c) > MAP_BLOCK:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            mapped = np.vstack(list(ex.map(block, starts)))
    else:
        mapped = np.vstack([block(s) for s in starts])
    return ImageBuffer(img.width, img.height, mapped[inverse], img.alpha)


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    cost: CostConfig = field(default_factory=CostConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    penalties: PenaltyParams = field(default_factory=PenaltyParams)
    max_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.max_samples < 1:
            raise ValueError("max_samples must be >= 1")

    def to_dict(self):
        return {
            "cost": asdict(self.cost),
            "solver": asdict(self.solver),
            "penalties": asdict(self.penalties),
            "max_samples": self.max_samples,
            "seed": self.seed,
        }


_SECTIONS = {"cost": CostConfig, "solver": SolverConfig, "penalties": PenaltyParams}


def run_config_from_mapping(data, base=None):
    """Build a :class:`RunConfig` from field names.

    Keys may be grouped under ``cost``/``solver``/``penalties`` or given flat,
    in which case each is looked up among the fields of the three configs.
    ``seed`` also seeds the solver. Unknown keys raise ``ValueError``.
    """
    base = RunConfig() if base is None else base
    parts = {name: {} for name in _SECTIONS}
    top = {}
    owners = {}
    for name, cls in _SECTIONS.items():
        for f in fields(cls):
            owners.setdefault(f.name, name)
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"section {key!r} must be a mapping")
            known = {f.name for f in fields(_SECTIONS[key])}
            for k, v in value.items():
                if k not in known:
                    raise ValueError(f"unknown {key} field {k!r}")
                parts[key][k] = v
        elif key in ("max_samples", "seed"):
            top[key] = value
        elif key in owners:
            parts[owners[key]][key] = value
        else:
            raise ValueError(f"unknown configuration key {key!r}")
    solver_kw = parts["solver"]
    if "seed" in top and "seed" not in solver_kw:
        solver_kw["seed"] = top["seed"]
    return replace(
        base,
        cost=replace(base.cost, **parts["cost"]),
        solver=replace(base.solver, **solver_kw),
        penalties=replace(base.penalties, **parts["penalties"]),
        **top,
    )


def load_run_config(path, base=None):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be an object")
    return run_config_from_mapping(data, base)


# -- manifests --------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out_path):
    p = Path(out_path)
    return p.with_name(p.name + ".manifest.json")


def write_manifest(out_path, command, inputs, cfg, outputs, results=None, status="ok"):
    """JSON record of a run; enough to repeat it. No timestamps or timings."""
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "status": status,
        "inputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in inputs.items() if p},
        "config": cfg.to_dict(),
        "outputs": {k: str(p) for k, p in outputs.items() if p},
        "results": results or {},
    }
    path = manifest_path(out_path)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _failure_results(exc):
    return {"error": str(exc), "stage": exc.stage, "iterate": exc.iterate}


# -- colour transfer --------------------------------------------------------


@dataclass
class TransferResult:
    image: ImageBuffer
    report: object
    l2_before: float
    l2_after: float

    @property
    def improved(self):
        return self.l2_after < self.l2_before


def report_divergence(a, b):
    v = REPORT_BANDWIDTH**2
    return l2_divergence(KdeModel(a, v), KdeModel(b, v))


def transfer(target_img, palette_img, correspondences=None, cfg=None):
    """Recolour ``target_img`` with the colours of ``palette_img``.

    ``correspondences`` pairs palette colours (targets) with colours of the
    image being recoloured (sources). Returns a :class:`TransferResult` with
    the L2 divergence between sampled colour clouds before and after.
    """
    cfg = RunConfig() if cfg is None else cfg
    src = image_to_cloud(target_img, cfg.max_samples, cfg.seed)
    pal = image_to_cloud(palette_img, cfg.max_samples, cfg.seed)
    report = solve(pal, src, correspondences, cfg.cost, cfg.solver, cfg.penalties)
    out = map_colours(target_img, report.transform, workers=cfg.cost.workers)
    after = image_to_cloud(out, cfg.max_samples, cfg.seed)
    return TransferResult(out, report, report_divergence(src, pal), report_divergence(after, pal))


def run_transfer(target_path, palette_path, out_path, corr_path=None, cfg=None, trace_path=None):
    """File wrapper around :func:`transfer`; writes PNG, transform, manifest."""
    cfg = RunConfig() if cfg is None else cfg
    target_img = load_image(target_path)
    palette_img = load_image(palette_path)
    corr = load_correspondences_csv(corr_path, dim=3, colour=True) if corr_path else None
    out_path = Path(out_path)
    tps_path = out_path.with_suffix(".tps")
    inputs = {"target_image": target_path, "palette_image": palette_path,
              "correspondences": corr_path}
    try:
        res = transfer(target_img, palette_img, corr, cfg)
    except NumericalFailure as exc:
        write_manifest(out_path, "transfer", inputs, cfg, {}, _failure_results(exc),
                       status="numerical_failure")
        raise
    save_image(out_path, res.image)
    save_transform(tps_path, res.report.transform)
    if trace_path:
        res.report.write_trace(trace_path)
    results = {
        "l2_before": res.l2_before,
        "l2_after": res.l2_after,
        "final_total": res.report.final_total,
        "converged": res.report.converged,
        "iterates": len(res.report.trace),
    }
    write_manifest(out_path, "transfer", inputs, cfg,
                   {"image": out_path, "transform": tps_path, "trace": trace_path}, results)
    return res


# -- registration -----------------------------------------------------------


def _load_pair(target_csv, source_csv, corr_path):
    y = load_points_csv(target_csv)
    x = load_points_csv(source_csv)
    if x.shape[1] != y.shape[1]:
        raise ValueError(
            f"dimension mismatch: target has {y.shape[1]} columns, source {x.shape[1]}"
        )
    corr = load_correspondences_csv(corr_path, dim=y.shape[1]) if corr_path else None
    return y, x, corr


def shared_normalisation(*clouds):
    """One min-max record fitted to the union of the clouds."""
    return normalize_cloud(np.vstack([as_cloud(c) for c in clouds]))[1]


def _norm_corr(corr, rec):
    if corr is None:
        return None
    return Correspondences(rec.normalize(corr.targets), rec.normalize(corr.sources))


def _rec_meta(rec):
    return {"norm_offset": rec.offset, "norm_scale": rec.scale}


def _rec_from_meta(meta):
    if "norm_offset" not in meta:
        return None
    off = np.array(meta["norm_offset"].split(), dtype=float)
    scale = np.array(meta["norm_scale"].split(), dtype=float)
    return AffineRecord(off, scale, tuple(int(i) for i in np.flatnonzero(scale == 0)))


@dataclass
class RegisterResult:
    transform: TpsTransform
    report: object
    normalisation: AffineRecord
    rmse: float = None

    def apply(self, points):
        """Map raw-coordinate points through the estimated transform."""
        rec = self.normalisation
        return rec.denormalize(self.transform(rec.normalize(points)))


def register(target, source, correspondences=None, cfg=None):
    """Register point clouds given in raw coordinates.

    Both clouds (and the correspondences) are mapped into [0, 1]^d by one
    shared min-max record; the transform acts in that normalised frame.
    """
    cfg = RunConfig() if cfg is None else cfg
    y, x = as_cloud(target), as_cloud(source)
    rec = shared_normalisation(y, x)
    yn = subsample(rec.normalize(y), cfg.max_samples, cfg.seed)
    xn = subsample(rec.normalize(x), cfg.max_samples, cfg.seed)
    report = solve(yn, xn, _norm_corr(correspondences, rec), cfg.cost, cfg.solver, cfg.penalties)
    res = RegisterResult(report.transform, report, rec)
    if correspondences is not None and len(correspondences):
        res.rmse = evaluate_fit(res.apply, correspondences)
    return res


def run_register(target_csv, source_csv, out_path, corr_path=None, cfg=None, trace_path=None):
    cfg = RunConfig() if cfg is None else cfg
    y, x, corr = _load_pair(target_csv, source_csv, corr_path)
    inputs = {"target": target_csv, "source": source_csv, "correspondences": corr_path}
    try:
        res = register(y, x, corr, cfg)
    except NumericalFailure as exc:
        write_manifest(out_path, "register", inputs, cfg, {}, _failure_results(exc),
                       status="numerical_failure")
        raise
    save_transform(out_path, res.transform, _rec_meta(res.normalisation))
    if trace_path:
        res.report.write_trace(trace_path)
    results = {"final_total": res.report.final_total, "converged": res.report.converged,
               "iterates": len(res.report.trace), "rmse": res.rmse}
    write_manifest(out_path, "register", inputs, cfg,
                   {"transform": out_path, "trace": trace_path}, results)
    return res


# -- cost inspection --------------------------------------------------------


def eval_cost(target, source, correspondences=None, transform=None, cfg=None, normalisation=None):
    """Full cost breakdown at ``transform`` (identity by default).

    Uses ``cfg.cost`` as is, without annealing. With ``normalisation`` the
    inputs are first mapped into the transform's frame.
    """
    cfg = RunConfig() if cfg is None else cfg
    y, x = as_cloud(target), as_cloud(source)
    if normalisation is not None:
        y, x = normalisation.normalize(y), normalisation.normalize(x)
        correspondences = _norm_corr(correspondences, normalisation)
    if transform is None:
        transform = TpsTransform.identity(grid_control_points(y.shape[1]))
    return full_cost(y, x, correspondences, transform, cfg.cost, cfg.penalties)


def run_eval_cost(target_csv, source_csv, corr_path=None, transform_path=None, cfg=None):
    y, x, corr = _load_pair(target_csv, source_csv, corr_path)
    t, rec = None, None
    if transform_path:
        t, meta = load_transform(transform_path, with_meta=True)
        rec = _rec_from_meta(meta)
    return eval_cost(y, x, corr, t, cfg, normalisation=rec)


def format_breakdown(br):
    """One ``name = value`` line per term, then the total."""
    return "\n".join(f"{k} = {v:.17g}" for k, v in br.as_dict().items())
