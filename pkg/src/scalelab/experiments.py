"""Configuration-driven experiment runners: sampling grids, stability
sweeps, feature ROC analysis, refinement studies, kappa sweeps and the
aliasing / wrong-blur / noise perturbation studies, all emitting CSV.

Every runner is deterministic given the spec seed: acquisition geometry,
noise and the synthetic reference scene all come from labeled Philox
streams, and aggregation happens in canonical order.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .camera import (AcquisitionSpec, make_translation_series,
                     simulate_snapshot, stream, synthetic_reference,
                     wrong_blur_series)
from .extrema import (Keypoint, STATUS_REFINED, _features_batch, build_dog,
                      canonical_sort, refine, scan_discrete_extrema)
from .image import DigitalImage, read_image
from .scalespace import ScaleSpaceConfig, semigroup_deviation
from .stability import (MatchTolerance, OccurrenceMatrix, StabilityReport,
                        boundary_filter, new_lost_rates,
                        normalize_scale_kappa, occurrence_matrix,
                        stability_and_precision, unique_set,
                        write_occurrence_csv, write_stability_csv)

EXPERIMENT_KINDS = ("semigroup", "sampling_grid", "sampling_stability",
                    "feature_roc", "refinement_study", "kappa_study",
                    "aliasing", "wrong_blur", "noise")

_DEFAULT_N_OCT = {"sampling_grid": 2, "sampling_stability": 2,
                  "feature_roc": 2, "refinement_study": 1, "kappa_study": 1,
                  "aliasing": 1, "wrong_blur": 3, "noise": 2}

_DEFAULT_N_IMAGES = {"refinement_study": 10, "aliasing": 8, "wrong_blur": 8,
                     "noise": 5}

# Camera blur each study assumes when the spec leaves c on auto: the wrong
# blur study centers on 0.7, the noise study uses a mildly sharp camera.
_DEFAULT_C = {"wrong_blur": 0.7, "noise": 0.8}

FEATURE_NAMES = ("dog_abs", "laplacian3d", "hessian_cond", "min_neighbor_gap")


def balanced_delta_min(n_spo: int, sigma_min: float, kappa: float) -> float:
    """Spatial sampling step matching the scale-axis step.

    The first scale gap is kappa * sigma_min * (2^(1/n_spo) - 1); sampling
    the Gaussian kernel equally in scale and space puts the inter-pixel
    distance at sqrt(2) times that gap.
    """
    if n_spo < 1:
        raise ValueError("n_spo must be >= 1")
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    return math.sqrt(2.0) * kappa * sigma_min * (2.0 ** (1.0 / n_spo) - 1.0)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a runner needs: detector profile, acquisition ranges,
    matching tolerance and output location. Zero-valued n_oct / n_images /
    delta_min mean "kind default" / "balanced"."""

    kind: str
    out_dir: str | Path = "out"
    seed: int = 20080809

    reference_path: str = ""
    reference_size: int = 2048

    n_oct: int = 0
    n_spo: int = 15
    sigma_min: float = 1.1
    delta_min: float = 0.0
    kappa: float = 2.0 ** (1.0 / 3.0)
    m_offset: float = 0.6
    n_interp: float = 2.0
    contrast_threshold: float = 0.0
    edge_ratio: float = 0.0

    c: float = 0.0
    s_factor: float = 10.0
    n_images: int = 0
    noise_sigma: float = 0.0

    epsilon: float = 1.0
    ratio_r: float = 2.0 ** 0.5
    presence_threshold: float = 0.5

    n_spo_list: tuple[int, ...] = tuple(range(3, 20))
    grid_n_spo_list: tuple[int, ...] = (3, 6, 9, 12, 15)
    grid_delta_list: tuple[float, ...] = (0.15, 0.25, 0.4, 0.65, 1.0)
    kappa_denominators: tuple[int, ...] = tuple(range(30, 1, -1))
    c_list: tuple[float, ...] = (0.25, 0.6, 1.1)
    delta_c_list: tuple[float, ...] = (0.05, 0.2, 0.4)
    noise_list: tuple[float, ...] = (5.0, 10.0, 20.0)  # 8-bit intensity units
    m_offset_list: tuple[float, ...] = (0.5, 0.6, 1.0, math.inf)
    n_interp_list: tuple[float, ...] = (1.0, 2.0, math.inf)
    refinement_n_spo_list: tuple[int, ...] = (3, 15)

    semigroup_c: float = 1.0
    semigroup_sigmas: tuple[float, ...] = (0.3, 0.5, 0.7, 1.0, 1.5)
    semigroup_iters: int = 10

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; "
                             f"expected one of {EXPERIMENT_KINDS}")
        for name in ("n_spo_list", "grid_n_spo_list", "grid_delta_list",
                     "kappa_denominators", "c_list", "delta_c_list",
                     "noise_list", "m_offset_list", "n_interp_list",
                     "refinement_n_spo_list", "semigroup_sigmas"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")

    @property
    def tolerance(self) -> MatchTolerance:
        return MatchTolerance(epsilon=self.epsilon, ratio_r=self.ratio_r)

    def resolved_n_oct(self) -> int:
        return self.n_oct if self.n_oct > 0 else _DEFAULT_N_OCT.get(self.kind, 1)

    def resolved_n_images(self) -> int:
        return self.n_images if self.n_images > 0 \
            else _DEFAULT_N_IMAGES.get(self.kind, 10)

    def resolved_c(self) -> float:
        return self.c if self.c > 0 else _DEFAULT_C.get(self.kind, 1.1)

    def detector_config(self, n_spo: int | None = None,
                        kappa: float | None = None,
                        delta_min: float | None = None,
                        c: float | None = None,
                        n_oct: int | None = None) -> ScaleSpaceConfig:
        n_spo = self.n_spo if n_spo is None else n_spo
        kappa = self.kappa if kappa is None else kappa
        c = self.resolved_c() if c is None else c
        n_oct = self.resolved_n_oct() if n_oct is None else n_oct
        if delta_min is None:
            delta_min = self.delta_min
        if delta_min <= 0:
            delta_min = balanced_delta_min(n_spo, self.sigma_min, kappa)
        return ScaleSpaceConfig(n_oct=n_oct, n_spo=n_spo,
                                sigma_min=self.sigma_min,
                                delta_min=delta_min, c=c, kappa=kappa)


def load_reference(spec: ExperimentSpec) -> DigitalImage:
    if spec.reference_path:
        return read_image(spec.reference_path)
    return synthetic_reference(spec.reference_size, spec.reference_size,
                               spec.seed)


# ---------------------------------------------------------------------------
# Shared detection helpers
# ---------------------------------------------------------------------------

def _scan_with_features(dog) -> list[Keypoint]:
    return _features_batch(dog, scan_discrete_extrema(dog))


def _refine_all(discrete: list[Keypoint], dog, m_offset: float,
                n_interp: float) -> list[Keypoint]:
    refined = [refine(kp, dog, m_offset=m_offset, n_interp=n_interp)
               for kp in discrete]
    return canonical_sort([kp for kp in refined if kp.status == STATUS_REFINED])


def _map_to_common_frame(kps: list[Keypoint], tx: float, ty: float,
                         zoom: float = 1.0) -> list[Keypoint]:
    return [replace(kp, x=zoom * (kp.x + tx), y=zoom * (kp.y + ty),
                    sigma=zoom * kp.sigma) for kp in kps]


def _set_digest(kps: list[Keypoint]) -> str:
    data = np.array(sorted((kp.sigma, kp.y, kp.x) for kp in kps),
                    dtype=np.float64)
    return hashlib.sha256(data.tobytes()).hexdigest()[:16]


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


# ---------------------------------------------------------------------------
# Semigroup (convolution back end comparison)
# ---------------------------------------------------------------------------

@dataclass
class SemigroupResult:
    rows: list[tuple[float, str, float]]  # (sigma, method, deviation)


def run_semigroup(spec: ExperimentSpec) -> SemigroupResult:
    rows = []
    for sigma in spec.semigroup_sigmas:
        for method in ("dct", "sampled"):
            dev = semigroup_deviation(spec.semigroup_c, sigma,
                                      spec.semigroup_iters, method)
            rows.append((sigma, method, dev))
    _write_csv(Path(spec.out_dir) / "semigroup.csv",
               ["sigma", "method", "deviation"],
               [(_fmt(s), m, _fmt(d)) for s, m, d in rows])
    return SemigroupResult(rows=rows)


# ---------------------------------------------------------------------------
# Sampling grid (detection counts and Hessian conditioning)
# ---------------------------------------------------------------------------

@dataclass
class GridCell:
    n_spo: int
    delta_min: float
    raw_count: int
    boundary_count: int
    unique_count: int
    median_cond: float


@dataclass
class SamplingGridResult:
    cells: list[GridCell]


def run_sampling_grid(spec: ExperimentSpec) -> SamplingGridResult:
    reference = load_reference(spec)
    image = simulate_snapshot(reference, AcquisitionSpec(
        c=spec.resolved_c(), s_factor=spec.s_factor, seed=spec.seed))
    tol = spec.tolerance
    cells = []
    for n_spo in spec.grid_n_spo_list:
        for delta in spec.grid_delta_list:
            config = spec.detector_config(n_spo=n_spo, delta_min=delta)
            dog = build_dog(image, config)
            discrete = _scan_with_features(dog)
            conds = np.array([kp.hessian_cond for kp in discrete])
            refined = _refine_all(discrete, dog, spec.m_offset, spec.n_interp)
            bounded = boundary_filter(refined, spec.sigma_min)
            uniques = unique_set(bounded, tol)
            cells.append(GridCell(
                n_spo=n_spo, delta_min=delta, raw_count=len(discrete),
                boundary_count=len(bounded), unique_count=len(uniques),
                median_cond=float(np.median(conds)) if len(conds) else math.nan))
    _write_csv(Path(spec.out_dir) / "grid_counts.csv",
               ["n_spo", "delta_min", "raw_count", "boundary_count",
                "unique_count", "median_hessian_cond"],
               [(c.n_spo, _fmt(c.delta_min), c.raw_count, c.boundary_count,
                 c.unique_count, _fmt(c.median_cond)) for c in cells])
    return SamplingGridResult(cells=cells)


# ---------------------------------------------------------------------------
# Sampling stability sweep (occurrence across n_spo)
# ---------------------------------------------------------------------------

@dataclass
class SamplingStabilityResult:
    n_spo_list: tuple[int, ...]
    counts: list[int]
    rates: list[tuple[float | None, float | None]]
    matrix: OccurrenceMatrix
    always_present_fraction: float


def run_sampling_stability(spec: ExperimentSpec) -> SamplingStabilityResult:
    reference = load_reference(spec)
    image = simulate_snapshot(reference, AcquisitionSpec(
        c=spec.resolved_c(), s_factor=spec.s_factor, seed=spec.seed))
    tol = spec.tolerance
    sets = []
    for n_spo in spec.n_spo_list:
        config = spec.detector_config(n_spo=n_spo)
        dog = build_dog(image, config)
        discrete = _scan_with_features(dog)
        refined = _refine_all(discrete, dog, spec.m_offset, spec.n_interp)
        sets.append(boundary_filter(refined, spec.sigma_min))
    rates = new_lost_rates(sets, tol)
    labels = [f"nspo{n}" for n in spec.n_spo_list]
    matrix = occurrence_matrix(sets, tol, labels=labels)
    always = float((matrix.stability >= 1.0).mean()) if len(matrix.stability) else 0.0

    out = Path(spec.out_dir)
    _write_csv(out / "counts.csv", ["n_spo", "delta_min", "count"],
               [(n, _fmt(balanced_delta_min(n, spec.sigma_min, spec.kappa)
                         if spec.delta_min <= 0 else spec.delta_min), len(d))
                for n, d in zip(spec.n_spo_list, sets)])
    _write_csv(out / "rates.csv", ["n_spo", "new_rate", "lost_rate"],
               [(n, _fmt(nr), _fmt(lr))
                for n, (nr, lr) in zip(spec.n_spo_list, rates)])
    write_occurrence_csv(matrix, out / "occurrence.csv")
    write_stability_csv(matrix, out / "stability.csv")
    return SamplingStabilityResult(n_spo_list=tuple(spec.n_spo_list),
                                   counts=[len(d) for d in sets], rates=rates,
                                   matrix=matrix,
                                   always_present_fraction=always)


# ---------------------------------------------------------------------------
# Feature ROC (can stability filters spot unstable keypoints?)
# ---------------------------------------------------------------------------

# Direction each feature is thresholded in: +1 keeps large values, -1 small.
_FEATURE_KEEP_SIGN = {"dog_abs": 1.0, "laplacian3d": 1.0,
                      "hessian_cond": -1.0, "min_neighbor_gap": 1.0}


def _feature_value(kp: Keypoint, name: str) -> float:
    v = getattr(kp, name)
    if name == "laplacian3d":
        return abs(v)
    return v


def roc_points(stable: np.ndarray, unstable: np.ndarray, keep_sign: float,
               n_thresholds: int = 256):
    """Threshold sweep (quantile-spaced) giving (threshold, sens, spec) rows.

    sensitivity = fraction of stable keypoints kept, specificity = fraction
    of unstable keypoints removed, for a filter that keeps feature values
    on the keep_sign side of the threshold.
    """
    pool = np.concatenate([stable, unstable])
    qs = np.linspace(0.0, 1.0, n_thresholds)
    finite = pool[np.isfinite(pool)]
    if finite.size == 0:
        raise ValueError("all feature values are non-finite")
    thresholds = np.quantile(finite, qs)
    rows = []
    for t in thresholds:
        if keep_sign > 0:
            sens = float((stable >= t).mean())
            specificity = float((unstable < t).mean())
        else:
            sens = float((stable <= t).mean())
            specificity = float((unstable > t).mean())
        rows.append((float(t), sens, specificity))
    return rows


def rank_auc(stable: np.ndarray, unstable: np.ndarray, keep_sign: float) -> float:
    """P(stable ranks on the kept side of unstable), ties counted half."""
    s = keep_sign * stable
    u = np.sort(keep_sign * unstable)
    greater = np.searchsorted(u, s, side="left")
    ties = np.searchsorted(u, s, side="right") - greater
    return float((greater + 0.5 * ties).sum() / (len(s) * len(u)))


@dataclass
class FeatureRocResult:
    auc: dict[str, float]
    curves: dict[str, list[tuple[float, float, float]]]
    n_stable: int
    n_unstable: int


def run_feature_roc(spec: ExperimentSpec,
                    stability: SamplingStabilityResult | None = None
                    ) -> FeatureRocResult:
    if stability is None:
        stability = run_sampling_stability(spec)
    matrix = stability.matrix
    stable_kps = [kp for kp, st in zip(matrix.keypoints, matrix.stability)
                  if st >= 0.8]
    unstable_kps = [kp for kp, st in zip(matrix.keypoints, matrix.stability)
                    if st <= 0.2]
    if not stable_kps or not unstable_kps:
        raise ValueError("degenerate class split: need both stable (>=80%) "
                         "and unstable (<=20%) keypoints")
    auc = {}
    curves = {}
    for name in FEATURE_NAMES:
        sign = _FEATURE_KEEP_SIGN[name]
        sv = np.array([_feature_value(kp, name) for kp in stable_kps])
        uv = np.array([_feature_value(kp, name) for kp in unstable_kps])
        auc[name] = rank_auc(sv, uv, sign)
        curves[name] = roc_points(sv, uv, sign)
    out = Path(spec.out_dir)
    for name in FEATURE_NAMES:
        _write_csv(out / f"roc_{name}.csv",
                   ["threshold", "sensitivity", "specificity"],
                   [(_fmt(t), _fmt(se), _fmt(sp)) for t, se, sp in curves[name]])
    _write_csv(out / "roc_auc.csv", ["feature", "auc", "n_stable", "n_unstable"],
               [(name, _fmt(auc[name]), len(stable_kps), len(unstable_kps))
                for name in FEATURE_NAMES])
    return FeatureRocResult(auc=auc, curves=curves, n_stable=len(stable_kps),
                            n_unstable=len(unstable_kps))


# ---------------------------------------------------------------------------
# Refinement study (M_offset, N_interp, n_spo)
# ---------------------------------------------------------------------------

@dataclass
class RefinementStudyResult:
    curves: dict[tuple[int, float, float], tuple[tuple[int, float], ...]]
    discrete_curves: dict[int, tuple[tuple[int, float], ...]]
    precision_refined: dict[int, float | None]
    precision_discrete: dict[int, float | None]
    digests: dict[tuple[int, float, float], list[str]]


def run_refinement_study(spec: ExperimentSpec) -> RefinementStudyResult:
    reference = load_reference(spec)
    images, records = make_translation_series(
        reference, spec.resolved_c(), spec.s_factor, spec.resolved_n_images(), spec.seed)
    tol = spec.tolerance
    curves = {}
    discrete_curves = {}
    precision_refined = {}
    precision_discrete = {}
    digests = {}

    for n_spo in spec.refinement_n_spo_list:
        config = spec.detector_config(n_spo=n_spo)
        per_image: list[tuple[list[Keypoint], object]] = []
        for img in images:
            dog = build_dog(img, config)
            per_image.append((_scan_with_features(dog), dog))

        discrete_sets = [
            _map_to_common_frame(kps, rec.tx, rec.ty)
            for (kps, _), rec in zip(per_image, records)]
        report = stability_and_precision(discrete_sets, tol,
                                         spec.presence_threshold)
        discrete_curves[n_spo] = report.curve
        precision_discrete[n_spo] = report.precision

        for m_off in spec.m_offset_list:
            for n_int in spec.n_interp_list:
                sets = []
                combo_digests = []
                for (kps, dog), rec in zip(per_image, records):
                    refined = _refine_all(kps, dog, m_off, n_int)
                    combo_digests.append(_set_digest(refined))
                    sets.append(_map_to_common_frame(refined, rec.tx, rec.ty))
                report = stability_and_precision(sets, tol,
                                                 spec.presence_threshold)
                key = (n_spo, m_off, n_int)
                curves[key] = report.curve
                digests[key] = combo_digests
                if m_off == spec.m_offset and n_int == spec.n_interp:
                    precision_refined[n_spo] = report.precision

    out = Path(spec.out_dir)
    curve_rows = []
    for (n_spo, m_off, n_int), curve in sorted(curves.items()):
        for p, pct in curve:
            curve_rows.append((n_spo, _fmt(m_off), _fmt(n_int), p, _fmt(pct)))
    for n_spo, curve in sorted(discrete_curves.items()):
        for p, pct in curve:
            curve_rows.append((n_spo, "discrete", "discrete", p, _fmt(pct)))
    _write_csv(out / "stability_curves.csv",
               ["n_spo", "m_offset", "n_interp", "p", "percentage"], curve_rows)
    _write_csv(out / "precision.csv", ["n_spo", "mode", "precision"],
               [(n, "refined", _fmt(precision_refined.get(n)))
                for n in spec.refinement_n_spo_list]
               + [(n, "discrete", _fmt(precision_discrete.get(n)))
                  for n in spec.refinement_n_spo_list])
    _write_csv(out / "set_digests.csv",
               ["n_spo", "m_offset", "n_interp", "image", "digest"],
               [(n_spo, _fmt(m_off), _fmt(n_int), i, d)
                for (n_spo, m_off, n_int), ds in sorted(digests.items())
                for i, d in enumerate(ds)])
    return RefinementStudyResult(curves=curves, discrete_curves=discrete_curves,
                                 precision_refined=precision_refined,
                                 precision_discrete=precision_discrete,
                                 digests=digests)


# ---------------------------------------------------------------------------
# Kappa study
# ---------------------------------------------------------------------------

@dataclass
class KappaStudyResult:
    kappas: list[float]
    counts: list[int]
    matrix: OccurrenceMatrix
    fraction_present_80: float


def run_kappa_study(spec: ExperimentSpec) -> KappaStudyResult:
    reference = load_reference(spec)
    image = simulate_snapshot(reference, AcquisitionSpec(
        c=spec.resolved_c(), s_factor=spec.s_factor, seed=spec.seed))
    tol = spec.tolerance
    kappas = [2.0 ** (1.0 / d) for d in spec.kappa_denominators]
    sets = []
    for kappa in kappas:
        config = spec.detector_config(kappa=kappa)
        dog = build_dog(image, config)
        discrete = _scan_with_features(dog)
        refined = _refine_all(discrete, dog, spec.m_offset, spec.n_interp)
        sets.append(normalize_scale_kappa(refined, kappa,
                                          sigma_min=spec.sigma_min,
                                          apply_common_range=True))
    labels = [f"kappa2^(1/{d})" for d in spec.kappa_denominators]
    matrix = occurrence_matrix(sets, tol, labels=labels) if len(sets) >= 2 else None
    if matrix is None:
        raise ValueError("kappa study needs at least 2 kappa values")
    frac80 = float((matrix.stability >= 0.8).mean()) if len(matrix.stability) else 0.0
    out = Path(spec.out_dir)
    _write_csv(out / "kappa_counts.csv", ["kappa", "count"],
               [(_fmt(k), len(d)) for k, d in zip(kappas, sets)])
    write_occurrence_csv(matrix, out / "occurrence.csv")
    write_stability_csv(matrix, out / "stability.csv")
    return KappaStudyResult(kappas=kappas, counts=[len(d) for d in sets],
                            matrix=matrix, fraction_present_80=frac80)


# ---------------------------------------------------------------------------
# Perturbation studies: aliasing, wrong blur, noise
# ---------------------------------------------------------------------------

@dataclass
class PerturbationResult:
    kind: str
    counts: dict          # kind-specific count data
    curves: dict          # parameter -> stability curve
    band_fractions: dict  # parameter -> [(band_lo, band_hi, fraction)]


def _detect_series(images, records, config, spec: ExperimentSpec,
                   assume_blur: bool = False) -> list[list[Keypoint]]:
    """Detect on each series member and map detections to the common frame.

    With assume_blur=True the images are re-annotated with the detector's
    assumed blur config.c before detection (the wrong-blur scenario, where
    the detector's belief deliberately differs from the true blur).
    """
    sets = []
    for img, rec in zip(images, records):
        if assume_blur and img.blur != config.c:
            img = DigitalImage(img.samples, delta=img.delta, blur=config.c)
        dog = build_dog(img, config)
        discrete = _scan_with_features(dog)
        refined = _refine_all(discrete, dog, spec.m_offset, spec.n_interp)
        sets.append(_map_to_common_frame(refined, rec.tx, rec.ty, rec.zoom))
    return sets


def _presence_band_fractions(report: StabilityReport, bands,
                             presence: float = 0.7):
    rows = []
    for lo, hi in bands:
        sel = np.array([lo <= kp.sigma < hi for kp in report.keypoints],
                       dtype=bool)
        if sel.any():
            frac = float((report.presence[sel] >= presence).mean())
        else:
            frac = None
        rows.append((lo, hi, frac))
    return rows


def run_perturbation_study(spec: ExperimentSpec) -> PerturbationResult:
    if spec.kind == "aliasing":
        return _run_aliasing(spec)
    if spec.kind == "wrong_blur":
        return _run_wrong_blur(spec)
    if spec.kind == "noise":
        return _run_noise(spec)
    raise ValueError(f"not a perturbation kind: {spec.kind!r}")


def _run_aliasing(spec: ExperimentSpec) -> PerturbationResult:
    reference = load_reference(spec)
    tol = spec.tolerance
    counts = {}
    curves = {}
    for i, c in enumerate(spec.c_list):
        images, records = make_translation_series(
            reference, c, spec.s_factor, spec.resolved_n_images(),
            spec.seed + 1000 * i)
        config = spec.detector_config(c=c)
        sets = _detect_series(images, records, config, spec)
        counts[c] = float(np.mean([len(s) for s in sets]))
        report = stability_and_precision(sets, tol, spec.presence_threshold)
        curves[c] = report.curve
    out = Path(spec.out_dir)
    _write_csv(out / "aliasing_counts.csv", ["c", "mean_count"],
               [(_fmt(c), _fmt(v)) for c, v in counts.items()])
    _write_csv(out / "aliasing_curves.csv", ["c", "p", "percentage"],
               [(_fmt(c), p, _fmt(pct)) for c, curve in curves.items()
                for p, pct in curve])
    return PerturbationResult(kind="aliasing", counts=counts, curves=curves,
                              band_fractions={})


def _run_wrong_blur(spec: ExperimentSpec) -> PerturbationResult:
    reference = load_reference(spec)
    tol = spec.tolerance
    c_assumed = spec.resolved_c()
    curves = {}
    bands_out = {}
    n_oct = spec.resolved_n_oct()
    band_edges = [(spec.sigma_min * 2.0 ** o, spec.sigma_min * 2.0 ** (o + 1))
                  for o in range(n_oct)]
    for i, delta_c in enumerate(spec.delta_c_list):
        images, records = wrong_blur_series(
            reference, c_assumed, delta_c, spec.resolved_n_images(),
            spec.s_factor, spec.seed + 1000 * i)
        config = spec.detector_config(c=c_assumed)
        sets = _detect_series(images, records, config, spec, assume_blur=True)
        report = stability_and_precision(sets, tol, spec.presence_threshold)
        curves[delta_c] = report.curve
        bands_out[delta_c] = _presence_band_fractions(report, band_edges)
    out = Path(spec.out_dir)
    _write_csv(out / "wrongblur_curves.csv", ["delta_c", "p", "percentage"],
               [(_fmt(dc), p, _fmt(pct)) for dc, curve in curves.items()
                for p, pct in curve])
    _write_csv(out / "wrongblur_bands.csv",
               ["delta_c", "band_lo", "band_hi", "fraction_ge70"],
               [(_fmt(dc), _fmt(lo), _fmt(hi), _fmt(frac))
                for dc, rows in bands_out.items() for lo, hi, frac in rows])
    return PerturbationResult(kind="wrong_blur", counts={}, curves=curves,
                              band_fractions=bands_out)


def _run_noise(spec: ExperimentSpec) -> PerturbationResult:
    reference = load_reference(spec)
    tol = spec.tolerance
    c = spec.resolved_c()
    curves = {}
    bands_out = {}
    counts = {}
    n_oct = spec.resolved_n_oct()
    band_edges = [(spec.sigma_min * 2.0 ** o, spec.sigma_min * 2.0 ** (o + 1))
                  for o in range(n_oct)]
    sigma_cuts = [spec.sigma_min * 2.0 ** (k / 2.0)
                  for k in range(2 * n_oct + 1)]
    for i, noise in enumerate(spec.noise_list):
        images, records = make_translation_series(
            reference, c, spec.s_factor, spec.resolved_n_images(),
            spec.seed + 1000 * i)
        noisy = []
        for j, img in enumerate(images):
            rng = stream(spec.seed + 1000 * i, "noise", j)
            samples = img.samples + noise * rng.standard_normal(img.samples.shape)
            noisy.append(DigitalImage(samples, delta=img.delta, blur=img.blur))
        config = spec.detector_config(c=c)
        sets = _detect_series(noisy, records, config, spec)
        report = stability_and_precision(sets, tol, spec.presence_threshold)
        curves[noise] = report.curve
        bands_out[noise] = _presence_band_fractions(report, band_edges)
        counts[noise] = [
            (cut, float(np.mean([sum(1 for kp in s if kp.sigma >= cut)
                                 for s in sets])))
            for cut in sigma_cuts]
    out = Path(spec.out_dir)
    _write_csv(out / "noise_curves.csv", ["noise_sigma", "p", "percentage"],
               [(_fmt(nz), p, _fmt(pct)) for nz, curve in curves.items()
                for p, pct in curve])
    _write_csv(out / "noise_counts.csv",
               ["noise_sigma", "sigma_cut", "mean_count_ge_cut"],
               [(_fmt(nz), _fmt(cut), _fmt(cnt))
                for nz, rows in counts.items() for cut, cnt in rows])
    _write_csv(out / "noise_bands.csv",
               ["noise_sigma", "band_lo", "band_hi", "fraction_ge70"],
               [(_fmt(nz), _fmt(lo), _fmt(hi), _fmt(frac))
                for nz, rows in bands_out.items() for lo, hi, frac in rows])
    return PerturbationResult(kind="noise", counts=counts, curves=curves,
                              band_fractions=bands_out)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def run_experiment(spec: ExperimentSpec):
    if spec.kind == "semigroup":
        return run_semigroup(spec)
    if spec.kind == "sampling_grid":
        return run_sampling_grid(spec)
    if spec.kind == "sampling_stability":
        return run_sampling_stability(spec)
    if spec.kind == "feature_roc":
        return run_feature_roc(spec)
    if spec.kind == "refinement_study":
        return run_refinement_study(spec)
    if spec.kind == "kappa_study":
        return run_kappa_study(spec)
    return run_perturbation_study(spec)
