"""DoG volume construction, discrete 3D extrema scan, iterative quadratic
refinement, per-keypoint features, and the optional contrast/edge filters.

The DoG ratio kappa is an independent parameter: for each scale sigma_s the
images at sigma_s and kappa*sigma_s are both computed directly from the
seed and subtracted, so the operator definition does not change when the
scale axis is sampled more finely.

Per octave the volume carries slices for scale indices s = 0 .. n_spo+1.
The two extra boundary slices make the scanned interior s = 1 .. n_spo
cover the octave's full scale range contiguously across octaves, and keep
every octave at the three slices the 26-neighbor scan needs even for
n_spo = 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .image import DigitalImage
from .scalespace import LevelEngine, ScaleSpaceConfig

SINGULAR_DET_EPS = 1e-12

STATUS_DISCRETE = "discrete"
STATUS_REFINED = "refined"
STATUS_REJECTED = "rejected"


@dataclass(frozen=True)
class DoGOctave:
    octave: int
    delta: float                # octave inter-pixel distance, input units
    sigmas: np.ndarray          # nominal sigma_s per slice, input units
    values: np.ndarray          # float32, shape (n_slices, height, width)


@dataclass(frozen=True)
class DoGVolume:
    config: ScaleSpaceConfig
    octaves: tuple[DoGOctave, ...]


@dataclass(frozen=True)
class Keypoint:
    """Detection at a discrete DoG node, optionally with a refined position.

    (o, s, m, n) is the grid node the quadratic model was last evaluated
    at; sigma/x/y are the refined coordinates in input-pixel units (equal
    to the node coordinates while status is "discrete"); alpha is the
    accepted interpolation offset (scale, y, x).
    """

    o: int
    s: int
    m: int
    n: int
    sigma: float
    x: float
    y: float
    alpha: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dog_value: float = 0.0
    dog_abs: float = math.nan
    laplacian3d: float = math.nan
    hessian_cond: float = math.nan
    min_neighbor_gap: float = math.nan
    status: str = STATUS_DISCRETE
    reason: str = ""


def canonical_sort(kps: list[Keypoint]) -> list[Keypoint]:
    """Deterministic order: octave, scale, y, x (grid indices)."""
    return sorted(kps, key=lambda k: (k.o, k.s, k.m, k.n))


# ---------------------------------------------------------------------------
# DoG construction
# ---------------------------------------------------------------------------

def build_dog(image: DigitalImage, config: ScaleSpaceConfig) -> DoGVolume:
    """DoG volume w(sigma_s, x) = v(kappa sigma_s, x) - v(sigma_s, x).

    Both images of every pair are computed directly from the seed and
    subtracted on the octave grid.
    """
    engine = LevelEngine(image, config)
    octaves = []
    for o in range(engine.n_oct):
        sigmas = np.array([config.sigma(o, s) for s in range(config.n_spo + 2)])
        slices = []
        for sigma in sigmas:
            lo = engine.level(o, sigma)
            hi = engine.level(o, config.kappa * sigma)
            slices.append(hi.samples.astype(np.float32)
                          - lo.samples.astype(np.float32))
        octaves.append(DoGOctave(octave=o,
                                 delta=engine.input_delta * config.octave_delta(o),
                                 sigmas=sigmas,
                                 values=np.stack(slices)))
    return DoGVolume(config=config, octaves=tuple(octaves))


# ---------------------------------------------------------------------------
# Discrete extrema scan
# ---------------------------------------------------------------------------

def _vert3(a: np.ndarray, op) -> np.ndarray:
    return op(op(a[:-2], a[1:-1]), a[2:])


def _full9(a: np.ndarray, op) -> np.ndarray:
    col = _vert3(a, op)
    return op(op(col[:, :-2], col[:, 1:-1]), col[:, 2:])


def _ring8(b: np.ndarray, op) -> np.ndarray:
    # 3x3 extremum around each pixel, center excluded: full side columns
    # plus the up/down pair of the center column.
    col = _vert3(b, op)
    updown = op(b[:-2, 1:-1], b[2:, 1:-1])
    return op(op(col[:, :-2], col[:, 2:]), updown)


def _slice_extrema(window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Strict max/min masks of the center slice of a (3, H, W) window."""
    below, center_slice, above = window[0], window[1], window[2]
    center = center_slice[1:-1, 1:-1]
    nb_max = np.maximum(np.maximum(_full9(below, np.maximum),
                                   _full9(above, np.maximum)),
                        _ring8(center_slice, np.maximum))
    nb_min = np.minimum(np.minimum(_full9(below, np.minimum),
                                   _full9(above, np.minimum)),
                        _ring8(center_slice, np.minimum))
    return center > nb_max, center < nb_min


def scan_discrete_extrema(dog: DoGVolume) -> list[Keypoint]:
    """Voxels strictly above or below all 26 neighbors; ties detect nothing.

    The outermost scale slices and a 1-pixel spatial border are excluded,
    so every returned node has a full neighborhood. Output is in canonical
    (octave, scale, y, x) order.
    """
    kps: list[Keypoint] = []
    cfg = dog.config
    for oct_ in dog.octaves:
        vol = oct_.values
        n_slices = vol.shape[0]
        if n_slices < 3:
            raise ValueError(f"octave {oct_.octave} has {n_slices} slices; scan needs >= 3")
        for s in range(1, n_slices - 1):
            is_max, is_min = _slice_extrema(vol[s - 1:s + 2])
            for mask in (is_max, is_min):
                mm, nn = np.nonzero(mask)
                for m, n in zip((mm + 1).tolist(), (nn + 1).tolist()):
                    kps.append(Keypoint(
                        o=oct_.octave, s=s, m=m, n=n,
                        sigma=float(oct_.sigmas[s]),
                        x=oct_.delta * n, y=oct_.delta * m,
                        dog_value=float(vol[s, m, n]),
                        status=STATUS_DISCRETE))
    return canonical_sort(kps)


# ---------------------------------------------------------------------------
# Quadratic model: gradient, Hessian, adjugate solve
# ---------------------------------------------------------------------------

def _grad_hess(vol: np.ndarray, s: int, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian at a node, unit grid steps."""
    p = np.asarray(vol[s - 1:s + 2, m - 1:m + 2, n - 1:n + 2], dtype=np.float64)
    c = p[1, 1, 1]
    g = 0.5 * np.array([p[2, 1, 1] - p[0, 1, 1],
                        p[1, 2, 1] - p[1, 0, 1],
                        p[1, 1, 2] - p[1, 1, 0]])
    h11 = p[2, 1, 1] - 2.0 * c + p[0, 1, 1]
    h22 = p[1, 2, 1] - 2.0 * c + p[1, 0, 1]
    h33 = p[1, 1, 2] - 2.0 * c + p[1, 1, 0]
    h12 = 0.25 * (p[2, 2, 1] - p[2, 0, 1] - p[0, 2, 1] + p[0, 0, 1])
    h13 = 0.25 * (p[2, 1, 2] - p[2, 1, 0] - p[0, 1, 2] + p[0, 1, 0])
    h23 = 0.25 * (p[1, 2, 2] - p[1, 2, 0] - p[1, 0, 2] + p[1, 0, 0])
    hess = np.array([[h11, h12, h13], [h12, h22, h23], [h13, h23, h33]])
    return g, hess


def _det3(h: np.ndarray) -> float:
    return (h[0, 0] * (h[1, 1] * h[2, 2] - h[1, 2] * h[2, 1])
            - h[0, 1] * (h[1, 0] * h[2, 2] - h[1, 2] * h[2, 0])
            + h[0, 2] * (h[1, 0] * h[2, 1] - h[1, 1] * h[2, 0]))


def _solve3_adjugate(h: np.ndarray, rhs: np.ndarray, det: float) -> np.ndarray:
    adj = np.array([
        [h[1, 1] * h[2, 2] - h[1, 2] * h[2, 1],
         h[0, 2] * h[2, 1] - h[0, 1] * h[2, 2],
         h[0, 1] * h[1, 2] - h[0, 2] * h[1, 1]],
        [h[1, 2] * h[2, 0] - h[1, 0] * h[2, 2],
         h[0, 0] * h[2, 2] - h[0, 2] * h[2, 0],
         h[0, 2] * h[1, 0] - h[0, 0] * h[1, 2]],
        [h[1, 0] * h[2, 1] - h[1, 1] * h[2, 0],
         h[0, 1] * h[2, 0] - h[0, 0] * h[2, 1],
         h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]]])
    return adj @ rhs / det


def _round_away(a: float) -> int:
    return int(math.copysign(math.floor(abs(a) + 0.5), a))


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

def refine(kp: Keypoint, dog: DoGVolume, m_offset: float = 0.6,
           n_interp: int | float | None = 2) -> Keypoint:
    """Iterative quadratic interpolation of a discrete extremum.

    Solves H alpha = -g at the current node; accepts when the sup-norm of
    alpha is below m_offset, otherwise moves to the nearest grid node
    (each axis by at most one step, clamped to the scan domain) and
    retries. n_interp bounds the number of attempts; None or inf allows
    unlimited attempts, terminated by node revisits.
    """
    if kp.status != STATUS_DISCRETE:
        raise ValueError(f"refine expects a discrete keypoint, got status {kp.status!r}")
    if m_offset <= 0:
        raise ValueError("m_offset must be positive")
    unlimited = n_interp is None or math.isinf(n_interp)
    if not unlimited and n_interp < 1:
        raise ValueError("n_interp must be at least 1")
    cfg = dog.config
    oct_ = dog.octaves[kp.o]
    vol = oct_.values
    n_slices, height, width = vol.shape
    s, m, n = kp.s, kp.m, kp.n
    visited = {(s, m, n)}

    attempt = 0
    while True:
        attempt += 1
        g, hess = _grad_hess(vol, s, m, n)
        det = _det3(hess)
        if abs(det) < SINGULAR_DET_EPS:
            return replace(kp, s=s, m=m, n=n, status=STATUS_REJECTED,
                           reason="singular Hessian")
        alpha = _solve3_adjugate(hess, -g, det)
        if np.max(np.abs(alpha)) < m_offset:
            omega = float(vol[s, m, n]) + float(g @ alpha) \
                + 0.5 * float(alpha @ hess @ alpha)
            sigma = cfg.sigma_min * 2.0 ** (kp.o + (s + alpha[0]) / cfg.n_spo)
            return replace(kp, s=s, m=m, n=n,
                           sigma=float(sigma),
                           x=oct_.delta * (n + alpha[2]),
                           y=oct_.delta * (m + alpha[1]),
                           alpha=(float(alpha[0]), float(alpha[1]), float(alpha[2])),
                           dog_value=omega, status=STATUS_REFINED)
        if not unlimited and attempt >= n_interp:
            return replace(kp, s=s, m=m, n=n, status=STATUS_REJECTED,
                           reason="offset never below m_offset")
        step = [max(-1, min(1, _round_away(a))) for a in alpha]
        node = (max(1, min(n_slices - 2, s + step[0])),
                max(1, min(height - 2, m + step[1])),
                max(1, min(width - 2, n + step[2])))
        if node == (s, m, n) or node in visited:
            return replace(kp, s=s, m=m, n=n, status=STATUS_REJECTED,
                           reason="relocation stalled")
        visited.add(node)
        s, m, n = node


# ---------------------------------------------------------------------------
# Keypoint features
# ---------------------------------------------------------------------------

def compute_features(kp: Keypoint, dog: DoGVolume) -> Keypoint:
    """DoG magnitude, 3D Laplacian, Hessian condition number, neighbor gap.

    All features are evaluated at the discrete node (kp.s, kp.m, kp.n).
    The condition number is the ratio of largest to smallest singular value
    of the 3D Hessian, +inf when the smallest underflows.
    """
    oct_ = dog.octaves[kp.o]
    vol = oct_.values
    s, m, n = kp.s, kp.m, kp.n
    if not (1 <= s <= vol.shape[0] - 2 and 1 <= m <= vol.shape[1] - 2
            and 1 <= n <= vol.shape[2] - 2):
        raise ValueError(f"keypoint node ({s},{m},{n}) outside scan domain")
    _, hess = _grad_hess(vol, s, m, n)
    sv = np.abs(np.linalg.eigvalsh(hess))
    smax, smin = float(sv.max()), float(sv.min())
    cond = math.inf if smin == 0.0 else smax / smin
    center = float(vol[s, m, n])
    gaps = []
    for ds in (-1, 0, 1):
        for dm in (-1, 0, 1):
            for dn in (-1, 0, 1):
                if ds == dm == dn == 0:
                    continue
                gaps.append(abs(center - float(vol[s + ds, m + dm, n + dn])))
    return replace(kp,
                   dog_abs=abs(center),
                   laplacian3d=float(np.trace(hess)),
                   hessian_cond=cond,
                   min_neighbor_gap=min(gaps))


def _features_batch(dog: DoGVolume, kps: list[Keypoint]) -> list[Keypoint]:
    """Vectorized compute_features for many keypoints of one volume."""
    if not kps:
        return []
    out: list[Keypoint] = []
    by_octave: dict[int, list[Keypoint]] = {}
    for kp in kps:
        by_octave.setdefault(kp.o, []).append(kp)
    for o, group in sorted(by_octave.items()):
        vol = dog.octaves[o].values
        s = np.array([k.s for k in group])
        m = np.array([k.m for k in group])
        n = np.array([k.n for k in group])

        def pick(ds, dm, dn):
            return vol[s + ds, m + dm, n + dn].astype(np.float64)

        c = pick(0, 0, 0)
        h11 = pick(1, 0, 0) - 2 * c + pick(-1, 0, 0)
        h22 = pick(0, 1, 0) - 2 * c + pick(0, -1, 0)
        h33 = pick(0, 0, 1) - 2 * c + pick(0, 0, -1)
        h12 = 0.25 * (pick(1, 1, 0) - pick(1, -1, 0)
                      - pick(-1, 1, 0) + pick(-1, -1, 0))
        h13 = 0.25 * (pick(1, 0, 1) - pick(1, 0, -1)
                      - pick(-1, 0, 1) + pick(-1, 0, -1))
        h23 = 0.25 * (pick(0, 1, 1) - pick(0, 1, -1)
                      - pick(0, -1, 1) + pick(0, -1, -1))
        hess = np.empty((len(group), 3, 3))
        hess[:, 0, 0], hess[:, 1, 1], hess[:, 2, 2] = h11, h22, h33
        hess[:, 0, 1] = hess[:, 1, 0] = h12
        hess[:, 0, 2] = hess[:, 2, 0] = h13
        hess[:, 1, 2] = hess[:, 2, 1] = h23
        sv = np.abs(np.linalg.eigvalsh(hess))
        smin, smax = sv[:, 0], sv[:, -1]
        with np.errstate(divide="ignore"):
            cond = np.where(smin == 0.0, np.inf, smax / np.maximum(smin, 1e-300))
        trace = h11 + h22 + h33
        gap = np.full(len(group), np.inf)
        for ds in (-1, 0, 1):
            for dm in (-1, 0, 1):
                for dn in (-1, 0, 1):
                    if ds == dm == dn == 0:
                        continue
                    np.minimum(gap, np.abs(c - pick(ds, dm, dn)), out=gap)
        for i, kp in enumerate(group):
            out.append(replace(kp, dog_abs=abs(float(c[i])),
                               laplacian3d=float(trace[i]),
                               hessian_cond=float(cond[i]),
                               min_neighbor_gap=float(gap[i])))
    return canonical_sort(out)


# ---------------------------------------------------------------------------
# Optional keypoint filters (off by default in every experiment)
# ---------------------------------------------------------------------------

def contrast_filter(kps: list[Keypoint], threshold: float) -> list[Keypoint]:
    """Keep keypoints with |DoG value| >= threshold."""
    return [kp for kp in kps if abs(kp.dog_value) >= threshold]


def edge_filter(kps: list[Keypoint], dog: DoGVolume, r_edge: float) -> list[Keypoint]:
    """Drop keypoints on edge-like structures via the spatial 2D Hessian.

    A keypoint survives iff det H2d > 0 and (tr H2d)^2 / det H2d is below
    (r_edge+1)^2 / r_edge.
    """
    if not r_edge > 1:
        raise ValueError("r_edge must exceed 1")
    bound = (r_edge + 1.0) ** 2 / r_edge
    kept = []
    for kp in kps:
        vol = dog.octaves[kp.o].values
        s, m, n = kp.s, kp.m, kp.n
        p = np.asarray(vol[s, m - 1:m + 2, n - 1:n + 2], dtype=np.float64)
        c = p[1, 1]
        hyy = p[2, 1] - 2 * c + p[0, 1]
        hxx = p[1, 2] - 2 * c + p[1, 0]
        hxy = 0.25 * (p[2, 2] - p[2, 0] - p[0, 2] + p[0, 0])
        det = hxx * hyy - hxy * hxy
        if det <= 0:
            continue
        if (hxx + hyy) ** 2 / det < bound:
            kept.append(kp)
    return kept


# ---------------------------------------------------------------------------
# Detection pipeline and CSV round trip
# ---------------------------------------------------------------------------

def detect_keypoints(image: DigitalImage, config: ScaleSpaceConfig,
                     m_offset: float = 0.6, n_interp: int | float | None = 2,
                     refine_extrema: bool = True,
                     contrast_threshold: float | None = None,
                     edge_ratio: float | None = None,
                     keep_rejected: bool = False) -> list[Keypoint]:
    """Full detection: DoG build, scan, features, refinement, filters.

    With refine_extrema=False the discrete extrema are returned as-is
    (the unrefined baseline of the refinement studies). Filters default
    to off, the configuration all experiments use.
    """
    dog = build_dog(image, config)
    kps = scan_discrete_extrema(dog)
    kps = _features_batch(dog, kps)
    if refine_extrema:
        kps = [refine(kp, dog, m_offset=m_offset, n_interp=n_interp) for kp in kps]
        if not keep_rejected:
            kps = [kp for kp in kps if kp.status == STATUS_REFINED]
    if contrast_threshold is not None:
        kps = contrast_filter(kps, contrast_threshold)
    if edge_ratio is not None:
        kps = edge_filter(kps, dog, edge_ratio)
    return canonical_sort(kps)


CSV_FIELDS = ["o", "s", "m", "n", "sigma", "x", "y", "alpha1", "alpha2",
              "alpha3", "dog_value", "dog_abs", "laplacian3d", "hessian_cond",
              "min_neighbor_gap", "status"]


def write_keypoints_csv(kps: list[Keypoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for kp in kps:
            writer.writerow([kp.o, kp.s, kp.m, kp.n,
                             f"{kp.sigma:.9g}", f"{kp.x:.9g}", f"{kp.y:.9g}",
                             f"{kp.alpha[0]:.9g}", f"{kp.alpha[1]:.9g}",
                             f"{kp.alpha[2]:.9g}", f"{kp.dog_value:.9g}",
                             f"{kp.dog_abs:.9g}", f"{kp.laplacian3d:.9g}",
                             f"{kp.hessian_cond:.9g}",
                             f"{kp.min_neighbor_gap:.9g}", kp.status])


def read_keypoints_csv(path: str | Path) -> list[Keypoint]:
    kps = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected keypoint CSV header")
        for row in reader:
            kps.append(Keypoint(
                o=int(row["o"]), s=int(row["s"]), m=int(row["m"]), n=int(row["n"]),
                sigma=float(row["sigma"]), x=float(row["x"]), y=float(row["y"]),
                alpha=(float(row["alpha1"]), float(row["alpha2"]), float(row["alpha3"])),
                dog_value=float(row["dog_value"]), dog_abs=float(row["dog_abs"]),
                laplacian3d=float(row["laplacian3d"]),
                hessian_cond=float(row["hessian_cond"]),
                min_neighbor_gap=float(row["min_neighbor_gap"]),
                status=row["status"]))
    return kps
