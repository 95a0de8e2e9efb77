"""Comparison of detection sets across configurations and acquisitions:
duplicate criterion, unique-set extraction, occurrence matrices, stability
scores, new/lost rates, boundary compensation and kappa scale normalization.

Two detections count as the same when their positions agree within a
sup-norm tolerance and their scales within a ratio tolerance. Everything
downstream (occurrence, stability, precision) is built on that predicate.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .extrema import Keypoint


@dataclass(frozen=True)
class MatchTolerance:
    """Spatial tolerance (input-pixel sup-norm) and scale ratio tolerance."""

    epsilon: float = 1.0
    ratio_r: float = 2.0 ** 0.5

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.ratio_r < 1:
            raise ValueError("ratio_r must be at least 1")


def same_detection(a: Keypoint, b: Keypoint, tol: MatchTolerance) -> bool:
    """Both the spatial and the scale-ratio conditions, boundaries inclusive."""
    if abs(a.x - b.x) > tol.epsilon or abs(a.y - b.y) > tol.epsilon:
        return False
    lo, hi = (a.sigma, b.sigma) if a.sigma <= b.sigma else (b.sigma, a.sigma)
    return hi <= tol.ratio_r * lo


def _canonical_key(kp: Keypoint):
    return (kp.sigma, kp.y, kp.x, kp.o, kp.s, kp.m, kp.n)


class _GridIndex:
    """Uniform grid hash over (x, y) for epsilon-neighbor candidate lookup."""

    def __init__(self, kps: list[Keypoint], epsilon: float):
        self.kps = kps
        self.cell = max(epsilon, 1e-9)
        self.buckets: dict[tuple[int, int], list[int]] = {}
        for i, kp in enumerate(kps):
            key = (math.floor(kp.x / self.cell), math.floor(kp.y / self.cell))
            self.buckets.setdefault(key, []).append(i)

    def candidates(self, kp: Keypoint):
        cx = math.floor(kp.x / self.cell)
        cy = math.floor(kp.y / self.cell)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for i in self.buckets.get((cx + dx, cy + dy), ()):
                    yield i

    def matches(self, kp: Keypoint, tol: MatchTolerance) -> list[int]:
        return [i for i in self.candidates(kp)
                if same_detection(kp, self.kps[i], tol)]

    def has_match(self, kp: Keypoint, tol: MatchTolerance) -> bool:
        return any(same_detection(kp, self.kps[i], tol)
                   for i in self.candidates(kp))

    def nearest_match(self, kp: Keypoint, tol: MatchTolerance) -> Keypoint | None:
        best = None
        best_key = None
        for i in self.candidates(kp):
            other = self.kps[i]
            if not same_detection(kp, other, tol):
                continue
            key = ((other.x - kp.x) ** 2 + (other.y - kp.y) ** 2, i)
            if best_key is None or key < best_key:
                best, best_key = other, key
        return best


def unique_set(detections: list[Keypoint], tol: MatchTolerance) -> list[Keypoint]:
    """Greedy approximation of the minimum set of representatives.

    Repeatedly picks the detection whose duplicate set covers the most
    still-uncovered detections, ties broken by canonical keypoint order,
    until everything is covered. Exact lazy evaluation keeps this fast on
    large pools without changing the selection order.
    """
    if not detections:
        return []
    order = sorted(range(len(detections)),
                   key=lambda i: _canonical_key(detections[i]))
    pool = [detections[i] for i in order]
    index = _GridIndex(pool, tol.epsilon)
    dup = [index.matches(kp, tol) for kp in pool]

    covered = np.zeros(len(pool), dtype=bool)
    n_covered = 0
    heap = [(-len(dup[i]), i) for i in range(len(pool))]
    heapq.heapify(heap)
    reps: list[Keypoint] = []
    while n_covered < len(pool) and heap:
        neg_gain, i = heapq.heappop(heap)
        gain = sum(1 for j in dup[i] if not covered[j])
        if gain != -neg_gain:
            if gain > 0:
                heapq.heappush(heap, (-gain, i))
            continue
        reps.append(pool[i])
        for j in dup[i]:
            if not covered[j]:
                covered[j] = True
                n_covered += 1
    return sorted(reps, key=_canonical_key)


def boundary_filter(detections: list[Keypoint], sigma_min: float) -> list[Keypoint]:
    """Keep detections with refined scale at or above sigma_min * 2^(1/3).

    Compensates the n_spo-dependent dead range at the lower scale boundary
    so counts are comparable across scale-space samplings.
    """
    cutoff = sigma_min * 2.0 ** (1.0 / 3.0)
    return [kp for kp in detections if kp.sigma >= cutoff]


def normalize_scale_kappa(detections: list[Keypoint], kappa: float,
                          sigma_min: float | None = None,
                          apply_common_range: bool = False) -> list[Keypoint]:
    """Replace each scale by sigma*sqrt(kappa) (the blob-law normalization).

    With apply_common_range=True, keeps only detections whose normalized
    scale lies in [sigma_min*sqrt(2^(1/2)), 2*sigma_min*sqrt(2^(1/30))],
    the scale range covered by every kappa in the study sweep.
    """
    root = math.sqrt(kappa)
    out = [replace(kp, sigma=kp.sigma * root) for kp in detections]
    if apply_common_range:
        if sigma_min is None:
            raise ValueError("sigma_min required for the common-range filter")
        lo = sigma_min * math.sqrt(2.0 ** 0.5)
        hi = 2.0 * sigma_min * math.sqrt(2.0 ** (1.0 / 30.0))
        out = [kp for kp in out if lo <= kp.sigma <= hi]
    return out


# ---------------------------------------------------------------------------
# Occurrence matrix and stability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OccurrenceMatrix:
    """Presence of unique keypoints (columns) across detection sets (rows).

    Columns are ordered by ascending stability (row-mean of the column),
    ties by canonical keypoint order.
    """

    labels: tuple[str, ...]
    keypoints: tuple[Keypoint, ...]
    cells: np.ndarray        # bool, shape (n_sets, n_unique)
    stability: np.ndarray    # float, shape (n_unique,)


def occurrence_matrix(sets: list[list[Keypoint]], tol: MatchTolerance,
                      labels: list[str] | None = None) -> OccurrenceMatrix:
    """Pool all sets, extract unique detections, mark per-set presence."""
    if len(sets) < 2:
        raise ValueError("occurrence matrix needs at least 2 detection sets")
    if labels is None:
        labels = [f"set{i}" for i in range(len(sets))]
    if len(labels) != len(sets):
        raise ValueError("labels/sets length mismatch")
    pool = [kp for dset in sets for kp in dset]
    uniques = unique_set(pool, tol)
    cells = np.zeros((len(sets), len(uniques)), dtype=bool)
    for i, dset in enumerate(sets):
        index = _GridIndex(dset, tol.epsilon)
        for j, u in enumerate(uniques):
            cells[i, j] = index.has_match(u, tol)
    stability = cells.mean(axis=0) if uniques else np.zeros(0)
    col_order = sorted(range(len(uniques)),
                       key=lambda j: (stability[j], _canonical_key(uniques[j])))
    return OccurrenceMatrix(
        labels=tuple(labels),
        keypoints=tuple(uniques[j] for j in col_order),
        cells=cells[:, col_order] if uniques else cells,
        stability=stability[col_order] if uniques else stability)


def new_lost_rates(sets: list[list[Keypoint]], tol: MatchTolerance
                   ) -> list[tuple[float | None, float | None]]:
    """Per set: fraction new vs the coarser neighbor, lost vs the finer one.

    Sets must be ordered coarse to fine. Endpoint rates without a neighbor
    are reported as None, as are rates of empty sets.
    """
    if len(sets) < 2:
        raise ValueError("new/lost rates need at least 2 detection sets")
    indexes = [_GridIndex(dset, tol.epsilon) for dset in sets]
    rates: list[tuple[float | None, float | None]] = []
    for i, dset in enumerate(sets):
        new_rate = None
        lost_rate = None
        if dset:
            if i > 0:
                misses = sum(1 for kp in dset if not indexes[i - 1].has_match(kp, tol))
                new_rate = misses / len(dset)
            if i < len(sets) - 1:
                misses = sum(1 for kp in dset if not indexes[i + 1].has_match(kp, tol))
                lost_rate = misses / len(dset)
        rates.append((new_rate, lost_rate))
    return rates


PRESENCE_GRID = tuple(range(5, 101, 5))  # percent


@dataclass(frozen=True)
class StabilityReport:
    keypoints: tuple[Keypoint, ...]      # unique representatives
    presence: np.ndarray                 # fraction of sets containing each
    stable_mask: np.ndarray              # presence >= threshold
    precision: float | None              # mean positional std of stable kps
    curve: tuple[tuple[int, float], ...]  # (p percent, % keypoints >= p)


def stability_and_precision(sets: list[list[Keypoint]], tol: MatchTolerance,
                            presence_threshold: float = 0.5) -> StabilityReport:
    """Presence fractions, the stable subset and its positional precision.

    All sets must already be mapped to a common frame. Precision is the
    mean over stable keypoints of the per-keypoint standard deviation of
    matched positions: population (1/N) per-axis stds combined as a
    Euclidean norm. The curve gives, for each p on a fixed grid, the
    percentage of unique keypoints present in at least p% of the sets.
    """
    if len(sets) < 2:
        raise ValueError("stability needs at least 2 detection sets")
    pool = [kp for dset in sets for kp in dset]
    uniques = unique_set(pool, tol)
    indexes = [_GridIndex(dset, tol.epsilon) for dset in sets]
    presence = np.zeros(len(uniques))
    spreads = np.zeros(len(uniques))
    for j, u in enumerate(uniques):
        xs, ys = [], []
        for index in indexes:
            match = index.nearest_match(u, tol)
            if match is not None:
                xs.append(match.x)
                ys.append(match.y)
        presence[j] = len(xs) / len(sets)
        if xs:
            spreads[j] = math.hypot(float(np.std(xs)), float(np.std(ys)))
    stable = presence >= presence_threshold
    precision = float(spreads[stable].mean()) if stable.any() else None
    n_unique = max(len(uniques), 1)
    curve = tuple((p, 100.0 * float((presence >= p / 100.0).sum()) / n_unique)
                  for p in PRESENCE_GRID)
    return StabilityReport(keypoints=tuple(uniques), presence=presence,
                           stable_mask=stable, precision=precision, curve=curve)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_occurrence_csv(matrix: OccurrenceMatrix, path: str | Path) -> None:
    ids = [f"k{j:05d}" for j in range(len(matrix.keypoints))]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config"] + ids)
        for label, row in zip(matrix.labels, matrix.cells):
            writer.writerow([label] + [int(v) for v in row])


def write_stability_csv(matrix: OccurrenceMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "sigma", "x", "y", "stability"])
        for j, (kp, st) in enumerate(zip(matrix.keypoints, matrix.stability)):
            writer.writerow([f"k{j:05d}", f"{kp.sigma:.9g}", f"{kp.x:.9g}",
                             f"{kp.y:.9g}", f"{st:.9g}"])


def write_curve_csv(curve, path: str | Path, extra: dict | None = None) -> None:
    """Stability curve rows (p, percentage), optionally tagged with extras."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(extra.keys()) + ["p", "percentage"])
        for p, pct in curve:
            writer.writerow([f"{v}" for v in extra.values()]
                            + [p, f"{pct:.9g}"])
