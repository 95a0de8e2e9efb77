"""Image acquisition simulator consistent with the Gaussian camera model:
blur by c*S, subsample by S on a possibly translated grid, optional white
noise. Large subsampling factors make the outputs effectively noiseless
and alias-free, so the detector's input blur is known exactly.

All resampling evaluates the DCT interpolation of the blurred reference at
arbitrary positions, the same image model the spectral convolution uses.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import DigitalImage
from .scalespace import dct_gaussian_convolve, sample_dct_interpolant

# Counter-based generator behind every stream; pinned so seeded runs stay
# reproducible across environments.
RNG_ALGORITHM = "numpy.random.Philox (4x64, counter-based)"

MIN_OUTPUT_SIZE = 64
RECOMMENDED_MIN_S = 10.0


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent deterministic generator for (seed, labels).

    Separate labels give separate streams, so e.g. drawing noise never
    perturbs the geometry offsets drawn for the same seed.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            entropy.append(int.from_bytes(label.encode("utf-8"), "little"))
        else:
            entropy.append(int(label))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class AcquisitionSpec:
    """One simulated snapshot: target blur c, subsampling S, grid shift, noise."""

    c: float
    s_factor: float
    translation: tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"camera blur c must be positive, got {self.c}")
        if self.s_factor < 1:
            raise ValueError(f"subsampling factor must be >= 1, got {self.s_factor}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass
class SeriesRecord:
    """Ground truth for one series member, as written to the manifest."""

    index: int
    tx: float
    ty: float
    s_factor: float
    c_real: float
    noise_sigma: float
    seed: int
    zoom: float = 1.0
    filename: str = ""


def simulate_snapshot(reference: DigitalImage, spec: AcquisitionSpec) -> DigitalImage:
    """Blur the reference by c*S, sample at grid {S*(k+tx), S*(l+ty)}, add noise.

    The output blur annotation is sqrt(c^2 + (c_ref/S)^2), which is c up to
    the attenuated intrinsic blur of the reference.
    """
    s = spec.s_factor
    if s < RECOMMENDED_MIN_S:
        warnings.warn(f"subsampling factor {s} below {RECOMMENDED_MIN_S}: "
                      "the simulated snapshot may be noticeably imperfect")
    out_w = int(math.floor(reference.width / s))
    out_h = int(math.floor(reference.height / s))
    if out_w < MIN_OUTPUT_SIZE or out_h < MIN_OUTPUT_SIZE:
        raise ValueError(f"simulated output {out_h}x{out_w} smaller than "
                         f"{MIN_OUTPUT_SIZE}x{MIN_OUTPUT_SIZE}")
    tx, ty = spec.translation
    blurred = dct_gaussian_convolve(reference, spec.c * s)
    xs = s * (np.arange(out_w, dtype=np.float64) + tx)
    ys = s * (np.arange(out_h, dtype=np.float64) + ty)
    samples = sample_dct_interpolant(blurred, xs, ys)
    if spec.noise_sigma > 0:
        rng = stream(spec.seed, "noise")
        samples = samples + spec.noise_sigma * rng.standard_normal(samples.shape)
    c_ref = reference.blur if reference.blur is not None else 0.0
    blur = math.hypot(spec.c, c_ref / s)
    return DigitalImage(samples, delta=1.0, blur=blur)


def make_translation_series(reference: DigitalImage, c: float, s_factor: float,
                            n_images: int, seed: int
                            ) -> tuple[list[DigitalImage], list[SeriesRecord]]:
    """n snapshots sharing c and S, with offsets drawn uniformly from [0,1)^2.

    The drawn offsets are recorded so detections can be mapped back to the
    common frame (x_common = x + tx in output-pixel units).
    """
    if n_images < 2:
        raise ValueError(f"a series needs at least 2 images, got {n_images}")
    offsets = stream(seed, "offsets").uniform(0.0, 1.0, size=(n_images, 2))
    images, records = [], []
    for i, (tx, ty) in enumerate(offsets):
        spec = AcquisitionSpec(c=c, s_factor=s_factor, translation=(tx, ty),
                               seed=seed + i)
        images.append(simulate_snapshot(reference, spec))
        records.append(SeriesRecord(index=i, tx=float(tx), ty=float(ty),
                                    s_factor=s_factor, c_real=c,
                                    noise_sigma=0.0, seed=seed + i))
    return images, records


def make_zoom_series(reference: DigitalImage, c: float, s_base: float,
                     zoom_factors: list[float], seed: int
                     ) -> tuple[list[DigitalImage], list[SeriesRecord]]:
    """Snapshots at S = s_base * zoom_i with random sub-pixel offsets.

    Detections from image i map to the common (zoom 1) frame by multiplying
    positions and scales by zoom_i, after undoing the recorded offset.
    """
    if not zoom_factors:
        raise ValueError("zoom_factors must not be empty")
    if any(z < 1 for z in zoom_factors):
        raise ValueError("zoom factors must be >= 1")
    offsets = stream(seed, "offsets").uniform(0.0, 1.0, size=(len(zoom_factors), 2))
    images, records = [], []
    for i, (zoom, (tx, ty)) in enumerate(zip(zoom_factors, offsets)):
        spec = AcquisitionSpec(c=c, s_factor=s_base * zoom,
                               translation=(float(tx), float(ty)), seed=seed + i)
        images.append(simulate_snapshot(reference, spec))
        records.append(SeriesRecord(index=i, tx=float(tx), ty=float(ty),
                                    s_factor=s_base * zoom, c_real=c,
                                    noise_sigma=0.0, seed=seed + i, zoom=zoom))
    return images, records


def wrong_blur_series(reference: DigitalImage, c_assumed: float, delta_c: float,
                      n_images: int, s_factor: float, seed: int
                      ) -> tuple[list[DigitalImage], list[SeriesRecord]]:
    """Snapshots whose true blur is uniform in [c-dc, c+dc]; c_real recorded.

    The detector is meant to be run with c_assumed on every image; the
    recorded c_real is for analysis only.
    """
    if not c_assumed - delta_c > 0:
        raise ValueError("c_assumed - delta_c must stay positive")
    if n_images < 2:
        raise ValueError(f"a series needs at least 2 images, got {n_images}")
    rng = stream(seed, "blur")
    offsets = stream(seed, "offsets").uniform(0.0, 1.0, size=(n_images, 2))
    c_reals = rng.uniform(c_assumed - delta_c, c_assumed + delta_c, size=n_images)
    images, records = [], []
    for i, ((tx, ty), c_real) in enumerate(zip(offsets, c_reals)):
        spec = AcquisitionSpec(c=float(c_real), s_factor=s_factor,
                               translation=(float(tx), float(ty)), seed=seed + i)
        images.append(simulate_snapshot(reference, spec))
        records.append(SeriesRecord(index=i, tx=float(tx), ty=float(ty),
                                    s_factor=s_factor, c_real=float(c_real),
                                    noise_sigma=0.0, seed=seed + i))
    return images, records


def write_series_manifest(records: list[SeriesRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "tx", "ty", "s_factor", "c_real",
                         "noise_sigma", "seed", "zoom"])
        for rec in records:
            name = rec.filename or f"img{rec.index:03d}.pfm"
            writer.writerow([name, f"{rec.tx:.9g}", f"{rec.ty:.9g}",
                             f"{rec.s_factor:.9g}", f"{rec.c_real:.9g}",
                             f"{rec.noise_sigma:.9g}", rec.seed,
                             f"{rec.zoom:.9g}"])


def synthetic_reference(width: int, height: int, seed: int,
                        spectral_slope: float = 1.2,
                        amplitude: float = 255.0) -> DigitalImage:
    """Smooth random texture with power at all scales, range [0, amplitude].

    White Philox noise shaped in the DCT domain by (1 + |f|)^-slope, a
    crude stand-in for the spectral decay of natural photographs. Used as
    the reference scene for the simulated acquisitions. The default
    amplitude keeps intensities on the 8-bit scale the detector constants
    are calibrated for.
    """
    import scipy.fft

    rng = stream(seed, "reference")
    spec = rng.standard_normal((height, width))
    fy = np.arange(height, dtype=np.float64) / height
    fx = np.arange(width, dtype=np.float64) / width
    radius = np.hypot(fy[:, None], fx[None, :])
    spec *= (1.0 + radius * min(width, height)) ** (-spectral_slope)
    spec[0, 0] = 0.0
    tex = scipy.fft.idctn(spec, type=2, norm="ortho", workers=-1)
    lo, hi = tex.min(), tex.max()
    tex = (tex - lo) / (hi - lo) * amplitude
    return DigitalImage(tex, delta=1.0, blur=None)
