"""32-bit image container, PGM/PFM file I/O, B-spline oversampling and blob-fit
blur measurement.

The blob fit is the measurement oracle used throughout the experiment
harness: every blur-related claim is checked by fitting an isotropic
Gaussian to a blob image and reading off its standard deviation.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

# Boundary extension used for B-spline prefiltering and evaluation.
# Half-sample symmetric ("reflect" in scipy.ndimage), matching the even
# extension implied by the DCT-II convolution, so oversampling and spectral
# filtering share one image model at the borders.
BSPLINE_BOUNDARY = "reflect"


@dataclass(frozen=True)
class DigitalImage:
    """Single-channel raster with grid spacing and optional blur annotation.

    samples: float32 array of shape (height, width), row-major.
    delta:   inter-pixel distance relative to the reference grid (1.0 = input grid).
    blur:    Gaussian blur standard deviation in input-pixel units, if known.
    """

    samples: np.ndarray
    delta: float = 1.0
    blur: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"samples must be 2D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image samples contain NaN or Inf")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.blur is not None and self.blur < 0:
            raise ValueError(f"blur must be nonnegative, got {self.blur}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "delta", float(self.delta))
        if self.blur is not None:
            object.__setattr__(self, "blur", float(self.blur))

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def with_samples(self, samples: np.ndarray, *, delta: float | None = None,
                     blur: float | None = None) -> "DigitalImage":
        """New image with replaced samples (and optionally delta/blur)."""
        return DigitalImage(samples,
                            delta=self.delta if delta is None else delta,
                            blur=blur)


def gaussian_blob_image(width: int, height: int, sigma: float,
                        center: tuple[float, float] | None = None,
                        amplitude: float = 1.0) -> DigitalImage:
    """Sampled isotropic Gaussian blob, annotated with its own blur.

    A sampled Gaussian of standard deviation sigma is the image of a point
    source seen through a Gaussian PSF of the same sigma, so the blur
    annotation is sigma. center defaults to the grid midpoint.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if center is None:
        center = ((width - 1) / 2.0, (height - 1) / 2.0)
    cx, cy = center
    x = np.arange(width, dtype=np.float64) - cx
    y = np.arange(height, dtype=np.float64) - cy
    r2 = y[:, None] ** 2 + x[None, :] ** 2
    samples = amplitude * np.exp(-r2 / (2.0 * sigma * sigma))
    return DigitalImage(samples, delta=1.0, blur=sigma)


# ---------------------------------------------------------------------------
# PGM / PFM file I/O
# ---------------------------------------------------------------------------

def _read_pnm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # Skip whitespace and '#' comments, return next token and new position.
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == b"#":
            while pos < n and buf[pos:pos + 1] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise ValueError("truncated header")
    return buf[start:pos], pos


def read_image(path: str | Path) -> DigitalImage:
    """Read an 8/16-bit PGM (P5) or 32-bit float PFM (Pf) image.

    Integer formats are normalized to [0, 1]; PFM samples are kept verbatim.
    delta is set to 1.0 and blur is left unset.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read image file {path}: {exc}") from exc
    if len(buf) < 2:
        raise ValueError(f"{path}: not a PGM/PFM file (too short)")
    magic = buf[:2]
    if magic == b"P6" or magic == b"PF":
        raise ValueError(f"{path}: unsupported channel count (3-channel {magic.decode()})")
    if magic == b"P5":
        return _read_pgm(buf, path)
    if magic == b"Pf":
        return _read_pfm(buf, path)
    raise ValueError(f"{path}: unsupported format magic {magic!r}")


def _read_pgm(buf: bytes, path: Path) -> DigitalImage:
    try:
        _, pos = _read_pnm_token(buf, 0)
        wtok, pos = _read_pnm_token(buf, pos)
        htok, pos = _read_pnm_token(buf, pos)
        mtok, pos = _read_pnm_token(buf, pos)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header: {exc}") from exc
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    if maxval < 1 or maxval > 65535:
        raise ValueError(f"{path}: bad maxval {maxval}")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(buf) - pos < count * dtype.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    samples = data.reshape(height, width).astype(np.float64) / float(maxval)
    return DigitalImage(samples, delta=1.0, blur=None)


def _read_pfm(buf: bytes, path: Path) -> DigitalImage:
    try:
        _, pos = _read_pnm_token(buf, 0)
        wtok, pos = _read_pnm_token(buf, pos)
        htok, pos = _read_pnm_token(buf, pos)
        stok, pos = _read_pnm_token(buf, pos)
        width, height, scale = int(wtok), int(htok), float(stok)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PFM header: {exc}") from exc
    pos += 1
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height
    if len(buf) - pos < count * dtype.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    # PFM scanlines are stored bottom-to-top.
    samples = data.reshape(height, width)[::-1]
    return DigitalImage(samples, delta=1.0, blur=None)


def write_image(image: DigitalImage, path: str | Path) -> None:
    """Write PFM (.pfm, full 32-bit precision) or PGM (.pgm, clamped 8-bit)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        _write_pfm(image, path)
    elif suffix == ".pgm":
        _write_pgm(image, path)
    else:
        raise ValueError(f"{path}: unknown output format {suffix!r} (use .pfm or .pgm)")


def _write_pfm(image: DigitalImage, path: Path) -> None:
    header = f"Pf\n{image.width} {image.height}\n-1.0\n".encode("ascii")
    body = image.samples[::-1].astype("<f4").tobytes()
    path.write_bytes(header + body)


def _write_pgm(image: DigitalImage, path: Path) -> None:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    q = np.clip(np.rint(image.samples.astype(np.float64) * 255.0), 0, 255)
    path.write_bytes(header + q.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# B-spline oversampling
# ---------------------------------------------------------------------------

def oversample_bspline3(image: DigitalImage, factor: float) -> DigitalImage:
    """Resample on a grid finer by `factor` using cubic B-spline interpolation.

    Output pixel (i, j) is the order-3 B-spline interpolant of the input
    evaluated at input coordinates (i / factor, j / factor), so the output
    grid is corner-aligned with the input grid. Output delta is divided by
    factor; the blur annotation (input-pixel units) is unchanged.
    """
    if not factor > 1:
        raise ValueError(f"oversampling factor must exceed 1, got {factor}")
    out_h = math.ceil(image.height * factor)
    out_w = math.ceil(image.width * factor)
    rows = np.arange(out_h, dtype=np.float64) / factor
    cols = np.arange(out_w, dtype=np.float64) / factor
    coords = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(image.samples.astype(np.float64), coords,
                                  order=3, mode=BSPLINE_BOUNDARY, prefilter=True)
    return DigitalImage(out, delta=image.delta / factor, blur=image.blur)


# ---------------------------------------------------------------------------
# Gaussian blob fitting (blur measurement oracle)
# ---------------------------------------------------------------------------

def estimate_blob_sigma(image: DigitalImage, *, full_result: bool = False):
    """Least-squares isotropic Gaussian fit; returns sigma in grid pixels.

    The model is A * exp(-((x-x0)^2 + (y-y0)^2) / (2 sigma^2)) with free
    amplitude, center and sigma. Start point from image second moments,
    then Levenberg-Marquardt style refinement to relative parameter change
    below 1e-8 (at most 200 iterations).
    """
    u = image.samples.astype(np.float64)
    h, w = u.shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)

    weights = u - u.min()
    total = weights.sum()
    if total <= 0:
        raise ValueError("blob fit needs a non-constant image")
    x0 = float((weights * x).sum() / total)
    y0 = float((weights * y).sum() / total)
    r2 = (x - x0) ** 2 + (y - y0) ** 2
    sigma0 = math.sqrt(max((weights * r2).sum() / total / 2.0, 1e-6))
    amp0 = float(u.max() - u.min())
    if amp0 <= 0:
        raise ValueError("blob fit needs a non-constant image")

    xf = x.ravel()
    yf = y.ravel()
    uf = u.ravel()

    def residual(p):
        a, cx, cy, s = p
        return a * np.exp(-((xf - cx) ** 2 + (yf - cy) ** 2) / (2.0 * s * s)) - uf

    result = least_squares(residual, x0=[amp0, x0, y0, sigma0],
                           method="lm", xtol=1e-8, ftol=1e-12, gtol=1e-12,
                           max_nfev=200 * 4)
    if not np.all(np.isfinite(result.x)) or not np.isfinite(result.cost):
        raise RuntimeError("blob fit diverged (non-finite parameters)")
    sigma = abs(float(result.x[3]))
    if not full_result:
        return sigma
    return sigma, {"amplitude": float(result.x[0]),
                   "center": (float(result.x[1]), float(result.x[2])),
                   "cost": float(result.cost)}
