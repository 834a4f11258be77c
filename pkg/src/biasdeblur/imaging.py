"""Image and PSF types, circular FFT convolution, quality metrics and image I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

MIN_SIDE = 8
PSNR_CAP = 100.0
SSIM_WINDOW = 7

FLOAT_MAGIC = b"PN2NIMG1"
_HEADER = struct.Struct("<8sII")


class OtfSizeError(ValueError):
    """The PSF's cached OTF grid does not match the image it is applied to.

    Call ``psf.resized(image.shape)`` to get a PSF with a matching OTF.
    """


class ImageFormatError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    if isinstance(a, Image):
        a = a.pixels
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """A 2-D grayscale intensity field, nominally in [0, 1].

    ``clamped`` records whether the values have been clipped to [0, 1]; noisy
    frames are kept unclamped so their noise statistics stay intact.
    """

    pixels: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {px.shape}")
        if min(px.shape) < MIN_SIDE:
            raise ValueError(f"image sides must be >= {MIN_SIDE}, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains NaN or Inf")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def clamp(self) -> "Image":
        return Image(np.clip(self.pixels, 0.0, 1.0), clamped=True)

    @classmethod
    def constant(cls, value: float, shape: tuple[int, int]) -> "Image":
        return cls(np.full(shape, float(value)))


def as_array(x) -> np.ndarray:
    """Pixels of an Image, or the array itself."""
    return x.pixels if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def kernel_otf(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """DFT of ``kernel`` zero-padded to ``shape`` with its center moved to (0, 0)."""
    kh, kw = kernel.shape
    if kh > shape[0] or kw > shape[1]:
        raise ValueError(f"kernel {kernel.shape} does not fit grid {shape}")
    padded = np.zeros(shape)
    padded[:kh, :kw] = kernel
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(padded)


@dataclass(frozen=True)
class Psf:
    """Normalized non-negative convolution kernel with its OTF on a fixed grid.

    The kernel center is taken at index ``(kh // 2, kw // 2)``.
    """

    kernel: np.ndarray
    shape: tuple[int, int]
    otf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = _frozen(self.kernel)
        if k.ndim != 2:
            raise ValueError("kernel must be 2-D")
        if np.any(k < 0):
            raise ValueError("kernel entries must be non-negative")
        if abs(k.sum() - 1.0) > 1e-6:
            raise ValueError(f"kernel must sum to 1, sums to {k.sum():.8f}")
        shape = (int(self.shape[0]), int(self.shape[1]))
        otf = kernel_otf(k, shape)
        otf.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "otf", otf)

    @classmethod
    def normalized(cls, kernel, shape) -> "Psf":
        k = np.clip(np.asarray(kernel, dtype=np.float64), 0.0, None)
        total = k.sum()
        if total <= 0:
            raise ValueError("kernel has no positive mass to normalize")
        return cls(k / total, tuple(shape))

    @classmethod
    def delta(cls, shape) -> "Psf":
        return cls(np.ones((1, 1)), tuple(shape))

    def resized(self, shape) -> "Psf":
        return Psf(self.kernel, tuple(shape))


def convolve(image, psf: Psf) -> Image:
    """Circular convolution of ``image`` with ``psf`` via the cached OTF."""
    x = as_array(image)
    if x.shape != psf.shape:
        raise OtfSizeError(f"OTF grid {psf.shape} != image {x.shape}")
    return Image(np.real(np.fft.ifft2(psf.otf * np.fft.fft2(x))))


def _check_same(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(reference, test, peak: float = 1.0) -> float:
    a, b = as_array(reference), as_array(test)
    _check_same(a, b)
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-20:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse))


def ssim(reference, test, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained 7x7 windows (uniform weights)."""
    a, b = as_array(reference), as_array(test)
    _check_same(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def wmean(z):
        return np.lib.stride_tricks.sliding_window_view(z, (SSIM_WINDOW, SSIM_WINDOW)).mean(axis=(-2, -1))

    mu_a, mu_b = wmean(a), wmean(b)
    var_a = wmean(a * a) - mu_a**2
    var_b = wmean(b * b) - mu_b**2
    cov = wmean(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


@dataclass(frozen=True)
class QualityReport:
    psnr: float
    ssim: float


def quality(reference, test) -> QualityReport:
    return QualityReport(psnr(reference, test), ssim(reference, test))


# -- file I/O ----------------------------------------------------------------

_RASTER_SUFFIXES = {".png", ".tif", ".tiff", ".bmp", ".pgm"}


def save_image(image, path, bit_depth: int = 8) -> Path:
    """Write ``image`` as a raster (by suffix) or as the raw float container.

    Raster output clips to [0, 1] and quantizes to ``bit_depth`` (8 or 16).
    Any other suffix writes the lossless float32 container.
    """
    path = Path(path)
    x = as_array(image)
    if path.suffix.lower() in _RASTER_SUFFIXES:
        if bit_depth not in (8, 16):
            raise ImageFormatError(f"unsupported bit depth {bit_depth}")
        top = 255 if bit_depth == 8 else 65535
        q = np.round(np.clip(x, 0.0, 1.0) * top)
        arr = q.astype(np.uint8 if bit_depth == 8 else np.uint16)
        PILImage.fromarray(arr).save(path)
        return path
    h, w = x.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FLOAT_MAGIC, h, w))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
    return path


def read_float_container(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ImageFormatError(f"{path}: truncated header")
        magic, h, w = _HEADER.unpack(head)
        if magic != FLOAT_MAGIC:
            raise ImageFormatError(f"{path}: bad magic {magic!r}")
        body = fh.read()
    if len(body) != 4 * h * w:
        raise ImageFormatError(f"{path}: expected {4 * h * w} payload bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def load_image(path, as_gray: bool = False) -> Image:
    """Load a float container or an 8/16-bit grayscale raster scaled to [0, 1].

    Color rasters are rejected unless ``as_gray`` is set.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(FLOAT_MAGIC))
    if magic == FLOAT_MAGIC:
        return Image(read_float_container(path))
    try:
        pil = PILImage.open(path)
        pil.load()
    except Exception as exc:  # PIL raises a zoo of types for unreadable files
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    mode = pil.mode
    if mode in ("RGB", "RGBA", "P", "LA", "CMYK") and as_gray:
        pil, mode = pil.convert("L"), "L"
    if mode == "L":
        return Image(np.asarray(pil, dtype=np.float64) / 255.0)
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(pil).astype(np.float64)
        if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
            raise ImageFormatError(f"{path}: values outside 16-bit range")
        return Image(arr / 65535.0)
    raise ImageFormatError(f"{path}: unsupported mode {mode!r} (need 8/16-bit grayscale)")
