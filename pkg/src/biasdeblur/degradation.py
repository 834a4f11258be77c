"""Synthetic benchmark: defocus PSFs, spatially varying biased Poisson-Gaussian
noise, multi-frame sequences sharing one bias field, and PSF perturbations."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .imaging import Image, Psf, as_array, convolve

INTENSITY_SCALE = 1.0 / 255.0
SUPERSAMPLE = 8
NEGLIGIBLE_SIGMA = 0.1


# -- PSF shapes ---------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    radius: float


@dataclass(frozen=True)
class Gaussian:
    sigma: float


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float


PsfShape = Disk | Gaussian | Annulus


def parse_psf_shape(text: str) -> PsfShape:
    """Parse ``disk:3``, ``gaussian:1.5``, ``annulus:2,5`` or a preset name."""
    text = text.strip().lower()
    if text in PSF_PRESETS:
        return PSF_PRESETS[text]
    kind, _, args = text.partition(":")
    try:
        vals = [float(v) for v in args.split(",") if v]
    except ValueError:
        raise ValueError(f"bad PSF spec {text!r}") from None
    if kind == "disk" and len(vals) == 1:
        return Disk(vals[0])
    if kind == "gaussian" and len(vals) == 1:
        return Gaussian(vals[0])
    if kind == "annulus" and len(vals) == 2:
        return Annulus(vals[0], vals[1])
    raise ValueError(f"bad PSF spec {text!r}")


def format_psf_shape(shape: PsfShape) -> str:
    if isinstance(shape, Disk):
        return f"disk:{shape.radius:g}"
    if isinstance(shape, Gaussian):
        return f"gaussian:{shape.sigma:g}"
    return f"annulus:{shape.r_in:g},{shape.r_out:g}"


# Stand-ins for measured PSFs, ordered by increasing defocus severity.
PSF_PRESETS: dict[str, PsfShape] = {
    "psf-1": Gaussian(1.0),
    "psf-2": Disk(2.0),
    "psf-3": Disk(3.0),
    "psf-4": Disk(4.5),
    "psf-5": Annulus(3.0, 6.0),
}
MILD_PSF = "psf-3"
SEVERE_PSF = "psf-4"


def _coverage(half: int, inside) -> np.ndarray:
    n = 2 * half + 1
    c = (np.arange(n * SUPERSAMPLE) + 0.5) / SUPERSAMPLE - n / 2
    yy, xx = np.meshgrid(c, c, indexing="ij")
    m = inside(np.hypot(yy, xx)).astype(float)
    return m.reshape(n, SUPERSAMPLE, n, SUPERSAMPLE).mean(axis=(1, 3))


def _kernel(shape: PsfShape) -> np.ndarray:
    if isinstance(shape, Disk):
        if shape.radius <= 0:
            raise ValueError("disk radius must be positive")
        half = max(1, math.ceil(shape.radius))
        k = _coverage(half, lambda r: r <= shape.radius)
        if k.sum() == 0:  # radius below the supersampling pitch
            k[half, half] = 1.0
        return k
    if isinstance(shape, Gaussian):
        if shape.sigma <= 0:
            raise ValueError("gaussian sigma must be positive")
        return gaussian_kernel(shape.sigma)
    if not 0 <= shape.r_in < shape.r_out:
        raise ValueError("annulus needs 0 <= r_in < r_out")
    half = math.ceil(shape.r_out)
    k = _coverage(half, lambda r: (r <= shape.r_out) & (r >= shape.r_in))
    return k


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    half = math.ceil(truncate * sigma)
    # below this width the neighbour weight underflows and the kernel is a delta
    if half == 0 or sigma < NEGLIGIBLE_SIGMA:
        return np.ones((1, 1))
    a = np.arange(-half, half + 1)
    g = np.exp(-(a[:, None] ** 2 + a[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def make_psf(shape: PsfShape | str, grid_size) -> Psf:
    if isinstance(shape, str):
        shape = parse_psf_shape(shape)
    grid = (grid_size, grid_size) if isinstance(grid_size, int) else tuple(grid_size)
    k = _kernel(shape)
    if k.shape[0] > grid[0] or k.shape[1] > grid[1]:
        raise ValueError(f"kernel support {k.shape} exceeds grid {grid}")
    return Psf.normalized(k, grid)


@dataclass(frozen=True)
class Blur:
    sigma: float


@dataclass(frozen=True)
class Noise:
    level_percent: float


def perturb_psf(psf: Psf, mode: Blur | Noise, seed=None) -> Psf:
    """Emulate PSF mismatch (extra Gaussian blur) or measurement noise."""
    k = psf.kernel
    if isinstance(mode, Blur):
        if mode.sigma < 0:
            raise ValueError("blur sigma must be non-negative")
        g = gaussian_kernel(mode.sigma) if mode.sigma > 0 else np.ones((1, 1))
        out = convolve2d(k, g, mode="full")
    elif isinstance(mode, Noise):
        rng = np.random.default_rng(seed)
        std = mode.level_percent / 100.0 * k.max()
        out = np.clip(k + rng.normal(0.0, std, k.shape), 0.0, None) if std > 0 else k.copy()
    else:
        raise TypeError(f"unknown perturbation {mode!r}")
    if out.shape[0] > psf.shape[0] or out.shape[1] > psf.shape[1]:
        raise ValueError("perturbed kernel no longer fits the grid")
    if out.sum() <= 0:
        raise ValueError("perturbed kernel is all zero; cannot renormalize")
    return Psf(out / out.sum(), psf.shape)


# -- noise models ---------------------------------------------------------------


@dataclass(frozen=True)
class FixedSigma:
    variance: float


@dataclass(frozen=True)
class UniformPerFrame:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("UniformPerFrame needs lo < hi")


VarianceLaw = FixedSigma | UniformPerFrame


@dataclass(frozen=True)
class NoiseModel:
    """Per-pixel Poisson mean and Gaussian mean (count units) plus variance law.

    Noise in counts is ``Poisson(mu_p) + Normal(mu_n, sigma^2)`` and is mapped
    to intensity by ``intensity_scale``.
    """

    poisson_mean_field: np.ndarray = field(repr=False)
    gaussian_mean_field: np.ndarray = field(repr=False)
    variance_law: VarianceLaw = FixedSigma(0.0)
    intensity_scale: float = INTENSITY_SCALE

    def __post_init__(self):
        mp = np.array(self.poisson_mean_field, dtype=np.float64)
        mn = np.array(self.gaussian_mean_field, dtype=np.float64)
        if mp.shape != mn.shape:
            raise ValueError("mean fields must share a shape")
        if np.any(mp < 0):
            raise ValueError("Poisson mean must be non-negative")
        if self.intensity_scale <= 0:
            raise ValueError("intensity_scale must be positive")
        if isinstance(self.variance_law, FixedSigma) and self.variance_law.variance < 0:
            raise ValueError("variance must be non-negative")
        mp.setflags(write=False)
        mn.setflags(write=False)
        object.__setattr__(self, "poisson_mean_field", mp)
        object.__setattr__(self, "gaussian_mean_field", mn)

    @property
    def shape(self) -> tuple[int, int]:
        return self.poisson_mean_field.shape

    def bias_field(self) -> np.ndarray:
        """Noise expectation in intensity units."""
        return self.intensity_scale * (self.poisson_mean_field + self.gaussian_mean_field)

    def mean_variance(self) -> float:
        law = self.variance_law
        return law.variance if isinstance(law, FixedSigma) else 0.5 * (law.lo + law.hi)

    @classmethod
    def zero(cls, shape) -> "NoiseModel":
        return cls(np.zeros(shape), np.zeros(shape), FixedSigma(0.0))


class ConditionName(str, enum.Enum):
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class NoiseCondition:
    name: ConditionName
    model: NoiseModel


def _quadratic_field(x, y):
    return 0.001 * (x / 4.0) ** 2 + 0.02 * y + 2.0


def _linear_field(x, y):
    return 0.01 * x + 0.01 * y + 2.0


def build_noise_fields(width: int, height: int, condition: str | ConditionName) -> NoiseModel:
    """Evaluate the standard noise conditions on a pixel grid.

    Coordinates: x is the column index, y the row index, both 0-based.
    """
    if width <= 0 or height <= 0:
        raise ValueError("dimensions must be positive")
    name = ConditionName(condition)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    zeros = np.zeros((height, width))
    if name is ConditionName.C1:
        return NoiseModel(zeros, zeros, FixedSigma(100.0))
    if name is ConditionName.C2:
        return NoiseModel(np.full((height, width), 15.0), zeros, FixedSigma(0.0))
    if name is ConditionName.C3:
        return NoiseModel(_quadratic_field(x, y), _linear_field(x, y), UniformPerFrame(20.0, 50.0))
    if name is ConditionName.C4:
        return NoiseModel(_linear_field(x, y), _quadratic_field(x, y), UniformPerFrame(20.0, 50.0))
    raise ValueError("Custom conditions carry their own NoiseModel")


def noise_condition(name: str, shape) -> NoiseCondition:
    h, w = shape
    return NoiseCondition(ConditionName(name), build_noise_fields(w, h, name))


def sample_noise(model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """One draw of the noise field in intensity units."""
    law = model.variance_law
    var = law.variance if isinstance(law, FixedSigma) else rng.uniform(law.lo, law.hi)
    counts = rng.poisson(model.poisson_mean_field).astype(np.float64)
    counts += model.gaussian_mean_field + math.sqrt(var) * rng.standard_normal(model.shape)
    return model.intensity_scale * counts


def degrade(latent, psf: Psf, model: NoiseModel, seed=None) -> Image:
    blurred = convolve(latent, psf).pixels
    if blurred.shape != model.shape:
        raise ValueError(f"noise model {model.shape} vs image {blurred.shape}")
    rng = np.random.default_rng(seed)
    return Image(blurred + sample_noise(model, rng))


def frame_seed(seed: int, index: int) -> int:
    """Independent per-frame seed derived from (sequence seed, frame index)."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class FrameSequence:
    frames: list[Image]
    latent_blurred: Image
    true_bias_field: Image
    seeds: list[int]
    latent: Image | None = None
    model: NoiseModel | None = None

    def __post_init__(self):
        n = len(self.frames)
        if n < 2 or n % 2:
            raise ValueError(f"frame count must be even and >= 2, got {n}")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1 or self.latent_blurred.shape not in shapes:
            raise ValueError("frames must share dimensions with the blurred latent")

    def __len__(self) -> int:
        return len(self.frames)

    def stack(self) -> np.ndarray:
        return np.stack([f.pixels for f in self.frames])

    def frame_mean(self) -> Image:
        return Image(self.stack().mean(axis=0))


def generate_sequence(latent, psf: Psf, condition: NoiseCondition | NoiseModel, n_frames: int, seed: int) -> FrameSequence:
    """Frames of one scene that share the noise mean fields; each frame gets
    its own variance draw and noise samples from an independent stream."""
    if n_frames < 2 or n_frames % 2:
        raise ValueError(f"n_frames must be even and >= 2, got {n_frames}")
    model = condition.model if isinstance(condition, NoiseCondition) else condition
    x = Image(as_array(latent))
    blurred = convolve(x, psf)
    seeds = [frame_seed(seed, i) for i in range(n_frames)]
    frames = [Image(blurred.pixels + sample_noise(model, np.random.default_rng(s))) for s in seeds]
    return FrameSequence(frames, blurred, Image(model.bias_field()), seeds, latent=x, model=model)
