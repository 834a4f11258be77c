"""OTF classification, the residual floor of biased observations, and the
loss-stagnation experiment that contrasts plain and bias-corrected descent."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .imaging import Image, OtfSizeError, Psf, as_array

DEFAULT_ZERO_TOL = 1e-3
# |OTF| over radii >= this fraction of Nyquist is the "outermost band".
OUTER_BAND_START = 0.9
DECAY_FRACTION = 0.1


class OtfCondition(str, enum.Enum):
    HAS_ZERO = "HasZero"
    DECAYING_NO_ZERO = "DecayingNoZero"
    NEITHER = "NeitherApplies"


@dataclass(frozen=True)
class OtfClassification:
    condition: OtfCondition
    zero_frequencies: list[tuple[int, int]]
    decay_profile: list[tuple[float, float]]
    tail_radius: float

    def to_record(self) -> dict:
        return {
            "condition": self.condition.value,
            "zero_frequencies": [list(z) for z in self.zero_frequencies],
            "decay_profile": [list(p) for p in self.decay_profile],
            "tail_radius": self.tail_radius,
        }


@dataclass(frozen=True)
class ResidualFloor:
    floor_value: float
    infeasible_energy_map: np.ndarray = field(repr=False)


def radial_frequency(shape) -> np.ndarray:
    """|omega| in cycles/pixel for every DFT index of ``shape``."""
    fy = np.fft.fftfreq(shape[0])
    fx = np.fft.fftfreq(shape[1])
    return np.hypot(fy[:, None], fx[None, :])


def relative_magnitude(psf: Psf) -> np.ndarray:
    mag = np.abs(psf.otf)
    return mag / mag[0, 0]


def _radial_bins(radius: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
    width = 1.0 / min(shape)
    idx = np.floor(radius / width + 1e-9).astype(int)
    return idx, (np.arange(idx.max() + 1) + 0.5) * width


def classify_psf(psf: Psf, zero_tol: float = DEFAULT_ZERO_TOL) -> OtfClassification:
    """Sort a PSF into the two conditions of the frequency constraint.

    A zero is a frequency where |OTF| (relative to DC) drops below
    ``zero_tol`` while some frequency at least one grid step further out
    still rises above the tolerance. Sub-tolerance values in the
    monotone high-frequency tail are decay, not zeros; otherwise every
    smooth kernel would count as having zeros from float underflow.
    """
    if not 0 < zero_tol < 1:
        raise ValueError("zero_tol must lie in (0, 1)")
    mag = relative_magnitude(psf)
    radius = radial_frequency(psf.shape)
    idx, centers = _radial_bins(radius, psf.shape)
    nbins = len(centers)
    sums = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=nbins)
    counts = np.bincount(idx.ravel(), minlength=nbins)
    filled = counts > 0
    profile = [(float(c), float(s / n)) for c, s, n, ok in zip(centers, sums, counts, filled) if ok]

    # a sub-tolerance value is a zero only if the spectrum rises above the
    # tolerance again at least one grid step further out
    r = radius.ravel()
    m = mag.ravel()
    order = np.argsort(-r, kind="stable")
    outer_max = np.maximum.accumulate(m[order])
    r_desc = r[order]
    step = 1.0 / min(psf.shape)
    # index of the last point (in descending order) with radius >= r + step
    cut = np.searchsorted(-r_desc, -(r + step), side="right") - 1
    rises = np.where(cut >= 0, outer_max[np.maximum(cut, 0)], -np.inf) >= zero_tol
    zero_mask = ((m < zero_tol) & rises).reshape(mag.shape)
    zeros = [(int(i), int(j)) for i, j in zip(*np.nonzero(zero_mask))]
    live = r[m >= zero_tol]
    tail_radius = float(live.max()) if live.size else 0.0

    outer = radius >= OUTER_BAND_START * 0.5
    decays = float(mag[outer].mean()) < DECAY_FRACTION
    if zeros:
        cond = OtfCondition.HAS_ZERO
    elif decays:
        cond = OtfCondition.DECAYING_NO_ZERO
    else:
        cond = OtfCondition.NEITHER
    return OtfClassification(cond, zeros, profile, tail_radius)


def _check_grid(obs: np.ndarray, psf: Psf):
    if obs.shape != psf.shape:
        raise OtfSizeError(f"observation {obs.shape} vs OTF grid {psf.shape}")


def residual_floor(observation, psf: Psf, zero_tol: float = DEFAULT_ZERO_TOL) -> ResidualFloor:
    """Smallest reachable ||psf * x - observation||^2 over all x.

    Frequencies where |OTF| < zero_tol (relative to DC) are treated as
    unreachable; the floor is the observation energy there (Parseval
    normalized, so it is in the same units as a pixel-domain sum of squares).
    """
    y = as_array(observation)
    _check_grid(y, psf)
    spectrum = np.fft.fft2(y)
    dead = relative_magnitude(psf) < zero_tol
    energy = np.where(dead, np.abs(spectrum) ** 2, 0.0) / y.size
    return ResidualFloor(float(energy.sum()), energy)


def pseudo_inverse(observation, psf: Psf, zero_tol: float = DEFAULT_ZERO_TOL) -> np.ndarray:
    """Minimum-norm least-squares deconvolution restricted to live frequencies."""
    y = as_array(observation)
    _check_grid(y, psf)
    live = relative_magnitude(psf) >= zero_tol
    spectrum = np.fft.fft2(y)
    safe = np.where(live, psf.otf, 1.0)
    return np.real(np.fft.ifft2(np.where(live, spectrum / safe, 0.0)))


def pseudo_inverse_amplification(psf: Psf) -> float:
    """Largest noise gain 1/|OTF| of the inverse filter over the grid."""
    mag = np.abs(psf.otf)
    nz = mag[mag > 0]
    return float(1.0 / nz.min())


@dataclass
class LossCurve:
    steps: np.ndarray
    losses: np.ndarray
    converged: bool = True
    note: str = ""

    @property
    def terminal(self) -> float:
        return float(self.losses[-1])

    def to_record(self) -> dict:
        return {
            "step": self.steps.tolist(),
            "loss": self.losses.tolist(),
            "converged": self.converged,
            "note": self.note,
        }


@dataclass
class StagnationResult:
    biased: LossCurve
    corrected: LossCurve
    residual_floor: float
    learned_bias: np.ndarray = field(repr=False)

    def to_record(self) -> dict:
        return {
            "biased": self.biased.to_record(),
            "corrected": self.corrected.to_record(),
            "residual_floor": self.residual_floor,
        }


def _flag(curve: LossCurve) -> LossCurve:
    losses = curve.losses
    if not np.all(np.isfinite(losses)):
        curve.converged, curve.note = False, "non-finite loss"
    elif losses[-1] > losses[0] * (1 + 1e-9):
        curve.converged, curve.note = False, "loss increased over the run"
    return curve


def stagnation_experiment(
    latent,
    psf: Psf,
    bias_field,
    steps: int,
    bias_support: str = "full",
    zero_tol: float = DEFAULT_ZERO_TOL,
    record_every: int = 1,
) -> StagnationResult:
    """Least-squares descent on a biased observation, with and without a
    jointly descended bias estimate.

    The observation is ``psf * latent + bias_field``. Both traces start from
    x = 0. The plain trace minimizes ||H x - y||^2 with step 1/max|H|^2; the
    corrected trace minimizes ||H x - (y - b)||^2 over (x, b).

    ``bias_support="full"`` lets b be any per-pixel field (the deblurring
    objective's parameterization). ``"infeasible"`` restricts b to the
    frequencies the operator cannot reach, so b stays exactly zero whenever
    the observation is already in range.
    """
    x_true = as_array(latent)
    bias = as_array(bias_field)
    _check_grid(x_true, psf)
    _check_grid(bias, psf)
    if bias_support not in ("full", "infeasible"):
        raise ValueError("bias_support must be 'full' or 'infeasible'")

    H = psf.otf
    H2 = np.abs(H) ** 2
    n = x_true.size
    Y = H * np.fft.fft2(x_true) + np.fft.fft2(bias)
    dead = relative_magnitude(psf) < zero_tol

    # iterate in the Fourier domain; losses via Parseval
    def run(correct: bool) -> tuple[LossCurve, np.ndarray]:
        X = np.zeros_like(Y)
        B = np.zeros_like(Y)
        if correct and bias_support == "full":
            eta = 1.0 / (H2.max() + 1.0)
        else:
            eta = 1.0 / H2.max()
        rec_steps, rec_loss = [], []
        for k in range(steps + 1):
            R = H * X - Y + B
            if k % record_every == 0 or k == steps:
                rec_steps.append(k)
                rec_loss.append(float(np.sum(np.abs(R) ** 2) / n))
            if k == steps:
                break
            X = X - eta * np.conj(H) * R
            if correct:
                if bias_support == "full":
                    B = B - eta * R
                else:
                    B = B - np.where(dead, R, 0.0)
        curve = _flag(LossCurve(np.asarray(rec_steps), np.asarray(rec_loss)))
        return curve, np.real(np.fft.ifft2(B))

    plain, _ = run(False)
    corrected, b_hat = run(True)
    y = np.real(np.fft.ifft2(Y))
    floor = residual_floor(Image(y), psf, zero_tol).floor_value
    return StagnationResult(plain, corrected, floor, b_hat)
