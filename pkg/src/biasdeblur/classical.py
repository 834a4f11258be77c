"""Non-learning baselines: Wiener deconvolution, Richardson-Lucy, and the
nonlinear-reconstruction variant of Richardson-Lucy (NLR)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .imaging import Image, OtfSizeError, Psf, as_array

EPS_DENOM = 1e-12
RL_FLOOR = 1e-8
NLR_STABLE = (0.5, 2.0)
DIVERGENCE_PATIENCE = 5


class UnstableDeconvolutionWarning(RuntimeWarning):
    """A Fourier division hit an OTF zero and was guarded by epsilon."""


class NegativeObservationWarning(RuntimeWarning):
    """Negative observation pixels were clipped before a positivity-based method."""


class DivergenceWarning(RuntimeWarning):
    """An iterative method stopped early because its data loss kept rising."""


@dataclass(frozen=True)
class DeconvParams:
    wiener_k: float = 1e-3
    rl_iterations: int = 20
    nlr_iterations: int = 25
    nlr_alpha: float = 1.0
    nlr_beta: float = 1.0

    def __post_init__(self):
        if self.wiener_k < 0:
            raise ValueError("wiener_k must be >= 0")
        if self.rl_iterations < 1 or self.nlr_iterations < 1:
            raise ValueError("iteration counts must be >= 1")


def _grid(y: np.ndarray, psf: Psf):
    if y.shape != psf.shape:
        raise OtfSizeError(f"observation {y.shape} vs OTF grid {psf.shape}")


def wiener_deconvolve(observation, psf: Psf, k: float) -> Image:
    """X = conj(H) Y / (|H|^2 + k)."""
    y = as_array(observation)
    _grid(y, psf)
    if k < 0:
        raise ValueError("k must be >= 0")
    H = psf.otf
    denom = np.abs(H) ** 2 + k
    if np.any(denom < EPS_DENOM):
        warnings.warn("Wiener denominator hit an OTF zero; guarded by 1e-12", UnstableDeconvolutionWarning, stacklevel=2)
        denom = np.maximum(denom, EPS_DENOM)
    X = np.conj(H) * np.fft.fft2(y) / denom
    return Image(np.real(np.fft.ifft2(X)))


def _positive_observation(y: np.ndarray) -> np.ndarray:
    if not np.any(y > 0):
        raise ValueError("observation has no positive pixels")
    if np.any(y < RL_FLOOR):
        warnings.warn("clipping non-positive observation pixels to 1e-8", NegativeObservationWarning, stacklevel=3)
        y = np.maximum(y, RL_FLOOR)
    return y


def _fwd(H, x):
    return np.real(np.fft.ifft2(H * np.fft.fft2(x)))


def _adj(H, r):
    return np.real(np.fft.ifft2(np.conj(H) * np.fft.fft2(r)))


def _start(y: np.ndarray, init) -> np.ndarray:
    if init is None:
        return np.full_like(y, y.mean())
    x = np.array(as_array(init), dtype=np.float64)
    if x.shape != y.shape or np.any(x < 0):
        raise ValueError("init must be non-negative and match the observation")
    return x


def richardson_lucy(observation, psf: Psf, iterations: int, return_history: bool = False, init=None):
    """Multiplicative RL updates, by default from a flat start at the
    observation mean.

    With ``return_history`` the list of every iterate (including the start)
    is returned alongside the final image.
    """
    y = as_array(observation)
    _grid(y, psf)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    y = _positive_observation(y)
    H = psf.otf
    x = _start(y, init)
    history = [x]
    for _ in range(iterations):
        blurred = np.maximum(_fwd(H, x), EPS_DENOM)
        x = x * _adj(H, y / blurred)
        history.append(x)
    out = Image(x)
    return (out, history) if return_history else out


def _nlr_correction(ratio: np.ndarray, H: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    weighted_otf = np.power(np.abs(H), beta) * np.exp(-1j * np.angle(H))
    c = np.real(np.fft.ifft2(np.fft.fft2(ratio) * weighted_otf))
    return np.power(np.maximum(c, EPS_DENOM), alpha)


def nlr_deconvolve(observation, psf: Psf, iterations: int, alpha: float, beta: float, init=None) -> Image:
    """Richardson-Lucy with nonlinear amplitude weighting.

    The ratio ``y / (H x)`` is back-projected through an OTF whose amplitude
    is raised to ``beta`` (phase kept), and the resulting multiplicative
    correction is raised to ``alpha``. The estimate is rescaled to the
    observed flux after each step. ``alpha = beta = 1`` is plain RL.
    Any exact solution H x = y is a fixed point for every alpha and beta.
    """
    y = as_array(observation)
    _grid(y, psf)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    lo, hi = NLR_STABLE
    if not (lo <= alpha <= hi and lo <= beta <= hi):
        raise ValueError(f"alpha and beta must lie in [{lo}, {hi}]")
    y = _positive_observation(y)
    H = psf.otf
    flux = y.sum()
    x = _start(y, init)
    best, prev_loss, rising = x, np.inf, 0
    for _ in range(iterations):
        blurred = np.maximum(_fwd(H, x), EPS_DENOM)
        x = x * _nlr_correction(y / blurred, H, alpha, beta)
        x *= flux / x.sum()
        loss = float(np.sum((_fwd(H, x) - y) ** 2))
        if loss > prev_loss:
            rising += 1
            if rising >= DIVERGENCE_PATIENCE:
                warnings.warn("NLR loss rose for 5 consecutive steps; stopping early", DivergenceWarning, stacklevel=2)
                return Image(best)
        else:
            rising, best = 0, x
        prev_loss = loss
    return Image(x)


def wiener_k_grid(lo: float = 1e-6, hi: float = 1.0, num: int = 13) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), num)
