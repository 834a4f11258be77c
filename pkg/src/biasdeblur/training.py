"""Small pieces shared by the two training loops."""

from __future__ import annotations

import contextlib

import numpy as np
import torch


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""

    def __init__(self, step: int, learning_rate, loss: float):
        self.step = step
        self.learning_rate = learning_rate
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step} (learning rate {learning_rate})")

    def to_record(self) -> dict:
        return {"error": "TrainingDiverged", "step": self.step, "learning_rate": self.learning_rate, "loss": str(self.loss)}


@contextlib.contextmanager
def seeded(seed: int):
    """Run a block under a private torch CPU RNG state seeded with ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


def batch_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


def to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """(H, W) or (N, H, W) array -> float32 (N, 1, H, W) tensor."""
    t = torch.as_tensor(np.asarray(pixels, dtype=np.float32))
    if t.ndim == 2:
        t = t[None]
    return t[:, None]


def check_finite(loss: torch.Tensor, step: int, lr) -> float:
    value = float(loss.detach())
    if not np.isfinite(value):
        raise TrainingDivergedError(step, lr, value)
    return value


def smoothed(trace, window: int = 100) -> np.ndarray:
    trace = np.asarray(trace, dtype=np.float64)
    if len(trace) < window:
        return trace.copy()
    kernel = np.ones(window) / window
    return np.convolve(trace, kernel, mode="valid")


def fraction_non_increasing(trace, window: int = 100) -> float:
    """Share of consecutive non-overlapping window means that do not rise."""
    trace = np.asarray(trace, dtype=np.float64)
    n = len(trace) // window
    if n < 2:
        return 1.0
    means = trace[: n * window].reshape(n, window).mean(axis=1)
    return float(np.mean(np.diff(means) <= 0))
