"""Step 2: physics-guided deblurring with a learnable bias field.

A shared per-pixel bias ``b`` is subtracted from every biased observation
``y'`` before the network ``R`` sees it. Both are fitted jointly so that the
re-blurred reconstruction explains ``y' - b``; an optional second term ties
the re-blurred reconstruction to ``y'`` itself and keeps ``b`` from
absorbing signal.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imaging import Image, OtfSizeError, Psf, as_array, read_float_container, save_image
from .nets import DeblurSpec, DeblurUNet, load_tensors, save_tensors, spec_from_dict
from .training import check_finite, seeded, to_tensor


EPS_QUAD = 1e-12


class SingleFrameWarning(UserWarning):
    """Joint optimization on one observation can absorb signal into the bias."""


@dataclass(frozen=True)
class DeblurTrainConfig:
    lambda2: float = 0.1
    bias_lr: float = 0.01
    net_lr: float = 1e-4
    steps: int = 2000
    regularization_enabled: bool = True
    learn_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")
        if self.bias_lr <= 0 or self.net_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass(frozen=True)
class BiasField:
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("bias field must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("bias field must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, shape) -> "BiasField":
        return cls(np.zeros(shape))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def mean(self) -> float:
        return float(self.values.mean())

    def export(self, path) -> Path:
        """Write as a float container so it can be compared to the true field."""
        path = Path(path)
        save_image(Image(self.values), path)
        return path

    @classmethod
    def load(cls, path) -> "BiasField":
        return cls(read_float_container(path))


def otf_tensor(psf: Psf, dtype: torch.dtype = torch.complex64) -> torch.Tensor:
    return torch.from_numpy(np.array(psf.otf)).to(dtype)


def blur(x: torch.Tensor, otf: torch.Tensor) -> torch.Tensor:
    """Circular convolution of the last two dims with a precomputed OTF."""
    if tuple(x.shape[-2:]) != tuple(otf.shape):
        raise OtfSizeError(f"tensor {tuple(x.shape[-2:])} vs OTF grid {tuple(otf.shape)}")
    return torch.fft.ifft2(torch.fft.fft2(x) * otf).real


def deblur_loss(x_hat, y_prime, b, psf: Psf | torch.Tensor, lambda2: float, regularization_enabled: bool = True) -> torch.Tensor:
    """mean|H x_hat - (y' - b)|^2 + lambda2 * mean|H x_hat - y'|^2."""
    x_hat, y_prime, b = (torch.as_tensor(t) for t in (x_hat, y_prime, b))
    if x_hat.shape[-2:] != y_prime.shape[-2:] or b.shape[-2:] != y_prime.shape[-2:]:
        raise ValueError("deblur_loss inputs must share spatial size")
    cdtype = torch.complex128 if x_hat.dtype == torch.float64 else torch.complex64
    otf = otf_tensor(psf, cdtype) if isinstance(psf, Psf) else psf.to(cdtype)
    reblurred = blur(x_hat, otf)
    loss = torch.mean((reblurred - (y_prime - b)) ** 2)
    if regularization_enabled:
        loss = loss + lambda2 * torch.mean((reblurred - y_prime) ** 2)
    return loss


def optimal_linear_bias(y_prime, psf: Psf, gain: float, lambda2: float) -> np.ndarray:
    """Exact minimizer over b of the deblurring loss for x_hat = gain * (y' - b).

    With a linear reconstructor the objective is a quadratic in b that
    separates over frequencies. Writing G = gain * OTF and z = y' - b,
    (|G - 1|^2 + lambda2 |G|^2) z = lambda2 conj(G) Y', so b* = y' - z.
    At lambda2 = 0 this gives b* = y' (the bias absorbs everything the
    re-blur cannot explain); a positive lambda2 pulls b* toward zero.
    """
    y = as_array(y_prime)
    if y.shape != psf.shape:
        raise OtfSizeError(f"observation {y.shape} vs OTF grid {psf.shape}")
    G = gain * psf.otf
    denom = np.abs(G - 1) ** 2 + lambda2 * np.abs(G) ** 2
    if np.any(denom < EPS_QUAD):
        raise ValueError("quadratic is singular: gain * OTF equals 1 at some frequency with lambda2 = 0")
    Y = np.fft.fft2(y)
    Z = lambda2 * np.conj(G) * Y / denom
    return y - np.real(np.fft.ifft2(Z))


@dataclass
class DeblurCheckpoint:
    spec: DeblurSpec
    state: dict[str, torch.Tensor] = field(repr=False)

    def build(self) -> DeblurUNet:
        net = DeblurUNet(self.spec)
        net.load_state_dict(self.state)
        return net.eval()

    def save(self, path, bias: BiasField | None = None) -> None:
        tensors = dict(self.state)
        if bias is not None:
            tensors["bias"] = torch.tensor(bias.values, dtype=torch.float32)
        save_tensors(path, "deblur", self.spec, tensors)

    @classmethod
    def load(cls, path) -> tuple["DeblurCheckpoint", BiasField | None]:
        meta, tensors = load_tensors(path)
        if meta["kind"] != "deblur":
            raise ValueError(f"expected a deblur checkpoint, got {meta['kind']!r}")
        bias = tensors.pop("bias", None)
        field_ = BiasField(bias.double().numpy()) if bias is not None else None
        return cls(spec_from_dict(DeblurSpec, meta["spec"]), tensors), field_


@dataclass
class DeblurResult:
    checkpoint: DeblurCheckpoint
    bias: BiasField
    trace: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.checkpoint, self.bias, self.trace))


def train_deblur(y_primes, psf: Psf, spec: DeblurSpec = DeblurSpec(), cfg: DeblurTrainConfig = DeblurTrainConfig()) -> DeblurResult:
    """Jointly fit the network and one bias field shared by every input.

    Each step uses the full stack of inputs; the objective is the deblurring
    loss averaged over them. With ``cfg.learn_bias`` off the field stays at
    zero.
    """
    arrays = [as_array(y) for y in y_primes]
    if not arrays:
        raise ValueError("need at least one observation")
    if len({a.shape for a in arrays}) != 1:
        raise ValueError("observations must share dimensions")
    if arrays[0].shape != psf.shape:
        raise OtfSizeError(f"observation {arrays[0].shape} vs OTF grid {psf.shape}")
    if len(arrays) == 1 and cfg.learn_bias:
        warnings.warn("joint bias estimation from a single observation is ill-posed", SingleFrameWarning, stacklevel=2)

    y = to_tensor(np.stack(arrays))
    otf = otf_tensor(psf)
    with seeded(cfg.seed):
        net = DeblurUNet(spec)
    bias = torch.zeros(1, 1, *psf.shape, requires_grad=cfg.learn_bias)
    groups = [{"params": net.parameters(), "lr": cfg.net_lr}]
    if cfg.learn_bias:
        groups.append({"params": [bias], "lr": cfg.bias_lr})
    opt = torch.optim.Adam(groups)
    trace = np.empty(cfg.steps)
    net.train()
    for step in range(cfg.steps):
        x_hat = net(y - bias)
        loss = deblur_loss(x_hat, y, bias, otf, cfg.lambda2, cfg.regularization_enabled)
        trace[step] = check_finite(loss, step, {"net": cfg.net_lr, "bias": cfg.bias_lr})
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    return DeblurResult(DeblurCheckpoint(spec, state), BiasField(bias.detach()[0, 0].double().numpy()), trace)


@torch.no_grad()
def reconstruct(checkpoint: DeblurCheckpoint | DeblurUNet, bias: BiasField, y_prime) -> Image:
    """x_hat = R(y' - b) with batch-norm in inference mode."""
    net = checkpoint.build() if isinstance(checkpoint, DeblurCheckpoint) else checkpoint.eval()
    arr = as_array(y_prime)
    if arr.shape != bias.shape:
        raise ValueError(f"observation {arr.shape} vs bias field {bias.shape}")
    out = net(to_tensor(arr - bias.values))[0, 0].double().numpy()
    return Image(out)


def config_record(cfg: DeblurTrainConfig) -> dict:
    return asdict(cfg)
