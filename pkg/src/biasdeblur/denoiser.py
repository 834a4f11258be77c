"""Step 1: self-supervised multi-frame denoising.

A U-Net is trained on pairs of noisy frames of the same scene with a
Noise2Noise cross-prediction loss plus a consistency term that asks both
predictions to agree. The denoised output keeps the noise expectation, so
it is the biased observation handed to the deblurring stage.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .degradation import FrameSequence
from .imaging import Image, as_array
from .nets import DenoiserSpec, Sn2nUNet, load_tensors, save_tensors, spec_from_dict
from .training import batch_rng, check_finite, seeded, to_tensor


class PairRule(str, enum.Enum):
    ADJACENT = "AdjacentPairs"
    ODD_EVEN = "OddEvenHalfAverages"


@dataclass(frozen=True)
class FramePairSet:
    pairs: list[tuple[Image, Image]]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a pair set needs at least one pair")
        shapes = {im.shape for p in self.pairs for im in p}
        if len(shapes) != 1:
            raise ValueError(f"pair members disagree in shape: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pairs[0][0].shape

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        y1 = np.stack([a.pixels for a, _ in self.pairs])
        y2 = np.stack([b.pixels for _, b in self.pairs])
        return y1, y2

    def subset(self, count: int) -> "FramePairSet":
        return FramePairSet(self.pairs[:count], {**self.provenance, "subset": count})

    @classmethod
    def concat(cls, sets) -> "FramePairSet":
        sets = list(sets)
        pairs = [p for s in sets for p in s.pairs]
        return cls(pairs, {"parts": [s.provenance for s in sets]})


def make_pairs(seq: FrameSequence, rule: PairRule | str = PairRule.ADJACENT, sequence_id: str = "") -> FramePairSet:
    """Split a sequence into noise-independent training pairs.

    AdjacentPairs gives (frame 2i, frame 2i+1); OddEvenHalfAverages gives a
    single pair of half-sequence means.
    """
    rule = PairRule(rule)
    frames = seq.frames
    if len(frames) < 2:
        raise ValueError("need at least two frames to pair")
    if rule is PairRule.ADJACENT:
        pairs = [(frames[i], frames[i + 1]) for i in range(0, len(frames) - 1, 2)]
    else:
        stack = seq.stack()
        pairs = [(Image(stack[0::2].mean(axis=0)), Image(stack[1::2].mean(axis=0)))]
    return FramePairSet(pairs, {"sequence": sequence_id, "rule": rule.value})


def sn2n_loss(f_y1, f_y2, y1, y2, lambda1: float) -> torch.Tensor:
    """Cross-prediction terms plus lambda1 times the prediction disagreement,
    each a mean over all elements."""
    f_y1, f_y2, y1, y2 = (torch.as_tensor(t) for t in (f_y1, f_y2, y1, y2))
    if not (f_y1.shape == f_y2.shape == y1.shape == y2.shape):
        raise ValueError("sn2n_loss inputs must share a shape")
    return (
        torch.mean((f_y1 - y2) ** 2)
        + torch.mean((f_y2 - y1) ** 2)
        + lambda1 * torch.mean((f_y1 - f_y2) ** 2)
    )


@dataclass(frozen=True)
class Sn2nTrainConfig:
    lambda1: float = 1.0
    steps: int = 2000
    batch: int = 4
    learning_rate: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class DenoiserCheckpoint:
    spec: DenoiserSpec
    state: dict[str, torch.Tensor] = field(repr=False)
    trace: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def build(self) -> Sn2nUNet:
        net = Sn2nUNet(self.spec)
        net.load_state_dict(self.state)
        return net.eval()

    def save(self, path) -> None:
        save_tensors(path, "denoiser", self.spec, self.state, {"trace_length": int(len(self.trace))})

    @classmethod
    def load(cls, path) -> "DenoiserCheckpoint":
        meta, tensors = load_tensors(path)
        if meta["kind"] != "denoiser":
            raise ValueError(f"expected a denoiser checkpoint, got {meta['kind']!r}")
        return cls(spec_from_dict(DenoiserSpec, meta["spec"]), tensors)


def _state(net: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in net.state_dict().items()}


def _fit(net: Sn2nUNet, pairs: FramePairSet, cfg: Sn2nTrainConfig) -> np.ndarray:
    y1_all, y2_all = (to_tensor(a) for a in pairs.arrays())
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
    rng = batch_rng(cfg.seed, 1)
    n = len(pairs)
    trace = np.empty(cfg.steps)
    net.train()
    for step in range(cfg.steps):
        idx = rng.choice(n, size=cfg.batch, replace=n < cfg.batch)
        y1, y2 = y1_all[idx], y2_all[idx]
        f = net(torch.cat([y1, y2]))
        loss = sn2n_loss(f[: len(idx)], f[len(idx) :], y1, y2, cfg.lambda1)
        trace[step] = check_finite(loss, step, cfg.learning_rate)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return trace


def train_denoiser(pairs: FramePairSet, spec: DenoiserSpec = DenoiserSpec(), cfg: Sn2nTrainConfig = Sn2nTrainConfig()) -> DenoiserCheckpoint:
    """Train from a seeded initialization; returns weights and per-step loss."""
    if len(pairs) == 0:
        raise ValueError("no training pairs")
    with seeded(cfg.seed):
        net = Sn2nUNet(spec)
        trace = _fit(net, pairs, cfg)
    return DenoiserCheckpoint(spec, _state(net), trace)


def pretrain_finetune(pretrained: DenoiserCheckpoint, small_pairs: FramePairSet, cfg: Sn2nTrainConfig, spec: DenoiserSpec | None = None) -> DenoiserCheckpoint:
    """Continue optimizing pretrained weights on a small pair set."""
    if spec is not None and spec != pretrained.spec:
        raise ValueError(f"incompatible architecture: {spec} vs {pretrained.spec}")
    net = pretrained.build()
    with seeded(cfg.seed):
        trace = _fit(net, small_pairs, cfg)
    return DenoiserCheckpoint(pretrained.spec, _state(net), np.concatenate([pretrained.trace, trace]))


@torch.no_grad()
def denoise(checkpoint: DenoiserCheckpoint | Sn2nUNet, y) -> Image:
    """One forward pass; input of any size >= 8 px is padded and cropped."""
    net = checkpoint.build() if isinstance(checkpoint, DenoiserCheckpoint) else checkpoint.eval()
    arr = as_array(y)
    if min(arr.shape) < 8:
        raise ValueError(f"image {arr.shape} below the 8 px minimum")
    out = net(to_tensor(arr))[0, 0].double().numpy()
    return Image(out)


@torch.no_grad()
def denoise_sequence(checkpoint: DenoiserCheckpoint, frames) -> list[Image]:
    net = checkpoint.build()
    stack = np.stack([as_array(f) for f in frames])
    out = net(to_tensor(stack))[:, 0].double().numpy()
    return [Image(o) for o in out]


def with_steps(cfg: Sn2nTrainConfig, steps: int) -> Sn2nTrainConfig:
    return replace(cfg, steps=steps)


def config_record(cfg: Sn2nTrainConfig) -> dict:
    return asdict(cfg)
