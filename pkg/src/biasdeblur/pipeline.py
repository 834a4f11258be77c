"""The two-step method and its ablations.

T1  denoiser only
T2  bias-learning deblur on the raw per-scene frame mean (no denoiser)
T3  denoiser, then deblur with the bias frozen at zero
T4  denoiser, then bias-learning deblur (the full method)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .deblur import BiasField, DeblurTrainConfig, reconstruct, train_deblur
from .degradation import FrameSequence
from .denoiser import (
    DenoiserCheckpoint,
    FramePairSet,
    PairRule,
    Sn2nTrainConfig,
    denoise_sequence,
    make_pairs,
    train_denoiser,
)
from .imaging import Image, Psf, QualityReport, quality
from .nets import DeblurSpec, DenoiserSpec


class Ablation(str, enum.Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"

    @property
    def uses_denoiser(self) -> bool:
        return self is not Ablation.T2

    @property
    def uses_deblur(self) -> bool:
        return self is not Ablation.T1

    @property
    def learns_bias(self) -> bool:
        return self in (Ablation.T2, Ablation.T4)


@dataclass(frozen=True)
class PipelineConfig:
    denoiser_spec: DenoiserSpec = DenoiserSpec()
    denoiser: Sn2nTrainConfig = Sn2nTrainConfig()
    deblur_spec: DeblurSpec = DeblurSpec()
    deblur: DeblurTrainConfig = DeblurTrainConfig()
    pair_rule: PairRule = PairRule.ADJACENT


@dataclass
class PipelineResult:
    ablation: Ablation
    outputs: list[Image] = field(repr=False)
    metrics: list[QualityReport]
    bias: BiasField | None = field(default=None, repr=False)
    denoiser_trace: np.ndarray | None = field(default=None, repr=False)
    deblur_trace: np.ndarray | None = field(default=None, repr=False)
    y_primes: list[Image] = field(default_factory=list, repr=False)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([m.psnr for m in self.metrics]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([m.ssim for m in self.metrics]))


def pair_set(sequences, rule: PairRule) -> FramePairSet:
    return FramePairSet.concat(make_pairs(s, rule, sequence_id=f"scene{i}") for i, s in enumerate(sequences))


def biased_observations(checkpoint: DenoiserCheckpoint, sequences) -> list[Image]:
    """Per-scene mean of the denoised frames."""
    return [Image(np.mean([d.pixels for d in denoise_sequence(checkpoint, s.frames)], axis=0)) for s in sequences]


def run_pipeline(
    sequences: list[FrameSequence],
    psf: Psf,
    ablation: Ablation | str,
    cfg: PipelineConfig = PipelineConfig(),
    denoiser: DenoiserCheckpoint | None = None,
) -> PipelineResult:
    """Run the stages enabled for ``ablation`` and score each scene against
    its latent image. A pre-trained ``denoiser`` may be passed to share
    Step 1 across arms."""
    ablation = Ablation(ablation)
    if not sequences:
        raise ValueError("no sequences")
    if any(s.latent is None for s in sequences):
        raise ValueError("sequences must carry their latent image for scoring")

    den_trace = None
    if ablation.uses_denoiser:
        if denoiser is None:
            denoiser = train_denoiser(pair_set(sequences, cfg.pair_rule), cfg.denoiser_spec, cfg.denoiser)
        den_trace = denoiser.trace
        y_primes = biased_observations(denoiser, sequences)
    else:
        y_primes = [s.frame_mean() for s in sequences]

    bias, deb_trace = None, None
    if ablation.uses_deblur:
        dcfg = replace(cfg.deblur, learn_bias=ablation.learns_bias)
        ckpt, bias, deb_trace = train_deblur(y_primes, psf, cfg.deblur_spec, dcfg)
        outputs = [reconstruct(ckpt, bias, y) for y in y_primes]
    else:
        outputs = y_primes

    metrics = [quality(s.latent, out) for s, out in zip(sequences, outputs)]
    return PipelineResult(ablation, outputs, metrics, bias, den_trace, deb_trace, y_primes)
