import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from biasdeblur.degradation import NoiseModel, generate_sequence, make_psf, noise_condition
from biasdeblur.denoiser import (
    DenoiserCheckpoint,
    FramePairSet,
    PairRule,
    Sn2nTrainConfig,
    denoise,
    denoise_sequence,
    make_pairs,
    pretrain_finetune,
    sn2n_loss,
    train_denoiser,
)
from biasdeblur.imaging import Image, Psf, psnr
from biasdeblur.nets import DenoiserSpec
from biasdeblur.scenes import synthetic_scene
from biasdeblur.training import TrainingDivergedError
from oracles import sn2n_loss_scalar

TINY = DenoiserSpec(widths=(8, 16, 16, 16, 16, 16))


def zero_noise_seq(n=4, size=32, seed=0):
    latent = synthetic_scene(size, seed, background=0.2)
    return generate_sequence(latent, make_psf("disk:2", size), NoiseModel.zero((size, size)), n, seed)


# -- pairing ------------------------------------------------------------------


def test_pair_counts_and_zero_noise_pairs():
    seq = zero_noise_seq(4)
    adj = make_pairs(seq, PairRule.ADJACENT, "s0")
    assert len(adj) == 2 and adj.provenance == {"sequence": "s0", "rule": "AdjacentPairs"}
    oe = make_pairs(seq, "OddEvenHalfAverages")
    assert len(oe) == 1
    for ps in (adj, oe):
        for a, b in ps.pairs:
            np.testing.assert_allclose(a.pixels, seq.latent_blurred.pixels, atol=1e-12)
            np.testing.assert_allclose(b.pixels, seq.latent_blurred.pixels, atol=1e-12)


def test_half_average_difference_spread():
    n = 400
    seq = generate_sequence(np.zeros((32, 32)), Psf.delta((32, 32)), noise_condition("C3", (32, 32)), n, 1)
    (a, b), = make_pairs(seq, PairRule.ODD_EVEN).pairs
    sigma = (seq.stack() - seq.true_bias_field.pixels).std()
    assert (a.pixels - b.pixels).std() == pytest.approx(sigma * np.sqrt(2 / (n / 2)), rel=0.1)


def test_pair_set_rules():
    with pytest.raises(ValueError):
        FramePairSet([])
    with pytest.raises(ValueError):
        FramePairSet([(Image(np.zeros((8, 8))), Image(np.zeros((8, 9))))])
    seq = zero_noise_seq(8)
    ps = make_pairs(seq)
    assert len(ps.subset(2)) == 2
    assert len(FramePairSet.concat([ps, ps])) == 8


# -- loss ---------------------------------------------------------------------


def test_loss_examples():
    y = torch.rand(1, 1, 8, 8)
    assert float(sn2n_loss(y, y, y, y, 1.0)) == 0.0
    c = torch.full((1, 1, 8, 8), 0.3, dtype=torch.float64)
    z = torch.zeros_like(c)
    assert float(sn2n_loss(z, z, c, c, 5.0)) == pytest.approx(2 * 0.3**2, abs=1e-12)
    with pytest.raises(ValueError):
        sn2n_loss(y, y, y, torch.rand(1, 1, 8, 9), 1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), lam=st.floats(0.0, 10.0))
def test_loss_matches_scalar_and_is_symmetric(seed, lam):
    g = torch.Generator().manual_seed(seed)
    a, b, y1, y2 = (torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64) for _ in range(4))
    got = float(sn2n_loss(a, b, y1, y2, lam))
    assert got == pytest.approx(sn2n_loss_scalar(a, b, y1, y2, lam), abs=1e-6)
    assert got == pytest.approx(float(sn2n_loss(b, a, y2, y1, lam)), abs=1e-12)


def test_loss_gradient_matches_central_differences():
    g = torch.Generator().manual_seed(7)
    a, b, y1, y2 = (torch.rand(1, 1, 8, 8, generator=g, dtype=torch.float64) for _ in range(4))
    a.requires_grad_(True)
    sn2n_loss(a, b, y1, y2, 0.7).backward()
    num = torch.zeros_like(a)
    h = 1e-6
    for i in range(8):
        for j in range(8):
            e = torch.zeros_like(a)
            e[0, 0, i, j] = h
            num[0, 0, i, j] = (sn2n_loss(a.detach() + e, b, y1, y2, 0.7) - sn2n_loss(a.detach() - e, b, y1, y2, 0.7)) / (2 * h)
    torch.testing.assert_close(a.grad, num, rtol=1e-4, atol=1e-10)


# -- training and inference ---------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        Sn2nTrainConfig(lambda1=-1)
    with pytest.raises(ValueError):
        Sn2nTrainConfig(learning_rate=0)


def test_zero_noise_identity_is_learnable():
    seq = zero_noise_seq(4, 32)
    pairs = make_pairs(seq)
    ck = train_denoiser(pairs, TINY, Sn2nTrainConfig(steps=200, batch=2, learning_rate=1e-3))
    y1 = pairs.pairs[0][0]
    assert psnr(y1, denoise(ck, y1)) >= 40
    assert len(ck.trace) == 200


def test_training_is_deterministic():
    pairs = make_pairs(generate_sequence(synthetic_scene(32, 3), make_psf("disk:2", 32), noise_condition("C3", (32, 32)), 4, 3))
    cfg = Sn2nTrainConfig(steps=20, batch=2, learning_rate=1e-3, seed=11)
    a, b = train_denoiser(pairs, TINY, cfg), train_denoiser(pairs, TINY, cfg)
    np.testing.assert_array_equal(a.trace, b.trace)
    assert all(torch.equal(a.state[k], b.state[k]) for k in a.state)


def test_divergence_reports_step_and_rate():
    pairs = make_pairs(zero_noise_seq(4, 32))
    with pytest.raises(TrainingDivergedError) as err:
        train_denoiser(pairs, TINY, Sn2nTrainConfig(steps=50, batch=2, learning_rate=1e30))
    assert err.value.learning_rate == 1e30 and err.value.step >= 0


def test_checkpoint_round_trip_and_finetune(tmp_path):
    pairs = make_pairs(zero_noise_seq(4, 32))
    ck = train_denoiser(pairs, TINY, Sn2nTrainConfig(steps=5, batch=2))
    ck.save(tmp_path / "dn")
    back = DenoiserCheckpoint.load(tmp_path / "dn.json")
    y = pairs.pairs[0][0]
    np.testing.assert_array_equal(denoise(ck, y).pixels, denoise(back, y).pixels)
    same = pretrain_finetune(ck, pairs, Sn2nTrainConfig(steps=0))
    assert all(torch.equal(same.state[k], ck.state[k]) for k in ck.state)
    moved = pretrain_finetune(ck, pairs, Sn2nTrainConfig(steps=3, batch=2, learning_rate=1e-3))
    assert not all(torch.equal(moved.state[k], ck.state[k]) for k in ck.state)
    assert len(moved.trace) == len(ck.trace) + 3
    with pytest.raises(ValueError):
        pretrain_finetune(ck, pairs, Sn2nTrainConfig(steps=1), spec=DenoiserSpec())


def test_denoise_shapes_and_sanity():
    ck = train_denoiser(make_pairs(zero_noise_seq(4, 32)), TINY, Sn2nTrainConfig(steps=1, batch=2))
    for shape in ((32, 32), (48, 48), (20, 33)):
        assert denoise(ck, np.full(shape, 0.5)).shape == shape
    assert np.all(np.isfinite(denoise(ck, np.full((32, 32), 0.5)).pixels))
    with pytest.raises(ValueError):
        denoise(ck, np.zeros((4, 4)))
    outs = denoise_sequence(ck, [np.zeros((32, 32)), np.ones((32, 32))])
    assert len(outs) == 2


@pytest.mark.slow
def test_denoiser_keeps_bias_and_beats_single_frame():
    """Denoising gains over one frame, the residual tracks the bias field, and
    the bias is not removed."""
    n = 64
    psf = make_psf("psf-4", n)
    cond = noise_condition("C3", (n, n))
    seqs = [generate_sequence(synthetic_scene(n, 40 + i), psf, cond, 128, 40 + i) for i in range(3)]
    pairs = FramePairSet.concat(make_pairs(s) for s in seqs)
    from biasdeblur.harness.config import DESK_DENOISER

    ck = train_denoiser(pairs, DESK_DENOISER, Sn2nTrainConfig(steps=600, learning_rate=1e-3, seed=1))
    gains, corrs, rel = [], [], []
    for s in seqs:
        outs = np.stack([o.pixels for o in denoise_sequence(ck, s.frames)])
        target = s.latent_blurred.pixels + s.true_bias_field.pixels
        gains.append(psnr(target, outs[0]) - psnr(target, s.frames[0]))
        resid = outs.mean(axis=0) - s.latent_blurred.pixels
        corrs.append(np.corrcoef(resid.ravel(), s.true_bias_field.pixels.ravel())[0, 1])
        rel.append(resid.mean() - s.true_bias_field.pixels.mean())
    assert np.mean(gains) >= 3.0
    assert np.mean(corrs) >= 0.8
    assert abs(np.mean(rel)) < 0.25 * np.mean([s.true_bias_field.pixels.mean() for s in seqs])
