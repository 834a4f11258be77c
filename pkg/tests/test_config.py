import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biasdeblur.harness.config import (
    SCHEMA_VERSION,
    ConfigError,
    DataConfig,
    ExperimentConfig,
    Scenario,
    from_dict,
    load_config,
    parse,
    save_config,
    serialize,
    to_dict,
    with_overrides,
)


def test_default_round_trip():
    cfg = ExperimentConfig()
    assert parse(serialize(cfg)) == cfg
    assert from_dict(to_dict(cfg)) == cfg


def test_file_round_trip(tmp_path):
    cfg = with_overrides(ExperimentConfig(), scenario=Scenario.NOISE_SWEEP, data={"seeds": (4, 5), "frames": 8})
    back = load_config(save_config(cfg, tmp_path / "c.toml"))
    assert back == cfg
    assert back.data.seeds == (4, 5)


@settings(max_examples=30, deadline=None)
@given(
    scenario=st.sampled_from(list(Scenario)),
    size=st.integers(8, 256),
    frames=st.integers(1, 50).map(lambda n: 2 * n),
    seeds=st.lists(st.integers(0, 2**31), min_size=1, max_size=4).map(tuple),
    lam=st.floats(0.0, 10.0, allow_nan=False),
    lr=st.floats(1e-6, 1.0),
    reg=st.booleans(),
)
def test_round_trip_property(scenario, size, frames, seeds, lam, lr, reg):
    cfg = with_overrides(
        ExperimentConfig(),
        scenario=scenario,
        data={"size": size, "frames": frames, "seeds": seeds},
        deblur={"lambda2": lam, "net_lr": lr, "regularization_enabled": reg},
    )
    assert parse(serialize(cfg)) == cfg


def test_partial_file_uses_defaults():
    cfg = parse('scenario = "Single"\n[data]\nseeds = [9]\n')
    assert cfg.scenario is Scenario.SINGLE
    assert cfg.data == dataclasses.replace(DataConfig(), seeds=(9,))


def test_every_violation_is_reported():
    text = """
typo = 1
[data]
seeds = []
frames = 3
psf = "square:2"
noise = "C9"
scenes = ["synthetic:0", "/no/such/file.png"]
[ablate]
codes = ["T5"]
[deblur]
net_lr = "fast"
"""
    with pytest.raises(ConfigError) as err:
        parse(text)
    msgs = " | ".join(err.value.errors)
    for field in ("typo", "deblur.net_lr"):
        assert field in msgs
    rec = err.value.to_record()
    assert rec["error"] == "ConfigError" and len(rec["violations"]) == len(err.value.errors)


def test_semantic_violations_listed_together():
    text = """
[data]
seeds = []
frames = 3
psf = "square:2"
noise = "C9"
scenes = ["synthetic:0", "/no/such/file.png"]
[ablate]
codes = ["T5"]
"""
    with pytest.raises(ConfigError) as err:
        parse(text)
    msgs = " | ".join(err.value.errors)
    for field in ("data.seeds", "data.frames", "data.psf", "data.noise", "data.scenes[1]", "ablate.codes[0]"):
        assert field in msgs


def test_bad_syntax_version_and_ranges():
    with pytest.raises(ConfigError):
        parse("scenario = ")
    with pytest.raises(ConfigError) as err:
        parse(f"schema_version = {SCHEMA_VERSION + 1}\n")
    assert "schema_version" in err.value.errors[0]
    with pytest.raises(ConfigError) as err:
        parse("[deblur]\nlambda2 = -1.0\n")
    assert any("lambda2" in e for e in err.value.errors)
    with pytest.raises(ConfigError):
        parse("[data]\nsize = true\n")


def test_with_overrides_merges_sections():
    cfg = with_overrides(ExperimentConfig(), deblur={"steps": 7}, workers=3)
    assert cfg.deblur.steps == 7 and cfg.deblur.net_lr == ExperimentConfig().deblur.net_lr
    assert cfg.workers == 3
