"""Command line entry point.

Subcommands: simulate, denoise, deblur, ablate, sweep, report. Failures
exit nonzero and print a JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..classical import DeconvParams, nlr_deconvolve, richardson_lucy, wiener_deconvolve
from ..deblur import DeblurTrainConfig, reconstruct, train_deblur
from ..degradation import FrameSequence, generate_sequence, make_psf, noise_condition
from ..denoiser import DenoiserCheckpoint, PairRule, Sn2nTrainConfig, denoise_sequence, make_pairs, train_denoiser
from ..imaging import Image, load_image, save_image
from ..scenes import resolve_scene
from .config import DESK_DEBLUR, DESK_DENOISER, ConfigError, ExperimentConfig, Scenario, load_config, with_overrides
from .experiments import derive_seed, run_experiment, MODULE_SIM
from .report import emit_report, report_json
from .runs import ExperimentRun

FRAME_SUFFIXES = {".bin", ".png", ".tif", ".tiff", ".pgm", ".bmp"}


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        self.record = {"error": kind, "message": message, **extra}
        super().__init__(message)


# -- simulate -------------------------------------------------------------------

MANIFEST_KEYS = {"scenes", "size", "psf", "noise", "frames"}


def _read_manifest(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError("FileNotFound", str(path)) from None
    except json.JSONDecodeError as exc:
        raise CliError("ManifestError", f"{path}: {exc}") from None
    problems = [f"{k}: unknown key" for k in sorted(set(data) - MANIFEST_KEYS)]
    problems += [f"{k}: missing" for k in sorted({"scenes"} - set(data))]
    if problems:
        raise CliError("ManifestError", "invalid manifest", violations=problems)
    return {"size": 64, "psf": "psf-4", "noise": "C3", "frames": 16, **data}


def cmd_simulate(args) -> dict:
    m = _read_manifest(Path(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    psf = make_psf(m["psf"], m["size"])
    cond = noise_condition(m["noise"], (m["size"], m["size"]))
    written = []
    for i, ref in enumerate(m["scenes"]):
        seq = generate_sequence(resolve_scene(ref, m["size"]), psf, cond, m["frames"], derive_seed(args.seed, MODULE_SIM, i))
        d = out / f"scene{i}"
        d.mkdir(exist_ok=True)
        save_image(seq.latent, d / "latent.bin")
        save_image(seq.latent_blurred, d / "blurred.bin")
        save_image(seq.true_bias_field, d / "true_bias.bin")
        for k, frame in enumerate(seq.frames):
            save_image(frame, d / f"frame_{k:04d}.bin")
        written.append(str(d))
    record = {"manifest": m, "seed": args.seed, "scenes": written}
    (out / "simulation.json").write_text(json.dumps(record, indent=2, sort_keys=True), encoding="utf-8")
    return record


# -- denoise / deblur ---------------------------------------------------------------


def _frame_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise CliError("FileNotFound", str(path))
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in FRAME_SUFFIXES and p.name.startswith("frame"))
    if not files:
        raise CliError("NoFrames", f"no frame_* images in {path}")
    return files


def _load_frames(path: Path) -> list[Image]:
    return [load_image(p) for p in _frame_files(path)]


def _sequence(frames: list[Image]) -> FrameSequence:
    if len(frames) % 2:
        frames = frames[:-1]
    if len(frames) < 2:
        raise CliError("NoFrames", "need at least two frames")
    return FrameSequence(frames, Image(np.mean([f.pixels for f in frames], axis=0)), Image(np.zeros(frames[0].shape)), [0] * len(frames))


def _denoiser_cfg(args) -> Sn2nTrainConfig:
    return Sn2nTrainConfig(lambda1=args.lambda1, steps=args.denoise_steps, batch=args.batch, learning_rate=args.lr, seed=args.seed)


def cmd_denoise(args) -> dict:
    seq = _sequence(_load_frames(Path(args.frames)))
    ckpt = train_denoiser(make_pairs(seq, PairRule(args.pair_rule)), DESK_DENOISER, _denoiser_cfg(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    y_prime = Image(np.mean([d.pixels for d in denoise_sequence(ckpt, seq.frames)], axis=0))
    save_image(y_prime, out / "denoised.bin")
    ckpt.save(out / "denoiser")
    np.savetxt(out / "denoiser_trace.csv", np.c_[np.arange(len(ckpt.trace)), ckpt.trace], delimiter=",", header="step,loss", comments="", fmt=["%d", "%.10g"])
    return {"denoised": str(out / "denoised.bin"), "checkpoint": str(out / "denoiser.json"), "final_loss": float(ckpt.trace[-1]) if len(ckpt.trace) else None}


def cmd_deblur(args) -> dict:
    src = Path(args.input)
    if not src.exists():
        raise CliError("FileNotFound", str(src))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.method == "pn2n":
        frames = _load_frames(src)
        psf = make_psf(args.psf, frames[0].shape)
        seq = _sequence(frames)
        if args.denoiser:
            den = DenoiserCheckpoint.load(args.denoiser)
        else:
            den = train_denoiser(make_pairs(seq, PairRule(args.pair_rule)), DESK_DENOISER, _denoiser_cfg(args))
        y_prime = Image(np.mean([d.pixels for d in denoise_sequence(den, seq.frames)], axis=0))
        dcfg = DeblurTrainConfig(
            lambda2=args.lambda2,
            bias_lr=args.bias_lr,
            net_lr=args.net_lr,
            steps=args.deblur_steps,
            regularization_enabled=not args.no_regularization,
            seed=args.seed,
        )
        ckpt, bias, trace = train_deblur([y_prime], psf, DESK_DEBLUR, dcfg)
        result = reconstruct(ckpt, bias, y_prime)
        ckpt.save(out / "deblur", bias)
        bias.export(out / "bias.bin")
        np.savetxt(out / "deblur_trace.csv", np.c_[np.arange(len(trace)), trace], delimiter=",", header="step,loss", comments="", fmt=["%d", "%.10g"])
    else:
        frames = _load_frames(src) if src.is_dir() else [load_image(src)]
        y = Image(np.mean([f.pixels for f in frames], axis=0))
        psf = make_psf(args.psf, y.shape)
        p = DeconvParams(args.wiener_k, args.rl_iterations, args.nlr_iterations, args.nlr_alpha, args.nlr_beta)
        if args.method == "wd":
            result = wiener_deconvolve(y, psf, p.wiener_k)
        elif args.method == "lra":
            result = richardson_lucy(y, psf, p.rl_iterations)
        else:
            result = nlr_deconvolve(y, psf, p.nlr_iterations, p.nlr_alpha, p.nlr_beta)
    save_image(result, out / "deblurred.bin")
    save_image(result.clamp(), out / "deblurred.png")
    return {"method": args.method, "output": str(out / "deblurred.bin")}


# -- experiments ---------------------------------------------------------------------


def _experiment(args, scenario: Scenario | None) -> dict:
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
    except FileNotFoundError:
        raise CliError("FileNotFound", str(args.config)) from None
    if scenario is not None:
        cfg = with_overrides(cfg, scenario=scenario)
    if args.seeds:
        cfg = with_overrides(cfg, data={"seeds": tuple(args.seeds)})
    if args.workers:
        cfg = with_overrides(cfg, workers=args.workers)
    run = run_experiment(cfg)
    report = emit_report(run)
    return {"run_id": run.run_id, "directory": str(run.directory), "failures": len(run.failures), **report}


def cmd_ablate(args) -> dict:
    return _experiment(args, Scenario.ABLATE)


SWEEP_KINDS = {"noise": Scenario.NOISE_SWEEP, "psf": Scenario.PSF_ROBUSTNESS, "hyper": Scenario.HYPER_SWEEP}


def cmd_sweep(args) -> dict:
    return _experiment(args, SWEEP_KINDS[args.kind] if args.kind else None)


def cmd_report(args) -> dict:
    try:
        run = ExperimentRun.load(args.run, Path(args.root) if args.root else None)
    except FileNotFoundError:
        raise CliError("RunNotFound", f"no run {args.run!r}") from None
    emit_report(run)
    return json.loads(report_json(run))


# -- parser ---------------------------------------------------------------------------


def _training_flags(p: argparse.ArgumentParser):
    d, db = Sn2nTrainConfig(), DeblurTrainConfig()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pair-rule", choices=[r.value for r in PairRule], default=PairRule.ADJACENT.value)
    p.add_argument("--lambda1", type=float, default=d.lambda1)
    p.add_argument("--lr", type=float, default=d.learning_rate, help="denoiser learning rate")
    p.add_argument("--batch", type=int, default=d.batch)
    p.add_argument("--denoise-steps", type=int, default=1000)
    p.add_argument("--lambda2", type=float, default=db.lambda2)
    p.add_argument("--bias-lr", type=float, default=db.bias_lr)
    p.add_argument("--net-lr", type=float, default=1e-3)
    p.add_argument("--deblur-steps", type=int, default=2000)
    p.add_argument("--no-regularization", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biasdeblur", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write seeded multi-frame sequences")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="simulated")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("denoise", help="train the frame-pair denoiser on one sequence")
    p.add_argument("--frames", required=True, help="directory of frame_* images")
    p.add_argument("--out", default="denoised")
    _training_flags(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("deblur", help="deblur with a classical method or the full pipeline")
    p.add_argument("--method", choices=["wd", "lra", "nlr", "pn2n"], required=True)
    p.add_argument("--input", required=True, help="image file or directory of frame_* images")
    p.add_argument("--psf", default="psf-4")
    p.add_argument("--out", default="deblurred")
    p.add_argument("--denoiser", help="pretrained denoiser checkpoint (pn2n only)")
    dp = DeconvParams()
    p.add_argument("--wiener-k", type=float, default=dp.wiener_k)
    p.add_argument("--rl-iterations", type=int, default=dp.rl_iterations)
    p.add_argument("--nlr-iterations", type=int, default=dp.nlr_iterations)
    p.add_argument("--nlr-alpha", type=float, default=dp.nlr_alpha)
    p.add_argument("--nlr-beta", type=float, default=dp.nlr_beta)
    _training_flags(p)
    p.set_defaults(func=cmd_deblur)

    for name, fn, help_ in (("ablate", cmd_ablate, "run the T1-T4 ablation"), ("sweep", cmd_sweep, "run a configured sweep")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--workers", type=int)
        if name == "sweep":
            p.add_argument("--kind", choices=sorted(SWEEP_KINDS))
        p.set_defaults(func=fn)

    p = sub.add_parser("report", help="render CSV and figures for a finished run")
    p.add_argument("--run", required=True, help="run id, run directory or run.json path")
    p.add_argument("--root", help="output root (defaults to $BIASDEBLUR_OUTPUT_ROOT or ./runs)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = int(exc.code or 0)
        if code:
            print(json.dumps({"error": "UsageError", "message": "invalid arguments"}), file=sys.stderr)
        return code
    try:
        result = args.func(args)
    except ConfigError as exc:
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return 2
    except CliError as exc:
        print(json.dumps(exc.record), file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


__all__ = ["build_parser", "main"]
