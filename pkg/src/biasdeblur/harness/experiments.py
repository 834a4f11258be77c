"""Scripted reproductions: ablation, noise-condition sweep, PSF robustness,
hyperparameter sweep and a single full run.

Every scenario is split into independent jobs (one per seed, or per grid
cell and seed). Jobs run inline or on a bounded process pool and return
plain data; the parent merges results by job key and writes all files.
"""

from __future__ import annotations

import concurrent.futures as cf
import multiprocessing
import time
import traceback
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..classical import NegativeObservationWarning, nlr_deconvolve, richardson_lucy, wiener_deconvolve
from ..deblur import reconstruct, train_deblur
from ..degradation import Blur, Noise, generate_sequence, make_psf, noise_condition, perturb_psf
from ..denoiser import train_denoiser
from ..frequency import stagnation_experiment
from ..imaging import Image, Psf, quality
from ..pipeline import Ablation, PipelineConfig, biased_observations, pair_set, run_pipeline
from ..scenes import resolve_scene
from .config import ExperimentConfig, Scenario, from_dict, to_dict
from .runs import ExperimentRun

# seed hierarchy: master seed -> module -> scene -> frame
MODULE_SIM = 1
MODULE_DENOISER = 2
MODULE_DEBLUR = 3
MODULE_PERTURB = 4


def derive_seed(master: int, module: int, *path: int) -> int:
    ss = np.random.SeedSequence([int(master), int(module), *map(int, path)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def build_sequences(cfg: ExperimentConfig, master_seed: int, scenes=None, condition: str | None = None, psf: Psf | None = None):
    d = cfg.data
    scenes = list(scenes if scenes is not None else d.scenes)
    psf = psf if psf is not None else make_psf(d.psf, d.size)
    cond = noise_condition(condition or d.noise, (d.size, d.size))
    seqs = []
    for i, ref in enumerate(scenes):
        latent = resolve_scene(ref, d.size)
        seqs.append(generate_sequence(latent, psf, cond, d.frames, derive_seed(master_seed, MODULE_SIM, i)))
    return seqs, psf


def pipeline_config(cfg: ExperimentConfig, master_seed: int) -> PipelineConfig:
    return PipelineConfig(
        denoiser_spec=cfg.denoiser_spec,
        denoiser=replace(cfg.denoiser, seed=derive_seed(master_seed, MODULE_DENOISER)),
        deblur_spec=cfg.deblur_spec,
        deblur=replace(cfg.deblur, seed=derive_seed(master_seed, MODULE_DEBLUR)),
        pair_rule=cfg.pair_rule,
    )


@dataclass(frozen=True)
class Job:
    scenario: str
    seed: int
    cell: tuple = ()

    @property
    def key(self) -> str:
        parts = [self.scenario, f"seed{self.seed}"] + [f"{k}={v}" for k, v in self.cell]
        return "_".join(str(p).replace(":", "-").replace("/", "-") for p in parts)


@dataclass
class JobResult:
    job: Job
    rows: list[dict] = field(default_factory=list)
    traces: dict[str, np.ndarray] = field(default_factory=dict)
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    checkpoints: dict[str, tuple] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    stagnation: dict | None = None
    seconds: float = 0.0


def _rows(cell: dict, seed: int, sequences, outputs, scenes) -> list[dict]:
    rows = []
    for ref, seq, out in zip(scenes, sequences, outputs):
        q = quality(seq.latent, out)
        rows.append({"cell": cell, "seed": seed, "scene": ref, "psnr": q.psnr, "ssim": q.ssim})
    return rows


def _failure(cell: dict, seed: int, exc: BaseException) -> dict:
    return {"cell": cell, "seed": seed, "error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc(limit=3)}


# -- scenario jobs --------------------------------------------------------------


def _ablate_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    res = JobResult(job)
    seqs, psf = build_sequences(cfg, job.seed)
    pcfg = pipeline_config(cfg, job.seed)
    codes = [Ablation(c) for c in cfg.ablate.codes]
    denoiser = None
    if any(c.uses_denoiser for c in codes):
        denoiser = train_denoiser(pair_set(seqs, cfg.pair_rule), pcfg.denoiser_spec, pcfg.denoiser)
        res.traces[f"denoiser_seed{job.seed}"] = denoiser.trace
        res.checkpoints[f"denoiser_seed{job.seed}"] = ("denoiser", denoiser)
    for code in codes:
        cell = {"arm": code.value}
        try:
            out = run_pipeline(seqs, psf, code, pcfg, denoiser=denoiser)
        except Exception as exc:  # a failed arm must not sink the sweep
            res.failures.append(_failure(cell, job.seed, exc))
            continue
        res.rows += _rows(cell, job.seed, seqs, out.outputs, cfg.data.scenes)
        if out.deblur_trace is not None:
            res.traces[f"deblur_{code.value}_seed{job.seed}"] = out.deblur_trace
        if code is Ablation.T4:
            res.fields[f"bias_T4_seed{job.seed}"] = out.bias.values
            res.fields["true_bias"] = seqs[0].true_bias_field.pixels
    return res


def classical_outputs(method: str, cfg: ExperimentConfig, seqs, psf: Psf) -> list[Image]:
    p = cfg.deconv
    outs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeObservationWarning)
        for s in seqs:
            y = s.frame_mean()
            if method == "wd":
                outs.append(wiener_deconvolve(y, psf, p.wiener_k))
            elif method == "lra":
                outs.append(richardson_lucy(y, psf, p.rl_iterations))
            elif method == "nlr":
                outs.append(nlr_deconvolve(y, psf, p.nlr_iterations, p.nlr_alpha, p.nlr_beta))
            else:
                raise ValueError(f"unknown classical method {method!r}")
    return outs


def _noise_sweep_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    res = JobResult(job)
    cd = dict(job.cell)
    psf = make_psf(cd["psf"], cfg.data.size)
    seqs, _ = build_sequences(cfg, job.seed, condition=cd["condition"], psf=psf)
    for method in cfg.noise_sweep.methods:
        cell = {**cd, "method": method}
        try:
            if method == "pn2n":
                out = run_pipeline(seqs, psf, Ablation.T4, pipeline_config(cfg, job.seed))
                outputs = out.outputs
                res.traces[f"deblur_{job.key}"] = out.deblur_trace
            else:
                outputs = classical_outputs(method, cfg, seqs, psf)
        except Exception as exc:
            res.failures.append(_failure(cell, job.seed, exc))
            continue
        res.rows += _rows(cell, job.seed, seqs, outputs, cfg.data.scenes)
    return res


def perturbations(cfg: ExperimentConfig) -> list[str]:
    pr = cfg.psf_robustness
    return [f"blur:{s:g}" for s in pr.blur_sigmas] + [f"noise:{n:g}" for n in pr.noise_levels]


def apply_perturbation(psf: Psf, label: str, seed: int) -> Psf:
    kind, value = label.split(":")
    v = float(value)
    if kind == "blur":
        return perturb_psf(psf, Blur(v)) if v > 0 else psf
    return perturb_psf(psf, Noise(v), seed=seed)


def _psf_robustness_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    res = JobResult(job)
    seqs, psf = build_sequences(cfg, job.seed)
    pcfg = pipeline_config(cfg, job.seed)
    denoiser = train_denoiser(pair_set(seqs, cfg.pair_rule), pcfg.denoiser_spec, pcfg.denoiser)
    y_primes = biased_observations(denoiser, seqs)
    for label in perturbations(cfg):
        wrong = apply_perturbation(psf, label, derive_seed(job.seed, MODULE_PERTURB))
        for reg in cfg.psf_robustness.regularization:
            cell = {"perturbation": label, "regularization": bool(reg)}
            try:
                dcfg = replace(pcfg.deblur, regularization_enabled=bool(reg))
                ckpt, bias, trace = train_deblur(y_primes, wrong, pcfg.deblur_spec, dcfg)
                outputs = [reconstruct(ckpt, bias, y) for y in y_primes]
            except Exception as exc:
                res.failures.append(_failure(cell, job.seed, exc))
                continue
            res.rows += _rows(cell, job.seed, seqs, outputs, cfg.data.scenes)
            res.traces[f"deblur_seed{job.seed}_{label.replace(':', '-')}_reg{int(reg)}"] = trace
    return res


def hyper_cells(cfg: ExperimentConfig) -> list[tuple]:
    h = cfg.hyper_sweep
    cells = [(("panel", "net_lr"), ("value", v)) for v in h.net_lr]
    cells += [(("panel", "bias_lr"), ("value", v)) for v in h.bias_lr]
    cells += [(("panel", "init_steps"), ("value", v)) for v in h.init_steps]
    cells += [(("panel", "scene_count"), ("value", v)) for v in h.scene_count]
    return cells


def _hyper_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    res = JobResult(job)
    cd = dict(job.cell)
    panel, value = cd["panel"], cd["value"]
    scenes = list(cfg.data.scenes)
    if panel == "scene_count":
        scenes = [f"synthetic:{i}" for i in range(int(value))]
    seqs, psf = build_sequences(cfg, job.seed, scenes=scenes)
    pcfg = pipeline_config(cfg, job.seed)
    if panel == "net_lr":
        pcfg = replace(pcfg, deblur=replace(pcfg.deblur, net_lr=float(value)))
    elif panel == "bias_lr":
        pcfg = replace(pcfg, deblur=replace(pcfg.deblur, bias_lr=float(value)))
    elif panel == "init_steps":
        pcfg = replace(pcfg, denoiser=replace(pcfg.denoiser, steps=int(value)))
    cell = dict(cd)
    try:
        out = run_pipeline(seqs, psf, Ablation.T4, pcfg)
    except Exception as exc:
        res.failures.append(_failure(cell, job.seed, exc))
        return res
    res.rows += _rows(cell, job.seed, seqs, out.outputs, scenes)
    return res


def _single_job(cfg: ExperimentConfig, job: Job) -> JobResult:
    res = JobResult(job)
    seqs, psf = build_sequences(cfg, job.seed)
    pcfg = pipeline_config(cfg, job.seed)
    den = train_denoiser(pair_set(seqs, cfg.pair_rule), pcfg.denoiser_spec, pcfg.denoiser)
    out = run_pipeline(seqs, psf, Ablation.T4, pcfg, denoiser=den)
    res.rows += _rows({"arm": "T4"}, job.seed, seqs, out.outputs, cfg.data.scenes)
    res.traces[f"denoiser_seed{job.seed}"] = den.trace
    res.traces[f"deblur_T4_seed{job.seed}"] = out.deblur_trace
    res.fields[f"bias_T4_seed{job.seed}"] = out.bias.values
    res.fields["true_bias"] = seqs[0].true_bias_field.pixels
    res.checkpoints[f"denoiser_seed{job.seed}"] = ("denoiser", den)
    # the loss-stagnation picture on the first scene with its true bias
    st = stagnation_experiment(seqs[0].latent, psf, seqs[0].true_bias_field, steps=500, record_every=5)
    res.stagnation = st.to_record()
    return res


_RUNNERS = {
    Scenario.ABLATE: _ablate_job,
    Scenario.NOISE_SWEEP: _noise_sweep_job,
    Scenario.PSF_ROBUSTNESS: _psf_robustness_job,
    Scenario.HYPER_SWEEP: _hyper_job,
    Scenario.SINGLE: _single_job,
}


def plan_jobs(cfg: ExperimentConfig) -> list[Job]:
    seeds = cfg.data.seeds
    sc = cfg.scenario.value
    if cfg.scenario is Scenario.NOISE_SWEEP:
        ns = cfg.noise_sweep
        return [Job(sc, s, (("condition", c), ("psf", p))) for c in ns.conditions for p in ns.psfs for s in seeds]
    if cfg.scenario is Scenario.HYPER_SWEEP:
        return [Job(sc, s, cell) for cell in hyper_cells(cfg) for s in seeds]
    return [Job(sc, s) for s in seeds]


def execute_job(cfg_dict: dict, job: Job) -> JobResult:
    """Process-pool entry point; rebuilds the config from plain data."""
    cfg = from_dict(cfg_dict)
    t0 = time.perf_counter()
    try:
        res = _RUNNERS[cfg.scenario](cfg, job)
    except Exception as exc:
        res = JobResult(job, failures=[_failure(dict(job.cell), job.seed, exc)])
    res.seconds = time.perf_counter() - t0
    return res


def _init_worker():
    import torch

    torch.set_num_threads(1)


def run_jobs(cfg: ExperimentConfig, jobs: list[Job]) -> dict[str, JobResult]:
    """Run jobs on up to ``cfg.workers`` processes; merge by job key."""
    data = to_dict(cfg)
    results: dict[str, JobResult] = {}
    if cfg.workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            results[job.key] = execute_job(data, job)
        return results
    ctx = multiprocessing.get_context("spawn")
    with cf.ProcessPoolExecutor(max_workers=cfg.workers, mp_context=ctx, initializer=_init_worker) as pool:
        futures = {pool.submit(execute_job, data, job): job for job in jobs}
        for fut in cf.as_completed(futures):
            job = futures[fut]
            try:
                results[job.key] = fut.result()
            except Exception as exc:  # worker crash
                results[job.key] = JobResult(job, failures=[_failure(dict(job.cell), job.seed, exc)])
    return results


def run_experiment(cfg: ExperimentConfig, root=None) -> ExperimentRun:
    """Plan, execute and persist one scenario; returns the finalized run."""
    from ..imaging import save_image

    run = ExperimentRun.create(cfg, root)
    t0 = time.perf_counter()
    results = run_jobs(cfg, plan_jobs(cfg))
    for key in sorted(results):
        res = results[key]
        run.add_rows(res.rows)
        run.failures += res.failures
        run.timings[key] = res.seconds
        for name, trace in sorted(res.traces.items()):
            run.add_trace(name, trace)
        for name, arr in sorted(res.fields.items()):
            path = run.path(f"artifacts/{name}.bin")
            path.parent.mkdir(exist_ok=True)
            save_image(Image(arr), path)
            run.artifacts[name] = str(path.relative_to(run.directory))
        for name, (kind, ckpt) in sorted(res.checkpoints.items()):
            path = run.path(f"checkpoints/{name}")
            path.parent.mkdir(exist_ok=True)
            ckpt.save(path)
            run.checkpoints[name] = str(path.with_suffix(".json").relative_to(run.directory))
        if res.stagnation is not None and run.stagnation is None:
            run.stagnation = res.stagnation
    run.timings["total"] = time.perf_counter() - t0
    run.finalize()
    return run


def summarize(rows: list[dict], keys: tuple[str, ...]) -> dict[tuple, dict]:
    """Mean PSNR/SSIM per cell over scenes and seeds."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        k = tuple(r["cell"].get(name) for name in keys)
        groups.setdefault(k, []).append(r)
    return {
        k: {
            "psnr": float(np.mean([r["psnr"] for r in g])),
            "ssim": float(np.mean([r["ssim"] for r in g])),
            "n": len(g),
            "seed_psnr": {s: float(np.mean([r["psnr"] for r in g if r["seed"] == s])) for s in sorted({r["seed"] for r in g})},
        }
        for k, g in groups.items()
    }


__all__ = [
    "Job",
    "JobResult",
    "build_sequences",
    "classical_outputs",
    "derive_seed",
    "execute_job",
    "pipeline_config",
    "plan_jobs",
    "run_experiment",
    "run_jobs",
    "summarize",
]
