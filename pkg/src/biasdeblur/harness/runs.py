"""Content-addressed experiment runs persisted as JSON plus CSV traces."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .config import ExperimentConfig, to_dict

OUTPUT_ROOT_ENV = "BIASDEBLUR_OUTPUT_ROOT"
RUN_FILE = "run.json"


class RunFinalizedError(RuntimeError):
    pass


def output_root(cfg: ExperimentConfig | None = None) -> Path:
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir if cfg is not None else "runs")


def content_hash(payload) -> str:
    """sha256 over canonical JSON, git-style short form."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def config_hash(cfg: ExperimentConfig) -> str:
    snapshot = to_dict(cfg)
    snapshot.pop("output_dir", None)
    snapshot.pop("workers", None)
    return content_hash({"config": snapshot, "version": __version__})


@dataclass
class ExperimentRun:
    run_id: str
    directory: Path
    config: dict
    input_hash: str
    rows: list[dict] = field(default_factory=list)
    traces: dict[str, str] = field(default_factory=dict)
    checkpoints: dict[str, str] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    figures: list[str] = field(default_factory=list)
    tables: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    stagnation: dict | None = None
    failures: list[dict] = field(default_factory=list)
    finalized: bool = False

    @classmethod
    def create(cls, cfg: ExperimentConfig, root: Path | None = None) -> "ExperimentRun":
        h = config_hash(cfg)
        run_id = h[:12]
        directory = Path(root if root is not None else output_root(cfg)) / run_id
        directory.mkdir(parents=True, exist_ok=True)
        return cls(run_id, directory, to_dict(cfg), h)

    def _check_open(self):
        if self.finalized:
            raise RunFinalizedError(f"run {self.run_id} is finalized")

    def add_rows(self, rows):
        self._check_open()
        for r in rows:
            self.rows.append({"run_id": self.run_id, **r})

    def add_trace(self, name: str, losses) -> Path:
        """Write a (step, loss) CSV under traces/ and record it."""
        self._check_open()
        path = self.directory / "traces" / f"{name}.csv"
        path.parent.mkdir(exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss"])
            for i, v in enumerate(np.asarray(losses, dtype=np.float64)):
                w.writerow([i, repr(float(v))])
        self.traces[name] = str(path.relative_to(self.directory))
        return path

    def path(self, rel: str) -> Path:
        return self.directory / rel

    def record(self) -> dict:
        return {
            "run_id": self.run_id,
            "input_hash": self.input_hash,
            "config": self.config,
            "rows": self.rows,
            "traces": self.traces,
            "checkpoints": self.checkpoints,
            "artifacts": self.artifacts,
            "figures": self.figures,
            "tables": self.tables,
            "timings": self.timings,
            "stagnation": self.stagnation,
            "failures": self.failures,
            "finalized": self.finalized,
        }

    def finalize(self) -> Path:
        self._check_open()
        self.rows.sort(key=row_key)
        self.finalized = True
        return self.save()

    def save(self) -> Path:
        path = self.directory / RUN_FILE
        path.write_text(json.dumps(self.record(), indent=2, sort_keys=True, default=_json_default), encoding="utf-8")
        return path

    @classmethod
    def load(cls, ref, root: Path | None = None) -> "ExperimentRun":
        """Load by directory, run.json path, or run id under the output root."""
        p = Path(ref)
        if p.is_file():
            p = p.parent
        elif not p.is_dir():
            p = Path(root if root is not None else output_root()) / str(ref)
        data = json.loads((p / RUN_FILE).read_text(encoding="utf-8"))
        return cls(
            data["run_id"],
            p,
            data["config"],
            data["input_hash"],
            data["rows"],
            data["traces"],
            data["checkpoints"],
            data["artifacts"],
            data["figures"],
            data["tables"],
            data["timings"],
            data["stagnation"],
            data["failures"],
            data["finalized"],
        )


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def row_key(row: dict):
    cell = row.get("cell", {})
    return (json.dumps(cell, sort_keys=True), row.get("seed", 0), str(row.get("scene", "")))
