"""Checkpoint container: parameter bundle plus a manifest compatibility contract.

A checkpoint is a directory:

    <dir>/weights.pt      torch state dicts (model, optionally optimizer)
    <dir>/manifest.json   denoiser config, schedule parameters, heatmap sigma,
                          value range, env statistics, training iteration,
                          validation loss, rng seed

The manifest is what makes sampling reproduce training's setup: loaders
reject mismatched geometry or schedules instead of silently re-deriving them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import DiskFull, IncompatibleCheckpoint
from .grids import EnvStats, ValueRange
from .network import Denoiser, DenoiserConfig
from .schedule import DiffusionSchedule


@dataclass
class CheckpointManifest:
    config: DenoiserConfig
    schedule: dict
    sigma: float
    value_min: float
    value_max: float
    iteration: int
    seed: int
    val_loss: float | None = None
    env_stats: EnvStats | None = None

    @property
    def value_range(self) -> ValueRange:
        return ValueRange(self.value_min, self.value_max)

    def to_dict(self) -> dict:
        d = {"config": self.config.to_dict(), "schedule": dict(self.schedule),
             "sigma": self.sigma, "value_min": self.value_min,
             "value_max": self.value_max, "iteration": self.iteration,
             "seed": self.seed, "val_loss": self.val_loss, "env_stats": None}
        if self.env_stats is not None:
            d["env_stats"] = {"mean": self.env_stats.mean.tolist(),
                              "std": self.env_stats.std.tolist(),
                              "zero_variance": self.env_stats.zero_variance.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CheckpointManifest":
        env_stats = None
        if d.get("env_stats"):
            es = d["env_stats"]
            env_stats = EnvStats(mean=es["mean"], std=es["std"],
                                 zero_variance=es["zero_variance"])
        return cls(config=DenoiserConfig.from_dict(d["config"]),
                   schedule=dict(d["schedule"]), sigma=float(d["sigma"]),
                   value_min=float(d["value_min"]), value_max=float(d["value_max"]),
                   iteration=int(d["iteration"]), seed=int(d["seed"]),
                   val_loss=d.get("val_loss"), env_stats=env_stats)


@dataclass
class DenoiserCheckpoint:
    manifest: CheckpointManifest
    model: Denoiser
    optimizer_state: dict | None = None
    path: Path | None = None

    def build_schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule.from_dict(self.manifest.schedule)

    def check_compatible(self, height: int, width: int,
                         env_dim: int | None = None,
                         schedule: dict | None = None) -> None:
        """Raise IncompatibleCheckpoint with a field-by-field diff on mismatch."""
        diffs = []
        cfg = self.manifest.config
        if cfg.height != height or cfg.width != width:
            diffs.append(f"geometry: checkpoint {cfg.height}x{cfg.width}, "
                         f"requested {height}x{width}")
        if env_dim is not None and cfg.env_dim != env_dim:
            diffs.append(f"env_dim: checkpoint {cfg.env_dim}, requested {env_dim}")
        if schedule is not None and dict(schedule) != dict(self.manifest.schedule):
            diffs.append(f"schedule: checkpoint {self.manifest.schedule}, "
                         f"requested {dict(schedule)}")
        if diffs:
            raise IncompatibleCheckpoint("; ".join(diffs))


def save_checkpoint(directory: str | Path, model: Denoiser,
                    manifest: CheckpointManifest,
                    optimizer_state: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {"model": model.state_dict()}
    if optimizer_state is not None:
        payload["optimizer"] = optimizer_state
    try:
        torch.save(payload, directory / "weights.pt")
        (directory / "manifest.json").write_text(
            json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DiskFull(f"checkpoint write to {directory} failed: {exc}") from exc
    return directory


def read_checkpoint_manifest(directory: str | Path) -> CheckpointManifest:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise IncompatibleCheckpoint(f"no manifest.json under {directory}")
    return CheckpointManifest.from_dict(json.loads(path.read_text()))


def load_checkpoint(directory: str | Path) -> DenoiserCheckpoint:
    directory = Path(directory)
    manifest = read_checkpoint_manifest(directory)
    weights = directory / "weights.pt"
    if not weights.is_file():
        raise IncompatibleCheckpoint(f"no weights.pt under {directory}")
    payload = torch.load(weights, map_location="cpu", weights_only=True)
    model = Denoiser(manifest.config)
    model.load_state_dict(payload["model"])
    model.eval()
    return DenoiserCheckpoint(manifest=manifest, model=model,
                              optimizer_state=payload.get("optimizer"),
                              path=directory)
