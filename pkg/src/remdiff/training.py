"""Training loop: batch assembly, forward noising, noise-prediction loss,
clipped AdamW updates with warmup-then-cosine learning rate, periodic
validation on frozen draws, and best-by-validation checkpoint selection.

Every random draw (batch indices, step indices, injected noise) is a pure
function of (seed, iteration), so resuming from a checkpoint replays the
exact remaining trajectory of an uninterrupted run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoints import (CheckpointManifest, DenoiserCheckpoint, load_checkpoint,
                          save_checkpoint)
from .datasets import load_dataset, read_manifest, split_records
from .errors import NonFiniteLoss
from .grids import (DatasetRecord, EnvStats, ValueRange, extract_tx,
                    gaussian_heatmap, normalize, zscore_env)
from .network import Denoiser, DenoiserConfig
from .schedule import DiffusionSchedule, build_schedule

_ITER_STREAM = 1
_VAL_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    lr_peak: float = 1e-4
    lr_floor: float = 1e-6
    warmup: int = 500
    grad_clip: float = 1.0
    weight_decay: float = 1e-4
    val_period: int = 200
    ckpt_period: int = 500
    seed: int = 0
    sigma: float = 5.0
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.warmup >= self.iterations:
            raise ValueError("warmup must be smaller than iterations")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


@dataclass
class TrainLogRecord:
    iteration: int
    loss: float
    lr: float
    grad_norm: float
    wall_clock: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    """Mutable bundle owned by one training executor."""

    model: Denoiser
    schedule: DiffusionSchedule
    config: TrainConfig
    value_range: ValueRange
    optimizer: torch.optim.Optimizer | None = None
    env_stats: EnvStats | None = None
    iteration: int = 0


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Linear warmup to the peak, then cosine decay to the floor."""
    if config.warmup > 0 and iteration < config.warmup:
        return config.lr_peak * (iteration + 1) / config.warmup
    span = max(config.iterations - config.warmup, 1)
    phase = (iteration - config.warmup) / span
    return config.lr_floor + (config.lr_peak - config.lr_floor) * 0.5 * (
        1.0 + math.cos(math.pi * min(phase, 1.0)))


def assemble_batch(records: list[DatasetRecord], state: TrainState,
                   ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    """Records -> (normalized maps, coordinate heatmaps, standardized env)."""
    maps, conds, envs = [], [], []
    cfg = state.config
    for rec in records:
        x0 = normalize(rec.map, state.value_range).values
        tx = rec.tx if rec.tx is not None else extract_tx(rec.map)
        heat = gaussian_heatmap(tx, rec.map.height, rec.map.width, cfg.sigma)
        maps.append(x0[None])
        conds.append(heat.values)
        if state.env_stats is not None and rec.env is not None:
            envs.append(state.env_stats.apply(rec.env))
    x0 = torch.from_numpy(np.stack(maps)).to(torch.float32)
    cond = torch.from_numpy(np.stack(conds)).to(torch.float32)
    env = None
    if envs:
        if len(envs) != len(records):
            raise ValueError("some records in the batch are missing env features")
        env = torch.from_numpy(np.stack(envs)).to(torch.float32)
    return x0, cond, env


def _noisy_input(schedule: DiffusionSchedule, x0: torch.Tensor,
                 t_draws: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    idx = t_draws.to(torch.long) - 1
    sqrt_ab = torch.from_numpy(np.sqrt(schedule.alpha_bar)).to(torch.float32)[idx]
    sqrt_1m = torch.from_numpy(np.sqrt(1.0 - schedule.alpha_bar)).to(torch.float32)[idx]
    return sqrt_ab.view(-1, 1, 1, 1) * x0 + sqrt_1m.view(-1, 1, 1, 1) * eps


def prediction_loss(model, schedule: DiffusionSchedule, x0: torch.Tensor,
                    cond: torch.Tensor, t_draws: torch.Tensor, eps: torch.Tensor,
                    env: torch.Tensor | None = None) -> torch.Tensor:
    """Mean squared error between predicted and injected noise."""
    x_t = _noisy_input(schedule, x0, t_draws, eps)
    eps_hat = model(torch.cat([x_t, cond], dim=1), t_draws, env)
    return ((eps_hat - eps) ** 2).mean()


def train_step(batch: list[DatasetRecord], t_draws: torch.Tensor,
               eps_draws: torch.Tensor, state: TrainState,
               ) -> tuple[TrainState, TrainLogRecord]:
    """One optimization step on an assembled mini-batch.

    ``t_draws`` (uniform over [1, T]) and ``eps_draws`` (standard normal) are
    injected by the caller so the step is a deterministic function of them.
    With ``state.optimizer`` set to None only the loss is computed, which is
    how oracle stubs are scored.
    """
    t0 = time.perf_counter()
    x0, cond, env = assemble_batch(batch, state)
    if bool((t_draws < 1).any()) or bool((t_draws > state.schedule.T).any()):
        raise ValueError(f"t_draws outside [1, {state.schedule.T}]")

    lr = lr_at(state.iteration, state.config)
    grad_norm = 0.0
    if state.optimizer is None:
        with torch.no_grad():
            loss = prediction_loss(state.model, state.schedule, x0, cond,
                                   t_draws, eps_draws, env)
    else:
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        state.optimizer.zero_grad()
        loss = prediction_loss(state.model, state.schedule, x0, cond,
                               t_draws, eps_draws, env)
        if not math.isfinite(loss.item()):
            raise NonFiniteLoss(
                f"non-finite loss at iteration {state.iteration}",
                batch_ids=[rec.id for rec in batch])
        loss.backward()
        grad_norm = float(torch.nn.utils.clip_grad_norm_(
            state.model.parameters(), state.config.grad_clip))
        state.optimizer.step()

    loss_value = float(loss.item())
    if not math.isfinite(loss_value):
        raise NonFiniteLoss(
            f"non-finite loss at iteration {state.iteration}",
            batch_ids=[rec.id for rec in batch])
    record = TrainLogRecord(iteration=state.iteration, loss=loss_value, lr=lr,
                            grad_norm=grad_norm,
                            wall_clock=time.perf_counter() - t0)
    state.iteration += 1
    return state, record


def _iteration_draws(seed: int, iteration: int, batch_size: int, n_train: int,
                     T: int, shape: tuple[int, ...],
                     ) -> tuple[np.ndarray, torch.Tensor, torch.Tensor]:
    """Counter-based draws: a pure function of (seed, iteration)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_ITER_STREAM, iteration))
    words = ss.generate_state(2, np.uint64)
    rng = np.random.default_rng(int(words[0]))
    indices = rng.integers(0, n_train, size=batch_size)
    t_draws = torch.from_numpy(rng.integers(1, T + 1, size=batch_size))
    gen = torch.Generator().manual_seed(int(words[1]) % (2 ** 63))
    eps = torch.randn((batch_size, *shape), generator=gen, dtype=torch.float32)
    return indices, t_draws, eps


def _validation_draws(seed: int, n_val: int, T: int, shape: tuple[int, ...],
                      ) -> tuple[torch.Tensor, torch.Tensor]:
    """Frozen (t, eps) pairs, one per held-out record, reused at every pass."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_VAL_STREAM,))
    words = ss.generate_state(2, np.uint64)
    rng = np.random.default_rng(int(words[0]))
    t_draws = torch.from_numpy(rng.integers(1, T + 1, size=n_val))
    gen = torch.Generator().manual_seed(int(words[1]) % (2 ** 63))
    eps = torch.randn((n_val, *shape), generator=gen, dtype=torch.float32)
    return t_draws, eps


def validation_loss(val_records: list[DatasetRecord], state: TrainState) -> float:
    """Eq.-style prediction loss on the held-out set with frozen draws."""
    n = len(val_records)
    shape = (1, val_records[0].map.height, val_records[0].map.width)
    t_all, eps_all = _validation_draws(state.config.seed, n, state.schedule.T, shape)
    total = 0.0
    bs = state.config.batch_size
    state.model.eval()
    with torch.no_grad():
        for lo in range(0, n, bs):
            hi = min(lo + bs, n)
            x0, cond, env = assemble_batch(val_records[lo:hi], state)
            loss = prediction_loss(state.model, state.schedule, x0, cond,
                                   t_all[lo:hi], eps_all[lo:hi], env)
            total += float(loss.item()) * (hi - lo)
    state.model.train()
    return total / n


def run_training(data_root: str | Path, config: TrainConfig,
                 out_dir: str | Path,
                 denoiser_config: DenoiserConfig | None = None,
                 schedule: DiffusionSchedule | None = None,
                 resume_from: str | Path | None = None,
                 include_predicted: bool = False,
                 stop_after: int | None = None,
                 ) -> tuple[Path, Path]:
    """Train on a dataset root; returns (best checkpoint dir, log path).

    Writes ``<out_dir>/best`` (lowest validation loss), ``<out_dir>/last``
    (parameters + optimizer state for exact resume) and
    ``<out_dir>/train_log.jsonl``. ``stop_after`` interrupts the run early
    without shortening the schedule horizon, so it can be resumed exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(data_root)
    records = load_dataset(data_root, include_predicted=include_predicted)
    train_records, val_records = split_records(records, config.train_fraction,
                                               config.seed)
    if not train_records or not val_records:
        raise ValueError("split produced an empty train or validation set")

    if denoiser_config is None:
        denoiser_config = DenoiserConfig(height=manifest.H, width=manifest.W,
                                         env_dim=manifest.P)
    if schedule is None:
        schedule = build_schedule()

    env_stats = None
    if manifest.P > 0:
        env_stats = zscore_env([rec.env for rec in train_records])[1]

    torch.manual_seed(config.seed)
    model = Denoiser(denoiser_config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr_peak,
                                  weight_decay=config.weight_decay)
    state = TrainState(model=model, schedule=schedule, config=config,
                       value_range=manifest.value_range, optimizer=optimizer,
                       env_stats=env_stats)

    best_val = math.inf
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        model.load_state_dict(ckpt.model.state_dict())
        model.train()
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        state.iteration = ckpt.manifest.iteration
        best_manifest = out_dir / "best" / "manifest.json"
        if best_manifest.is_file():
            prev = json.loads(best_manifest.read_text()).get("val_loss")
            if prev is not None:
                best_val = float(prev)

    def make_manifest(val_loss: float | None) -> CheckpointManifest:
        return CheckpointManifest(
            config=denoiser_config, schedule=schedule.to_dict(),
            sigma=config.sigma, value_min=manifest.value_min,
            value_max=manifest.value_max, iteration=state.iteration,
            seed=config.seed, val_loss=val_loss, env_stats=env_stats)

    log_path = out_dir / "train_log.jsonl"
    mode = "a" if resume_from is not None else "w"
    shape = (1, manifest.H, manifest.W)
    stop_at = config.iterations if stop_after is None else min(stop_after,
                                                               config.iterations)
    last_val: float | None = None
    with open(log_path, mode) as log:
        while state.iteration < stop_at:
            i = state.iteration
            indices, t_draws, eps = _iteration_draws(
                config.seed, i, config.batch_size, len(train_records),
                schedule.T, shape)
            batch = [train_records[j] for j in indices]
            state, rec = train_step(batch, t_draws, eps, state)
            log.write(json.dumps(rec.to_dict()) + "\n")

            done = state.iteration >= stop_at
            if done or state.iteration % config.val_period == 0:
                last_val = validation_loss(val_records, state)
                if last_val < best_val:
                    best_val = last_val
                    save_checkpoint(out_dir / "best", model, make_manifest(last_val))
            if done or state.iteration % config.ckpt_period == 0:
                save_checkpoint(out_dir / "last", model, make_manifest(last_val),
                                optimizer_state=optimizer.state_dict())
    return out_dir / "best", log_path


def load_training_log(log_path: str | Path) -> list[TrainLogRecord]:
    out = []
    for line in Path(log_path).read_text().splitlines():
        if line.strip():
            out.append(TrainLogRecord(**json.loads(line)))
    return out
