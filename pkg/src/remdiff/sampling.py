"""Inference: coordinate query -> heatmap -> seeded reverse diffusion -> REM,
plus the predicted-REM store.

Each requested sample gets its own generator derived from (request seed,
sample index), so a batch of draws is reproducible and the i-th sample does
not depend on how many siblings were requested alongside it. The coordinate
heatmap conditions the denoiser at every reverse step.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoints import DenoiserCheckpoint
from .datasets import DatasetManifest, read_manifest
from .errors import DiskFull, DuplicateId, IncompatibleCheckpoint, RemdiffError
from .grids import DatasetRecord, RemGrid, TxCoordinate, clamp_to_raw, gaussian_heatmap
from .schedule import ddim_step, ddim_time_grid, reverse_step

DDPM_FULL = "ddpm_full"
DDIM = "ddim"


@dataclass(frozen=True)
class SampleRequest:
    tx: TxCoordinate
    env: np.ndarray | None = None
    n_samples: int = 1
    sampler_kind: str = DDPM_FULL
    substeps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.sampler_kind not in (DDPM_FULL, DDIM):
            raise ValueError(f"unknown sampler kind {self.sampler_kind!r}")


@dataclass
class PredictedRecord(DatasetRecord):
    checkpoint_id: str = ""
    sampler_kind: str = DDPM_FULL
    substeps: int = 0
    seed: int = 0
    sample_index: int = 0
    created_at: str = ""
    requested_x: float = 0.0
    requested_y: float = 0.0

    def provenance(self) -> dict:
        return {"id": self.id, "checkpoint_id": self.checkpoint_id,
                "sampler_kind": self.sampler_kind, "substeps": self.substeps,
                "seed": self.seed, "sample_index": self.sample_index,
                "created_at": self.created_at,
                "requested_tx": [self.requested_x, self.requested_y]}


def _sample_generator(seed: int, index: int) -> torch.Generator:
    word = np.random.SeedSequence(entropy=seed, spawn_key=(index,)).generate_state(
        1, np.uint64)[0]
    return torch.Generator().manual_seed(int(word) % (2 ** 63))


def _batched_randn(generators: list[torch.Generator], shape: tuple[int, ...],
                   ) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=g, dtype=torch.float32)
                        for g in generators])


def reverse_trajectory(checkpoint: DenoiserCheckpoint, cond: torch.Tensor,
                       x_init: torch.Tensor, sampler_kind: str, substeps: int,
                       generators: list[torch.Generator] | None = None,
                       env: torch.Tensor | None = None,
                       force_zero_noise: bool = False) -> torch.Tensor:
    """Run the reverse process from x_T down to the clean state.

    DDPM walks every step t = T..1 with fresh noise (suppressed at the final
    step); DDIM jumps along a uniform substep grid deterministically.
    ``force_zero_noise`` turns the DDPM walk into its deterministic variant.
    """
    schedule = checkpoint.build_schedule()
    model = checkpoint.model
    model.eval()
    x = x_init
    b = x.shape[0]
    per_pixel = x.shape[1:]
    with torch.no_grad():
        if sampler_kind == DDPM_FULL:
            for t in range(schedule.T, 0, -1):
                t_batch = torch.full((b,), t, dtype=torch.long)
                eps_hat = model(torch.cat([x, cond], dim=1), t_batch, env)
                if t > 1 and not force_zero_noise:
                    z = _batched_randn(generators, per_pixel)
                else:
                    z = torch.zeros_like(x)
                x = reverse_step(schedule, x, eps_hat, t, z)
        else:
            grid = ddim_time_grid(schedule.T, substeps)
            for t, t_prev in zip(grid[:-1], grid[1:]):
                t_batch = torch.full((b,), t, dtype=torch.long)
                eps_hat = model(torch.cat([x, cond], dim=1), t_batch, env)
                x = ddim_step(schedule, x, eps_hat, t, t_prev)
    return x


def sample(checkpoint: DenoiserCheckpoint, req: SampleRequest,
           ) -> list[PredictedRecord]:
    """Generate ``req.n_samples`` REMs at one coordinate query."""
    manifest = checkpoint.manifest
    cfg = manifest.config
    if not (0 <= req.tx.x <= cfg.width - 1 and 0 <= req.tx.y <= cfg.height - 1):
        raise IncompatibleCheckpoint(
            f"query tx ({req.tx.x}, {req.tx.y}) outside checkpoint grid "
            f"{cfg.height}x{cfg.width}")
    if req.sampler_kind == DDIM and not (1 <= req.substeps <= int(
            manifest.schedule["T"])):
        raise ValueError(f"substeps {req.substeps} outside [1, {manifest.schedule['T']}]")

    env = None
    if cfg.env_dim > 0:
        if req.env is None:
            raise IncompatibleCheckpoint(
                f"checkpoint expects env features of length {cfg.env_dim}")
        if manifest.env_stats is None:
            raise IncompatibleCheckpoint("checkpoint lacks env statistics")
        std = manifest.env_stats.apply(req.env)
        env = torch.from_numpy(np.tile(std, (req.n_samples, 1))).to(torch.float32)
    elif req.env is not None:
        raise IncompatibleCheckpoint("checkpoint has no env pathway")

    heat = gaussian_heatmap(req.tx, cfg.height, cfg.width, manifest.sigma)
    cond = torch.from_numpy(heat.values).to(torch.float32)
    cond = cond.unsqueeze(0).expand(req.n_samples, -1, -1, -1)

    generators = [_sample_generator(req.seed, i) for i in range(req.n_samples)]
    x = _batched_randn(generators, (1, cfg.height, cfg.width))
    x = reverse_trajectory(checkpoint, cond, x, req.sampler_kind, req.substeps,
                           generators, env)

    ckpt_id = "checkpoint"
    if checkpoint.path is not None:
        ckpt_id = f"{checkpoint.path.name}@{manifest.iteration}"
    created = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    records = []
    for i in range(req.n_samples):
        grid = clamp_to_raw(x[i, 0].numpy(), manifest.value_range)
        records.append(PredictedRecord(
            id=f"pred-s{req.seed}-{i:04d}", map=grid, tx=req.tx,
            origin="predicted", checkpoint_id=ckpt_id,
            sampler_kind=req.sampler_kind,
            substeps=req.substeps if req.sampler_kind == DDIM else 0,
            seed=req.seed, sample_index=i, created_at=created,
            requested_x=req.tx.x, requested_y=req.tx.y))
    return records


def store_predicted(records: list[PredictedRecord], root: str | Path) -> Path:
    """Append predicted records to a store, never touching original data.

    The store shares the dataset layout plus a provenance.jsonl sidecar. A
    root that already holds a dataset without provenance is an original
    dataset and is refused.
    """
    root = Path(root)
    if not records:
        raise ValueError("no records to store")
    meta_path = root / "metadata.jsonl"
    prov_path = root / "provenance.jsonl"
    if meta_path.exists() and not prov_path.exists():
        raise RemdiffError(
            f"{root} looks like an original dataset root; refusing to mix "
            "predicted records into it")

    h, w = records[0].map.height, records[0].map.width
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        manifest = read_manifest(root)
        if (manifest.H, manifest.W) != (h, w):
            raise IncompatibleCheckpoint(
                f"store is {manifest.H}x{manifest.W}, records are {h}x{w}")
    else:
        manifest = DatasetManifest(H=h, W=w, P=0)

    existing: set[str] = set()
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if line.strip():
                existing.add(json.loads(line)["id"])
    for rec in records:
        if rec.id in existing:
            raise DuplicateId(f"record id {rec.id!r} already stored under {root}")
        existing.add(rec.id)

    maps_dir = root / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    try:
        from PIL import Image

        meta_lines, prov_lines = [], []
        for rec in records:
            arr = np.clip(np.round(rec.map.values), 0, 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(maps_dir / f"{rec.id}.png")
            meta_lines.append(json.dumps(
                {"id": rec.id, "tx_x": rec.tx.x, "tx_y": rec.tx.y}))
            prov_lines.append(json.dumps(rec.provenance()))
        with open(meta_path, "a") as f:
            f.write("\n".join(meta_lines) + "\n")
        with open(prov_path, "a") as f:
            f.write("\n".join(prov_lines) + "\n")
        if not manifest_path.exists():
            manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    except OSError as exc:
        raise DiskFull(f"write to {root} failed: {exc}") from exc
    return root


def load_predicted(root: str | Path) -> list[PredictedRecord]:
    """Load a predicted store with provenance re-attached."""
    from .datasets import load_dataset

    root = Path(root)
    prov_path = root / "provenance.jsonl"
    prov: dict[str, dict] = {}
    if prov_path.is_file():
        for line in prov_path.read_text().splitlines():
            if line.strip():
                row = json.loads(line)
                prov[row["id"]] = row
    out = []
    for rec in load_dataset(root):
        p = prov.get(rec.id, {})
        out.append(PredictedRecord(
            id=rec.id, map=rec.map, tx=rec.tx, env=rec.env, origin="predicted",
            checkpoint_id=p.get("checkpoint_id", ""),
            sampler_kind=p.get("sampler_kind", DDPM_FULL),
            substeps=int(p.get("substeps", 0)), seed=int(p.get("seed", 0)),
            sample_index=int(p.get("sample_index", 0)),
            created_at=p.get("created_at", ""),
            requested_x=float(p.get("requested_tx", [rec.tx.x, rec.tx.y])[0]),
            requested_y=float(p.get("requested_tx", [rec.tx.x, rec.tx.y])[1])))
    return out
