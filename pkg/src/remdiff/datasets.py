"""On-disk dataset store shared by generation, training, and evaluation.

Layout of a dataset root:

    <root>/manifest.json    {"H": int, "W": int, "value_min": 0, "value_max": 255,
                             "P": int}
    <root>/metadata.jsonl   one object per line:
                            {"id": str, "tx_x": number, "tx_y": number,
                             "env": [numbers]}   (env optional)
    <root>/maps/<id>.png    8-bit single-channel grayscale, exactly H x W

A predicted-sample store uses the same layout plus a provenance.jsonl sidecar
(see :mod:`remdiff.sampling`) and lives under ``<root>/predicted``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptImage, DimensionMismatch, MissingMetadata
from .grids import DatasetRecord, RemGrid, TxCoordinate, ValueRange


@dataclass(frozen=True)
class DatasetManifest:
    H: int
    W: int
    value_min: float = 0.0
    value_max: float = 255.0
    P: int = 0

    @property
    def value_range(self) -> ValueRange:
        return ValueRange(self.value_min, self.value_max)

    def to_dict(self) -> dict:
        return {"H": self.H, "W": self.W, "value_min": self.value_min,
                "value_max": self.value_max, "P": self.P}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(H=int(d["H"]), W=int(d["W"]),
                   value_min=float(d.get("value_min", 0.0)),
                   value_max=float(d.get("value_max", 255.0)),
                   P=int(d.get("P", 0)))


def read_manifest(root: str | Path) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise MissingMetadata(f"no manifest.json under {root}")
    return DatasetManifest.from_dict(json.loads(path.read_text()))


def _quantize_to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(values), 0, 255).astype(np.uint8)


def save_dataset(records: list[DatasetRecord], root: str | Path,
                 manifest: DatasetManifest | None = None) -> Path:
    """Write records in the standard layout. Maps are quantized to 8-bit."""
    root = Path(root)
    if not records:
        raise ValueError("no records to save")
    if manifest is None:
        first = records[0]
        p = 0 if first.env is None else int(first.env.size)
        manifest = DatasetManifest(H=first.map.height, W=first.map.width, P=p)
    maps_dir = root / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in sorted(records, key=lambda r: r.id):
        if rec.map.values.shape != (manifest.H, manifest.W):
            raise DimensionMismatch(
                f"record {rec.id}: map {rec.map.values.shape} != manifest "
                f"({manifest.H}, {manifest.W})")
        Image.fromarray(_quantize_to_u8(rec.map.values), mode="L").save(
            maps_dir / f"{rec.id}.png")
        row = {"id": rec.id, "tx_x": rec.tx.x, "tx_y": rec.tx.y}
        if rec.env is not None:
            row["env"] = [float(v) for v in rec.env]
        lines.append(json.dumps(row))
    (root / "metadata.jsonl").write_text("\n".join(lines) + "\n")
    (root / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return root


def _load_one(maps_dir: Path, row: dict, manifest: DatasetManifest,
              origin: str) -> DatasetRecord:
    rec_id = row["id"]
    img_path = maps_dir / f"{rec_id}.png"
    if not img_path.is_file():
        raise MissingMetadata(f"metadata references missing image for id {rec_id!r}")
    try:
        with Image.open(img_path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptImage(f"cannot decode {img_path}: {exc}") from exc
    if arr.shape != (manifest.H, manifest.W):
        raise DimensionMismatch(
            f"record {rec_id}: image {arr.shape} != manifest "
            f"({manifest.H}, {manifest.W})")
    env = row.get("env")
    if env is not None:
        env = np.asarray(env, dtype=np.float64)
        if manifest.P and env.size != manifest.P:
            raise DimensionMismatch(
                f"record {rec_id}: env length {env.size} != manifest P {manifest.P}")
    return DatasetRecord(
        id=rec_id,
        map=RemGrid(arr, units_mode="raw"),
        tx=TxCoordinate(float(row["tx_x"]), float(row["tx_y"])),
        env=env,
        origin=origin,
    )


def load_dataset(root: str | Path, include_predicted: bool = False) -> list[DatasetRecord]:
    """Load all records, sorted by id for determinism.

    With ``include_predicted`` the records stored under ``<root>/predicted``
    are merged in, each tagged with ``origin="predicted"``. By default the
    predicted store is excluded from training data.
    """
    root = Path(root)
    manifest = read_manifest(root)
    meta_path = root / "metadata.jsonl"
    if not meta_path.is_file():
        raise MissingMetadata(f"no metadata.jsonl under {root}")
    records = []
    for line in meta_path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        records.append(_load_one(root / "maps", json.loads(line), manifest, "original"))
    if include_predicted and (root / "predicted" / "metadata.jsonl").is_file():
        pred_root = root / "predicted"
        pred_manifest = read_manifest(pred_root)
        for line in (pred_root / "metadata.jsonl").read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            records.append(
                _load_one(pred_root / "maps", json.loads(line), pred_manifest,
                          "predicted"))
    records.sort(key=lambda r: r.id)
    return records


def split_records(records: list[DatasetRecord], train_fraction: float,
                  seed: int) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Deterministic seeded-shuffle split into (train, held-out)."""
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(records))
    n_train = int(round(len(records) * train_fraction))
    train = [records[i] for i in order[:n_train]]
    held = [records[i] for i in order[n_train:]]
    return train, held
