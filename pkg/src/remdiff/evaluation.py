"""Measurement protocol: per-slice RMSE, pixel-intensity CDFs, ensemble
mean/std envelopes over repeated samples, and transmitter-localization error.

``evaluate_checkpoint`` sweeps the held-out records, scores one seeded sample
per record, and emits a machine-readable report plus plot-ready CSV series
(loss curve, CDF curves, RMSE-vs-position traces). Sample standard deviations
use the n-1 divisor throughout; the report header states the convention.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoints import DenoiserCheckpoint
from .datasets import load_dataset, read_manifest, split_records
from .errors import FewerThanTwoSamples, IncompatibleCheckpoint, IndexOutOfRange
from .grids import DatasetRecord, RemGrid, TxCoordinate, extract_tx
from .sampling import DDIM, SampleRequest, sample
from .training import load_training_log

VERTICAL_X = "vertical_x"
HORIZONTAL_Y = "horizontal_y"

CDF_GRID_POINTS = 256


@dataclass(frozen=True)
class SliceSpec:
    axis: str
    index: int

    def __post_init__(self):
        if self.axis not in (VERTICAL_X, HORIZONTAL_Y):
            raise ValueError(f"unknown slice axis {self.axis!r}")

    @property
    def label(self) -> str:
        return ("x" if self.axis == VERTICAL_X else "y") + f"={self.index}"


@dataclass
class CdfCurve:
    """Empirical CDF of one map's pixel intensities."""

    values: np.ndarray     # sorted ascending
    fractions: np.ndarray  # 1/n .. 1, non-decreasing

    @property
    def n(self) -> int:
        return self.values.size

    def at(self, points: np.ndarray, side: str = "right") -> np.ndarray:
        return np.searchsorted(self.values, points, side=side) / self.n


def slice_rmse(gen: RemGrid, orig: RemGrid, spec: SliceSpec) -> float:
    """Root mean square error along one fixed column or row.

    vertical_x at x0 averages the squared error over rows:
    sqrt((1/H) sum_y (gen[y, x0] - orig[y, x0])^2); horizontal_y mirrors it.
    """
    if gen.values.shape != orig.values.shape:
        raise ValueError(f"shape mismatch {gen.values.shape} vs {orig.values.shape}")
    h, w = gen.values.shape
    if spec.axis == VERTICAL_X:
        if not (0 <= spec.index < w):
            raise IndexOutOfRange(f"x={spec.index} outside [0, {w - 1}]")
        diff = gen.values[:, spec.index] - orig.values[:, spec.index]
    else:
        if not (0 <= spec.index < h):
            raise IndexOutOfRange(f"y={spec.index} outside [0, {h - 1}]")
        diff = gen.values[spec.index, :] - orig.values[spec.index, :]
    return float(np.sqrt(np.mean(diff ** 2)))


def intensity_cdf(map: RemGrid) -> CdfCurve:
    """Empirical CDF over all H*W pixel intensities."""
    values = np.sort(map.values.reshape(-1))
    n = values.size
    return CdfCurve(values=values, fractions=np.arange(1, n + 1) / n)


def cdf_distance(a: CdfCurve, b: CdfCurve) -> float:
    """Kolmogorov-Smirnov sup distance between two empirical CDFs."""
    support = np.union1d(a.values, b.values)
    d_right = np.abs(a.at(support, "right") - b.at(support, "right")).max()
    d_left = np.abs(a.at(support, "left") - b.at(support, "left")).max()
    return float(max(d_right, d_left))


@dataclass
class EnsembleStats:
    mean_map: np.ndarray
    std_map: np.ndarray          # n-1 divisor
    grid: np.ndarray             # shared intensity grid
    cdf_mean: np.ndarray
    cdf_std: np.ndarray          # n-1 divisor

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "cdf_mean": self.cdf_mean.tolist(),
                "cdf_std": self.cdf_std.tolist()}


def ensemble_stats(samples: list[RemGrid],
                   grid: np.ndarray | None = None) -> EnsembleStats:
    """Pointwise moments and the CDF mean +- std envelope over >= 2 samples."""
    if len(samples) < 2:
        raise FewerThanTwoSamples(f"need >= 2 samples, got {len(samples)}")
    shape = samples[0].values.shape
    for s in samples[1:]:
        if s.values.shape != shape:
            raise ValueError("ensemble samples must share dimensions")
    stack = np.stack([s.values for s in samples])
    if grid is None:
        grid = np.linspace(0.0, 255.0, CDF_GRID_POINTS)
    cdfs = np.stack([intensity_cdf(s).at(grid) for s in samples])
    return EnsembleStats(
        mean_map=stack.mean(axis=0),
        std_map=stack.std(axis=0, ddof=1),
        grid=grid,
        cdf_mean=cdfs.mean(axis=0),
        cdf_std=cdfs.std(axis=0, ddof=1))


SampleFn = Callable[[DatasetRecord, int], RemGrid]


@dataclass(frozen=True)
class EvalProtocol:
    """Configuration of one evaluation sweep."""

    seed: int = 0
    train_fraction: float = 0.9
    sampler_kind: str = DDIM
    substeps: int = 50
    n_samples: int = 1            # realizations averaged per record (1 = paper style)
    slices: tuple[SliceSpec, ...] | None = None   # None -> x/y=100 analogs
    stability_samples: int = 0    # >= 2 enables the repeated-sample study
    stability_query: tuple[float, float] | None = None  # None -> (108,178) analog

    def resolved_slices(self, height: int, width: int) -> tuple[SliceSpec, ...]:
        if self.slices is not None:
            return self.slices
        return (SliceSpec(VERTICAL_X, round(100 * width / 256)),
                SliceSpec(HORIZONTAL_Y, round(100 * height / 256)))

    def resolved_query(self, height: int, width: int) -> TxCoordinate:
        if self.stability_query is not None:
            return TxCoordinate(*self.stability_query)
        return TxCoordinate(round(108 * width / 256), round(178 * height / 256))

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "train_fraction": self.train_fraction,
             "sampler_kind": self.sampler_kind, "substeps": self.substeps,
             "n_samples": self.n_samples, "stability_samples": self.stability_samples,
             "stability_query": list(self.stability_query)
             if self.stability_query else None}
        d["slices"] = ([[s.axis, s.index] for s in self.slices]
                       if self.slices else None)
        return d


def _default_sample_fn(checkpoint: DenoiserCheckpoint,
                       protocol: EvalProtocol) -> SampleFn:
    def fn(record: DatasetRecord, record_seed: int) -> RemGrid:
        req = SampleRequest(tx=record.tx, env=record.env, n_samples=1,
                            sampler_kind=protocol.sampler_kind,
                            substeps=protocol.substeps, seed=record_seed)
        return sample(checkpoint, req)[0].map

    return fn


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def evaluate_checkpoint(checkpoint: DenoiserCheckpoint, data_root: str | Path,
                        protocol: EvalProtocol, out_dir: str | Path,
                        sample_fn: SampleFn | None = None,
                        train_log: str | Path | None = None,
                        ) -> tuple[dict, Path]:
    """Score held-out records against seeded samples; write report + CSVs.

    Per record: slice RMSEs at the protocol slices, KS distance between the
    sample's and the original's intensity CDFs, and the Euclidean distance
    between the requested tx and the sample's argmax. Sampler failures are
    collected per record without aborting the sweep.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(data_root)
    cfg = checkpoint.manifest.config
    if (manifest.H, manifest.W) != (cfg.height, cfg.width):
        raise IncompatibleCheckpoint(
            f"dataset is {manifest.H}x{manifest.W}, checkpoint expects "
            f"{cfg.height}x{cfg.width}")
    records = load_dataset(data_root)
    _, held_out = split_records(records, protocol.train_fraction, protocol.seed)

    slices = protocol.resolved_slices(manifest.H, manifest.W)
    if sample_fn is None:
        sample_fn = _default_sample_fn(checkpoint, protocol)

    rows, failures = [], []
    for idx, rec in enumerate(held_out):
        try:
            per_sample = []
            for k in range(protocol.n_samples):
                record_seed = int(np.random.SeedSequence(
                    entropy=protocol.seed, spawn_key=(idx, k)).generate_state(1)[0])
                per_sample.append(sample_fn(rec, record_seed))
            gen = per_sample[0] if protocol.n_samples == 1 else RemGrid(
                np.mean([g.values for g in per_sample], axis=0), units_mode="raw")
            row = {"id": rec.id, "tx": [rec.tx.x, rec.tx.y]}
            for spec in slices:
                row[f"slice_rmse_{spec.label}"] = slice_rmse(gen, rec.map, spec)
            row["cdf_distance"] = cdf_distance(intensity_cdf(gen),
                                               intensity_cdf(rec.map))
            row["localization_error"] = extract_tx(gen).distance_to(rec.tx)
            rows.append(row)
        except Exception as exc:  # keep sweeping; report partial results
            failures.append({"id": rec.id, "error": f"{type(exc).__name__}: {exc}"})

    metric_keys = [f"slice_rmse_{s.label}" for s in slices]
    metric_keys += ["cdf_distance", "localization_error"]
    aggregates = {}
    for key in metric_keys:
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        if vals.size:
            aggregates[key] = {
                "mean": float(vals.mean()),
                "median": float(np.median(vals)),
                "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            }

    report = {
        "conventions": {"std_divisor": "n-1 (sample standard deviation)"},
        "protocol": protocol.to_dict(),
        "dataset": {"root": str(data_root), "H": manifest.H, "W": manifest.W,
                    "n_held_out": len(held_out)},
        "checkpoint": {"iteration": checkpoint.manifest.iteration,
                       "seed": checkpoint.manifest.seed,
                       "val_loss": checkpoint.manifest.val_loss},
        "records": rows,
        "failures": failures,
        "aggregates": aggregates,
    }

    if protocol.stability_samples >= 2 and held_out:
        report["stability"] = _stability_study(
            checkpoint, protocol, held_out, slices, manifest.H, manifest.W,
            out_dir, sample_fn)

    if train_log is not None:
        entries = load_training_log(train_log)
        _write_csv(out_dir / "loss_curve.csv", ["iteration", "loss", "lr"],
                   [[e.iteration, e.loss, e.lr] for e in entries])
        report["loss_curve_csv"] = "loss_curve.csv"

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report, report_path


def _stability_study(checkpoint: DenoiserCheckpoint, protocol: EvalProtocol,
                     held_out: list[DatasetRecord], slices: tuple[SliceSpec, ...],
                     height: int, width: int, out_dir: Path,
                     sample_fn: SampleFn) -> dict:
    """Repeated samples at one query coordinate: envelopes and slice traces."""
    query = protocol.resolved_query(height, width)
    ref = min(held_out, key=lambda r: r.tx.distance_to(query))
    samples = []
    for k in range(protocol.stability_samples):
        seed_k = int(np.random.SeedSequence(
            entropy=protocol.seed, spawn_key=(10_000, k)).generate_state(1)[0])
        samples.append(sample_fn(ref, seed_k))
    stats = ensemble_stats(samples)
    mean_grid = RemGrid(np.clip(stats.mean_map, 0, 255), units_mode="raw")
    orig_cdf = intensity_cdf(ref.map).at(stats.grid)

    block = {
        "query": [query.x, query.y],
        "record_id": ref.id,
        "record_tx": [ref.tx.x, ref.tx.y],
        "n_samples": len(samples),
        "cdf_envelope": stats.to_dict(),
        "cdf_distance_mean_map": cdf_distance(intensity_cdf(mean_grid),
                                              intensity_cdf(ref.map)),
        "slice_rmse": {},
    }
    for spec in slices:
        per = [slice_rmse(g, ref.map, spec) for g in samples]
        block["slice_rmse"][spec.label] = {
            "mean": float(np.mean(per)),
            "std": float(np.std(per, ddof=1)),
            "of_mean_map": slice_rmse(mean_grid, ref.map, spec),
        }

    _write_csv(out_dir / "cdf_curves.csv",
               ["intensity", "original", "generated_mean", "generated_std"],
               [[g, o, m, s] for g, o, m, s in zip(
                   stats.grid, orig_cdf, stats.cdf_mean, stats.cdf_std)])

    rmse_rows = []
    for x in range(width):
        rmse_rows.append(["vertical_x", x,
                          slice_rmse(mean_grid, ref.map, SliceSpec(VERTICAL_X, x))])
    for y in range(height):
        rmse_rows.append(["horizontal_y", y,
                          slice_rmse(mean_grid, ref.map, SliceSpec(HORIZONTAL_Y, y))])
    _write_csv(out_dir / "rmse_vs_position.csv", ["axis", "index", "rmse"], rmse_rows)

    for spec in slices:
        if spec.axis == VERTICAL_X:
            orig_line = ref.map.values[:, spec.index]
            gen_line = stats.mean_map[:, spec.index]
            first_line = samples[0].values[:, spec.index]
        else:
            orig_line = ref.map.values[spec.index, :]
            gen_line = stats.mean_map[spec.index, :]
            first_line = samples[0].values[spec.index, :]
        _write_csv(out_dir / f"slice_{spec.label.replace('=', '')}.csv",
                   ["position", "original", "generated_first", "generated_mean"],
                   [[i, o, f, g] for i, (o, f, g) in enumerate(
                       zip(orig_line, first_line, gen_line))])
    return block
