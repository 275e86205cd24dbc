"""Synthetic urban REM generator: log-distance path loss plus building shadowing.

Produces desk-scale datasets with the same on-disk layout as real data so the
whole train/sample/evaluate pipeline can be exercised without the external
corpus. One scene = one fixed building layout; each record places the
transmitter somewhere in free space and renders the resulting intensity field.

Propagation model: a single straight segment from the transmitter to each
pixel. Intensity = clamp(P0 - 10*n*log10(max(d, 1)) - loss * (#buildings the
segment crosses), floor, 255). Building interiors render as 0 (black).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .datasets import DatasetManifest, save_dataset
from .errors import TxInsideBuilding
from .grids import DatasetRecord, RemGrid, TxCoordinate


@dataclass(frozen=True)
class Building:
    """Axis-aligned rectangle of pixels, inclusive index ranges."""

    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    n_buildings: int = 6
    building_min_side: int = 4
    building_max_side: int = 12
    pathloss_exponent: float = 2.2
    reference_power: float = 255.0  # grayscale units at d0 = 1 px
    penetration_loss: float = 60.0  # grayscale units per crossed building
    noise_floor: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.reference_power > 255.0:
            raise ValueError("reference_power must be <= 255")
        if self.noise_floor < 0.0:
            raise ValueError("noise_floor must be >= 0")
        if self.building_max_side >= min(self.height, self.width):
            raise ValueError("buildings must fit inside the grid")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)


def scene_buildings(spec: SceneSpec) -> list[Building]:
    """The fixed building layout for a scene, derived from the spec seed."""
    rng = np.random.default_rng(spec.seed)
    buildings = []
    for _ in range(spec.n_buildings):
        w = int(rng.integers(spec.building_min_side, spec.building_max_side + 1))
        h = int(rng.integers(spec.building_min_side, spec.building_max_side + 1))
        x0 = int(rng.integers(0, spec.width - w))
        y0 = int(rng.integers(0, spec.height - h))
        buildings.append(Building(x0=x0, y0=y0, x1=x0 + w - 1, y1=y0 + h - 1))
    return buildings


def building_mask(spec: SceneSpec, buildings: list[Building] | None = None) -> np.ndarray:
    """Boolean H x W mask of building-interior pixels."""
    if buildings is None:
        buildings = scene_buildings(spec)
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    for b in buildings:
        mask[b.y0:b.y1 + 1, b.x0:b.x1 + 1] = True
    return mask


def free_space_mask(spec: SceneSpec, buildings: list[Building] | None = None) -> np.ndarray:
    """Pixels where a transmitter may be placed.

    Excludes building interiors, a 1-px halo around them, and the map border,
    so the transmitter's four unit-distance neighbours always exist and are
    never shadowed. That keeps the argmax-tie set symmetric around the
    transmitter and makes coordinate recovery from the rendered map exact,
    even after 8-bit quantization.
    """
    blocked = building_mask(spec, buildings)
    padded = np.pad(blocked, 1, constant_values=False)
    halo = np.zeros_like(blocked)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            halo |= padded[1 + dy:1 + dy + spec.height, 1 + dx:1 + dx + spec.width]
    free = ~halo
    free[0, :] = free[-1, :] = False
    free[:, 0] = free[:, -1] = False
    return free


def segment_crossings(tx: TxCoordinate, buildings: list[Building],
                      height: int, width: int) -> np.ndarray:
    """Count, per pixel, how many building rectangles the tx->pixel segment crosses.

    Liang-Barsky slab clipping of the segment (pixel centres as geometry)
    against each rectangle, vectorized over the pixel grid.
    """
    xs = np.arange(width, dtype=np.float64)[None, :] * np.ones((height, 1))
    ys = np.arange(height, dtype=np.float64)[:, None] * np.ones((1, width))
    dx = xs - tx.x
    dy = ys - tx.y
    crossings = np.zeros((height, width), dtype=np.int64)
    eps = 1e-12
    for b in buildings:
        with np.errstate(divide="ignore", invalid="ignore"):
            tx0 = np.where(np.abs(dx) > eps, (b.x0 - tx.x) / dx, -np.inf)
            tx1 = np.where(np.abs(dx) > eps, (b.x1 - tx.x) / dx, np.inf)
            ty0 = np.where(np.abs(dy) > eps, (b.y0 - tx.y) / dy, -np.inf)
            ty1 = np.where(np.abs(dy) > eps, (b.y1 - tx.y) / dy, np.inf)
        t_enter = np.maximum(np.minimum(tx0, tx1), np.minimum(ty0, ty1))
        t_exit = np.minimum(np.maximum(tx0, tx1), np.maximum(ty0, ty1))
        # segments parallel to a slab axis must start inside that slab
        para_x = np.abs(dx) <= eps
        para_y = np.abs(dy) <= eps
        in_x = (b.x0 <= tx.x) & (tx.x <= b.x1)
        in_y = (b.y0 <= tx.y) & (tx.y <= b.y1)
        valid = ~(para_x & ~in_x) & ~(para_y & ~in_y)
        hit = valid & (t_enter < t_exit) & (t_enter < 1.0) & (t_exit > 0.0)
        crossings += hit.astype(np.int64)
    return crossings


def render_field(spec: SceneSpec, tx: TxCoordinate,
                 buildings: list[Building]) -> np.ndarray:
    """Render the raw intensity field for one transmitter placement."""
    xs = np.arange(spec.width, dtype=np.float64)
    ys = np.arange(spec.height, dtype=np.float64)
    d = np.hypot(xs[None, :] - tx.x, ys[:, None] - tx.y)
    pathloss = 10.0 * spec.pathloss_exponent * np.log10(np.maximum(d, 1.0))
    blocked = segment_crossings(tx, buildings, spec.height, spec.width)
    field = spec.reference_power - pathloss - spec.penetration_loss * blocked
    field = np.clip(field, spec.noise_floor, 255.0)
    field[building_mask(spec, buildings)] = 0.0
    iy, ix = int(round(tx.y)), int(round(tx.x))
    field[iy, ix] = field.max()
    return field


def generate_scene(spec: SceneSpec, tx: TxCoordinate,
                   record_id: str = "scene", buildings: list[Building] | None = None,
                   ) -> DatasetRecord:
    """Render one record. The transmitter must sit in free space."""
    if buildings is None:
        buildings = scene_buildings(spec)
    for b in buildings:
        if b.contains(tx.x, tx.y):
            raise TxInsideBuilding(
                f"tx ({tx.x}, {tx.y}) inside building [{b.x0},{b.x1}]x[{b.y0},{b.y1}]")
    field = render_field(spec, tx, buildings)
    return DatasetRecord(id=record_id, map=RemGrid(field, units_mode="raw"), tx=tx)


TxSampler = Callable[[np.random.Generator, np.ndarray], TxCoordinate]

_RETRY_CAP = 100


def _uniform_free_space(rng: np.random.Generator, free: np.ndarray) -> TxCoordinate:
    ys, xs = np.nonzero(free)
    k = int(rng.integers(0, xs.size))
    return TxCoordinate(float(xs[k]), float(ys[k]))


def generate_dataset(spec: SceneSpec, n_records: int, root: str | Path,
                     tx_sampler: TxSampler | None = None) -> Path:
    """Generate a dataset of ``n_records`` placements over one fixed layout.

    Deterministic under ``spec.seed``. Custom samplers get up to a hundred
    redraws per record before TxInsideBuilding propagates.
    """
    buildings = scene_buildings(spec)
    free = free_space_mask(spec, buildings)
    if not free.any():
        raise TxInsideBuilding("no free space available for transmitter placement")
    sampler = tx_sampler or _uniform_free_space
    width = len(str(max(n_records - 1, 1)))
    records = []
    for i in range(n_records):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed,
                                                           spawn_key=(i,)))
        record = None
        for _ in range(_RETRY_CAP):
            tx = sampler(rng, free)
            if free[int(round(tx.y)), int(round(tx.x))]:
                record = generate_scene(spec, tx, record_id=f"rem-{i:0{width}d}",
                                        buildings=buildings)
                break
        if record is None:
            raise TxInsideBuilding(
                f"sampler failed to place record {i} after {_RETRY_CAP} tries")
        records.append(record)
    manifest = DatasetManifest(H=spec.height, W=spec.width, P=0)
    root = save_dataset(records, root, manifest)
    (Path(root) / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return Path(root)
