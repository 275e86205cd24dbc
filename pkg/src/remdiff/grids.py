"""Radio environment map grids, value scaling, and coordinate encoding.

A REM is a dense H x W field of received signal intensity for one transmitter
placement. Maps live either in raw 8-bit grayscale units ([0, 255]) or in the
normalized [-1, 1] range the diffusion model operates on. The transmitter
coordinate is encoded as a Gaussian bump rescaled to [-1, 1] so it can ride
along as a second input channel.

Coordinate convention: origin at the top-left pixel, x grows rightward
(columns), y grows downward (rows). One pixel is one meter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRange

RAW = "raw"
NORMALIZED = "normalized"

MIN_SIDE = 8


@dataclass(frozen=True)
class ValueRange:
    """Intensity range used for the raw <-> normalized affine map."""

    min_val: float = 0.0
    max_val: float = 255.0

    def __post_init__(self):
        if not (self.max_val > self.min_val):
            raise DegenerateRange(
                f"max_val ({self.max_val}) must exceed min_val ({self.min_val})"
            )

    @property
    def span(self) -> float:
        return self.max_val - self.min_val


GRAYSCALE_8BIT = ValueRange(0.0, 255.0)


@dataclass(frozen=True)
class TxCoordinate:
    """Transmitter position in pixel coordinates (sub-pixel values allowed)."""

    x: float
    y: float

    def distance_to(self, other: "TxCoordinate") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass
class RemGrid:
    """An H x W signal-intensity field plus its unit mode."""

    values: np.ndarray
    units_mode: str = RAW

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"expected a 2-D map, got shape {self.values.shape}")
        h, w = self.values.shape
        if h < MIN_SIDE or w < MIN_SIDE:
            raise ValueError(f"map must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
        if not np.isfinite(self.values).all():
            raise ValueError("map contains non-finite entries")
        if self.units_mode == RAW:
            lo, hi = self.values.min(), self.values.max()
            if lo < 0.0 or hi > 255.0:
                raise ValueError(f"raw map outside [0, 255]: [{lo}, {hi}]")
        elif self.units_mode == NORMALIZED:
            lo, hi = self.values.min(), self.values.max()
            if lo < -1.0 or hi > 1.0:
                raise ValueError(f"normalized map outside [-1, 1]: [{lo}, {hi}]")
        else:
            raise ValueError(f"unknown units_mode {self.units_mode!r}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class DatasetRecord:
    """One REM with its transmitter coordinate and optional auxiliary features."""

    id: str
    map: RemGrid
    tx: TxCoordinate
    env: np.ndarray | None = None
    origin: str = "original"

    def __post_init__(self):
        if self.env is not None:
            self.env = np.asarray(self.env, dtype=np.float64).reshape(-1)


@dataclass
class CoordHeatmap:
    """Gaussian coordinate prior, rescaled to [-1, 1], shape (1, H, W)."""

    values: np.ndarray
    sigma: float
    tx: TxCoordinate

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class EnvStats:
    """Per-feature standardization statistics, reusable at inference."""

    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray = field(default=None)  # bool mask of constant features

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if self.zero_variance is None:
            self.zero_variance = np.zeros(self.mean.shape, dtype=bool)
        else:
            self.zero_variance = np.asarray(self.zero_variance, dtype=bool).reshape(-1)

    def apply(self, env: np.ndarray) -> np.ndarray:
        """Standardize a single feature vector with the stored statistics."""
        env = np.asarray(env, dtype=np.float64).reshape(-1)
        if env.shape != self.mean.shape:
            raise ValueError(f"env length {env.size} != stats length {self.mean.size}")
        out = np.zeros_like(env)
        ok = ~self.zero_variance
        out[ok] = (env[ok] - self.mean[ok]) / self.std[ok]
        return out


def normalize(map: RemGrid, value_range: ValueRange) -> RemGrid:
    """Affinely rescale a raw map to [-1, 1]: 2*(v - min)/(max - min) - 1."""
    if map.units_mode != RAW:
        raise ValueError("normalize expects a raw map")
    lo, hi = map.values.min(), map.values.max()
    if lo < value_range.min_val or hi > value_range.max_val:
        raise ValueError(
            f"map values [{lo}, {hi}] outside range "
            f"[{value_range.min_val}, {value_range.max_val}]"
        )
    scaled = 2.0 * (map.values - value_range.min_val) / value_range.span - 1.0
    return RemGrid(scaled, units_mode=NORMALIZED)


def per_image_normalize(map: RemGrid,
                        allow_degenerate: bool = False) -> tuple[RemGrid, ValueRange | None]:
    """Rescale a raw map by its own min/max instead of the dataset range.

    Constant maps have no usable range: that raises DegenerateRange unless the
    caller explicitly opts into an all-zero normalized substitute.
    """
    if map.units_mode != RAW:
        raise ValueError("per_image_normalize expects a raw map")
    lo, hi = float(map.values.min()), float(map.values.max())
    if hi == lo:
        if not allow_degenerate:
            raise DegenerateRange(f"constant map (all entries {lo})")
        return RemGrid(np.zeros_like(map.values), units_mode=NORMALIZED), None
    rng = ValueRange(lo, hi)
    return normalize(map, rng), rng


def denormalize(map: RemGrid, value_range: ValueRange) -> RemGrid:
    """Invert :func:`normalize`, clamping overshoot back into the raw range."""
    if map.units_mode != NORMALIZED:
        raise ValueError("denormalize expects a normalized map")
    raw = (map.values + 1.0) * 0.5 * value_range.span + value_range.min_val
    raw = np.clip(raw, value_range.min_val, value_range.max_val)
    return RemGrid(raw, units_mode=RAW)


def clamp_to_raw(values: np.ndarray, value_range: ValueRange = GRAYSCALE_8BIT) -> RemGrid:
    """Map an unconstrained [-1, 1]-ish array to a clamped raw grid.

    Sampler outputs can overshoot [-1, 1]; clamp them first so the
    normalized-grid invariant holds, then denormalize.
    """
    clipped = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return denormalize(RemGrid(clipped, units_mode=NORMALIZED), value_range)


def gaussian_heatmap(tx: TxCoordinate, height: int, width: int,
                     sigma: float = 5.0) -> CoordHeatmap:
    """Encode a transmitter coordinate as a Gaussian bump in [-1, 1].

    C(x, y) = exp(-((x - x0)^2 + (y - y0)^2) / (2 sigma^2)), then 2C - 1.
    The peak is exactly +1 when (x0, y0) sits on the pixel lattice.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not (0 <= tx.x <= width - 1 and 0 <= tx.y <= height - 1):
        raise ValueError(f"tx ({tx.x}, {tx.y}) outside grid {height}x{width}")
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    d2 = (xs[None, :] - tx.x) ** 2 + (ys[:, None] - tx.y) ** 2
    bump = np.exp(-d2 / (2.0 * sigma * sigma))
    return CoordHeatmap(values=(2.0 * bump - 1.0)[None, :, :], sigma=sigma, tx=tx)


def _round_half_down(value: float) -> int:
    """Round to nearest integer, halves toward the origin (deterministic ties)."""
    return int(math.ceil(value - 0.5))


def extract_tx(map: RemGrid) -> TxCoordinate:
    """Locate the transmitter as the argmax pixel of a raw map.

    Ties resolve to the centroid of all maximal pixels, rounded to the
    nearest lattice point (halves toward the origin).
    """
    values = map.values
    peak = values.max()
    ys, xs = np.nonzero(values == peak)
    if xs.size == 1:
        return TxCoordinate(float(xs[0]), float(ys[0]))
    cx = float(xs.mean())
    cy = float(ys.mean())
    return TxCoordinate(float(_round_half_down(cx)), float(_round_half_down(cy)))


def zscore_env(env_vectors: list[np.ndarray] | np.ndarray) -> tuple[np.ndarray, EnvStats]:
    """Standardize a stack of feature vectors to per-feature mean 0, std 1.

    Uses the population (n-divisor) standard deviation. Constant features are
    passed through as zeros and flagged in the returned statistics.
    """
    mat = np.asarray(env_vectors, dtype=np.float64)
    if mat.ndim != 2:
        mat = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in env_vectors])
    if mat.shape[0] < 2:
        raise ValueError("need at least 2 vectors to standardize")
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)  # population convention
    zero_var = std == 0.0
    safe_std = np.where(zero_var, 1.0, std)
    out = (mat - mean) / safe_std
    out[:, zero_var] = 0.0
    return out, EnvStats(mean=mean, std=safe_std, zero_variance=zero_var)
