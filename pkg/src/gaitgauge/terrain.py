"""Procedural heightfield terrains with a 10-step difficulty ladder.

Every terrain is a regular grid of support heights generated deterministically
from a (spec, seed) pair.  The analytic parameter laws are:

  wave      z(x, y) = A sin(x/T) + A cos(y/T), A = 0.4 d, T = 1.6 m
  slope     z = k x with gradient k = 0.07 + 0.5 d (negated going down)
  stairs    tread 0.31 m; riser 0.05 + 0.3 d for d <= 0.4,
            0.17 + 0.1 (d - 0.4) for d >= 0.5 (negated going down)
  obstacle  axis-aligned boxes of height 0.05 + 0.23 d, widths U[1, 2] m

The difficulty parameter d runs over {0.1, 0.2, ..., 1.0}; level L maps to
d = L / 10.  Rough slopes add +/-0.05 m of per-cell uniform noise.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

TERRAIN_KINDS = (
    "flat",
    "wave",
    "slope_up",
    "slope_down",
    "rough_slope",
    "stairs_up",
    "stairs_down",
    "obstacle",
)

WAVE_PERIOD_M = 1.6
STAIR_TREAD_M = 0.31
STAIR_APRON_M = 1.0
ROUGH_NOISE_M = 0.05
OBSTACLE_BOXES_PER_TILE = 6
OBSTACLE_SPAWN_CLEAR_M = 1.5

HEIGHTFIELD_MAGIC = b"RGHF"
HEIGHTFIELD_VERSION = 1

# Local-sensing window: 1.0 m lateral x 1.6 m longitudinal at 0.1 m spacing.
SENSE_ROWS = 11
SENSE_COLS = 17
SENSE_STEP_M = 0.1


class TerrainError(ValueError):
    """Invalid terrain parameters or query."""


def difficulty_for_level(level: int) -> float:
    """Map a difficulty level L in 1..10 onto the parameter d = L/10."""
    if not 1 <= level <= 10:
        raise TerrainError(f"level must be in 1..10, got {level}")
    return level / 10.0


def wave_amplitude(d: float) -> float:
    return 0.4 * d


def slope_gradient(d: float) -> float:
    return 0.07 + 0.5 * d


def stair_height(d: float) -> float:
    # Piecewise in d with a printed domain gap between 0.4 and 0.5; the
    # second branch extends downward so both anchors (0.17 at 0.4, 0.18 at
    # 0.5) hold exactly.
    if d <= 0.4:
        return 0.05 + 0.3 * d
    return 0.17 + 0.1 * (d - 0.4)


def obstacle_height(d: float) -> float:
    return 0.05 + 0.23 * d


@dataclass(frozen=True)
class TerrainSpec:
    """Parameters that fully determine one terrain tile."""

    kind: str
    difficulty: float = 0.5
    length_m: float = 8.0
    width_m: float = 8.0
    resolution_m: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in TERRAIN_KINDS:
            raise TerrainError(f"unknown terrain kind {self.kind!r}")
        if not 0.1 <= self.difficulty <= 1.0:
            raise TerrainError(f"difficulty must be in [0.1, 1.0], got {self.difficulty}")
        if self.length_m <= 0 or self.width_m <= 0 or self.resolution_m <= 0:
            raise TerrainError("length_m, width_m and resolution_m must be positive")

    @property
    def grid_shape(self) -> tuple[int, int]:
        nx = math.ceil(self.length_m / self.resolution_m)
        ny = math.ceil(self.width_m / self.resolution_m)
        return nx, ny


@dataclass(frozen=True)
class Heightfield:
    """Regular grid of heights; ``grid[i, j]`` is the height at
    ``(origin_x + i * res, origin_y + j * res)``."""

    grid: np.ndarray
    origin: tuple[float, float]
    resolution_m: float
    spec: TerrainSpec | None = None

    def __post_init__(self) -> None:
        # Query-path constants; the grid itself stays the source of truth.
        nx, ny = self.grid.shape
        x0, y0 = self.origin
        object.__setattr__(self, "_rows", self.grid.tolist())
        object.__setattr__(self, "_x0", float(x0))
        object.__setattr__(self, "_y0", float(y0))
        object.__setattr__(self, "_x1", float(x0 + (nx - 1) * self.resolution_m))
        object.__setattr__(self, "_y1", float(y0 + (ny - 1) * self.resolution_m))
        object.__setattr__(self, "_inv_res", 1.0 / self.resolution_m)

    @property
    def nx(self) -> int:
        return self.grid.shape[0]

    @property
    def ny(self) -> int:
        return self.grid.shape[1]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the queryable region."""
        return (self._x0, self._y0, self._x1, self._y1)

    def height_at(self, x: float, y: float) -> float:
        """Bilinear interpolation of the four surrounding grid nodes."""
        if not (self._x0 <= x <= self._x1 and self._y0 <= y <= self._y1):
            raise TerrainError(f"query ({x:.3f}, {y:.3f}) outside field bounds {self.bounds}")
        nx, ny = self.grid.shape
        fx = (x - self._x0) * self._inv_res
        fy = (y - self._y0) * self._inv_res
        ix = int(fx)
        iy = int(fy)
        if ix > nx - 2:
            ix = max(nx - 2, 0)
        if iy > ny - 2:
            iy = max(ny - 2, 0)
        tx = fx - ix
        ty = fy - iy
        rows = self._rows
        if nx == 1 and ny == 1:
            return rows[0][0]
        row0 = rows[ix]
        row1 = rows[ix + 1] if ix + 1 < nx else row0
        iy1 = iy + 1 if iy + 1 < ny else iy
        h00 = row0[iy]
        h01 = row0[iy1]
        h10 = row1[iy]
        h11 = row1[iy1]
        return (1 - tx) * ((1 - ty) * h00 + ty * h01) + tx * ((1 - ty) * h10 + ty * h11)

    def sample_height_grid(self, base_x: float, base_y: float, base_z: float, yaw: float = 0.0) -> np.ndarray:
        """Heights over an 11 x 17 window centered on the base, relative to
        the base height, flattened row-major (rows sweep the lateral axis).

        The window rotates with the base yaw; it must lie inside the field.
        """
        half_rows = (SENSE_ROWS - 1) / 2.0
        half_cols = (SENSE_COLS - 1) / 2.0
        cy, sy = math.cos(yaw), math.sin(yaw)
        out = np.empty(SENSE_ROWS * SENSE_COLS, dtype=np.float64)
        k = 0
        for r in range(SENSE_ROWS):
            dy = (r - half_rows) * SENSE_STEP_M
            for c in range(SENSE_COLS):
                dx = (c - half_cols) * SENSE_STEP_M
                wx = base_x + dx * cy - dy * sy
                wy = base_y + dx * sy + dy * cy
                out[k] = self.height_at(wx, wy) - base_z
                k += 1
        return out

    def to_csv(self, path: str | Path) -> None:
        """Write the raw grid as CSV, one grid row (constant x) per line."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            for row in self.grid:
                writer.writerow([format(v, ".17g") for v in row])

    def to_binary(self) -> bytes:
        """Compact little-endian encoding: magic, version u16, dims u32 x 2,
        resolution f64, then row-major f32 heights."""
        header = HEIGHTFIELD_MAGIC + struct.pack(
            "<HIId", HEIGHTFIELD_VERSION, self.nx, self.ny, self.resolution_m
        )
        body = self.grid.astype("<f4").tobytes(order="C")
        return header + body

    def save_binary(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_binary())

    @staticmethod
    def from_binary(data: bytes) -> "Heightfield":
        if data[:4] != HEIGHTFIELD_MAGIC:
            raise TerrainError("bad heightfield magic")
        version, nx, ny, res = struct.unpack_from("<HIId", data, 4)
        if version != HEIGHTFIELD_VERSION:
            raise TerrainError(f"unsupported heightfield version {version}")
        offset = 4 + struct.calcsize("<HIId")
        expected = nx * ny * 4
        body = data[offset : offset + expected]
        if len(body) != expected:
            raise TerrainError("truncated heightfield payload")
        grid = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(nx, ny)
        return Heightfield(grid=grid, origin=(0.0, 0.0), resolution_m=res)

    @staticmethod
    def load_binary(path: str | Path) -> "Heightfield":
        return Heightfield.from_binary(Path(path).read_bytes())


def generate(spec: TerrainSpec) -> Heightfield:
    """Generate the heightfield for ``spec``; pure in (spec, seed)."""
    nx, ny = spec.grid_shape
    res = spec.resolution_m
    d = spec.difficulty
    xs = np.arange(nx, dtype=np.float64) * res
    ys = np.arange(ny, dtype=np.float64) * res

    if spec.kind == "flat":
        grid = np.zeros((nx, ny), dtype=np.float64)
    elif spec.kind == "wave":
        amp = wave_amplitude(d)
        grid = amp * np.sin(xs / WAVE_PERIOD_M)[:, None] + amp * np.cos(ys / WAVE_PERIOD_M)[None, :]
    elif spec.kind in ("slope_up", "slope_down", "rough_slope"):
        k = slope_gradient(d)
        if spec.kind == "slope_down":
            k = -k
        grid = np.repeat((k * xs)[:, None], ny, axis=1)
        if spec.kind == "rough_slope":
            rng = np.random.Generator(np.random.PCG64(spec.seed))
            grid = grid + rng.uniform(-ROUGH_NOISE_M, ROUGH_NOISE_M, size=(nx, ny))
    elif spec.kind in ("stairs_up", "stairs_down"):
        h = stair_height(d)
        if spec.kind == "stairs_down":
            h = -h
        # Flat spawn apron covers [0, apron]; tread k spans ((k-1)w, kw] past it.
        steps = np.maximum(np.ceil((xs - STAIR_APRON_M) / STAIR_TREAD_M), 0.0)
        grid = np.repeat((h * steps)[:, None], ny, axis=1)
    elif spec.kind == "obstacle":
        grid = np.zeros((nx, ny), dtype=np.float64)
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        h = obstacle_height(d)
        n_boxes = max(1, round(OBSTACLE_BOXES_PER_TILE * (spec.length_m * spec.width_m) / 64.0))
        for _ in range(n_boxes):
            wx = rng.uniform(1.0, 2.0)
            wy = rng.uniform(1.0, 2.0)
            # Keep a clear strip at the spawn end so the robot starts on flat ground.
            x_lo = min(OBSTACLE_SPAWN_CLEAR_M, max(0.0, spec.length_m - wx))
            x_hi = max(x_lo, spec.length_m - wx)
            bx = rng.uniform(x_lo, x_hi)
            by = rng.uniform(0.0, max(0.0, spec.width_m - wy))
            i0, i1 = int(bx / res), min(nx, int((bx + wx) / res) + 1)
            j0, j1 = int(by / res), min(ny, int((by + wy) / res) + 1)
            grid[i0:i1, j0:j1] = h
    else:  # pragma: no cover - guarded by TerrainSpec validation
        raise TerrainError(f"unknown terrain kind {spec.kind!r}")

    return Heightfield(grid=grid, origin=(0.0, 0.0), resolution_m=res, spec=spec)


def generate_level(kind: str, level: int, seed: int = 0, **kwargs) -> Heightfield:
    """Generate a terrain at a ladder level (flat ignores the level)."""
    d = difficulty_for_level(level)
    return generate(TerrainSpec(kind=kind, difficulty=d, seed=seed, **kwargs))


def spawn_point(hf: Heightfield) -> tuple[float, float]:
    """Spawn pose on the tile: 1 m in along x, centered in y.

    For stairs this sits on the flat apron before the first riser.
    """
    _, y0, _, y1 = hf.bounds
    return 1.0, (y0 + y1) / 2.0


def max_amplitude(spec: TerrainSpec) -> float:
    """Peak |height| scale of the terrain feature, used by difficulty checks."""
    d = spec.difficulty
    if spec.kind == "flat":
        return 0.0
    if spec.kind == "wave":
        return 2.0 * wave_amplitude(d)
    if spec.kind in ("slope_up", "slope_down", "rough_slope"):
        extra = ROUGH_NOISE_M if spec.kind == "rough_slope" else 0.0
        return slope_gradient(d) * spec.length_m + extra
    if spec.kind in ("stairs_up", "stairs_down"):
        n_steps = math.floor((spec.length_m - STAIR_APRON_M) / STAIR_TREAD_M) + 1
        return stair_height(d) * n_steps
    return obstacle_height(d)


def replace_difficulty(spec: TerrainSpec, d: float) -> TerrainSpec:
    return replace(spec, difficulty=d)
