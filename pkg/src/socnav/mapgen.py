"""Procedural occupancy-grid generation, distance maps, and world export.

Grids are (height, width) uint8 arrays of cell codes; FREE (0) is traversable,
every other code is occupied and doubles as a furniture tag. Cell (row, col)
has its center at world coordinates ((col + 0.5) * res, (row + 0.5) * res).
Distances are measured between cell centers throughout.

Every generator is a pure function of (params, size, seed): the provenance
stored on the returned map regenerates it bit-exactly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementExhausted

# Cell codes. FREE must stay 0 so `cells != FREE` is the occupancy mask.
FREE = 0
WALL = 1
TREE = 2
TABLE = 3
CHAIR = 4
SHELF = 5
RACK = 6
SEPARATOR = 7

PALETTE = {
    FREE: "free",
    WALL: "wall",
    TREE: "tree",
    TABLE: "table",
    CHAIR: "chair",
    SHELF: "shelf",
    RACK: "rack",
    SEPARATOR: "separator",
}
CODE_BY_TAG = {name: code for code, name in PALETTE.items()}

ALGORITHMS = (
    "barn",
    "rosmap_outdoor",
    "rosmap_indoor",
    "rosnav_outdoor",
    "canteen",
    "warehouse",
    "office",
)

# Per-algorithm parameter defaults; unknown keys are rejected at validation.
GENERATOR_DEFAULTS = {
    "barn": {"fill_pct": 0.15, "smooth_iter": 2},
    "rosmap_outdoor": {"obstacle_num": 20, "obstacle_extra_radius": 1},
    "rosmap_indoor": {"corridor_radius": 1, "iterations": 6},
    "rosnav_outdoor": {"obstacle_num": 8, "obstacle_extra_radius": 2},
    "canteen": {"obstacle_num": 12, "obstacle_extra_radius": 1, "chair_chance": 0.5},
    "warehouse": {"obstacle_num": 10, "rack_chance": 0.5},
    "office": {"obstacle_num": 8},
}

DEFAULT_RESOLUTION = 0.25  # m/cell
DEFAULT_SIZE = (120, 120)  # (width, height) cells
RETRY_FACTOR = 100  # rejection-sampling budget per requested placement


@dataclass(frozen=True)
class Provenance:
    algorithm: str
    params: dict
    size: tuple  # (width, height) cells
    seed: int
    resolution: float = DEFAULT_RESOLUTION


@dataclass(frozen=True)
class Feature:
    """Axis-aligned furniture rectangle in cell units."""

    tag: str
    col: int
    row: int
    width: int
    height: int

    def cells(self):
        return (slice(self.row, self.row + self.height),
                slice(self.col, self.col + self.width))


@dataclass
class GridMap:
    resolution: float
    cells: np.ndarray  # uint8 (height, width)
    provenance: Provenance
    features: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)  # generator internals, informational

    def __post_init__(self):
        self._dmap = None

    @property
    def width(self):
        return self.cells.shape[1]

    @property
    def height(self):
        return self.cells.shape[0]

    @property
    def extent(self):
        """World size (x_max, y_max) in meters."""
        return (self.width * self.resolution, self.height * self.resolution)

    @property
    def occupied(self):
        return self.cells != FREE

    def world_to_cell(self, xy):
        """Map world coordinates to (col, row), clipped into the grid."""
        xy = np.asarray(xy, dtype=float)
        col = np.clip((xy[..., 0] / self.resolution).astype(int), 0, self.width - 1)
        row = np.clip((xy[..., 1] / self.resolution).astype(int), 0, self.height - 1)
        return col, row

    def cell_center(self, col, row):
        return np.array([(col + 0.5) * self.resolution, (row + 0.5) * self.resolution])

    def occupied_at(self, xy):
        col, row = self.world_to_cell(xy)
        return bool(self.cells[row, col] != FREE)

    def in_bounds(self, xy):
        w, h = self.extent
        return 0.0 <= xy[0] < w and 0.0 <= xy[1] < h

    def distance_map(self):
        """Euclidean distance map (cached). Requires >= 1 occupied cell."""
        if self._dmap is None:
            self._dmap = distance_transform(self)
        return self._dmap

    def digest(self):
        """Hex digest over cell bytes + geometry; equal iff maps identical."""
        h = hashlib.sha256()
        h.update(np.float64(self.resolution).tobytes())
        h.update(np.int64(self.cells.shape).tobytes())
        h.update(self.cells.tobytes())
        return h.hexdigest()

    def copy(self):
        g = GridMap(self.resolution, self.cells.copy(), self.provenance,
                    list(self.features), dict(self.meta))
        return g


@dataclass
class DistanceMap:
    resolution: float
    distances: np.ndarray  # float64 (height, width), meters

    def distance_at(self, xy):
        """Bilinear-interpolated distance at world points (..., 2)."""
        return self._interp(np.asarray(xy, dtype=float))

    def gradient_at(self, xy):
        """Central-difference gradient of the interpolated field, shape (..., 2)."""
        xy = np.asarray(xy, dtype=float)
        h = 0.5 * self.resolution
        dx = np.stack([h * np.ones(xy.shape[:-1]), np.zeros(xy.shape[:-1])], axis=-1)
        dy = np.stack([np.zeros(xy.shape[:-1]), h * np.ones(xy.shape[:-1])], axis=-1)
        gx = (self._interp(xy + dx) - self._interp(xy - dx)) / (2 * h)
        gy = (self._interp(xy + dy) - self._interp(xy - dy)) / (2 * h)
        return np.stack([gx, gy], axis=-1)

    def _interp(self, xy):
        hgt, wid = self.distances.shape
        # sample grid registered at cell centers; clamp to the border samples
        fx = np.clip(xy[..., 0] / self.resolution - 0.5, 0.0, wid - 1.0)
        fy = np.clip(xy[..., 1] / self.resolution - 0.5, 0.0, hgt - 1.0)
        x0 = np.clip(fx.astype(int), 0, wid - 2) if wid > 1 else np.zeros_like(fx, int)
        y0 = np.clip(fy.astype(int), 0, hgt - 2) if hgt > 1 else np.zeros_like(fy, int)
        tx = fx - x0
        ty = fy - y0
        d = self.distances
        x1 = np.minimum(x0 + 1, wid - 1)
        y1 = np.minimum(y0 + 1, hgt - 1)
        top = d[y0, x0] * (1 - tx) + d[y0, x1] * tx
        bot = d[y1, x0] * (1 - tx) + d[y1, x1] * tx
        return top * (1 - ty) + bot * ty


# ---------------------------------------------------------------------------
# Distance transform


def distance_transform(grid: GridMap) -> DistanceMap:
    """Exact Euclidean distance transform (two-pass, squared-int envelope)."""
    occ = grid.occupied
    if not occ.any():
        raise ValueError("distance transform needs at least one occupied cell")
    sq = _edt_squared(occ)
    return DistanceMap(grid.resolution, np.sqrt(sq.astype(np.float64)) * grid.resolution)


def _edt_squared(occupied: np.ndarray) -> np.ndarray:
    """Integer squared cell distances to the nearest occupied cell."""
    h, w = occupied.shape
    big = h + w + 1  # farther than any in-grid offset
    # pass 1: per-column vertical offsets via an up and a down sweep
    col = np.full((h, w), big, dtype=np.int64)
    run = np.full(w, big, dtype=np.int64)
    for r in range(h):
        run = np.where(occupied[r], 0, np.minimum(run + 1, big))
        col[r] = run
    run = np.full(w, big, dtype=np.int64)
    for r in range(h - 1, -1, -1):
        run = np.where(occupied[r], 0, np.minimum(run + 1, big))
        col[r] = np.minimum(col[r], run)
    f = col * col
    # pass 2: per-row lower envelope of parabolas over the squared columns
    out = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        out[r] = _lower_envelope(f[r])
    return out


def _lower_envelope(f: np.ndarray) -> np.ndarray:
    n = f.shape[0]
    d = np.empty(n, dtype=np.int64)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


# ---------------------------------------------------------------------------
# Connectivity


@dataclass(frozen=True)
class ConnectivityReport:
    connected: bool
    components: int
    largest_fraction: float


def validate_connectivity(grid: GridMap) -> ConnectivityReport:
    """4-connected flood fill over free cells."""
    free = grid.cells == FREE
    total = int(free.sum())
    if total == 0:
        return ConnectivityReport(False, 0, 0.0)
    labels = np.zeros(free.shape, dtype=np.int32)
    sizes = []
    h, w = free.shape
    for r0 in range(h):
        row_free = np.flatnonzero(free[r0] & (labels[r0] == 0))
        for c0 in row_free:
            if labels[r0, c0]:
                continue
            comp = len(sizes) + 1
            stack = [(r0, c0)]
            labels[r0, c0] = comp
            size = 0
            while stack:
                r, c = stack.pop()
                size += 1
                if r > 0 and free[r - 1, c] and not labels[r - 1, c]:
                    labels[r - 1, c] = comp
                    stack.append((r - 1, c))
                if r < h - 1 and free[r + 1, c] and not labels[r + 1, c]:
                    labels[r + 1, c] = comp
                    stack.append((r + 1, c))
                if c > 0 and free[r, c - 1] and not labels[r, c - 1]:
                    labels[r, c - 1] = comp
                    stack.append((r, c - 1))
                if c < w - 1 and free[r, c + 1] and not labels[r, c + 1]:
                    labels[r, c + 1] = comp
                    stack.append((r, c + 1))
            sizes.append(size)
    return ConnectivityReport(len(sizes) == 1, len(sizes), max(sizes) / total)


def free_components(grid: GridMap) -> np.ndarray:
    """Component label per cell (0 for occupied), 4-connected."""
    free = grid.cells == FREE
    labels = np.zeros(free.shape, dtype=np.int32)
    h, w = free.shape
    comp = 0
    for r0 in range(h):
        for c0 in np.flatnonzero(free[r0] & (labels[r0] == 0)):
            comp += 1
            stack = [(r0, c0)]
            labels[r0, c0] = comp
            while stack:
                r, c = stack.pop()
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < h and 0 <= cc < w and free[rr, cc] and not labels[rr, cc]:
                        labels[rr, cc] = comp
                        stack.append((rr, cc))
    return labels


# ---------------------------------------------------------------------------
# Parameter validation


def validate_generator_params(algorithm: str, params: dict | None) -> dict:
    """Merge defaults and range-check. Raises ValueError on bad input."""
    if algorithm not in GENERATOR_DEFAULTS:
        raise ValueError(f"unknown map generator {algorithm!r}; "
                         f"expected one of {', '.join(ALGORITHMS)}")
    merged = dict(GENERATOR_DEFAULTS[algorithm])
    for key, value in (params or {}).items():
        if key not in merged:
            raise ValueError(f"{algorithm}: unknown parameter {key!r}")
        merged[key] = value
    for key, value in merged.items():
        if key in ("fill_pct", "chair_chance", "rack_chance"):
            if not 0.0 <= float(value) <= 1.0:
                raise ValueError(f"{algorithm}.{key} must lie in [0, 1]")
            merged[key] = float(value)
        else:
            if int(value) != value or int(value) < 0:
                raise ValueError(f"{algorithm}.{key} must be a non-negative integer")
            merged[key] = int(value)
    return merged


# ---------------------------------------------------------------------------
# Generators


def generate_map(algorithm: str, params: dict | None = None,
                 size: tuple = DEFAULT_SIZE, seed: int = 0,
                 resolution: float = DEFAULT_RESOLUTION) -> GridMap:
    """Run one of the seven generators. Deterministic in (params, size, seed)."""
    params = validate_generator_params(algorithm, params)
    width, height = int(size[0]), int(size[1])
    if width < 8 or height < 8:
        raise PlacementExhausted(f"{algorithm}: map {width}x{height} too small")
    rng = np.random.default_rng(seed)
    builder = _BUILDERS[algorithm]
    cells, features, meta = builder(params, width, height, rng)
    prov = Provenance(algorithm, dict(params), (width, height), int(seed), resolution)
    return GridMap(resolution, cells, prov, features, meta)


def _blank(width, height, border=True):
    cells = np.zeros((height, width), dtype=np.uint8)
    if border:
        cells[0, :] = WALL
        cells[-1, :] = WALL
        cells[:, 0] = WALL
        cells[:, -1] = WALL
    return cells


def _gen_barn(params, width, height, rng):
    cells = _blank(width, height)
    interior = (height - 2) * (width - 2)
    count = int(round(params["fill_pct"] * interior))
    picks = rng.choice(interior, size=count, replace=False)
    rows = picks // (width - 2) + 1
    cols = picks % (width - 2) + 1
    cells[rows, cols] = WALL
    for _ in range(params["smooth_iter"]):
        occ = (cells != FREE).astype(np.int8)
        votes = np.zeros_like(occ, dtype=np.int8)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                votes[1:-1, 1:-1] += occ[1 + dr:height - 1 + dr, 1 + dc:width - 1 + dc]
        new = np.where(votes >= 5, WALL, FREE).astype(np.uint8)
        cells[1:-1, 1:-1] = new[1:-1, 1:-1]
    return cells, [], {}


def _square_slices(col, row, radius):
    return (slice(row - radius, row + radius + 1),
            slice(col - radius, col + radius + 1))


def _gen_rosmap_outdoor(params, width, height, rng):
    cells = _blank(width, height)
    num = params["obstacle_num"]
    radius = params["obstacle_extra_radius"]
    margin = radius + 1
    if width - 2 * margin <= 0 or height - 2 * margin <= 0:
        raise PlacementExhausted("rosmap_outdoor: no room for a tree square")
    features = []
    budget = RETRY_FACTOR * max(num, 1)
    placed = 0
    while placed < num:
        if budget <= 0:
            raise PlacementExhausted(
                f"rosmap_outdoor: placed {placed}/{num} trees before retry budget")
        budget -= 1
        col = int(rng.integers(margin, width - margin))
        row = int(rng.integers(margin, height - margin))
        window = _square_slices(col, row, radius)
        if (cells[window] != FREE).any():
            continue
        cells[window] = TREE
        edge = 2 * radius + 1
        features.append(Feature("tree", col - radius, row - radius, edge, edge))
        placed += 1
    return cells, features, {}


def _gen_rosmap_indoor(params, width, height, rng):
    cells = np.full((height, width), WALL, dtype=np.uint8)
    radius = params["corridor_radius"]
    rooms = []
    corridors = []
    max_dim = max(4, width // 3)
    for _ in range(params["iterations"]):
        rw = int(rng.integers(4, max_dim + 1))
        rh = int(rng.integers(4, max_dim + 1))
        rw = min(rw, width - 2)
        rh = min(rh, height - 2)
        col = int(rng.integers(1, width - 1 - rw + 1))
        row = int(rng.integers(1, height - 1 - rh + 1))
        cells[row:row + rh, col:col + rw] = FREE
        cx, cy = col + rw // 2, row + rh // 2
        if rooms:
            nearest = min(rooms, key=lambda r: (r[0] - cx) ** 2 + (r[1] - cy) ** 2)
            nx, ny = nearest[0], nearest[1]
            # L-shaped: horizontal leg at cy, then vertical leg at nx
            for (axis, fixed, lo, hi) in (("h", cy, min(cx, nx), max(cx, nx)),
                                          ("v", nx, min(cy, ny), max(cy, ny))):
                if axis == "h":
                    r0 = max(1, fixed - radius)
                    r1 = min(height - 1, fixed + radius + 1)
                    c0 = max(1, lo - radius)
                    c1 = min(width - 1, hi + radius + 1)
                    cells[r0:r1, c0:c1] = FREE
                else:
                    c0 = max(1, fixed - radius)
                    c1 = min(width - 1, fixed + radius + 1)
                    r0 = max(1, lo - radius)
                    r1 = min(height - 1, hi + radius + 1)
                    cells[r0:r1, c0:c1] = FREE
                corridors.append({"axis": axis, "center": int(fixed),
                                  "lo": int(lo), "hi": int(hi)})
        rooms.append((cx, cy, col, row, rw, rh))
    meta = {
        "rooms": [{"col": r[2], "row": r[3], "width": r[4], "height": r[5]}
                  for r in rooms],
        "corridors": corridors,
        "corridor_width": 2 * radius + 1,
    }
    return cells, [], meta


def _gen_rosnav_outdoor(params, width, height, rng):
    cells = _blank(width, height)
    num = params["obstacle_num"]
    radius = params["obstacle_extra_radius"]
    margin = radius + 1
    if width - 2 * margin <= 0 or height - 2 * margin <= 0:
        raise PlacementExhausted("rosnav_outdoor: no room for a blocked square")
    squares = []
    for _ in range(num):
        col = int(rng.integers(margin, width - margin))
        row = int(rng.integers(margin, height - margin))
        cells[_square_slices(col, row, radius)] = WALL
        edge = 2 * radius + 1
        squares.append({"col": col - radius, "row": row - radius, "edge": edge})
    return cells, [], {"squares": squares}


_CHAIR_OFFSETS = ((0, -1), (1, 0), (0, 1), (-1, 0))  # N, E, S, W in cell axes


def _gen_canteen(params, width, height, rng):
    cells = _blank(width, height)
    num = params["obstacle_num"]
    radius = params["obstacle_extra_radius"]
    chance = params["chair_chance"]
    margin = radius + 2  # table square plus its chair ring
    if width - 2 * margin <= 0 or height - 2 * margin <= 0:
        raise PlacementExhausted("canteen: no room for a table with chairs")
    features = []
    budget = RETRY_FACTOR * max(num, 1)
    placed = 0
    while placed < num:
        if budget <= 0:
            raise PlacementExhausted(
                f"canteen: placed {placed}/{num} tables before retry budget")
        budget -= 1
        col = int(rng.integers(margin, width - margin))
        row = int(rng.integers(margin, height - margin))
        zone = _square_slices(col, row, radius + 1)
        if (cells[zone] != FREE).any():
            continue
        cells[_square_slices(col, row, radius)] = TABLE
        edge = 2 * radius + 1
        features.append(Feature("table", col - radius, row - radius, edge, edge))
        for dx, dy in _CHAIR_OFFSETS:
            if rng.random() < chance:
                cc = col + dx * (radius + 1)
                cr = row + dy * (radius + 1)
                cells[cr, cc] = CHAIR
                features.append(Feature("chair", cc, cr, 1, 1))
        placed += 1
    return cells, features, {}


SHELF_LEN = 4  # cells along the shelf line


def _gen_warehouse(params, width, height, rng):
    cells = _blank(width, height)
    num = params["obstacle_num"]
    chance = params["rack_chance"]
    features = []
    budget = RETRY_FACTOR * max(num, 1)
    placed = 0
    while placed < num:
        if budget <= 0:
            raise PlacementExhausted(
                f"warehouse: placed {placed}/{num} shelves before retry budget")
        budget -= 1
        horizontal = bool(rng.integers(0, 2))
        # footprint: shelf line plus a rack candidate cell at each end
        span = SHELF_LEN + 2
        if horizontal:
            fw, fh = span, 1
        else:
            fw, fh = 1, span
        if width - 2 - fw < 1 or height - 2 - fh < 1:
            raise PlacementExhausted("warehouse: map too small for a shelf")
        col = int(rng.integers(1, width - 1 - fw + 1))
        row = int(rng.integers(1, height - 1 - fh + 1))
        zone = (slice(max(1, row - 1), min(height - 1, row + fh + 1)),
                slice(max(1, col - 1), min(width - 1, col + fw + 1)))
        if (cells[zone] != FREE).any():
            continue
        if horizontal:
            cells[row, col + 1:col + 1 + SHELF_LEN] = SHELF
            features.append(Feature("shelf", col + 1, row, SHELF_LEN, 1))
            ends = ((col, row), (col + 1 + SHELF_LEN, row))
        else:
            cells[row + 1:row + 1 + SHELF_LEN, col] = SHELF
            features.append(Feature("shelf", col, row + 1, 1, SHELF_LEN))
            ends = ((col, row), (col, row + 1 + SHELF_LEN))
        for ec, er in ends:
            if rng.random() < chance:
                cells[er, ec] = RACK
                features.append(Feature("rack", ec, er, 1, 1))
        placed += 1
    return cells, features, {}


def _gen_office(params, width, height, rng):
    cells = _blank(width, height)
    num = params["obstacle_num"]
    features = []
    budget = RETRY_FACTOR * max(num, 1)
    placed = 0
    while placed < num:
        if budget <= 0:
            raise PlacementExhausted(
                f"office: placed {placed}/{num} workplaces before retry budget")
        budget -= 1
        horizontal = bool(rng.integers(0, 2))
        fw, fh = (4, 3) if horizontal else (3, 4)
        if width - 2 - fw < 1 or height - 2 - fh < 1:
            raise PlacementExhausted("office: map too small for a workplace")
        col = int(rng.integers(1, width - 1 - fw + 1))
        row = int(rng.integers(1, height - 1 - fh + 1))
        zone = (slice(max(1, row - 1), min(height - 1, row + fh + 1)),
                slice(max(1, col - 1), min(width - 1, col + fw + 1)))
        if (cells[zone] != FREE).any():
            continue
        if horizontal:
            # separator column, then table run, then chair, all on one line
            cells[row:row + 3, col] = SEPARATOR
            cells[row + 1, col + 1:col + 3] = TABLE
            cells[row + 1, col + 3] = CHAIR
            features.append(Feature("separator", col, row, 1, 3))
            features.append(Feature("table", col + 1, row + 1, 2, 1))
            features.append(Feature("chair", col + 3, row + 1, 1, 1))
        else:
            cells[row, col:col + 3] = SEPARATOR
            cells[row + 1:row + 3, col + 1] = TABLE
            cells[row + 3, col + 1] = CHAIR
            features.append(Feature("separator", col, row, 3, 1))
            features.append(Feature("table", col + 1, row + 1, 1, 2))
            features.append(Feature("chair", col + 1, row + 3, 1, 1))
        placed += 1
    return cells, features, {}


_BUILDERS = {
    "barn": _gen_barn,
    "rosmap_outdoor": _gen_rosmap_outdoor,
    "rosmap_indoor": _gen_rosmap_indoor,
    "rosnav_outdoor": _gen_rosnav_outdoor,
    "canteen": _gen_canteen,
    "warehouse": _gen_warehouse,
    "office": _gen_office,
}


# ---------------------------------------------------------------------------
# World descriptor export


@dataclass(frozen=True)
class Segment:
    """Occupied rectangle in meters: origin corner plus extent."""

    tag: str
    x: float
    y: float
    width: float
    height: float


@dataclass
class WorldDescriptor:
    resolution: float
    size: tuple  # (width, height) cells
    walls: list
    furniture: list

    def to_dict(self):
        def seg(s):
            return {"tag": s.tag, "x": s.x, "y": s.y,
                    "width": s.width, "height": s.height}
        return {
            "resolution": self.resolution,
            "size": list(self.size),
            "walls": [seg(s) for s in self.walls],
            "furniture": [seg(s) for s in self.furniture],
        }

    @classmethod
    def from_dict(cls, data):
        def seg(d):
            return Segment(d["tag"], d["x"], d["y"], d["width"], d["height"])
        return cls(data["resolution"], tuple(data["size"]),
                   [seg(s) for s in data["walls"]],
                   [seg(s) for s in data["furniture"]])


def _rectangle_cover(mask: np.ndarray):
    """Exact cover of a boolean mask by rectangles (cell units).

    Maximal horizontal runs per row, merged vertically while the column span
    repeats, so straight walls of either orientation come out as one piece.
    """
    rects = []
    open_runs = {}  # (c0, c1) -> row started
    h, _ = mask.shape
    for r in range(h + 1):
        runs = set()
        if r < h:
            row = mask[r]
            padded = np.diff(np.concatenate(([0], row.view(np.int8), [0])))
            starts = np.flatnonzero(padded == 1)
            ends = np.flatnonzero(padded == -1)
            runs = set(zip(starts.tolist(), ends.tolist()))
        for span in list(open_runs):
            if span not in runs:
                rects.append((span[0], open_runs.pop(span), span[1] - span[0], r))
        for span in runs:
            if span not in open_runs:
                open_runs[span] = r
    return [(c0, r0, w, r1 - r0) for (c0, r0, w, r1) in rects]


def export_world(grid: GridMap) -> WorldDescriptor:
    """Reduce the grid to wall segments plus furniture primitives (meters)."""
    res = grid.resolution
    walls = []
    furniture = []
    for code, tag in PALETTE.items():
        if code == FREE:
            continue
        mask = grid.cells == code
        if not mask.any():
            continue
        if code == WALL:
            for (c0, r0, w, h) in _rectangle_cover(mask):
                walls.append(Segment("wall", c0 * res, r0 * res, w * res, h * res))
        else:
            for (c0, r0, w, h) in _rectangle_cover(mask):
                furniture.append(Segment(tag, c0 * res, r0 * res, w * res, h * res))
    return WorldDescriptor(res, (grid.width, grid.height), walls, furniture)


def rasterize_world(descriptor: WorldDescriptor) -> np.ndarray:
    """Inverse of export_world: rebuild the cell array from segments."""
    w, h = descriptor.size
    res = descriptor.resolution
    cells = np.zeros((h, w), dtype=np.uint8)
    for seg in list(descriptor.walls) + list(descriptor.furniture):
        c0 = int(round(seg.x / res))
        r0 = int(round(seg.y / res))
        cw = int(round(seg.width / res))
        rh = int(round(seg.height / res))
        cells[r0:r0 + rh, c0:c0 + cw] = CODE_BY_TAG[seg.tag]
    return cells


# ---------------------------------------------------------------------------
# Grid I/O (ASCII PGM + YAML sidecar)


def save_map(grid: GridMap, path):
    """Write `<path>` as ASCII PGM and `<path>.meta.yaml` alongside."""
    import yaml

    path = str(path)
    with open(path, "w") as fh:
        fh.write("P2\n")
        fh.write(f"{grid.width} {grid.height}\n255\n")
        for row in grid.cells:
            fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")
    meta = {
        "resolution": grid.resolution,
        "provenance": {
            "algorithm": grid.provenance.algorithm,
            "params": grid.provenance.params,
            "size": list(grid.provenance.size),
            "seed": grid.provenance.seed,
        },
        "palette": {int(k): v for k, v in PALETTE.items()},
        "features": [{"tag": f.tag, "col": f.col, "row": f.row,
                      "width": f.width, "height": f.height} for f in grid.features],
    }
    with open(path + ".meta.yaml", "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=True)


def load_map(path) -> GridMap:
    import yaml

    path = str(path)
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM file")
    width, height = int(tokens[1]), int(tokens[2])
    values = np.array(tokens[4:4 + width * height], dtype=np.uint8)
    cells = values.reshape(height, width)
    with open(path + ".meta.yaml") as fh:
        meta = yaml.safe_load(fh)
    prov = Provenance(meta["provenance"]["algorithm"],
                      meta["provenance"]["params"],
                      tuple(meta["provenance"]["size"]),
                      meta["provenance"]["seed"],
                      meta["resolution"])
    features = [Feature(f["tag"], f["col"], f["row"], f["width"], f["height"])
                for f in meta.get("features", [])]
    return GridMap(meta["resolution"], cells, prov, features)


def regenerate(prov: Provenance) -> GridMap:
    """Rebuild a map from its provenance; bit-identical to the original."""
    return generate_map(prov.algorithm, prov.params, prov.size, prov.seed,
                        prov.resolution)


# ---------------------------------------------------------------------------
# Static-obstacle rasterization (scenario support)


def stamp_circle(cells: np.ndarray, resolution, cx, cy, radius, code=WALL):
    h, w = cells.shape
    c0 = max(0, int((cx - radius) / resolution))
    c1 = min(w - 1, int((cx + radius) / resolution))
    r0 = max(0, int((cy - radius) / resolution))
    r1 = min(h - 1, int((cy + radius) / resolution))
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            px = (c + 0.5) * resolution
            py = (r + 0.5) * resolution
            if (px - cx) ** 2 + (py - cy) ** 2 <= radius * radius:
                cells[r, c] = code


def stamp_rect(cells: np.ndarray, resolution, x, y, width, height, code=WALL):
    h, w = cells.shape
    c0 = max(0, int(math.floor(x / resolution)))
    r0 = max(0, int(math.floor(y / resolution)))
    c1 = min(w, int(math.ceil((x + width) / resolution)))
    r1 = min(h, int(math.ceil((y + height) / resolution)))
    cells[r0:r1, c0:c1] = code
