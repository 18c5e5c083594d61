"""Semantic layers over the costmap: timestamped, string-labeled point data.

Each datum is a (location, evidence) pair where evidence is a float32 whose
meaning is defined by the layer label: discrete layers encode enum ordinals
as exact small-integer floats, continuous layers carry raw values. The
costmap keeps only the latest frame per label and tracks its currency; a
layer past its staleness deadline is reported unavailable, never served.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StaleFrame

DEFAULT_TTL = 1.0  # s, layer currency window (10 ticks at dt = 0.1)
LETHAL = 254

STATE_LAYER = "ped_state"
TYPE_LAYER = "ped_type"
VELOCITY_X_LAYER = "ped_velocity_x"
VELOCITY_Y_LAYER = "ped_velocity_y"
OBSERVED_LAYER = "ped_observed_prob"

PUBLISHED_LAYERS = (TYPE_LAYER, STATE_LAYER, VELOCITY_X_LAYER,
                    VELOCITY_Y_LAYER, OBSERVED_LAYER)

# behavior-plugin kinds double as the discrete pedestrian type encoding
PLUGIN_TYPE_ORDINALS = {
    "passthrough": 0, "spinny": 1, "pysocial": 2,
    "evacuation": 3, "bonding": 4, "orca": 5,
}


@dataclass(frozen=True)
class SemanticDatum:
    location: np.ndarray  # (2,) meters
    evidence: np.float32


@dataclass
class SemanticFrame:
    timestamp: float
    label: str
    locations: np.ndarray  # (n, 2) float64
    evidence: np.ndarray   # (n,) float32

    def __post_init__(self):
        if self.locations is None:
            self.locations = np.zeros((0, 2))
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        self.evidence = np.asarray(self.evidence, dtype=np.float32).reshape(-1)
        if not self.label:
            raise ValueError("semantic frame label must be non-empty")
        if len(self.locations) != len(self.evidence):
            raise ValueError("locations and evidence must align")

    @property
    def data(self):
        return [SemanticDatum(self.locations[i].copy(),
                              np.float32(self.evidence[i]))
                for i in range(len(self.evidence))]


def publish_semantics(world, observed_prob_fn=None) -> list:
    """Per-tick frames: type, state, velocity x/y, observed probability.

    observed_prob_fn(agent) -> float hooks in a sensor model; without one
    every agent is exported as fully observed (probability 1.0).
    """
    agents = sorted(world.agents, key=lambda a: a.id)
    n = len(agents)
    locations = np.array([a.position for a in agents]).reshape(n, 2) if n \
        else np.zeros((0, 2))
    types = np.array([PLUGIN_TYPE_ORDINALS.get(a.plugin, -1.0)
                      for a in agents], dtype=np.float32)
    states = np.array([float(int(a.social_state)) for a in agents],
                      dtype=np.float32)
    vel = np.array([a.velocity for a in agents]).reshape(n, 2) if n \
        else np.zeros((0, 2))
    if observed_prob_fn is None:
        observed = np.ones(n, dtype=np.float32)
    else:
        observed = np.array([observed_prob_fn(a) for a in agents],
                            dtype=np.float32)
    t = world.time
    return [
        SemanticFrame(t, TYPE_LAYER, locations, types),
        SemanticFrame(t, STATE_LAYER, locations, states),
        SemanticFrame(t, VELOCITY_X_LAYER, locations, vel[:, 0].astype(np.float32)),
        SemanticFrame(t, VELOCITY_Y_LAYER, locations, vel[:, 1].astype(np.float32)),
        SemanticFrame(t, OBSERVED_LAYER, locations, observed),
    ]


@dataclass
class _Layer:
    frame: SemanticFrame
    deadline: float
    buckets: dict = field(default_factory=dict)


class SemanticCostmap:
    """Base occupancy costs plus the latest semantic frame per label.

    Single writer advances the clock and swaps layers atomically; reads
    between ticks see either the old or the new layer, never a mix.
    """

    def __init__(self, grid, ttl: float = DEFAULT_TTL):
        self.grid = grid
        self.ttl = ttl
        self.clock = 0.0
        self.base_cost = np.where(grid.occupied, LETHAL, 0).astype(np.uint8)
        self._layers: dict[str, _Layer] = {}

    def set_clock(self, now: float):
        self.clock = float(now)

    def labels(self):
        return sorted(self._layers)

    def update_layer(self, frame: SemanticFrame):
        """Install a frame; rejects timestamp regressions with StaleFrame."""
        stored = self._layers.get(frame.label)
        if stored is not None and frame.timestamp < stored.frame.timestamp:
            raise StaleFrame(
                f"layer {frame.label!r}: frame at t={frame.timestamp} older "
                f"than stored t={stored.frame.timestamp}")
        buckets = {}
        res = self.grid.resolution
        for i in range(len(frame.evidence)):
            key = (int(frame.locations[i, 0] / res),
                   int(frame.locations[i, 1] / res))
            buckets.setdefault(key, []).append(i)
        self._layers[frame.label] = _Layer(frame, frame.timestamp + self.ttl,
                                           buckets)
        self.clock = max(self.clock, frame.timestamp)

    def layer_available(self, label: str) -> bool:
        layer = self._layers.get(label)
        return layer is not None and self.clock <= layer.deadline

    def query(self, label: str, position, radius: float) -> list:
        """All data of a layer within `radius` (closed ball) of `position`.

        Absent or stale layers yield an empty list. Results come back in a
        canonical order independent of insertion order.
        """
        if not self.layer_available(label):
            return []
        layer = self._layers[label]
        frame = layer.frame
        res = self.grid.resolution
        px, py = float(position[0]), float(position[1])
        c0 = int((px - radius) / res)
        c1 = int((px + radius) / res)
        r0 = int((py - radius) / res)
        r1 = int((py + radius) / res)
        hits = []
        for cx in range(c0, c1 + 1):
            for cy in range(r0, r1 + 1):
                for i in layer.buckets.get((cx, cy), ()):
                    dx = frame.locations[i, 0] - px
                    dy = frame.locations[i, 1] - py
                    if math.hypot(dx, dy) <= radius:
                        hits.append(i)
        hits.sort(key=lambda i: (frame.locations[i, 0], frame.locations[i, 1],
                                 float(frame.evidence[i])))
        return [SemanticDatum(frame.locations[i].copy(),
                              np.float32(frame.evidence[i])) for i in hits]

    def ingest(self, world, observed_prob_fn=None):
        """Publish + update in one go; returns the frames for logging."""
        frames = publish_semantics(world, observed_prob_fn)
        for frame in frames:
            self.update_layer(frame)
        self.set_clock(world.time)
        return frames
