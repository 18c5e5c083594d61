"""Per-episode navigation and social metrics from recorded traces.

Curvature is Menger curvature (4 * triangle area / side product, units 1/m)
over pose triplets resampled at fixed arc spacing so the metric does not
depend on the tick rate. The social timers use a privacy disc around each
pedestrian and symmetric facing cones around the robot heading and the
pedestrian motion direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DegenerateTrace


@dataclass(frozen=True)
class MetricParams:
    goal_tolerance: float = 0.5      # m, reach radius
    private_radius: float = 0.5      # m, privacy disc around a pedestrian
    face_half_angle: float = math.radians(25.0)
    face_range: float = 5.0          # m
    ped_radius: float = 0.3          # m, pedestrian body circle
    curvature_spacing: float = 0.1   # m, arc resample step
    facing_min_speed: float = 0.05   # m/s, below this a ped has no facing


@dataclass
class EpisodeTrace:
    """Tick-indexed record of one episode."""

    dt: float
    times: np.ndarray        # (T,)
    robot_poses: np.ndarray  # (T, 3)
    robot_vels: np.ndarray   # (T, 2) world frame
    robot_omegas: np.ndarray  # (T,)
    robot_cmds: np.ndarray   # (T, 3) padded command tuples
    agent_ids: np.ndarray    # (n,)
    agents_xy: np.ndarray    # (T, n, 2)
    agents_vel: np.ndarray   # (T, n, 2)
    agents_state: np.ndarray  # (T, n)
    collision_events: list = field(default_factory=list)  # (tick, kind, other)
    events: list = field(default_factory=list)            # (tick, text)
    meta: dict = field(default_factory=dict)

    @property
    def ticks(self):
        return len(self.times)

    def concat(self, other: "EpisodeTrace") -> "EpisodeTrace":
        """Append another trace (times continue); used for additivity checks."""
        shift = self.ticks
        return EpisodeTrace(
            self.dt,
            np.concatenate([self.times, other.times + self.times[-1] + self.dt]),
            np.concatenate([self.robot_poses, other.robot_poses]),
            np.concatenate([self.robot_vels, other.robot_vels]),
            np.concatenate([self.robot_omegas, other.robot_omegas]),
            np.concatenate([self.robot_cmds, other.robot_cmds]),
            self.agent_ids,
            np.concatenate([self.agents_xy, other.agents_xy]),
            np.concatenate([self.agents_vel, other.agents_vel]),
            np.concatenate([self.agents_state, other.agents_state]),
            self.collision_events + [(t + shift, k, o) for t, k, o in
                                     other.collision_events],
            self.events + [(t + shift, s) for t, s in other.events],
            dict(self.meta))


class TraceRecorder:
    def __init__(self, dt, agent_ids, meta=None):
        self.dt = dt
        self.agent_ids = np.asarray(agent_ids, dtype=int)
        self.meta = dict(meta or {})
        self._rows = []
        self.collision_events = []
        self.events = []

    def append(self, time, robot_pose, robot_vel, robot_omega, cmd,
               agents_xy, agents_vel, agents_state):
        self._rows.append((float(time), np.array(robot_pose, dtype=float),
                           np.array(robot_vel, dtype=float), float(robot_omega),
                           np.array(cmd, dtype=float),
                           np.array(agents_xy, dtype=float),
                           np.array(agents_vel, dtype=float),
                           np.array(agents_state, dtype=np.int64)))

    def add_collision(self, tick, kind, other=-1):
        self.collision_events.append((int(tick), str(kind), int(other)))

    def add_event(self, tick, text):
        self.events.append((int(tick), str(text)))

    def finalize(self) -> EpisodeTrace:
        n = len(self.agent_ids)
        T = len(self._rows)
        return EpisodeTrace(
            self.dt,
            np.array([r[0] for r in self._rows]),
            np.array([r[1] for r in self._rows]).reshape(T, 3),
            np.array([r[2] for r in self._rows]).reshape(T, 2),
            np.array([r[3] for r in self._rows]),
            np.array([r[4] for r in self._rows]).reshape(T, 3),
            self.agent_ids,
            np.array([r[5] for r in self._rows]).reshape(T, n, 2),
            np.array([r[6] for r in self._rows]).reshape(T, n, 2),
            np.array([r[7] for r in self._rows]).reshape(T, n),
            self.collision_events, self.events, self.meta)


@dataclass
class MetricsRecord:
    success: bool
    collisions: int
    time_to_goal: float
    path_length: float
    velocity_avg: float
    acceleration_avg: float
    jerk: float
    curvature_avg: float | None
    curvature_max: float | None
    curvature_min: float | None
    curvature_normalized: float | None
    angle_over_length: float
    roughness: float | None
    time_in_private_zone: float
    time_facing_peds: float
    time_seen_by_peds: float
    timeout: bool


METRIC_FIELDS = [f.name for f in fields(MetricsRecord)]
NUMERIC_FIELDS = [f for f in METRIC_FIELDS if f not in ("success", "timeout")]


def menger_curvature(p1, p2, p3):
    """4 * area / (|ab| * |bc| * |ca|); exactly 0 for collinear points."""
    a = math.hypot(p2[0] - p1[0], p2[1] - p1[1])
    b = math.hypot(p3[0] - p2[0], p3[1] - p2[1])
    c = math.hypot(p3[0] - p1[0], p3[1] - p1[1])
    if a * b * c < 1e-18:
        return 0.0
    cross = ((p2[0] - p1[0]) * (p3[1] - p1[1])
             - (p2[1] - p1[1]) * (p3[0] - p1[0]))
    return 2.0 * abs(cross) / (a * b * c)


def resample_polyline(xy, spacing):
    """Points at fixed arc spacing along the polyline (endpoints included)."""
    xy = np.asarray(xy, dtype=float)
    seg = np.sqrt((np.diff(xy, axis=0) ** 2).sum(axis=1))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total < spacing:
        return xy[:1]
    targets = np.arange(0.0, total + spacing * 0.5, spacing)
    targets = targets[targets <= total]
    out = np.empty((len(targets), 2))
    out[:, 0] = np.interp(targets, arc, xy[:, 0])
    out[:, 1] = np.interp(targets, arc, xy[:, 1])
    return out


def curvature_profile(xy, spacing):
    """Menger curvature over consecutive resampled triplets; None if short."""
    pts = resample_polyline(xy, spacing)
    if len(pts) < 3:
        return None
    return np.array([menger_curvature(pts[i - 1], pts[i], pts[i + 1])
                     for i in range(1, len(pts) - 1)])


def social_metrics(trace: EpisodeTrace,
                   params: MetricParams = MetricParams()):
    """(private_zone_s, facing_s, seen_s) accumulated over the trace."""
    if trace.agents_xy.shape[1] == 0:
        return 0.0, 0.0, 0.0
    footprint = float(trace.meta.get("footprint_radius", 0.0))
    rel = trace.agents_xy - trace.robot_poses[:, None, :2]
    dist = np.sqrt((rel ** 2).sum(axis=2))  # (T, n)

    private_ticks = (dist < params.private_radius + footprint).any(axis=1)

    angle_to_ped = np.arctan2(rel[:, :, 1], rel[:, :, 0])
    heading = trace.robot_poses[:, 2][:, None]
    ang_err = np.abs(_wrap(angle_to_ped - heading))
    facing_ticks = ((dist <= params.face_range)
                    & (ang_err <= params.face_half_angle)).any(axis=1)

    ped_speed = np.sqrt((trace.agents_vel ** 2).sum(axis=2))
    ped_dir = np.arctan2(trace.agents_vel[:, :, 1], trace.agents_vel[:, :, 0])
    angle_to_robot = np.arctan2(-rel[:, :, 1], -rel[:, :, 0])
    seen_err = np.abs(_wrap(angle_to_robot - ped_dir))
    seen_ticks = ((dist <= params.face_range)
                  & (ped_speed > params.facing_min_speed)
                  & (seen_err <= params.face_half_angle)).any(axis=1)

    dt = trace.dt
    return (float(private_ticks.sum() * dt), float(facing_ticks.sum() * dt),
            float(seen_ticks.sum() * dt))


def _wrap(angles):
    return (angles + math.pi) % (2 * math.pi) - math.pi


def compute_episode_metrics(trace: EpisodeTrace, goal,
                            params: MetricParams = MetricParams()
                            ) -> MetricsRecord:
    """All per-episode metrics. Raises DegenerateTrace below 3 poses."""
    if trace.ticks < 3:
        raise DegenerateTrace(f"trace has {trace.ticks} poses; need >= 3")
    goal = np.asarray(goal, dtype=float)
    xy = trace.robot_poses[:, :2]
    dt = trace.dt

    goal_dist = np.sqrt(((xy - goal) ** 2).sum(axis=1))
    reached_ticks = np.nonzero(goal_dist < params.goal_tolerance)[0]
    reached = len(reached_ticks) > 0
    time_to_goal = float(trace.times[reached_ticks[0]]) if reached \
        else float(trace.times[-1])

    seg = np.sqrt((np.diff(xy, axis=0) ** 2).sum(axis=1))
    path_length = float(seg.sum())

    speed = np.sqrt((trace.robot_vels ** 2).sum(axis=1))
    velocity_avg = float(speed.mean())
    accel_vec = np.diff(trace.robot_vels, axis=0) / dt
    accel_mag = np.sqrt((accel_vec ** 2).sum(axis=1))
    acceleration_avg = float(accel_mag.mean()) if len(accel_mag) else 0.0
    jerk_vec = np.diff(accel_vec, axis=0) / dt
    jerk = float(np.sqrt((jerk_vec ** 2).sum(axis=1)).mean()) \
        if len(jerk_vec) else 0.0

    profile = curvature_profile(xy, params.curvature_spacing)
    if profile is None:
        curvature_avg = curvature_max = curvature_min = None
        curvature_normalized = None
        roughness = None
    else:
        curvature_avg = float(profile.mean())
        curvature_max = float(profile.max())
        curvature_min = float(profile.min())
        curvature_normalized = curvature_avg * path_length
        roughness = float(profile.std())

    headings = trace.robot_poses[:, 2]
    turn = np.abs(_wrap(np.diff(headings)))
    angle_over_length = float(turn.sum() / path_length) if path_length > 1e-12 \
        else 0.0

    private_s, facing_s, seen_s = social_metrics(trace, params)
    collisions = len(trace.collision_events)
    termination = trace.meta.get("termination")
    timeout = termination == "timeout" if termination is not None \
        else not reached

    return MetricsRecord(
        success=bool(reached and collisions < 2),
        collisions=collisions,
        time_to_goal=time_to_goal,
        path_length=path_length,
        velocity_avg=velocity_avg,
        acceleration_avg=acceleration_avg,
        jerk=jerk,
        curvature_avg=curvature_avg,
        curvature_max=curvature_max,
        curvature_min=curvature_min,
        curvature_normalized=curvature_normalized,
        angle_over_length=angle_over_length,
        roughness=roughness,
        time_in_private_zone=private_s,
        time_facing_peds=facing_s,
        time_seen_by_peds=seen_s,
        timeout=bool(timeout),
    )


def aggregate(records, group_key):
    """Per-group mean/std/min/max for numeric metrics plus rate summaries.

    group_key: callable mapping a (key, record) item to its group, or None
    to pool everything; records may be a list of MetricsRecord or a list of
    (key, MetricsRecord) pairs.
    """
    items = []
    for entry in records:
        if isinstance(entry, MetricsRecord):
            items.append((None, entry))
        else:
            items.append(entry)
    groups = {}
    for key, rec in items:
        group = group_key(key, rec) if group_key else "all"
        groups.setdefault(group, []).append(rec)
    out = {}
    for group, recs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        stats = {}
        for name in NUMERIC_FIELDS:
            values = [getattr(r, name) for r in recs
                      if getattr(r, name) is not None]
            if not values:
                stats[name] = None
                continue
            arr = np.array(values, dtype=float)
            stats[name] = {"mean": float(arr.mean()), "std": float(arr.std()),
                           "min": float(arr.min()), "max": float(arr.max())}
        stats["success_rate"] = 100.0 * sum(r.success for r in recs) / len(recs)
        stats["timeout_rate"] = 100.0 * sum(r.timeout for r in recs) / len(recs)
        stats["episodes"] = len(recs)
        out[group] = stats
    return out
