"""Robot planning pipeline: grid global planner, intermediate behavior
planners, and a dynamic-window local controller, plus kinematic models.

The pipeline per control tick is strict: global path (replanned on a period
or on failure) -> intermediate planner -> controller. The intermediate stage
subsamples the global path into a local window and, when a dynamic obstacle
comes within the trigger distance, applies one of the heuristic behaviors
(aggressive, polite, sideways) by rewriting waypoints and/or overriding
controller parameters. The controller never sees the global path.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoPath
from .mapgen import DistanceMap, GridMap

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class RobotConfig:
    name: str
    kinematics: str = "differential"  # differential | holonomic | ackermann
    footprint_radius: float = 0.3
    max_speed: float = 1.5
    max_accel: float = 2.0
    max_omega: float = 2.0
    max_omega_accel: float = 5.0
    wheelbase: float = 0.8
    max_steering: float = 0.6
    max_steering_rate: float = 1.5

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"robot config: unknown field(s) {sorted(unknown)}")
        cfg = cls(**data)
        if cfg.kinematics not in ("differential", "holonomic", "ackermann"):
            raise ValueError(f"robot config: bad kinematics {cfg.kinematics!r}")
        if cfg.footprint_radius <= 0:
            raise ValueError("robot config: footprint_radius must be positive")
        return cfg


def load_robot(name: str) -> RobotConfig:
    """Load a robot config shipped with the package or from a YAML path."""
    import importlib.resources
    import os

    import yaml

    if os.path.exists(name):
        with open(name) as fh:
            return RobotConfig.from_dict(yaml.safe_load(fh))
    ref = importlib.resources.files("socnav").joinpath(f"data/robots/{name}.yaml")
    if not ref.is_file():
        raise ValueError(f"unknown robot {name!r}")
    return RobotConfig.from_dict(yaml.safe_load(ref.read_text()))


@dataclass
class Path:
    poses: np.ndarray  # (k, 3): x, y, theta
    source: str = "global"
    grid_cost: float = 0.0  # raw grid path cost before smoothing, meters

    def __len__(self):
        return len(self.poses)

    @property
    def xy(self):
        return self.poses[:, :2]


@dataclass(frozen=True)
class VelocityCommand:
    kinematics: str
    data: tuple  # differential: (v, omega); holonomic: (vx, vy, omega);
    #              ackermann: (v, steering)

    def padded(self):
        out = list(self.data) + [0.0, 0.0, 0.0]
        return tuple(out[:3])

    @classmethod
    def stop(cls, kinematics):
        if kinematics == "holonomic":
            return cls(kinematics, (0.0, 0.0, 0.0))
        return cls(kinematics, (0.0, 0.0))


# ---------------------------------------------------------------------------
# Global planner

_NEIGHBORS = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
              (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))


def blocked_mask(grid: GridMap, dmap: DistanceMap, footprint_radius: float):
    """Cells a robot of the given footprint cannot occupy."""
    return dmap.distances < footprint_radius


def plan_global(grid: GridMap, dmap: DistanceMap, start, goal,
                footprint_radius: float) -> Path:
    """8-connected A* over the inflated grid, then line-of-sight shortcutting.

    The Euclidean heuristic is admissible for step costs {1, sqrt(2)}, so the
    raw grid cost (stored on the returned path) is optimal. Raises NoPath.
    """
    blocked = blocked_mask(grid, dmap, footprint_radius)
    res = grid.resolution
    h, w = blocked.shape
    sc, sr = grid.world_to_cell(np.asarray(start, dtype=float))
    gc, gr = grid.world_to_cell(np.asarray(goal, dtype=float))
    if blocked[sr, sc] or blocked[gr, gc]:
        raise NoPath("start or goal inside the inflated obstacle region")
    start_cell = (int(sc), int(sr))
    goal_cell = (int(gc), int(gr))
    if start_cell == goal_cell:
        poses = np.array([[start[0], start[1], 0.0], [goal[0], goal[1], 0.0]])
        return Path(_with_headings(poses[:, :2]), "global", 0.0)

    g_cost = {start_cell: (0.0, 0, 0)}  # cost, straight steps, diagonal steps
    parent = {}
    counter = 0
    heap = [(_heuristic(start_cell, goal_cell), counter, start_cell)]
    closed = set()
    while heap:
        _, _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal_cell:
            break
        closed.add(cell)
        base, n_s, n_d = g_cost[cell]
        for dc, dr, step in _NEIGHBORS:
            nc, nr = cell[0] + dc, cell[1] + dr
            if not (0 <= nc < w and 0 <= nr < h) or blocked[nr, nc]:
                continue
            if step > 1.0 and (blocked[cell[1], nc] or blocked[nr, cell[0]]):
                continue  # no diagonal corner cutting
            nxt = (nc, nr)
            cost = base + step
            if nxt not in g_cost or cost < g_cost[nxt][0] - 1e-12:
                g_cost[nxt] = (cost, n_s + (step == 1.0), n_d + (step > 1.0))
                parent[nxt] = cell
                counter += 1
                heapq.heappush(heap, (cost + _heuristic(nxt, goal_cell),
                                      counter, nxt))
    if goal_cell not in g_cost:
        raise NoPath("goal not reachable on the inflated grid")
    cells = [goal_cell]
    while cells[-1] != start_cell:
        cells.append(parent[cells[-1]])
    cells.reverse()
    _, n_s, n_d = g_cost[goal_cell]
    grid_cost = (n_s + n_d * SQRT2) * res
    points = [np.asarray(start, dtype=float)]
    points += [grid.cell_center(c, r) for (c, r) in cells[1:-1]]
    points.append(np.asarray(goal, dtype=float))
    points = _shortcut(points, blocked, grid)
    dense = _densify(points, res * SQRT2)
    return Path(_with_headings(dense), "global", grid_cost)


def _heuristic(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _line_free(p0, p1, blocked, grid):
    dist = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    steps = max(2, int(dist / (grid.resolution * 0.5)) + 1)
    for t in np.linspace(0.0, 1.0, steps):
        x = p0[0] + (p1[0] - p0[0]) * t
        y = p0[1] + (p1[1] - p0[1]) * t
        c, r = grid.world_to_cell(np.array([x, y]))
        if blocked[r, c]:
            return False
    return True


def _shortcut(points, blocked, grid):
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not _line_free(points[i], points[j], blocked, grid):
            j -= 1
        out.append(points[j])
        i = j
    return out


def _densify(points, spacing):
    dense = [np.asarray(points[0], dtype=float)]
    for nxt in points[1:]:
        prev = dense[-1]
        seg = np.asarray(nxt, dtype=float) - prev
        length = math.hypot(seg[0], seg[1])
        if length < 1e-12:
            continue
        n = max(1, int(math.ceil(length / spacing)))
        for k in range(1, n + 1):
            dense.append(prev + seg * (k / n))
    return np.array(dense).reshape(-1, 2)


def _with_headings(xy):
    k = len(xy)
    poses = np.zeros((k, 3))
    poses[:, :2] = xy
    if k > 1:
        diffs = np.diff(xy, axis=0)
        angles = np.arctan2(diffs[:, 1], diffs[:, 0])
        poses[:-1, 2] = angles
        poses[-1, 2] = angles[-1]
    return poses


# ---------------------------------------------------------------------------
# Intermediate planners


@dataclass(frozen=True)
class BehaviorParams:
    trigger_distance: float = 3.0   # m, dynamic-obstacle activation radius
    window: float = 5.0             # m, local path window
    aggressive_speed: float = 1.5
    aggressive_clearance: float = 0.25
    polite_speed: float = 0.5
    polite_clearance: float = 3.0
    polite_margin: float = 1.0      # m, lateral clearance kept from peds
    sideways_offset: float = 0.8    # m


def _local_window(path: Path, position, window):
    xy = path.xy
    dists = np.sqrt(((xy - np.asarray(position)) ** 2).sum(axis=1))
    start = int(np.argmin(dists))
    pts = [xy[start]]
    travelled = 0.0
    for i in range(start + 1, len(xy)):
        travelled += math.hypot(*(xy[i] - xy[i - 1]))
        pts.append(xy[i])
        if travelled >= window:
            break
    return np.array(pts).reshape(-1, 2)


def intermediate_plan(global_path: Path, robot_pose, costmap, semantics,
                      dynamic_obstacles, mode: str = "neutral",
                      params: BehaviorParams = BehaviorParams(),
                      footprint_radius: float = 0.3):
    """Refine the global path in a local window and derive controller overrides.

    dynamic_obstacles: list of (position, velocity) pairs. Returns
    (Path(source='intermediate'), overrides dict, flags list). Falls back to
    neutral behavior (with a flag) when a sideways offset is infeasible.
    """
    position = np.asarray(robot_pose[:2], dtype=float)
    pts = _local_window(global_path, position, params.window)
    overrides = {}
    flags = []
    min_dist = math.inf
    nearest = None
    for obs_pos, obs_vel in dynamic_obstacles:
        d = math.hypot(obs_pos[0] - position[0], obs_pos[1] - position[1])
        if d < min_dist:
            min_dist = d
            nearest = (np.asarray(obs_pos, dtype=float),
                       np.asarray(obs_vel, dtype=float))
    triggered = min_dist < params.trigger_distance
    dmap = costmap if isinstance(costmap, DistanceMap) else costmap.distances \
        if hasattr(costmap, "distances") else costmap

    if triggered and mode == "aggressive":
        overrides = {"max_speed_factor": params.aggressive_speed,
                     "clearance_weight_factor": params.aggressive_clearance,
                     "ped_clearance_cap": 0.25}
    elif triggered and mode == "polite":
        overrides = {"max_speed_factor": params.polite_speed,
                     "clearance_weight_factor": params.polite_clearance,
                     "ped_clearance_cap": params.polite_margin
                     + footprint_radius}
        pts = _bias_clear_of_peds(pts, dynamic_obstacles, dmap,
                                  params.polite_margin, footprint_radius)
    elif triggered and mode == "sideways" and len(pts) >= 3:
        shifted = _sideways_offset(pts, nearest, dmap, params.sideways_offset,
                                   footprint_radius)
        if shifted is None:
            flags.append("sideways_infeasible")
        else:
            pts = shifted
    elif mode not in ("neutral", "aggressive", "polite", "sideways"):
        raise ValueError(f"unknown behavior mode {mode!r}")

    return Path(_with_headings(pts), "intermediate"), overrides, flags


def _bias_clear_of_peds(pts, dynamic_obstacles, dmap, margin, footprint):
    """Shift path points sideways until pedestrians sit >= margin off-path."""
    out = pts.copy()
    for i in range(len(out)):
        j = min(i + 1, len(pts) - 1)
        k = max(i - 1, 0)
        tangent = pts[j] - pts[k]
        norm = math.hypot(tangent[0], tangent[1])
        if norm < 1e-9:
            continue
        tangent = tangent / norm
        normal = np.array([-tangent[1], tangent[0]])
        for obs_pos, _ in dynamic_obstacles:
            rel = np.asarray(obs_pos, dtype=float) - out[i]
            if math.hypot(rel[0], rel[1]) >= margin:
                continue
            lateral = float(normal @ rel)
            shift = (lateral - margin) if lateral >= 0 else (lateral + margin)
            candidate = out[i] + normal * shift
            if dmap is None or float(dmap.distance_at(candidate)) >= footprint:
                out[i] = candidate
    return out


def _sideways_offset(pts, nearest, dmap, offset, footprint):
    obs_pos, obs_vel = nearest
    seg = pts[-1] - pts[0]
    norm = math.hypot(seg[0], seg[1])
    if norm < 1e-9:
        return None
    tangent = seg / norm
    normal = np.array([-tangent[1], tangent[0]])  # left of travel
    lateral_vel = tangent[0] * obs_vel[1] - tangent[1] * obs_vel[0]
    if abs(lateral_vel) > 1e-6:
        side = -math.copysign(1.0, lateral_vel)
    else:
        rel = obs_pos - pts[0]
        lateral_pos = tangent[0] * rel[1] - tangent[1] * rel[0]
        side = -math.copysign(1.0, lateral_pos) if abs(lateral_pos) > 1e-9 else 1.0
    out = pts.copy()
    lo = max(1, len(pts) // 5)
    hi = max(lo + 1, (7 * len(pts)) // 10)
    for i in range(lo, hi):
        out[i] = pts[i] + normal * (side * offset)
        if dmap is not None and float(dmap.distance_at(out[i])) < footprint + 0.05:
            return None
    return out


INTERPLANNERS = {}


def register_interplanner(name: str, fn):
    """fn(global_path, robot_pose, costmap, semantics, dynamic_obstacles,
    params, footprint) -> (Path, overrides, flags)."""
    INTERPLANNERS[name] = fn


for _mode in ("neutral", "aggressive", "polite", "sideways"):
    def _make(mode):
        def planner(global_path, robot_pose, costmap, semantics,
                    dynamic_obstacles, params=BehaviorParams(),
                    footprint_radius=0.3):
            return intermediate_plan(global_path, robot_pose, costmap,
                                     semantics, dynamic_obstacles, mode,
                                     params, footprint_radius)
        return planner
    register_interplanner(_mode, _make(_mode))


# ---------------------------------------------------------------------------
# Dynamic-window controller


@dataclass(frozen=True)
class DWAParams:
    horizon: float = 1.5        # s, forward-simulation length
    sim_dt: float = 0.1
    samples: int = 11           # per velocity axis
    control_period: float = 0.1
    weight_path: float = 2.0
    weight_heading: float = 1.0
    weight_clearance: float = 1.5
    weight_speed: float = 0.5
    clearance_cap: float = 0.5  # m, clearance beyond this scores alike


def dwa_control(robot, cfg: RobotConfig, path: Path, dmap, obstacles,
                overrides=None, params: DWAParams = DWAParams()) -> VelocityCommand:
    """Best collision-free sample from the dynamic window; stop if none.

    obstacles: list of (position, radius) circles frozen for this tick.
    overrides may scale max speed and the clearance weight.
    """
    overrides = overrides or {}
    speed_factor = float(overrides.get("max_speed_factor", 1.0))
    clear_factor = float(overrides.get("clearance_weight_factor", 1.0))
    ped_cap = float(overrides.get("ped_clearance_cap", params.clearance_cap))
    v_max = cfg.max_speed * speed_factor
    if path is None or len(path) == 0:
        return VelocityCommand.stop(cfg.kinematics)
    goal = path.xy[-1]
    dist_goal = math.hypot(goal[0] - robot.pose[0], goal[1] - robot.pose[1])
    v_max = min(v_max, max(0.3, dist_goal))  # taper into the goal

    axis_a, axis_b = _window(robot, cfg, v_max, params)
    grid_a, grid_b = np.meshgrid(axis_a, axis_b, indexing="ij")
    cand_a = grid_a.ravel()
    cand_b = grid_b.ravel()
    traj = _simulate(robot, cfg, cand_a, cand_b, params)

    flat = traj.reshape(-1, 2)
    wall = dmap.distance_at(flat) - cfg.footprint_radius if dmap is not None \
        else np.full(len(flat), np.inf)
    ped = np.full(len(flat), np.inf)
    for obs_pos, obs_radius in obstacles:
        d = np.sqrt(((flat - np.asarray(obs_pos, dtype=float)) ** 2).sum(axis=1))
        ped = np.minimum(ped, d - cfg.footprint_radius - obs_radius)
    wall_clear = wall.reshape(traj.shape[0], traj.shape[1]).min(axis=1)
    ped_clear = ped.reshape(traj.shape[0], traj.shape[1]).min(axis=1)
    valid = np.minimum(wall_clear, ped_clear) > 0.0
    if not valid.any():
        return VelocityCommand.stop(cfg.kinematics)

    scores = score_samples(traj, cand_a, cand_b, robot, cfg, path,
                           wall_clear, ped_clear, ped_cap, v_max,
                           clear_factor, params)
    scores[~valid] = -np.inf
    best = int(np.argmax(scores))
    return _command(cfg.kinematics, cand_a[best], cand_b[best], robot, params)


def _window(robot, cfg, v_max, params):
    t = params.control_period
    n = params.samples
    cmd = robot.command
    if cfg.kinematics == "holonomic":
        vx, vy = (cmd[0], cmd[1]) if cmd else (0.0, 0.0)
        ax = np.linspace(max(vx - cfg.max_accel * t, -v_max),
                         min(vx + cfg.max_accel * t, v_max), n)
        ay = np.linspace(max(vy - cfg.max_accel * t, -v_max),
                         min(vy + cfg.max_accel * t, v_max), n)
        return ax, ay
    v = cmd[0] if cmd else 0.0
    lo = max(v - cfg.max_accel * t, 0.0)
    hi = min(v + cfg.max_accel * t, v_max)
    axis_v = np.linspace(lo, max(hi, lo), n)
    if cfg.kinematics == "ackermann":
        steer = cmd[1] if cmd else 0.0
        lo_s = max(steer - cfg.max_steering_rate * t, -cfg.max_steering)
        hi_s = min(steer + cfg.max_steering_rate * t, cfg.max_steering)
        return axis_v, np.linspace(lo_s, hi_s, n)
    omega = cmd[1] if cmd else 0.0
    lo_w = max(omega - cfg.max_omega_accel * t, -cfg.max_omega)
    hi_w = min(omega + cfg.max_omega_accel * t, cfg.max_omega)
    return axis_v, np.linspace(lo_w, hi_w, n)


def _simulate(robot, cfg, cand_a, cand_b, params):
    steps = int(round(params.horizon / params.sim_dt))
    m = len(cand_a)
    traj = np.empty((m, steps, 2))
    if cfg.kinematics == "holonomic":
        t = (np.arange(1, steps + 1) * params.sim_dt)[None, :]
        traj[:, :, 0] = robot.pose[0] + cand_a[:, None] * t
        traj[:, :, 1] = robot.pose[1] + cand_b[:, None] * t
        return traj
    x = np.full(m, robot.pose[0])
    y = np.full(m, robot.pose[1])
    th = np.full(m, robot.pose[2])
    if cfg.kinematics == "ackermann":
        omega = cand_a * np.tan(cand_b) / cfg.wheelbase
    else:
        omega = cand_b
    for s in range(steps):
        x = x + cand_a * np.cos(th) * params.sim_dt
        y = y + cand_a * np.sin(th) * params.sim_dt
        th = th + omega * params.sim_dt
        traj[:, s, 0] = x
        traj[:, s, 1] = y
    return traj


def score_samples(traj, cand_a, cand_b, robot, cfg, path, wall_clear,
                  ped_clear, ped_cap, v_max, clear_factor, params):
    """Weighted sum of path adherence, goal heading, clearance, and speed.

    Wall and pedestrian clearance are scored separately so behavior modes
    can widen the berth kept around people without fearing corridors.
    """
    ends = traj[:, -1, :]
    xy = path.xy
    # progress along the path rewards motion; lateral error penalizes drift
    d_matrix = np.sqrt(((ends[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    nearest = d_matrix.argmin(axis=1)
    lateral = d_matrix[np.arange(len(ends)), nearest]
    seg = np.sqrt((np.diff(xy, axis=0) ** 2).sum(axis=1))
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    progress = arc[nearest] / arc[-1] if arc[-1] > 1e-9 \
        else np.zeros(len(ends))
    path_score = 0.5 * progress + 0.5 * (1.0 - np.minimum(lateral / 2.0, 1.0))
    goal = xy[-1]
    to_goal = goal[None, :] - ends
    goal_angle = np.arctan2(to_goal[:, 1], to_goal[:, 0])
    if cfg.kinematics == "holonomic":
        final_heading = np.arctan2(cand_b, np.where(
            (np.abs(cand_a) + np.abs(cand_b)) < 1e-9, 1.0, cand_a))
    else:
        steps = traj.shape[1]
        if cfg.kinematics == "ackermann":
            omega = cand_a * np.tan(cand_b) / cfg.wheelbase
        else:
            omega = cand_b
        final_heading = robot.pose[2] + omega * steps * params.sim_dt
    heading_score = 0.5 * (1.0 + np.cos(goal_angle - final_heading))
    wall_score = np.minimum(np.maximum(wall_clear, 0.0),
                            params.clearance_cap) / params.clearance_cap
    ped_score = np.minimum(np.maximum(ped_clear, 0.0), ped_cap) / ped_cap
    if cfg.kinematics == "holonomic":
        speed = np.sqrt(cand_a ** 2 + cand_b ** 2)
    else:
        speed = np.abs(cand_a)
    speed_score = speed / max(v_max, 1e-9)
    return (params.weight_path * path_score
            + params.weight_heading * heading_score
            + params.weight_clearance * wall_score
            + params.weight_clearance * clear_factor * ped_score
            + params.weight_speed * speed_score)


def _command(kinematics, a, b, robot, params):
    if kinematics == "holonomic":
        # steer heading toward the motion direction
        if abs(a) + abs(b) > 1e-9:
            err = math.atan2(b, a) - robot.pose[2]
            err = (err + math.pi) % (2 * math.pi) - math.pi
            omega = max(-2.0, min(2.0, err / params.control_period * 0.5))
        else:
            omega = 0.0
        return VelocityCommand("holonomic", (float(a), float(b), omega))
    return VelocityCommand(kinematics, (float(a), float(b)))


def kinematics_step(robot, cmd: VelocityCommand, dt: float):
    """Integrate one control period of the commanded velocity (Euler)."""
    x, y, th = robot.pose
    if cmd.kinematics == "holonomic":
        vx, vy, omega = cmd.data
        x += vx * dt
        y += vy * dt
        th += omega * dt
        robot.linear = np.array([vx, vy])
    elif cmd.kinematics == "differential":
        v, omega = cmd.data
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
        th += omega * dt
        robot.linear = np.array([v * math.cos(th), v * math.sin(th)])
        robot.angular = omega
    elif cmd.kinematics == "ackermann":
        v, steering = cmd.data
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
        th += v * math.tan(steering) / robot_wheelbase(robot) * dt
        robot.linear = np.array([v * math.cos(th), v * math.sin(th)])
        robot.angular = v * math.tan(steering) / robot_wheelbase(robot)
    else:
        raise ValueError(f"unknown kinematics {cmd.kinematics!r}")
    th = (th + math.pi) % (2 * math.pi) - math.pi
    robot.pose = np.array([x, y, th])
    robot.command = cmd.data
    if cmd.kinematics == "holonomic":
        robot.angular = cmd.data[2]
    return robot


def robot_wheelbase(robot):
    return getattr(robot, "wheelbase", 0.8)


# ---------------------------------------------------------------------------
# Per-robot pipeline driver


@dataclass
class NavParams:
    behavior: BehaviorParams = field(default_factory=BehaviorParams)
    dwa: DWAParams = field(default_factory=DWAParams)
    replan_period: float = 2.0  # s


class RobotDriver:
    """Owns one robot's planning state across ticks."""

    def __init__(self, robot, cfg: RobotConfig, behavior: str = "neutral",
                 params: NavParams | None = None):
        if behavior not in INTERPLANNERS:
            raise ValueError(f"unknown intermediate planner {behavior!r}")
        self.robot = robot
        self.cfg = cfg
        self.behavior = behavior
        self.params = params or NavParams()
        self._global = None
        self._planned_at = -math.inf
        self._goal_cache = None
        self.flags = []

    def control(self, world, dmap, costmap=None) -> VelocityCommand:
        robot = self.robot
        if robot.goal is None:
            return VelocityCommand.stop(self.cfg.kinematics)
        goal_moved = (self._goal_cache is None
                      or not np.array_equal(self._goal_cache, robot.goal))
        stale = world.time - self._planned_at >= self.params.replan_period
        if self._global is None or stale or goal_moved:
            try:
                self._global = plan_global(world.grid, dmap, robot.pose[:2],
                                           robot.goal, self.cfg.footprint_radius)
            except NoPath:
                self._global = None
                self.flags.append(f"no_path@{world.time:.1f}")
            self._planned_at = world.time
            self._goal_cache = robot.goal.copy()
        if self._global is None:
            return VelocityCommand.stop(self.cfg.kinematics)
        dynamic = [(a.position, a.velocity) for a in
                   sorted(world.agents, key=lambda ag: ag.id)]
        wheelbase = self.cfg.wheelbase
        robot.wheelbase = wheelbase
        local, overrides, flags = INTERPLANNERS[self.behavior](
            self._global, robot.pose, dmap, costmap, dynamic,
            self.params.behavior, self.cfg.footprint_radius)
        self.flags.extend(flags)
        obstacles = [(a.position, a.radius) for a in
                     sorted(world.agents, key=lambda ag: ag.id)]
        return dwa_control(robot, self.cfg, local, dmap, obstacles,
                           overrides, self.params.dwa)
