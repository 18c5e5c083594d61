"""Episode orchestration: task modes, random spawning, curricula, benchmarks.

Obstacle modes: scenario (exact file), random (counts from ranges),
parametrized (counts per catalog model). Robot modes: scenario, random
(mutually reachable start/goal), waypoints (cyclic file-driven list), explore
(obstacles persist across resets, only the goal is redrawn). The benchmark
runner executes stages in order with episode seeds derived as
seed_base + episode_index, so two runs of the same config see identical
worlds; results are flushed after every episode.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .configio import (config_hash, load_benchmark, load_catalog,
                       load_curriculum, load_scenario, resolve_path)
from .engine import SimParams, Simulation
from .errors import (PlacementExhausted, SocnavError, SpawnCollision,
                     StageOutOfRange, UnreachableGoal)
from .forces import ForceParams
from .mapgen import (FREE, GridMap, Provenance, generate_map, load_map,
                     stamp_circle, stamp_rect)
from .metrics import METRIC_FIELDS, MetricParams, compute_episode_metrics
from .navigation import NavParams, RobotDriver, blocked_mask, load_robot
from .recording import serialize_trace, trace_digest, write_trace
from .states import STATE_BY_NAME, DWELL_STATES, SocialState, StateParams
from .world import AgentState, RobotState, WorldState

PLACEMENT_BUDGET = 400  # rejection samples per single placement
RESEED_LIMIT = 100      # start/goal resampling attempts

DEFAULT_RANGES = {
    "pedestrians": [5, 15],
    "statics": [0, 4],
    "groups": [0, 2],
    "group_size": [2, 4],
    "waypoints": [2, 4],
    "speed": [0.8, 1.5],
}


# ---------------------------------------------------------------------------
# Geometry helpers


def zone_contains(zone, xy):
    if zone["shape"] == "circle":
        return (math.hypot(xy[0] - zone["x"], xy[1] - zone["y"])
                <= zone["radius"])
    return (zone["x"] <= xy[0] <= zone["x"] + zone["width"]
            and zone["y"] <= xy[1] <= zone["y"] + zone["height"])


def _sample_free(grid, dmap, rng, clearance, forbidden=(), taken=(),
                 min_sep=0.0, budget=PLACEMENT_BUDGET, what="placement"):
    w_ext, h_ext = grid.extent
    res = grid.resolution
    for _ in range(budget):
        xy = np.array([rng.uniform(res, w_ext - res),
                       rng.uniform(res, h_ext - res)])
        if float(dmap.distance_at(xy)) < clearance:
            continue
        if any(zone_contains(z, xy) for z in forbidden):
            continue
        if min_sep > 0 and any(
                math.hypot(xy[0] - p[0], xy[1] - p[1]) < min_sep
                for p in taken):
            continue
        return xy
    raise PlacementExhausted(f"could not site a {what} after {budget} tries")


def spawn_random_obstacles(ranges, grid: GridMap, forbidden, rng):
    """Random static circles and pedestrian specs on free, allowed ground.

    Placements are pairwise non-overlapping by footprint; every pedestrian
    gets a waypoint chain of the configured length, each waypoint free and
    outside the forbidden zones. Returns a plain-data placements dict.
    """
    cfg = dict(DEFAULT_RANGES)
    cfg.update({k: v for k, v in (ranges or {}).items()
                if k in DEFAULT_RANGES})
    plugin = (ranges or {}).get("plugin", "pysocial")
    dmap = grid.distance_map()
    taken = []
    statics = []
    n_static = int(rng.integers(cfg["statics"][0], cfg["statics"][1] + 1))
    for _ in range(n_static):
        radius = float(rng.uniform(0.3, 0.8))
        xy = _sample_free(grid, dmap, rng, radius + 0.1, forbidden, taken,
                          min_sep=2.0 * radius + 0.6, what="static obstacle")
        taken.append(xy)
        statics.append({"shape": "circle", "x": float(xy[0]),
                        "y": float(xy[1]), "radius": radius})
    if statics:
        # pedestrians and waypoints must clear the freshly placed statics
        grid = _apply_statics(grid, statics)
        dmap = grid.distance_map()

    def waypoint_chain(start):
        n_wp = int(rng.integers(cfg["waypoints"][0], cfg["waypoints"][1] + 1))
        chain = []
        for _ in range(n_wp):
            wp = _sample_free(grid, dmap, rng, 0.35, forbidden,
                              what="waypoint")
            chain.append([float(wp[0]), float(wp[1])])
        return chain

    pedestrians = []
    n_ped = int(rng.integers(cfg["pedestrians"][0], cfg["pedestrians"][1] + 1))
    n_groups = int(rng.integers(cfg["groups"][0], cfg["groups"][1] + 1))
    remaining = n_ped
    gid = 0
    for _ in range(n_groups):
        size = int(rng.integers(cfg["group_size"][0], cfg["group_size"][1] + 1))
        if size > remaining:
            break
        anchor = _sample_free(grid, dmap, rng, 0.35, forbidden, taken,
                              min_sep=1.0, what="group anchor")
        chain = waypoint_chain(anchor)
        members = []
        for _ in range(size):
            xy = _sample_free(grid, dmap, rng, 0.35, forbidden, taken,
                              min_sep=0.6, budget=PLACEMENT_BUDGET,
                              what="group member")
            # keep members near the anchor when possible
            if math.hypot(xy[0] - anchor[0], xy[1] - anchor[1]) > 2.5:
                for _ in range(50):
                    cand = anchor + rng.uniform(-1.5, 1.5, size=2)
                    if (grid.in_bounds(cand)
                            and float(dmap.distance_at(cand)) >= 0.35
                            and not any(zone_contains(z, cand)
                                        for z in forbidden)
                            and all(math.hypot(cand[0] - p[0],
                                               cand[1] - p[1]) >= 0.6
                                    for p in taken)):
                        xy = cand
                        break
            taken.append(xy)
            members.append(xy)
        leader = int(rng.integers(0, len(members)))
        speed = float(rng.uniform(*cfg["speed"]))
        for m_idx, xy in enumerate(members):
            pedestrians.append({
                "spawn": [float(xy[0]), float(xy[1])],
                "waypoints": [list(w) for w in chain],
                "plugin": plugin, "group": gid,
                "leader": m_idx == leader, "state": "walking",
                "speed": speed, "radius": 0.3,
            })
        remaining -= len(members)
        gid += 1
    for _ in range(remaining):
        xy = _sample_free(grid, dmap, rng, 0.35, forbidden, taken,
                          min_sep=0.6, what="pedestrian")
        taken.append(xy)
        pedestrians.append({
            "spawn": [float(xy[0]), float(xy[1])],
            "waypoints": waypoint_chain(xy),
            "plugin": plugin, "group": None, "leader": False,
            "state": "walking",
            "speed": float(rng.uniform(*cfg["speed"])), "radius": 0.3,
        })
    return {"statics": statics, "pedestrians": pedestrians}


def _spawn_parametrized(catalog, grid, forbidden, rng):
    dmap = grid.distance_map()
    taken = []
    statics = []
    pedestrians = []
    # statics first so pedestrian sampling can clear them on the grid
    counts = [int(rng.integers(m["count"][0], m["count"][1] + 1))
              for m in catalog["models"]]
    for model, count in zip(catalog["models"], counts):
        if model["kind"] != "static":
            continue
        for _ in range(count):
            radius = float(model.get("radius", 0.5))
            xy = _sample_free(grid, dmap, rng, radius + 0.1, forbidden,
                              taken, min_sep=2 * radius + 0.4,
                              what=f"model {model['name']}")
            taken.append(xy)
            statics.append({"shape": "circle", "x": float(xy[0]),
                            "y": float(xy[1]), "radius": radius})
    if statics:
        grid = _apply_statics(grid, statics)
        dmap = grid.distance_map()
    for model, count in zip(catalog["models"], counts):
        if model["kind"] != "pedestrian":
            continue
        for _ in range(count):
            radius = float(model.get("radius", 0.3))
            xy = _sample_free(grid, dmap, rng, radius + 0.05, forbidden,
                              taken, min_sep=0.6,
                              what=f"model {model['name']}")
            taken.append(xy)
            speed_range = model.get("speed", [0.8, 1.5])
            chain = []
            for _ in range(int(rng.integers(2, 5))):
                wp = _sample_free(grid, dmap, rng, 0.35, forbidden,
                                  what="waypoint")
                chain.append([float(wp[0]), float(wp[1])])
            pedestrians.append({
                "spawn": [float(xy[0]), float(xy[1])],
                "waypoints": chain,
                "plugin": model.get("plugin", "pysocial"),
                "group": None, "leader": False, "state": "walking",
                "speed": float(rng.uniform(*speed_range)),
                "radius": radius,
            })
    return {"statics": statics, "pedestrians": pedestrians}


# ---------------------------------------------------------------------------
# World assembly


def _build_grid(map_spec, base_dir, seed):
    if "file" in map_spec:
        return load_map(resolve_path(map_spec["file"], base_dir))
    gen = map_spec["generator"]
    size = tuple(gen.get("size", (120, 120)))
    resolution = float(gen.get("resolution", 0.25))
    use_seed = gen.get("seed", seed)
    return generate_map(gen["algorithm"], gen.get("params"), size,
                        use_seed, resolution)


def _apply_statics(grid: GridMap, statics):
    if not statics:
        return grid
    out = grid.copy()
    for obs in statics:
        if obs["shape"] == "circle":
            stamp_circle(out.cells, out.resolution, obs["x"], obs["y"],
                         obs["radius"])
        else:
            stamp_rect(out.cells, out.resolution, obs["x"], obs["y"],
                       obs["width"], obs["height"])
    out.provenance = Provenance(grid.provenance.algorithm + "+static",
                                grid.provenance.params, grid.provenance.size,
                                grid.provenance.seed, grid.resolution)
    return out


def _make_agents(ped_specs, grid, rng, state_params: StateParams):
    agents = []
    for i, spec in enumerate(ped_specs):
        spawn = np.asarray(spec["spawn"], dtype=float)
        if grid.occupied_at(spawn):
            raise SpawnCollision(
                f"pedestrian {i} spawn {spawn.tolist()} is occupied")
        state = STATE_BY_NAME[str(spec.get("state", "walking")).lower()]
        speed = float(spec.get("speed", 1.3))
        agent = AgentState(
            id=i, position=spawn, velocity=np.zeros(2),
            desired_speed=speed,
            waypoints=[np.asarray(w, dtype=float)
                       for w in spec.get("waypoints", [])],
            group_id=spec.get("group"),
            is_group_leader=bool(spec.get("leader", False)),
            social_state=state,
            plugin=spec.get("plugin", "pysocial"),
            radius=float(spec.get("radius", 0.3)),
            entry_speed=speed,
        )
        if state in DWELL_STATES or state == SocialState.INTERESTED_IN_ROBOT:
            lo, hi = state_params.dwell_range
            agent.state_dwell = float(rng.uniform(lo, hi))
        agents.append(agent)
    _assign_missing_leaders(agents, rng)
    return agents


def _assign_missing_leaders(agents, rng):
    groups = {}
    for agent in agents:
        if agent.group_id is not None:
            groups.setdefault(agent.group_id, []).append(agent)
    for gid in sorted(groups):
        members = groups[gid]
        leaders = [m for m in members if m.is_group_leader]
        if len(leaders) == 1:
            continue
        for m in members:
            m.is_group_leader = False
        pick = int(rng.integers(0, len(members))) if len(leaders) != 1 else 0
        members[pick].is_group_leader = True


def _reachable(grid, dmap, footprint, start, goal):
    blocked = blocked_mask(grid, dmap, footprint)
    h, w = blocked.shape
    sc, sr = grid.world_to_cell(np.asarray(start, dtype=float))
    gc, gr = grid.world_to_cell(np.asarray(goal, dtype=float))
    if blocked[sr, sc] or blocked[gr, gc]:
        return False
    seen = np.zeros_like(blocked, dtype=bool)
    stack = [(int(sr), int(sc))]
    seen[sr, sc] = True
    target = (int(gr), int(gc))
    while stack:
        r, c = stack.pop()
        if (r, c) == target:
            return True
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < h and 0 <= cc < w and not blocked[rr, cc] \
                    and not seen[rr, cc]:
                seen[rr, cc] = True
                stack.append((rr, cc))
    return False


def _sample_robot_endpoints(grid, rng, footprint, forbidden, min_separation=5.0):
    dmap = grid.distance_map()
    for _ in range(RESEED_LIMIT):
        start = _sample_free(grid, dmap, rng, footprint + 0.1, forbidden,
                             what="robot start")
        goal = _sample_free(grid, dmap, rng, footprint + 0.1, forbidden,
                            what="robot goal")
        if math.hypot(goal[0] - start[0], goal[1] - start[1]) < min_separation:
            continue
        if _reachable(grid, dmap, footprint, start, goal):
            theta = float(rng.uniform(-math.pi, math.pi))
            return np.array([start[0], start[1], theta]), goal
    raise UnreachableGoal(
        f"no mutually reachable robot start/goal after {RESEED_LIMIT} tries")


def _sample_goal(grid, rng, footprint, forbidden, start):
    dmap = grid.distance_map()
    for _ in range(RESEED_LIMIT):
        goal = _sample_free(grid, dmap, rng, footprint + 0.1, forbidden,
                            what="robot goal")
        if math.hypot(goal[0] - start[0], goal[1] - start[1]) < 3.0:
            continue
        if _reachable(grid, dmap, footprint, start[:2], goal):
            return goal
    raise UnreachableGoal(f"no reachable goal after {RESEED_LIMIT} tries")


# ---------------------------------------------------------------------------
# Mode bundles and episode reset


@dataclass
class ModeBundle:
    """One stage's task-mode configuration plus cross-reset caches."""

    stage: dict
    base_dir: str = "."
    footprint_radius: float = 0.3
    state_params: StateParams = field(default_factory=StateParams)
    explore_placements: dict | None = None
    explore_start: list | None = None

    @property
    def seed_base(self):
        return int(self.stage.get("seed_base", 0))

    def forbidden_zones(self):
        modules = self.stage.get("modules") or {}
        if modules.get("clear_forbidden_zones"):
            return []
        return list(self.stage.get("forbidden_zones") or [])


def staged_curriculum(path, stage_index: int) -> ModeBundle:
    """Stage bundle from a curriculum file; explicit caller-driven indexing."""
    data = load_curriculum(path)
    stages = data["stages"]
    if not 0 <= stage_index < len(stages):
        raise StageOutOfRange(
            f"stage {stage_index} out of range; file has {len(stages)}")
    return ModeBundle(stage=copy.deepcopy(stages[stage_index]),
                      base_dir=os.path.dirname(os.path.abspath(path)))


def reset_episode(bundle: ModeBundle, episode_index: int,
                  world=None) -> WorldState:
    """Fresh WorldState for one episode under the bundle's task modes.

    The previous world is only consulted by explore mode (obstacles persist);
    the dynamic-map module regenerates the map with seed_base + episode_index.
    """
    stage = bundle.stage
    seed = bundle.seed_base + episode_index
    rng = np.random.default_rng(seed)
    modules = stage.get("modules") or {}
    obstacles_cfg = stage.get("obstacles") or {}
    robot_cfg = stage.get("robot") or {}
    obstacle_mode = obstacles_cfg.get("mode", "random")
    robot_mode = robot_cfg.get("mode", "random")
    forbidden = bundle.forbidden_zones()

    scenario = None
    if obstacle_mode == "scenario" or robot_mode == "scenario":
        ref = obstacles_cfg.get("scenario") or robot_cfg.get("scenario")
        scenario = load_scenario(resolve_path(ref, bundle.base_dir))

    # map source: scenario file wins, else the stage's map spec
    if scenario is not None and obstacle_mode == "scenario":
        grid = _build_grid(scenario["map"], bundle.base_dir,
                           scenario.get("seed", 0))
        statics = list(scenario.get("static_obstacles") or [])
        ped_specs = list(scenario.get("pedestrians") or [])
        spawn_rng = np.random.default_rng(scenario.get("seed", 0))
    else:
        map_seed = seed if modules.get("dynamic_map") else bundle.seed_base
        grid = _build_grid(stage["map"], bundle.base_dir, map_seed)
        if obstacle_mode == "parametrized":
            catalog = load_catalog(resolve_path(obstacles_cfg["catalog"],
                                                bundle.base_dir))
            placements = _spawn_parametrized(catalog, grid, forbidden, rng)
        elif robot_mode == "explore":
            if bundle.explore_placements is None:
                explore_rng = np.random.default_rng(bundle.seed_base)
                bundle.explore_placements = spawn_random_obstacles(
                    obstacles_cfg, grid, forbidden, explore_rng)
            placements = bundle.explore_placements
        else:
            placements = spawn_random_obstacles(obstacles_cfg, grid,
                                                forbidden, rng)
        statics = placements["statics"]
        ped_specs = placements["pedestrians"]
        spawn_rng = rng

    grid = _apply_statics(grid, statics)
    agents = _make_agents(ped_specs, grid, spawn_rng, bundle.state_params)

    footprint = bundle.footprint_radius
    robot = None
    if robot_mode == "scenario" and scenario is not None \
            and scenario.get("robot"):
        spec = scenario["robot"]
        start = np.asarray(spec["start"], dtype=float)
        if grid.occupied_at(start[:2]):
            raise SpawnCollision(f"robot start {start[:2].tolist()} occupied")
        robot = RobotState(pose=start, footprint_radius=footprint)
        if spec.get("waypoints"):
            robot.waypoints = [np.asarray(w, dtype=float)
                               for w in spec["waypoints"]]
            robot.goal = robot.waypoints[0].copy()
        else:
            robot.goal = np.asarray(spec["goal"], dtype=float)
    elif robot_mode == "waypoints":
        wps = [np.asarray(w, dtype=float) for w in robot_cfg["waypoints"]]
        if robot_cfg.get("start"):
            start = np.asarray(robot_cfg["start"], dtype=float)
        else:
            pose, _ = _sample_robot_endpoints(grid, rng, footprint, forbidden)
            start = pose
        robot = RobotState(pose=start, footprint_radius=footprint,
                           waypoints=wps, goal=wps[0].copy())
    elif robot_mode == "explore":
        if bundle.explore_start is None:
            anchor_rng = np.random.default_rng(bundle.seed_base)
            pose, _ = _sample_robot_endpoints(grid, anchor_rng, footprint,
                                              forbidden)
            bundle.explore_start = [float(v) for v in pose]
        start = np.asarray(bundle.explore_start, dtype=float)
        goal = _sample_goal(grid, rng, footprint, forbidden, start)
        robot = RobotState(pose=start, footprint_radius=footprint, goal=goal)
    else:
        pose, goal = _sample_robot_endpoints(grid, rng, footprint, forbidden)
        robot = RobotState(pose=pose, footprint_radius=footprint, goal=goal)

    return WorldState(grid, agents=agents, robots=[robot], rng_seed=seed,
                      static_obstacles=[(o["shape"], o) for o in statics])


# ---------------------------------------------------------------------------
# Episode execution


def _plugin_extras(stage, grid):
    cfg = (stage.get("obstacles") or {}).get("plugin_params") or {}
    extras = {k: dict(v) for k, v in cfg.items()}
    w_ext, h_ext = grid.extent
    for kind in ("evacuation", "bonding"):
        extras.setdefault(kind, {})
        extras[kind].setdefault("exit", [w_ext / 2.0, h_ext / 2.0])
    return extras


def run_episode(bundle: ModeBundle, episode_index: int, planner: str,
                robot_cfg, *, timeout=180.0, force_params=None,
                record_trace=False):
    """Execute one episode; returns a result dict with metrics and hashes."""
    seed = bundle.seed_base + episode_index
    bundle = ModeBundle(bundle.stage, bundle.base_dir,
                        robot_cfg.footprint_radius, bundle.state_params,
                        bundle.explore_placements, bundle.explore_start)
    world = reset_episode(bundle, episode_index)
    robot = world.robots[0]
    robot.kinematics = robot_cfg.kinematics
    driver = RobotDriver(robot, robot_cfg, planner, NavParams())
    sim = Simulation(
        world, np.random.default_rng(seed),
        drivers=[driver],
        force_params=force_params or ForceParams(),
        state_params=bundle.state_params,
        sim_params=SimParams(timeout=timeout),
        plugin_extras=_plugin_extras(bundle.stage, world.grid),
    )
    outcome = sim.run()
    goal = robot.goal if not robot.waypoints else robot.waypoints[-1]
    metrics = compute_episode_metrics(outcome.trace, goal, MetricParams())
    digest = trace_digest(outcome.trace)
    return {
        "seed": seed,
        "metrics": metrics,
        "outcome": outcome.reason,
        "trace": outcome.trace if record_trace else None,
        "hash": digest,
        "explore_placements": bundle.explore_placements,
        "explore_start": bundle.explore_start,
    }


def _worker(payload):
    """Top-level worker for process pools; exceptions become failed episodes."""
    bundle = ModeBundle(payload["stage"], payload["base_dir"],
                        explore_placements=payload.get("explore_placements"),
                        explore_start=payload.get("explore_start"))
    robot_cfg = load_robot(payload["robot"])
    try:
        result = run_episode(bundle, payload["episode_index"],
                             payload["planner"], robot_cfg,
                             timeout=payload["timeout"],
                             record_trace=payload["record"])
        trace_bytes = serialize_trace(result["trace"]) \
            if result["trace"] is not None else None
        return {
            "stage": payload["stage_name"],
            "episode": payload["episode_index"],
            "seed": result["seed"],
            "metrics": asdict(result["metrics"]),
            "outcome": result["outcome"],
            "hash": result["hash"],
            "trace_bytes": trace_bytes,
            "error": None,
        }
    except SocnavError as exc:
        return {
            "stage": payload["stage_name"],
            "episode": payload["episode_index"],
            "seed": int(payload["stage"].get("seed_base", 0))
            + payload["episode_index"],
            "metrics": None,
            "outcome": "failed",
            "hash": None,
            "trace_bytes": None,
            "error": f"{type(exc).__name__}: {exc}",
        }


# ---------------------------------------------------------------------------
# Benchmark runner


CSV_PREFIX = ["stage", "episode", "seed", "planner", "robot"]
CSV_SUFFIX = ["trajectory_hash", "error"]
CSV_COLUMNS = CSV_PREFIX + METRIC_FIELDS + CSV_SUFFIX


def format_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_row(stage, episode, seed, planner, robot, metrics_dict,
                digest, error):
    cells = [stage, str(episode), str(seed), planner, robot]
    for name in METRIC_FIELDS:
        cells.append(format_cell(None if metrics_dict is None
                                 else metrics_dict.get(name)))
    cells.append(digest or "")
    cells.append(error or "")
    return ",".join(cells)


def resolve_seed_bases(config, seed_override=None):
    """Fill missing stage seed bases; explicit --seed beats entropy."""
    filled = copy.deepcopy(config)
    entropy = np.random.SeedSequence(seed_override)
    for i, stage in enumerate(filled["stages"]):
        if "seed_base" not in stage:
            if seed_override is not None:
                stage["seed_base"] = int(seed_override) + 10000 * i
            else:
                stage["seed_base"] = int(entropy.spawn(1)[0].generate_state(
                    1, dtype=np.uint32)[0])
    return filled


def run_benchmark(config, planner: str, robot: str, out_dir, *,
                  base_dir=".", jobs: int = 1, record: bool = False,
                  seed_override=None, log=lambda msg: None):
    """Execute every stage of a validated benchmark config.

    Returns (rows, manifest) where rows are (stage, episode, MetricsRecord or
    None). Partial CSV results are flushed after every episode; individual
    episode failures are recorded, never fatal.
    """
    import yaml

    config = resolve_seed_bases(config, seed_override)
    digest = config_hash(config)
    os.makedirs(out_dir, exist_ok=True)
    trace_dir = os.path.join(out_dir, "traces")
    if record:
        os.makedirs(trace_dir, exist_ok=True)

    timeout = float(config.get("timeout", 180.0))
    metrics_path = os.path.join(out_dir, f"metrics_{planner}.csv")
    agg_path = os.path.join(out_dir, f"aggregates_{planner}.csv")
    sidecar_path = os.path.join(out_dir, f"metrics_{planner}.meta.json")
    manifest_path = os.path.join(out_dir, "manifest.yaml")

    manifest = {
        "schema": "socnav/manifest@1",
        "engine_version": __version__,
        "config_hash": digest,
        "planner": planner,
        "robot": robot,
        "stages": [
            {"name": s["name"], "episodes": s["episodes"],
             "seed_base": s["seed_base"],
             "seeds": [s["seed_base"] + k for k in range(s["episodes"])]}
            for s in config["stages"]
        ],
        "outputs": [os.path.basename(metrics_path),
                    os.path.basename(agg_path),
                    os.path.basename(sidecar_path)],
        "complete": False,
    }
    with open(manifest_path, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)

    payloads = []
    for stage in config["stages"]:
        explore_placements = None
        explore_start = None
        robot_cfg = load_robot(robot)
        if (stage.get("robot") or {}).get("mode") == "explore":
            bundle = ModeBundle(stage, base_dir, robot_cfg.footprint_radius)
            reset_episode(bundle, 0)  # warm the persistent placements
            explore_placements = bundle.explore_placements
            explore_start = bundle.explore_start
        for k in range(stage["episodes"]):
            payloads.append({
                "stage": stage, "stage_name": stage["name"], "base_dir": base_dir,
                "episode_index": k, "planner": planner, "robot": robot,
                "timeout": timeout, "record": record,
                "explore_placements": explore_placements,
                "explore_start": explore_start,
            })

    rows = []
    results = []
    with open(metrics_path, "w") as csv_fh:
        csv_fh.write(",".join(CSV_COLUMNS) + "\n")
        csv_fh.flush()
        for result in _imap(payloads, jobs):
            results.append(result)
            line = metrics_row(result["stage"], result["episode"],
                               result["seed"], planner, robot,
                               result["metrics"], result["hash"],
                               result["error"])
            csv_fh.write(line + "\n")
            csv_fh.flush()
            if record and result["trace_bytes"] is not None:
                name = f"{result['stage']}_{result['episode']:04d}.trace"
                _write_trace_bytes(os.path.join(trace_dir, name),
                                   result["trace_bytes"])
                manifest["outputs"].append(os.path.join("traces", name))
            rec = None
            if result["metrics"] is not None:
                from .metrics import MetricsRecord
                rec = MetricsRecord(**result["metrics"])
            rows.append((result["stage"], result["episode"], rec))
            log(f"{result['stage']}[{result['episode']}] -> "
                f"{result['outcome']}")

    from .metrics import aggregate
    grouped = aggregate([((r["stage"],), MetricsRecord_from(r))
                         for r in results if r["metrics"] is not None],
                        lambda key, rec: key[0])
    _write_aggregates(agg_path, grouped, planner, robot)
    with open(sidecar_path, "w") as fh:
        json.dump({
            "config_hash": digest,
            "engine_version": __version__,
            "planner": planner,
            "robot": robot,
            "seeds": {s["name"]: s["seeds"] for s in manifest["stages"]},
            "facing_cone": {"half_angle_rad": MetricParams().face_half_angle,
                            "range_m": MetricParams().face_range},
            "private_radius_m": MetricParams().private_radius,
        }, fh, sort_keys=True, indent=2)
    manifest["complete"] = all(r["error"] is None for r in results)
    with open(manifest_path, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    return rows, manifest


def MetricsRecord_from(result):
    from .metrics import MetricsRecord
    return MetricsRecord(**result["metrics"])


def _write_trace_bytes(path, body):
    import hashlib
    import struct
    with open(path, "wb") as fh:
        fh.write(b"SNVT")
        fh.write(struct.pack("<I", 1))
        fh.write(body)
        fh.write(struct.pack("<I", 0xFFFFFFFF))
        fh.write(hashlib.sha256(body).digest())


def _write_aggregates(path, grouped, planner, robot):
    with open(path, "w") as fh:
        fh.write("planner,robot,stage,metric,mean,std,min,max\n")
        for stage in sorted(grouped):
            stats = grouped[stage]
            for metric in sorted(stats):
                if metric in ("episodes",):
                    continue
                value = stats[metric]
                if value is None:
                    fh.write(f"{planner},{robot},{stage},{metric},,,,\n")
                elif isinstance(value, dict):
                    fh.write(f"{planner},{robot},{stage},{metric},"
                             f"{format_cell(value['mean'])},"
                             f"{format_cell(value['std'])},"
                             f"{format_cell(value['min'])},"
                             f"{format_cell(value['max'])}\n")
                else:
                    fh.write(f"{planner},{robot},{stage},{metric},"
                             f"{format_cell(float(value))},,,\n")


def _imap(payloads, jobs):
    if jobs <= 1:
        for payload in payloads:
            yield _worker(payload)
        return
    import multiprocessing as mp
    ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods()
                         else "spawn")
    with ctx.Pool(processes=jobs) as pool:
        yield from pool.imap(_worker, payloads)
