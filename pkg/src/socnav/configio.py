"""Config parsing, schema validation, and semantic hashing.

One YAML family covers scenarios, benchmarks, curricula, and model catalogs.
Every file carries a versioned `schema:` header. Validation happens before
any simulation starts and reports the offending field path and source line.
The semantic hash is a SHA-256 over the canonical JSON form of the config
with non-semantic fields (output locations) removed.
"""

from __future__ import annotations

import hashlib
import json
import os

import yaml

from .errors import ConfigError
from .mapgen import ALGORITHMS

SCENARIO_SCHEMA = "socnav/scenario@1"
BENCHMARK_SCHEMA = "socnav/benchmark@1"
CURRICULUM_SCHEMA = "socnav/curriculum@1"
CATALOG_SCHEMA = "socnav/catalog@1"

NON_SEMANTIC_KEYS = ("output",)

OBSTACLE_MODES = ("scenario", "random", "parametrized")
ROBOT_MODES = ("scenario", "random", "explore", "waypoints")


def _line_map(path):
    """Field-path -> 1-based source line, from the YAML node tree."""
    lines = {}
    try:
        with open(path) as fh:
            root = yaml.compose(fh)
    except yaml.YAMLError:
        return lines
    if root is None:
        return lines

    def walk(node, trail):
        lines[trail] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                walk(value_node, trail + (str(key_node.value),))
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                walk(item, trail + (i,))

    walk(root, ())
    return lines


class Validator:
    def __init__(self, path, data, lines):
        self.path = path
        self.data = data
        self.lines = lines

    def fail(self, trail, message):
        field = ".".join(str(t) for t in trail) or "<root>"
        raise ConfigError(f"{self.path}: {message}", field=field,
                          line=self.lines.get(tuple(trail)))

    def get(self, trail, expected=None, required=True, default=None):
        node = self.data
        for part in trail:
            if isinstance(node, dict) and part in node:
                node = node[part]
            elif isinstance(node, list) and isinstance(part, int) \
                    and part < len(node):
                node = node[part]
            else:
                if required:
                    self.fail(trail, "missing required field")
                return default
        if expected is not None and not isinstance(node, expected):
            names = expected.__name__ if isinstance(expected, type) else \
                "/".join(t.__name__ for t in expected)
            self.fail(trail, f"expected {names}, got {type(node).__name__}")
        return node

    def check_range(self, trail, value):
        if (not isinstance(value, (list, tuple)) or len(value) != 2
                or not all(isinstance(v, (int, float)) for v in value)
                or value[0] > value[1]):
            self.fail(trail, "expected a [low, high] pair with low <= high")
        return [value[0], value[1]]

    def check_point(self, trail, value, size=2):
        if (not isinstance(value, (list, tuple)) or len(value) != size
                or not all(isinstance(v, (int, float)) for v in value)):
            self.fail(trail, f"expected a {size}-vector of numbers")
        return [float(v) for v in value]


def load_config(path, expected_schema):
    path = str(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"{path}: YAML parse error: {exc}",
                              line=None if mark is None else mark.line + 1
                              ) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    lines = _line_map(path)
    v = Validator(path, data, lines)
    schema = v.get(("schema",), str)
    if schema != expected_schema:
        v.fail(("schema",), f"expected {expected_schema!r}, got {schema!r}")
    return data, v


def _validate_zone(v, trail, zone):
    shape = v.get(tuple(trail) + ("shape",), str)
    if shape == "circle":
        for key in ("x", "y", "radius"):
            v.get(tuple(trail) + (key,), (int, float))
    elif shape == "rect":
        for key in ("x", "y", "width", "height"):
            v.get(tuple(trail) + (key,), (int, float))
    else:
        v.fail(tuple(trail) + ("shape",), "shape must be 'circle' or 'rect'")


def _validate_map(v, trail):
    node = v.get(tuple(trail), dict)
    if "file" in node:
        return
    gen = v.get(tuple(trail) + ("generator",), dict)
    algorithm = v.get(tuple(trail) + ("generator", "algorithm"), str)
    if algorithm not in ALGORITHMS:
        v.fail(tuple(trail) + ("generator", "algorithm"),
               f"unknown algorithm; expected one of {', '.join(ALGORITHMS)}")
    if "size" in gen:
        v.check_point(tuple(trail) + ("generator", "size"), gen["size"])
    from .mapgen import validate_generator_params
    try:
        validate_generator_params(algorithm, gen.get("params"))
    except ValueError as exc:
        v.fail(tuple(trail) + ("generator", "params"), str(exc))


def load_scenario(path):
    data, v = load_config(path, SCENARIO_SCHEMA)
    _validate_map(v, ("map",))
    from .forces import PLUGIN_FACTORIES
    from .states import STATE_BY_NAME
    for i, ped in enumerate(v.get(("pedestrians",), list, required=False,
                                  default=[]) or []):
        v.check_point(("pedestrians", i, "spawn"), ped.get("spawn"))
        wps = v.get(("pedestrians", i, "waypoints"), list)
        for j, wp in enumerate(wps):
            v.check_point(("pedestrians", i, "waypoints", j), wp)
        plugin = ped.get("plugin", "pysocial")
        if plugin not in PLUGIN_FACTORIES:
            v.fail(("pedestrians", i, "plugin"),
                   f"plugin {plugin!r} is not registered")
        state = ped.get("state", "walking")
        if str(state).lower() not in STATE_BY_NAME:
            v.fail(("pedestrians", i, "state"),
                   f"unknown social state {state!r}")
    robot = v.get(("robot",), dict, required=False)
    if robot is not None:
        v.check_point(("robot", "start"), robot.get("start"), size=3)
        if "goal" in robot:
            v.check_point(("robot", "goal"), robot.get("goal"))
        for j, wp in enumerate(robot.get("waypoints", []) or []):
            v.check_point(("robot", "waypoints", j), wp)
        if "goal" not in robot and not robot.get("waypoints"):
            v.fail(("robot",), "robot needs a goal or a waypoint list")
    for i, obs in enumerate(v.get(("static_obstacles",), list, required=False,
                                  default=[]) or []):
        _validate_zone(v, ("static_obstacles", i), obs)
    return data


def _validate_obstacle_bundle(v, trail, node, base_dir):
    mode = node.get("mode", "random")
    if mode not in OBSTACLE_MODES:
        v.fail(tuple(trail) + ("mode",),
               f"obstacle mode must be one of {OBSTACLE_MODES}")
    if mode == "scenario":
        ref = v.get(tuple(trail) + ("scenario",), str)
        load_scenario(resolve_path(ref, base_dir))
    if mode == "parametrized":
        ref = v.get(tuple(trail) + ("catalog",), str)
        load_catalog(resolve_path(ref, base_dir))
    for key in ("pedestrians", "statics", "groups", "group_size",
                "waypoints", "speed"):
        if key in node:
            v.check_range(tuple(trail) + (key,), node[key])
    plugin = node.get("plugin", "pysocial")
    from .forces import PLUGIN_FACTORIES
    if plugin not in PLUGIN_FACTORIES:
        v.fail(tuple(trail) + ("plugin",), f"plugin {plugin!r} not registered")


def load_benchmark(path):
    data, v = load_config(path, BENCHMARK_SCHEMA)
    base_dir = os.path.dirname(os.path.abspath(path))
    stages = v.get(("stages",), list)
    if not stages:
        v.fail(("stages",), "benchmark needs at least one stage")
    names = set()
    for i, stage in enumerate(stages):
        name = v.get(("stages", i, "name"), str)
        if name in names:
            v.fail(("stages", i, "name"), f"duplicate stage name {name!r}")
        names.add(name)
        episodes = v.get(("stages", i, "episodes"), int)
        if episodes < 1:
            v.fail(("stages", i, "episodes"), "episode count must be >= 1")
        if "seed_base" in stage and not isinstance(stage["seed_base"], int):
            v.fail(("stages", i, "seed_base"), "seed_base must be an integer")
        obstacles = v.get(("stages", i, "obstacles"), dict, required=False,
                          default={}) or {}
        _validate_obstacle_bundle(v, ("stages", i, "obstacles"), obstacles,
                                  base_dir)
        robot = v.get(("stages", i, "robot"), dict, required=False,
                      default={}) or {}
        mode = robot.get("mode", "random")
        if mode not in ROBOT_MODES:
            v.fail(("stages", i, "robot", "mode"),
                   f"robot mode must be one of {ROBOT_MODES}")
        if mode == "scenario" and obstacles.get("mode") != "scenario":
            ref = robot.get("scenario") or obstacles.get("scenario")
            if not ref:
                v.fail(("stages", i, "robot"),
                       "scenario robot mode needs a scenario file")
        if mode == "waypoints":
            wps = v.get(("stages", i, "robot", "waypoints"), list)
            for j, wp in enumerate(wps):
                v.check_point(("stages", i, "robot", "waypoints", j), wp)
        if "map" in stage:
            _validate_map(v, ("stages", i, "map"))
        elif obstacles.get("mode") != "scenario":
            v.fail(("stages", i), "stage needs a map or a scenario")
        for j, zone in enumerate(stage.get("forbidden_zones", []) or []):
            _validate_zone(v, ("stages", i, "forbidden_zones", j), zone)
    return data


def load_curriculum(path):
    data, v = load_config(path, CURRICULUM_SCHEMA)
    stages = v.get(("stages",), list)
    if not stages:
        v.fail(("stages",), "curriculum needs at least one stage")
    for i, stage in enumerate(stages):
        v.get(("stages", i, "name"), str)
        obstacles = v.get(("stages", i, "obstacles"), dict, required=False,
                          default={}) or {}
        for key in ("pedestrians", "statics"):
            if key in obstacles:
                v.check_range(("stages", i, "obstacles", key), obstacles[key])
        if "map" in stage:
            _validate_map(v, ("stages", i, "map"))
    return data


def load_catalog(path):
    data, v = load_config(path, CATALOG_SCHEMA)
    models = v.get(("models",), list)
    if not models:
        v.fail(("models",), "catalog needs at least one model")
    from .forces import PLUGIN_FACTORIES
    for i, model in enumerate(models):
        v.get(("models", i, "name"), str)
        kind = v.get(("models", i, "kind"), str)
        if kind not in ("pedestrian", "static"):
            v.fail(("models", i, "kind"), "kind must be pedestrian or static")
        v.check_range(("models", i, "count"), v.get(("models", i, "count")))
        if "radius" in model and model["radius"] <= 0:
            v.fail(("models", i, "radius"), "radius must be positive")
        if kind == "pedestrian":
            plugin = model.get("plugin", "pysocial")
            if plugin not in PLUGIN_FACTORIES:
                v.fail(("models", i, "plugin"),
                       f"plugin {plugin!r} not registered")
    return data


def resolve_path(ref, base_dir):
    if os.path.isabs(ref) or os.path.exists(ref):
        return ref
    candidate = os.path.join(base_dir, ref)
    if os.path.exists(candidate):
        return candidate
    import importlib.resources
    packaged = importlib.resources.files("socnav").joinpath(
        f"data/scenarios/{ref}")
    if packaged.is_file():
        return str(packaged)
    return candidate


def semantic_view(data):
    """Config minus non-semantic fields (output locations)."""
    if isinstance(data, dict):
        return {k: semantic_view(v) for k, v in sorted(data.items())
                if k not in NON_SEMANTIC_KEYS}
    if isinstance(data, list):
        return [semantic_view(v) for v in data]
    return data


def config_hash(data) -> str:
    canonical = json.dumps(semantic_view(data), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
