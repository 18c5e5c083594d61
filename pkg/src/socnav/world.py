"""Simulation state and the fixed-timestep integration primitives.

One world advances on a single logical thread; distinct worlds are fully
independent and may run in parallel. All agent dynamics use semi-implicit
Euler at a fixed dt with a global speed clamp, and post-step positions are
projected out of occupied cells along the distance-map gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingLeader, NonFiniteForce
from .mapgen import FREE, GridMap
from .states import SocialState

V_MAX = 2.0  # m/s, global agent speed clamp
DT = 0.1  # s, engine timestep
WAYPOINT_TOLERANCE = 1.0  # m, tolerant reach threshold (suppresses spinning)


@dataclass
class AgentState:
    """One pedestrian."""

    id: int
    position: np.ndarray
    velocity: np.ndarray
    desired_speed: float = 1.3
    heading: float = 0.0
    waypoints: list = field(default_factory=list)
    waypoint_index: int = 0
    group_id: int | None = None
    is_group_leader: bool = False
    social_state: SocialState = SocialState.WALKING
    plugin: str = "pysocial"
    cyclic_waypoints: bool = True
    radius: float = 0.3
    # engine bookkeeping
    entry_speed: float = 1.3
    state_entered: float = 0.0
    state_dwell: float = 0.0
    waypoint_override: np.ndarray | None = None
    route_done: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.waypoints = [np.asarray(w, dtype=float) for w in self.waypoints]

    @property
    def speed(self):
        return float(np.hypot(self.velocity[0], self.velocity[1]))

    def base_waypoint(self):
        """Own current route waypoint, ignoring overrides. None when done."""
        if not self.waypoints or self.route_done:
            return None
        return self.waypoints[self.waypoint_index]

    def current_waypoint(self):
        """Effective goal this tick: state override wins over the route."""
        if self.waypoint_override is not None:
            return self.waypoint_override
        return self.base_waypoint()


@dataclass
class RobotState:
    """Robot pose, kinematics binding, and goal."""

    pose: np.ndarray  # (x, y, theta)
    kinematics: str = "differential"
    footprint_radius: float = 0.3
    goal: np.ndarray | None = None
    linear: np.ndarray = None  # world-frame velocity
    angular: float = 0.0
    command: tuple | None = None
    waypoints: list = field(default_factory=list)
    waypoint_index: int = 0

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float)
        if self.goal is not None:
            self.goal = np.asarray(self.goal, dtype=float)
        if self.linear is None:
            self.linear = np.zeros(2)
        self.waypoints = [np.asarray(w, dtype=float) for w in self.waypoints]

    @property
    def position(self):
        return self.pose[:2]


@dataclass
class WorldState:
    grid: GridMap
    time: float = 0.0
    agents: list = field(default_factory=list)
    robots: list = field(default_factory=list)
    rng_seed: int = 0
    static_obstacles: list = field(default_factory=list)

    @property
    def dmap(self):
        return self.grid.distance_map()


def step_world(world: WorldState, forces, dt: float = DT,
               v_max: float = V_MAX) -> WorldState:
    """Semi-implicit Euler update of all agents under per-agent forces.

    forces: array-like (n, 2) aligned with world.agents. Velocities are
    clamped to v_max after the force is applied; positions that land in an
    occupied cell are pushed out along the distance-map gradient, falling
    back to the pre-step position. Raises NonFiniteForce on NaN/inf input.
    """
    forces = np.asarray(forces, dtype=float)
    if forces.shape != (len(world.agents), 2):
        raise ValueError(f"expected forces of shape ({len(world.agents)}, 2)")
    if not np.isfinite(forces).all():
        bad = [world.agents[i].id for i in
               np.nonzero(~np.isfinite(forces).all(axis=1))[0]]
        raise NonFiniteForce(f"non-finite force for agent(s) {bad}")
    grid = world.grid
    dmap = world.dmap if grid.occupied.any() else None
    w_ext, h_ext = grid.extent
    for agent, force in zip(world.agents, forces):
        vel = agent.velocity + force * dt
        speed = math.hypot(vel[0], vel[1])
        if speed > v_max:
            vel = vel * (v_max / speed)
        new_pos = agent.position + vel * dt
        new_pos[0] = min(max(new_pos[0], 1e-9), w_ext - 1e-9)
        new_pos[1] = min(max(new_pos[1], 1e-9), h_ext - 1e-9)
        if grid.occupied_at(new_pos) and dmap is not None:
            new_pos = _project_free(grid, dmap, new_pos, agent.position)
        agent.velocity = vel
        agent.position = new_pos
        if speed > 1e-6:
            agent.heading = math.atan2(vel[1], vel[0])
    world.time += dt
    return world


def _project_free(grid, dmap, pos, fallback):
    """Push a position out of occupied cells along the distance gradient."""
    res = grid.resolution
    probe = pos.copy()
    for scale in (0.5, 1.0, 1.5, 2.0):
        grad = dmap.gradient_at(probe)
        norm = math.hypot(grad[0], grad[1])
        if norm < 1e-9:
            break
        candidate = pos + grad / norm * (res * scale)
        if grid.in_bounds(candidate) and not grid.occupied_at(candidate):
            return candidate
        probe = candidate
    return fallback.copy()


def advance_waypoint(agent: AgentState,
                     tolerance: float = WAYPOINT_TOLERANCE) -> AgentState:
    """Advance the route index once the current waypoint is within tolerance.

    Cyclic routes wrap; acyclic routes latch done at the last waypoint so a
    reached waypoint is never re-targeted.
    """
    wp = agent.base_waypoint()
    if wp is None:
        return agent
    if float(np.hypot(*(agent.position - wp))) < tolerance:
        nxt = agent.waypoint_index + 1
        if nxt >= len(agent.waypoints):
            if agent.cyclic_waypoints:
                agent.waypoint_index = 0
            else:
                agent.route_done = True
        else:
            agent.waypoint_index = nxt
    return agent


def sync_group_waypoints(agents) -> list:
    """Overwrite member waypoints with their group leader's current one."""
    groups = {}
    for agent in agents:
        if agent.group_id is not None:
            groups.setdefault(agent.group_id, []).append(agent)
    for gid, members in groups.items():
        leaders = [m for m in members if m.is_group_leader]
        if not leaders:
            raise MissingLeader(f"group {gid} has no leader")
        target = leaders[0].base_waypoint()
        if target is None:
            continue
        for member in members:
            if member.is_group_leader or not member.waypoints:
                continue
            member.waypoints[member.waypoint_index] = target.copy()
    return agents


def group_centroid(agents, group_id):
    members = [a for a in agents if a.group_id == group_id]
    if not members:
        return None
    return np.mean([m.position for m in members], axis=0)
