"""Per-tick orchestration: states -> waypoints -> forces -> robots -> step.

The tick order is part of the determinism contract and must not be shuffled:
RNG consumers run per agent in id order, plugins run in sorted-kind order,
and robots move after agent forces are computed from the pre-move snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import forces as F
from . import states as S
from .metrics import MetricParams, TraceRecorder
from .navigation import kinematics_step
from .semantics import SemanticCostmap
from .world import (WorldState, advance_waypoint, group_centroid, step_world,
                    sync_group_waypoints)


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.1
    v_max: float = 2.0
    waypoint_tolerance: float = 1.0
    timeout: float = 180.0        # s simulated
    goal_tolerance: float = 0.5   # m
    abort_collisions: int = 10
    collision_rearm: float = 1.0  # s of separation before a new event arms


@dataclass
class EpisodeOutcome:
    reason: str  # reached | timeout | aborted
    trace: object
    flags: list = field(default_factory=list)


class _Body:
    """Minimal agent-like view of a robot for the repulsion formula."""

    def __init__(self, position, velocity, radius):
        self.position = np.asarray(position, dtype=float)
        self.velocity = np.asarray(velocity, dtype=float)
        self.radius = radius


class Simulation:
    def __init__(self, world: WorldState, rng, *, drivers=(),
                 force_params: F.ForceParams = F.DEFAULT_PARAMS,
                 state_params: S.StateParams = S.StateParams(),
                 sim_params: SimParams = SimParams(),
                 plugin_extras: dict | None = None,
                 metric_params: MetricParams = MetricParams(),
                 track_semantics: bool = True):
        self.world = world
        self.rng = rng
        self.drivers = list(drivers)
        self.force_params = force_params
        self.state_params = state_params
        self.params = sim_params
        self.metric_params = metric_params
        self.plugin_extras = dict(plugin_extras or {})
        self._plugins = {}
        self.costmap = SemanticCostmap(world.grid) if track_semantics else None
        self._contact = {}
        self.tick_index = 0
        ids = sorted(a.id for a in world.agents)
        meta = {
            "dt": sim_params.dt,
            "footprint_radius": (self.drivers[0].cfg.footprint_radius
                                 if self.drivers else 0.0),
            "goal": (list(map(float, self.drivers[0].robot.goal))
                     if self.drivers and self.drivers[0].robot.goal is not None
                     else None),
            "face_half_angle": metric_params.face_half_angle,
            "face_range": metric_params.face_range,
            "private_radius": metric_params.private_radius,
        }
        self.recorder = TraceRecorder(sim_params.dt, ids, meta)
        self._record_tick()  # initial state at t = 0

    # -- plugin management ---------------------------------------------------

    def _plugin(self, kind):
        if kind not in self._plugins:
            self._plugins[kind] = F.make_plugin(
                kind, self.force_params, self.plugin_extras.get(kind),
                self.params.dt)
        return self._plugins[kind]

    # -- tick ----------------------------------------------------------------

    def tick(self):
        world = self.world
        dt = self.params.dt
        dmap = world.dmap if world.grid.occupied.any() else None

        # 1. social-state machine, agents in id order for a stable RNG stream
        agents = sorted(world.agents, key=lambda a: a.id)
        perceptions = S.build_perceptions(world, self.state_params)
        by_index = {a.id: i for i, a in enumerate(world.agents)}
        robot = self.drivers[0].robot if self.drivers else None
        need_robot_repulsion = set()
        for agent in agents:
            perception = perceptions[by_index[agent.id]]
            dwell_elapsed = world.time - agent.state_entered
            new_state = S.transition(agent.social_state, perception, self.rng,
                                     dwell_elapsed, agent.state_dwell,
                                     self.state_params, dt)
            if new_state != agent.social_state:
                agent.social_state = new_state
                agent.state_entered = world.time
                if new_state in S.DWELL_STATES \
                        or new_state == S.SocialState.INTERESTED_IN_ROBOT:
                    agent.state_dwell = S.sample_dwell(self.rng,
                                                       self.state_params)
                if new_state in (S.SocialState.WALKING, S.SocialState.RUNNING):
                    agent.entry_speed = S.sample_speed(self.rng, new_state,
                                                       self.state_params)
            centroid = None
            if agent.social_state == S.SocialState.GROUP_TALKING \
                    and agent.group_id is not None:
                centroid = group_centroid(world.agents, agent.group_id)
            if S.apply_state(agent.social_state, agent, robot,
                             self.state_params, centroid):
                need_robot_repulsion.add(agent.id)

        # 2. waypoint progression and the group-leader override
        for agent in agents:
            advance_waypoint(agent, self.params.waypoint_tolerance)
        pysocial_agents = [a for a in agents if a.plugin == "pysocial"]
        if pysocial_agents:
            sync_group_waypoints(pysocial_agents)

        # 3. forces from the pre-move snapshot
        frame = F.AgentsDataframe.capture(world, dmap)
        n = len(frame.ids)
        force_arr = np.zeros((n, 2))
        row_of = {int(frame.ids[i]): i for i in range(n)}
        for kind in sorted(set(frame.plugins)):
            plugin = self._plugin(kind)
            for aid, force in F.plugin_step(frame, plugin, dmap):
                force_arr[row_of[aid]] += force
        if need_robot_repulsion and self.drivers:
            for driver in self.drivers:
                body = _Body(driver.robot.pose[:2], driver.robot.linear,
                             driver.cfg.footprint_radius)
                for aid in sorted(need_robot_repulsion):
                    agent = world.agents[by_index[aid]]
                    force_arr[row_of[aid]] += F.pedestrian_repulsion(
                        agent, body, self.force_params)

        # 4. robots plan and move on the pre-move agent snapshot
        for driver in self.drivers:
            cmd = driver.control(world, dmap, self.costmap)
            kinematics_step(driver.robot, cmd, dt)

        # 5. integrate agents, advance the clock
        agent_order = [row_of[a.id] for a in world.agents]
        step_world(world, force_arr[agent_order], dt, self.params.v_max)

        # 6. semantic layers at the new clock
        if self.costmap is not None:
            self.costmap.ingest(world)

        # 7. collision events (debounced) and the tick record
        self.tick_index += 1
        self._detect_collisions(dmap)
        for driver in self.drivers:
            for flag in driver.flags:
                self.recorder.add_event(self.tick_index, flag)
            driver.flags.clear()
        self._record_tick()

        # 8. waypoint-file robot goals cycle once reached
        for driver in self.drivers:
            r = driver.robot
            if r.waypoints and r.goal is not None:
                if math.hypot(r.goal[0] - r.pose[0],
                              r.goal[1] - r.pose[1]) < self.params.goal_tolerance:
                    r.waypoint_index = (r.waypoint_index + 1) % len(r.waypoints)
                    r.goal = r.waypoints[r.waypoint_index].copy()

    def _detect_collisions(self, dmap):
        t = self.world.time
        rearm = self.params.collision_rearm
        for r_idx, driver in enumerate(self.drivers):
            robot = driver.robot
            pos = robot.pose[:2]
            for agent in sorted(self.world.agents, key=lambda a: a.id):
                d = math.hypot(agent.position[0] - pos[0],
                               agent.position[1] - pos[1])
                contact = d < driver.cfg.footprint_radius + agent.radius
                self._contact_event(("agent", r_idx, agent.id), contact, t,
                                    "agent", agent.id, rearm)
            if dmap is not None:
                wall = float(dmap.distance_at(pos)) < driver.cfg.footprint_radius
                self._contact_event(("wall", r_idx), wall, t, "wall", -1, rearm)

    def _contact_event(self, key, contact, t, kind, other, rearm):
        in_contact, free_since = self._contact.get(key, (False, None))
        if contact and not in_contact:
            if free_since is None or t - free_since >= rearm:
                self.recorder.add_collision(self.tick_index, kind, other)
            self._contact[key] = (True, free_since)
        elif not contact and in_contact:
            self._contact[key] = (False, t)

    def _record_tick(self):
        world = self.world
        if self.drivers:
            robot = self.drivers[0].robot
            pose, vel, omega = robot.pose, robot.linear, robot.angular
            cmd = (robot.command or (0.0, 0.0, 0.0))
            cmd = tuple(list(cmd) + [0.0, 0.0])[:3]
        else:
            pose, vel, omega, cmd = np.zeros(3), np.zeros(2), 0.0, (0.0,) * 3
        agents = sorted(world.agents, key=lambda a: a.id)
        self.recorder.append(
            world.time, pose, vel, omega, cmd,
            [a.position for a in agents] or np.zeros((0, 2)),
            [a.velocity for a in agents] or np.zeros((0, 2)),
            [int(a.social_state) for a in agents] or np.zeros(0, dtype=int))

    # -- episode loop ----------------------------------------------------------

    def collision_count(self):
        return len(self.recorder.collision_events)

    def run(self, max_time: float | None = None) -> EpisodeOutcome:
        limit = self.params.timeout if max_time is None else max_time
        reason = "timeout"
        while self.world.time < limit - 1e-9:
            self.tick()
            if self.drivers:
                robot = self.drivers[0].robot
                if robot.goal is not None and not robot.waypoints:
                    d = math.hypot(robot.goal[0] - robot.pose[0],
                                   robot.goal[1] - robot.pose[1])
                    if d < self.params.goal_tolerance:
                        reason = "reached"
                        break
            if self.collision_count() >= self.params.abort_collisions:
                reason = "aborted"
                break
        self.recorder.meta["termination"] = reason
        trace = self.recorder.finalize()
        return EpisodeOutcome(reason, trace)
