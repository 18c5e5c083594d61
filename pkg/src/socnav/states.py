"""Pedestrian social states: triggers, dwell handling, and their effect on
desired speed and goal selection.

States cover human-object, human-human, and human-robot interactions. Timed
states (texting, phone, group talking) exit after a dwell sampled at entry;
robot-relative states trigger on proximity. Everything is deterministic given
the episode RNG stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class SocialState(IntEnum):
    # Ordinals are part of the semantic-layer encoding; do not reorder.
    STANDING = 0
    WALKING = 1
    RUNNING = 2
    ROBOT_AVOIDANCE = 3
    TEXTING = 4
    GROUP_TALKING = 5
    INTERESTED_IN_ROBOT = 6
    PHONE_TALKING = 7


STATE_BY_NAME = {s.name.lower(): s for s in SocialState}

# states that hold still and exit on dwell expiry
DWELL_STATES = (SocialState.TEXTING, SocialState.GROUP_TALKING,
                SocialState.PHONE_TALKING)
# states with zero commanded speed
STATIONARY_STATES = (SocialState.STANDING,) + DWELL_STATES
# states eligible for robot-proximity triggers
ROBOT_TRIGGERABLE = (SocialState.STANDING, SocialState.WALKING,
                     SocialState.RUNNING)


@dataclass(frozen=True)
class StateParams:
    speed_range: tuple = (0.6, 2.2)   # m/s, full walking/running range
    run_split: float = 1.8            # m/s, walking below, running above
    r_avoid: float = 3.0              # m, robot distance triggering avoidance
    r_interest: float = 5.0           # m, robot distance enabling interest
    p_interest: float = 0.1           # 1/s, hazard of becoming interested
    approach_speed: float = 0.5       # m/s, closing speed counting as approach
    dwell_range: tuple = (5.0, 20.0)  # s, timed-state duration
    avoid_speed_factor: float = 0.5
    standoff: float = 1.0             # m, interested-agent stop distance

    @classmethod
    def from_dict(cls, data):
        if not data:
            return cls()
        kwargs = {}
        for f in cls.__dataclass_fields__:
            if f in data:
                v = data[f]
                kwargs[f] = tuple(v) if isinstance(v, (list, tuple)) else v
        return cls(**kwargs)


@dataclass(frozen=True)
class Perception:
    nearest_robot_distance: float
    nearest_agent_distance: float
    approaching_object: bool
    group_members_in_range: int


def build_perceptions(world, params: StateParams, member_range=3.0):
    """One Perception per agent, from current world kinematics."""
    agents = world.agents
    n = len(agents)
    if n == 0:
        return []
    pos = np.array([a.position for a in agents]).reshape(n, 2)
    vel = np.array([a.velocity for a in agents]).reshape(n, 2)
    # rel[i, j] points from agent i to object j; closing > 0 means j nears i
    rel = pos[None, :, :] - pos[:, None, :]
    dist = np.sqrt((rel ** 2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    rel_vel = vel[None, :, :] - vel[:, None, :]
    with np.errstate(invalid="ignore"):
        closing = -(rel * rel_vel).sum(axis=2) / dist
    approaching = np.nanmax(np.where(np.isfinite(dist), closing, -np.inf),
                            axis=1, initial=-np.inf) > params.approach_speed
    nearest_agent = dist.min(axis=1) if n > 1 else np.full(n, np.inf)

    nearest_robot = np.full(n, np.inf)
    if world.robots:
        r_pos = np.array([r.pose[:2] for r in world.robots]).reshape(-1, 2)
        r_vel = np.array([r.linear for r in world.robots]).reshape(-1, 2)
        rel_r = r_pos[None, :, :] - pos[:, None, :]
        dist_r = np.sqrt((rel_r ** 2).sum(axis=2))
        nearest_robot = dist_r.min(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            closing_r = -(rel_r * (r_vel[None, :, :] - vel[:, None, :])
                          ).sum(axis=2) / np.maximum(dist_r, 1e-9)
        approaching = approaching | (closing_r.max(axis=1)
                                     > params.approach_speed)

    gids = np.array([-1 if a.group_id is None else a.group_id for a in agents])
    same = (gids[:, None] == gids[None, :]) & (gids[:, None] >= 0)
    np.fill_diagonal(same, False)
    in_range = (same & (dist <= member_range)).sum(axis=1)

    return [Perception(float(nearest_robot[i]), float(nearest_agent[i]),
                       bool(approaching[i]), int(in_range[i]))
            for i in range(n)]


def sample_dwell(rng, params: StateParams) -> float:
    lo, hi = params.dwell_range
    return float(rng.uniform(lo, hi))


def sample_speed(rng, state: SocialState, params: StateParams) -> float:
    lo, hi = params.speed_range
    if state == SocialState.RUNNING and hi > params.run_split:
        return float(rng.uniform(params.run_split, hi))
    return float(rng.uniform(lo, min(hi, params.run_split)))


def transition(state: SocialState, perception: Perception, rng,
               dwell_elapsed: float, dwell_limit: float,
               params: StateParams, dt: float) -> SocialState:
    """One deterministic-given-rng step of the state machine.

    rng is consumed only for the interest draw, and only when the guard for
    it is reached, so identical inputs replay identically.
    """
    if state in DWELL_STATES:
        if dwell_elapsed >= dwell_limit:
            return SocialState.WALKING
        return state
    if state == SocialState.INTERESTED_IN_ROBOT:
        if dwell_elapsed >= dwell_limit:
            return SocialState.WALKING
        return state
    if state == SocialState.ROBOT_AVOIDANCE:
        if perception.nearest_robot_distance >= params.r_avoid:
            return SocialState.WALKING
        return state
    if state in ROBOT_TRIGGERABLE:
        if perception.nearest_robot_distance < params.r_avoid:
            return SocialState.ROBOT_AVOIDANCE
        if perception.nearest_robot_distance < params.r_interest:
            if rng.random() < params.p_interest * dt:
                return SocialState.INTERESTED_IN_ROBOT
    if state == SocialState.STANDING and perception.approaching_object:
        return SocialState.WALKING
    return state


def apply_state(state: SocialState, agent, robot, params: StateParams,
                group_centroid=None):
    """Write the state's speed command and goal override onto the agent.

    Returns True when the engine should add robot repulsion for this agent.
    `agent.entry_speed` must hold the speed sampled at state entry.
    """
    agent.waypoint_override = None
    if state in STATIONARY_STATES:
        agent.desired_speed = 0.0
        if state == SocialState.GROUP_TALKING and group_centroid is not None:
            agent.waypoint_override = np.asarray(group_centroid, dtype=float)
        return False
    if state in (SocialState.WALKING, SocialState.RUNNING):
        agent.desired_speed = agent.entry_speed
        return False
    if state == SocialState.ROBOT_AVOIDANCE:
        agent.desired_speed = agent.entry_speed * params.avoid_speed_factor
        return True
    if state == SocialState.INTERESTED_IN_ROBOT:
        agent.desired_speed = agent.entry_speed
        if robot is not None:
            rel = np.asarray(robot.pose[:2], dtype=float) - agent.position
            dist = float(np.hypot(rel[0], rel[1]))
            if dist > 1e-9:
                # always target the standoff ring: agents that overshoot
                # inside it are steered back out rather than camping there
                agent.waypoint_override = agent.position + rel * (
                    (dist - params.standoff) / dist)
            else:
                agent.waypoint_override = agent.position.copy()
        return False
    return False
