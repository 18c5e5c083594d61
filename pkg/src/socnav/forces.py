"""Social-force computation and the pluggable pedestrian behavior models.

The base model sums goal attraction (v_d*e - v)/tau, anisotropic exponential
pedestrian repulsion A*exp(-d/B)*w(phi), and border repulsion along the
distance-map gradient. Grouped agents additionally feel a gaze term (braking
proportional to the head rotation needed to keep the group centroid in view),
a centroid attraction active beyond (n-1)/2 m, and a short-range member
repulsion. A behavior plugin consumes a per-tick agents dataframe snapshot
and returns one force per bound agent; custom plugins register by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import NonFiniteForce, UnknownPlugin
from .orca import orca_velocity

_EPS = 1e-9
_COINCIDENT_JITTER = 1e-3  # m, deterministic +x offset for identical positions


@dataclass(frozen=True)
class ForceParams:
    tau: float = 0.5              # s, goal relaxation time
    rep_a: float = 4.5            # pedestrian repulsion strength
    rep_b: float = 0.3            # m, pedestrian repulsion range
    anisotropy: float = 2.0       # lambda in w(phi)
    agent_radius: float = 0.3     # m, body radius for surface distances
    cutoff: float = 5.0           # m, pairwise interaction cutoff
    border_a: float = 10.0        # border repulsion strength
    border_b: float = 0.2         # m, border repulsion range
    beta_gaze: float = 4.0
    beta_attraction: float = 3.0
    beta_repulsion: float = 1.0
    group_overlap: float = 0.55   # m, member-repulsion activation distance
    v_max: float = 2.0            # m/s, global speed clamp

    @classmethod
    def from_dict(cls, data):
        if not data:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown force parameter(s): {sorted(unknown)}")
        params = cls(**data)
        for name in ("tau", "rep_a", "rep_b", "agent_radius", "cutoff",
                     "border_a", "border_b", "v_max"):
            if getattr(params, name) <= 0:
                raise ValueError(f"force parameter {name} must be positive")
        return params


DEFAULT_PARAMS = ForceParams()


@dataclass(frozen=True)
class ForceBreakdown:
    goal: np.ndarray
    ped_repulsion: np.ndarray
    border: np.ndarray
    group_gaze: np.ndarray
    group_attraction: np.ndarray
    group_repulsion: np.ndarray
    total: np.ndarray


def aggregate(goal, ped_repulsion=None, border=None, group_gaze=None,
              group_attraction=None, group_repulsion=None) -> ForceBreakdown:
    """Sum force components into a breakdown; missing terms are zero."""
    zero = np.zeros(2)

    def coerce(v):
        return zero if v is None else np.asarray(v, dtype=float)

    goal = coerce(goal)
    ped_repulsion = coerce(ped_repulsion)
    border = coerce(border)
    group_gaze = coerce(group_gaze)
    group_attraction = coerce(group_attraction)
    group_repulsion = coerce(group_repulsion)
    total = (goal + ped_repulsion + border
             + group_gaze + group_attraction + group_repulsion)
    if not np.isfinite(total).all():
        raise NonFiniteForce("aggregate produced a non-finite total")
    return ForceBreakdown(goal, ped_repulsion, border, group_gaze,
                          group_attraction, group_repulsion, total)


# ---------------------------------------------------------------------------
# Scalar force terms (contract surface; the engine uses the vectorized field)


def _desired_direction(position, waypoint):
    if waypoint is None:
        return np.zeros(2)
    rel = np.asarray(waypoint, dtype=float) - position
    dist = math.hypot(rel[0], rel[1])
    if dist < _EPS:
        return np.zeros(2)
    return rel / dist


def goal_force(agent, params: ForceParams = DEFAULT_PARAMS) -> np.ndarray:
    """(v_d * e_hat - v) / tau toward the agent's current waypoint.

    At the waypoint the direction is the zero vector, leaving pure braking.
    """
    e_hat = _desired_direction(agent.position, agent.current_waypoint())
    return (agent.desired_speed * e_hat - agent.velocity) / params.tau


def _anisotropy_weight(velocity, direction_to_other, params: ForceParams):
    """w(phi) = lambda + (1 - lambda)(1 + cos phi)/2, clamped at 0.

    phi is measured between the agent's motion direction and the direction
    to the other body; agents at rest see an isotropic field (w = 1).
    """
    speed = math.hypot(velocity[0], velocity[1])
    if speed < _EPS:
        return 1.0
    cos_phi = (velocity[0] * direction_to_other[0]
               + velocity[1] * direction_to_other[1]) / speed
    lam = params.anisotropy
    return max(lam + (1.0 - lam) * (1.0 + cos_phi) / 2.0, 0.0)


def pedestrian_repulsion(agent_i, agent_j,
                         params: ForceParams = DEFAULT_PARAMS) -> np.ndarray:
    """Exponential surface-distance repulsion of j on i, directed j -> i.

    Identical positions are resolved by a deterministic 1e-3 m jitter of i
    along +x; pairs beyond the cutoff radius contribute nothing.
    """
    dvec = agent_i.position - agent_j.position
    dist = math.hypot(dvec[0], dvec[1])
    if dist < 1e-12:
        dvec = np.array([_COINCIDENT_JITTER, 0.0])
        dist = _COINCIDENT_JITTER
    if dist > params.cutoff:
        return np.zeros(2)
    unit = dvec / dist
    surface = dist - getattr(agent_i, "radius", params.agent_radius) \
        - getattr(agent_j, "radius", params.agent_radius)
    magnitude = params.rep_a * math.exp(-surface / params.rep_b)
    weight = _anisotropy_weight(agent_i.velocity, -unit, params)
    return magnitude * weight * unit


def border_repulsion(agent, dmap,
                     params: ForceParams = DEFAULT_PARAMS) -> np.ndarray:
    """a_b * exp(-d/b_b) along the distance-map gradient, away from walls."""
    d = float(dmap.distance_at(agent.position))
    grad = dmap.gradient_at(agent.position)
    norm = math.hypot(grad[0], grad[1])
    if norm < _EPS:
        return np.zeros(2)
    return params.border_a * math.exp(-d / params.border_b) * (grad / norm)


def group_forces(agent, group, params: ForceParams = DEFAULT_PARAMS):
    """(gaze, attraction, repulsion) acting on `agent` within its group.

    group must contain the agent itself; a group of one feels nothing.
    Attraction activates beyond (n - 1)/2 m from the full-group centroid;
    the gaze term brakes in proportion to the head rotation between the
    desired direction and the centroid of the other members.
    """
    zero = np.zeros(2)
    others = [m for m in group if m.id != agent.id]
    if not others:
        return zero, zero, zero
    n = len(others) + 1
    centroid = np.mean([m.position for m in group], axis=0)
    rel_c = centroid - agent.position
    dist_c = math.hypot(rel_c[0], rel_c[1])
    attraction = zero
    if dist_c > (n - 1) / 2.0:
        attraction = params.beta_attraction * rel_c / dist_c
    repulsion = np.zeros(2)
    for other in others:
        dvec = agent.position - other.position
        dist = math.hypot(dvec[0], dvec[1])
        if dist < 1e-12:
            dvec = np.array([_COINCIDENT_JITTER, 0.0])
            dist = _COINCIDENT_JITTER
        if dist < params.group_overlap:
            repulsion = repulsion + params.beta_repulsion * dvec / dist
    gaze = zero
    others_centroid = np.mean([m.position for m in others], axis=0)
    rel_o = others_centroid - agent.position
    dist_o = math.hypot(rel_o[0], rel_o[1])
    e_hat = _desired_direction(agent.position, agent.current_waypoint())
    if dist_o > _EPS and (e_hat[0] or e_hat[1]):
        c_hat = rel_o / dist_o
        alpha = math.atan2(abs(e_hat[0] * c_hat[1] - e_hat[1] * c_hat[0]),
                           e_hat[0] * c_hat[0] + e_hat[1] * c_hat[1])
        gaze = -params.beta_gaze * alpha * agent.velocity
    return gaze, attraction, repulsion


# ---------------------------------------------------------------------------
# Agents dataframe


@dataclass
class AgentsDataframe:
    """Per-tick snapshot of all agents plus precomputed interaction data."""

    timestamp: float
    ids: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    waypoints: np.ndarray      # effective current waypoint; position if none
    has_waypoint: np.ndarray
    desired_speeds: np.ndarray
    group_ids: np.ndarray      # -1 encodes ungrouped
    social_states: np.ndarray
    plugins: list
    radii: np.ndarray
    pairwise_dist: np.ndarray
    border_dist: np.ndarray

    @property
    def agents(self):
        """Snapshot rows (id, position, velocity, waypoint, group, state)."""
        return [
            (int(self.ids[i]), self.positions[i].copy(), self.velocities[i].copy(),
             self.waypoints[i].copy() if self.has_waypoint[i] else None,
             int(self.group_ids[i]) if self.group_ids[i] >= 0 else None,
             int(self.social_states[i]))
            for i in range(len(self.ids))
        ]

    @classmethod
    def capture(cls, world, dmap=None):
        agents = sorted(world.agents, key=lambda a: a.id)
        n = len(agents)
        ids = np.array([a.id for a in agents], dtype=int)
        pos = np.array([a.position for a in agents]).reshape(n, 2)
        vel = np.array([a.velocity for a in agents]).reshape(n, 2)
        wps = np.empty((n, 2))
        has = np.zeros(n, dtype=bool)
        for i, a in enumerate(agents):
            wp = a.current_waypoint()
            if wp is None:
                wps[i] = pos[i]
            else:
                wps[i] = wp
                has[i] = True
        speeds = np.array([a.desired_speed for a in agents], dtype=float)
        gids = np.array([-1 if a.group_id is None else a.group_id
                         for a in agents], dtype=int)
        sstates = np.array([int(a.social_state) for a in agents], dtype=int)
        plugins = [a.plugin for a in agents]
        radii = np.array([a.radius for a in agents], dtype=float)
        diff = pos[:, None, :] - pos[None, :, :]
        pairwise = np.sqrt((diff ** 2).sum(axis=2))
        if dmap is not None and n:
            border = dmap.distance_at(pos)
        else:
            border = np.full(n, np.inf)
        return cls(world.time, ids, pos, vel, wps, has, speeds, gids,
                   sstates, plugins, radii, pairwise, border)


# ---------------------------------------------------------------------------
# Vectorized force fields


def goal_field(frame: AgentsDataframe, params: ForceParams,
               targets=None) -> np.ndarray:
    """Goal forces for all agents, optionally toward overriding targets."""
    if targets is None:
        targets = frame.waypoints
        active = frame.has_waypoint
    else:
        targets = np.broadcast_to(np.asarray(targets, float),
                                  frame.positions.shape)
        active = np.ones(len(frame.ids), dtype=bool)
    rel = targets - frame.positions
    dist = np.sqrt((rel ** 2).sum(axis=1))
    ok = active & (dist > _EPS)
    e_hat = np.zeros_like(rel)
    e_hat[ok] = rel[ok] / dist[ok, None]
    return (frame.desired_speeds[:, None] * e_hat - frame.velocities) / params.tau


def repulsion_field(frame: AgentsDataframe, params: ForceParams,
                    scale: float = 1.0) -> np.ndarray:
    """Summed pairwise repulsion for every agent (n, 2)."""
    n = len(frame.ids)
    if n < 2:
        return np.zeros((n, 2))
    pos = frame.positions
    dvec = pos[:, None, :] - pos[None, :, :]  # row i: from j to i
    dist = frame.pairwise_dist.copy()
    eye = np.eye(n, dtype=bool)
    coincident = (dist < 1e-12) & ~eye
    if coincident.any():
        ii, jj = np.nonzero(coincident)
        sign = np.where(ii > jj, 1.0, -1.0)
        dvec[ii, jj, 0] = _COINCIDENT_JITTER * sign
        dvec[ii, jj, 1] = 0.0
        dist[ii, jj] = _COINCIDENT_JITTER
    np.fill_diagonal(dist, np.inf)
    unit = dvec / dist[:, :, None]
    surface = dist - frame.radii[:, None] - frame.radii[None, :]
    magnitude = params.rep_a * np.exp(-surface / params.rep_b)
    speed = np.sqrt((frame.velocities ** 2).sum(axis=1))
    moving = speed > _EPS
    vhat = np.zeros_like(frame.velocities)
    vhat[moving] = frame.velocities[moving] / speed[moving, None]
    cos_phi = -(vhat[:, None, 0] * unit[:, :, 0] + vhat[:, None, 1] * unit[:, :, 1])
    lam = params.anisotropy
    weight = np.maximum(lam + (1.0 - lam) * (1.0 + cos_phi) / 2.0, 0.0)
    weight[~moving, :] = 1.0
    active = dist <= params.cutoff
    contrib = (magnitude * weight * active)[:, :, None] * unit
    return scale * contrib.sum(axis=1)


def border_field(frame: AgentsDataframe, dmap, params: ForceParams) -> np.ndarray:
    n = len(frame.ids)
    if n == 0 or dmap is None:
        return np.zeros((n, 2))
    grad = dmap.gradient_at(frame.positions)
    norm = np.sqrt((grad ** 2).sum(axis=1))
    ok = norm > _EPS
    ghat = np.zeros_like(grad)
    ghat[ok] = grad[ok] / norm[ok, None]
    mag = params.border_a * np.exp(-frame.border_dist / params.border_b)
    return mag[:, None] * ghat


def group_field(frame: AgentsDataframe, params: ForceParams):
    """(gaze, attraction, repulsion) arrays; zero rows for ungrouped agents."""
    n = len(frame.ids)
    gaze = np.zeros((n, 2))
    attraction = np.zeros((n, 2))
    repulsion = np.zeros((n, 2))
    for gid in sorted(set(frame.group_ids[frame.group_ids >= 0].tolist())):
        members = np.nonzero(frame.group_ids == gid)[0]
        if len(members) < 2:
            continue
        pos = frame.positions[members]
        centroid = pos.mean(axis=0)
        size = len(members)
        for k, i in enumerate(members):
            rel_c = centroid - frame.positions[i]
            dist_c = math.hypot(rel_c[0], rel_c[1])
            if dist_c > (size - 1) / 2.0:
                attraction[i] = params.beta_attraction * rel_c / dist_c
            others = np.delete(members, k)
            dvec = frame.positions[i] - frame.positions[others]
            dd = np.sqrt((dvec ** 2).sum(axis=1))
            close = dd < params.group_overlap
            for o_idx in np.nonzero(close)[0]:
                if dd[o_idx] < 1e-12:
                    repulsion[i] += params.beta_repulsion * np.array(
                        [_COINCIDENT_JITTER, 0.0]) / _COINCIDENT_JITTER
                else:
                    repulsion[i] += params.beta_repulsion * dvec[o_idx] / dd[o_idx]
            o_centroid = frame.positions[others].mean(axis=0)
            rel_o = o_centroid - frame.positions[i]
            dist_o = math.hypot(rel_o[0], rel_o[1])
            if dist_o > _EPS and frame.has_waypoint[i]:
                rel_w = frame.waypoints[i] - frame.positions[i]
                dw = math.hypot(rel_w[0], rel_w[1])
                if dw > _EPS:
                    e_hat = rel_w / dw
                    c_hat = rel_o / dist_o
                    alpha = math.atan2(
                        abs(e_hat[0] * c_hat[1] - e_hat[1] * c_hat[0]),
                        e_hat[0] * c_hat[0] + e_hat[1] * c_hat[1])
                    gaze[i] = -params.beta_gaze * alpha * frame.velocities[i]
    return gaze, attraction, repulsion


# ---------------------------------------------------------------------------
# Behavior plugins


class ForcePlugin:
    """Base plugin: consumes the dataframe, returns forces for its agents."""

    kind = "base"

    def __init__(self, params: ForceParams, extra: dict | None = None,
                 dt: float = 0.1):
        self.params = params
        self.extra = dict(extra or {})
        self.dt = dt
        self.validate()

    def validate(self):
        pass

    def compute(self, frame: AgentsDataframe, dmap, idx: np.ndarray):
        """Return (forces (m, 2), components dict of (m, 2) arrays)."""
        raise NotImplementedError

    def goal_override(self, frame, idx):
        """Per-agent waypoint replacement this plugin imposes, or None."""
        return None


class PassthroughPlugin(ForcePlugin):
    """Plain goal + pedestrian + border force sum."""

    kind = "passthrough"

    def compute(self, frame, dmap, idx):
        goal = goal_field(frame, self.params)[idx]
        rep = repulsion_field(frame, self.params)[idx]
        border = border_field(frame, dmap, self.params)[idx]
        comps = {"goal": goal, "ped_repulsion": rep, "border": border}
        return goal + rep + border, comps


class PySocialPlugin(ForcePlugin):
    """Default model: passthrough terms plus the three group terms."""

    kind = "pysocial"

    def compute(self, frame, dmap, idx):
        goal = goal_field(frame, self.params)[idx]
        rep = repulsion_field(frame, self.params)[idx]
        border = border_field(frame, dmap, self.params)[idx]
        gaze, attraction, grp_rep = group_field(frame, self.params)
        gaze, attraction, grp_rep = gaze[idx], attraction[idx], grp_rep[idx]
        total = goal + rep + border + gaze + attraction + grp_rep
        comps = {"goal": goal, "ped_repulsion": rep, "border": border,
                 "group_gaze": gaze, "group_attraction": attraction,
                 "group_repulsion": grp_rep}
        return total, comps


class SpinnyPlugin(ForcePlugin):
    """Steers each agent around a circle centered on its spawn point."""

    kind = "spinny"

    def __init__(self, params, extra=None, dt=0.1):
        super().__init__(params, extra, dt)
        self.r_spin = float(self.extra.get("r_spin", 2.0))
        self._centers = {}

    def validate(self):
        if float(self.extra.get("r_spin", 2.0)) <= 0:
            raise ValueError("spinny: r_spin must be positive")

    def compute(self, frame, dmap, idx):
        forces = np.zeros((len(idx), 2))
        for k, i in enumerate(idx):
            aid = int(frame.ids[i])
            center = self._centers.setdefault(aid, frame.positions[i].copy())
            rel = frame.positions[i] - center
            r = math.hypot(rel[0], rel[1])
            if r < 1e-9:
                r_hat = np.array([1.0, 0.0])
            else:
                r_hat = rel / r
            t_hat = np.array([-r_hat[1], r_hat[0]])
            direction = t_hat + (self.r_spin - r) * r_hat
            norm = math.hypot(direction[0], direction[1])
            if norm < _EPS:
                direction = t_hat
                norm = 1.0
            v_des = frame.desired_speeds[i] * direction / norm
            vel = frame.velocities[i]
            # centripetal feedforward keeps the steady orbit at r_spin; the
            # relaxation term alone would settle on a wider circle
            speed_sq = vel[0] * vel[0] + vel[1] * vel[1]
            forces[k] = (v_des - vel) / self.params.tau \
                - (speed_sq / self.r_spin) * r_hat
        return forces, {"goal": forces.copy()}


class EvacuationPlugin(ForcePlugin):
    """Strong mutual repulsion and one shared exit overriding all waypoints."""

    kind = "evacuation"

    def __init__(self, params, extra=None, dt=0.1):
        super().__init__(params, extra, dt)
        self.exit = np.asarray(self.extra["exit"], dtype=float)
        self.k_evac = float(self.extra.get("k_evac", 3.0))

    def validate(self):
        if "exit" not in self.extra or len(self.extra["exit"]) != 2:
            raise ValueError("evacuation: requires a 2-vector 'exit'")
        if float(self.extra.get("k_evac", 3.0)) <= 0:
            raise ValueError("evacuation: k_evac must be positive")

    def goal_override(self, frame, idx):
        return np.broadcast_to(self.exit, (len(idx), 2))

    def compute(self, frame, dmap, idx):
        goal = goal_field(frame, self.params, targets=self.exit)[idx]
        rep = repulsion_field(frame, self.params, scale=self.k_evac)[idx]
        border = border_field(frame, dmap, self.params)[idx]
        comps = {"goal": goal, "ped_repulsion": rep, "border": border}
        return goal + rep + border, comps


class BondingPlugin(EvacuationPlugin):
    """Evacuation plus a spring toward a bonded partner (paired by id)."""

    kind = "bonding"

    def __init__(self, params, extra=None, dt=0.1):
        super().__init__(params, extra, dt)
        self.bond_k = float(self.extra.get("bond_k", 2.0))
        self.bond_rest = float(self.extra.get("bond_rest", 1.0))

    def validate(self):
        super().validate()
        if float(self.extra.get("bond_k", 2.0)) <= 0:
            raise ValueError("bonding: bond_k must be positive")
        if float(self.extra.get("bond_rest", 1.0)) < 0:
            raise ValueError("bonding: bond_rest must be >= 0")

    def compute(self, frame, dmap, idx):
        total, comps = super().compute(frame, dmap, idx)
        order = np.argsort(frame.ids[idx], kind="stable")
        bond = np.zeros((len(idx), 2))
        for pair_start in range(0, len(order) - 1, 2):
            a = order[pair_start]
            b = order[pair_start + 1]
            ia, ib = idx[a], idx[b]
            dvec = frame.positions[ib] - frame.positions[ia]
            dist = math.hypot(dvec[0], dvec[1])
            if dist < 1e-12:
                continue
            pull = self.bond_k * (dist - self.bond_rest) * dvec / dist
            bond[a] += pull
            bond[b] -= pull
        comps["ped_repulsion"] = comps["ped_repulsion"] + bond
        return total + bond, comps


class OrcaPlugin(ForcePlugin):
    """Velocity-obstacle avoidance; emits (v_new - v)/dt so the integrator
    lands exactly on the chosen velocity."""

    kind = "orca"

    def __init__(self, params, extra=None, dt=0.1):
        super().__init__(params, extra, dt)
        self.tau_orca = float(self.extra.get("tau_orca", 2.0))

    def validate(self):
        if float(self.extra.get("tau_orca", 2.0)) <= 0:
            raise ValueError("orca: tau_orca must be positive")

    def compute(self, frame, dmap, idx):
        forces = np.zeros((len(idx), 2))
        for k, i in enumerate(idx):
            rel = frame.waypoints[i] - frame.positions[i]
            dist = math.hypot(rel[0], rel[1])
            if frame.has_waypoint[i] and dist > _EPS:
                preferred = frame.desired_speeds[i] * rel / dist
            else:
                preferred = np.zeros(2)
            neighbors = []
            for j in range(len(frame.ids)):
                if j == i or frame.pairwise_dist[i, j] > self.params.cutoff:
                    continue
                neighbors.append((frame.positions[j], frame.velocities[j],
                                  frame.radii[j]))
            v_new = orca_velocity(frame.positions[i], frame.velocities[i],
                                  frame.radii[i], preferred, neighbors,
                                  self.tau_orca, self.dt, self.params.v_max)
            forces[k] = (v_new - frame.velocities[i]) / self.dt
        return forces, {"goal": forces.copy()}


PLUGIN_FACTORIES = {
    cls.kind: cls
    for cls in (PassthroughPlugin, PySocialPlugin, SpinnyPlugin,
                EvacuationPlugin, BondingPlugin, OrcaPlugin)
}


def register_plugin(name: str, factory):
    """Register a custom plugin factory under a config-visible name."""
    PLUGIN_FACTORIES[name] = factory


def make_plugin(name: str, params: ForceParams = DEFAULT_PARAMS,
                extra: dict | None = None, dt: float = 0.1) -> ForcePlugin:
    try:
        factory = PLUGIN_FACTORIES[name]
    except KeyError:
        raise UnknownPlugin(
            f"plugin {name!r} is not registered "
            f"(known: {', '.join(sorted(PLUGIN_FACTORIES))})") from None
    return factory(params, extra, dt)


def plugin_step(frame: AgentsDataframe, plugin: ForcePlugin, dmap=None):
    """Run one plugin over its bound agents; returns [(agent id, force)]."""
    idx = np.array([i for i, name in enumerate(frame.plugins)
                    if name == plugin.kind or name == getattr(plugin, "name", None)],
                   dtype=int)
    if len(idx) == 0:
        return []
    forces, _ = plugin.compute(frame, dmap, idx)
    if not np.isfinite(forces).all():
        raise NonFiniteForce(f"plugin {plugin.kind} produced non-finite forces")
    return [(int(frame.ids[i]), forces[k]) for k, i in enumerate(idx)]
