"""Optimal reciprocal collision avoidance over velocity obstacles.

Each neighbor induces a half-plane of permitted velocities derived from the
velocity obstacle truncated at the time horizon; the agent takes the velocity
closest to its preferred one inside the intersection, capped at max speed.
When the intersection is empty the velocity minimizing the largest half-plane
violation is returned instead. All geometry is plain-float 2D; neighbors must
be supplied in a fixed order (callers sort by agent id) for determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-10


@dataclass(frozen=True)
class HalfPlane:
    # permitted side is to the left of `direction` through `point`
    px: float
    py: float
    dx: float
    dy: float


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def orca_halfplane(rel_pos, rel_vel, radius_sum, tau, dt) -> HalfPlane:
    """Half-plane for one neighbor, relative state agent-minus-neighbor negated.

    rel_pos points from the agent to the neighbor; rel_vel is the agent's
    velocity minus the neighbor's. The returned plane is expressed as an
    offset `u` to be split between the pair (reciprocity handled by caller).
    """
    px, py = float(rel_pos[0]), float(rel_pos[1])
    vx, vy = float(rel_vel[0]), float(rel_vel[1])
    dist_sq = px * px + py * py
    r_sq = radius_sum * radius_sum

    if dist_sq > r_sq:
        # no current overlap: obstacle truncated at tau
        wx = vx - px / tau
        wy = vy - py / tau
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * px + wy * py
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            # closest point lies on the truncation arc
            w_len = math.sqrt(w_len_sq)
            ux, uy = wx / w_len, wy / w_len
            ddx, ddy = uy, -ux
            scale = radius_sum / tau - w_len
            off_x, off_y = scale * ux, scale * uy
        else:
            # closest point lies on one of the cone legs
            leg = math.sqrt(max(dist_sq - r_sq, 0.0))
            if _det(px, py, wx, wy) > 0.0:
                ddx = (px * leg - py * radius_sum) / dist_sq
                ddy = (px * radius_sum + py * leg) / dist_sq
            else:
                ddx = -(px * leg + py * radius_sum) / dist_sq
                ddy = -(-px * radius_sum + py * leg) / dist_sq
            dot2 = vx * ddx + vy * ddy
            off_x = dot2 * ddx - vx
            off_y = dot2 * ddy - vy
    else:
        # already overlapping: resolve within one timestep
        wx = vx - px / dt
        wy = vy - py / dt
        w_len = math.hypot(wx, wy)
        if w_len > _EPS:
            ux, uy = wx / w_len, wy / w_len
        else:
            ux, uy = 1.0, 0.0
        ddx, ddy = uy, -ux
        scale = radius_sum / dt - w_len
        off_x, off_y = scale * ux, scale * uy
    return HalfPlane(off_x, off_y, ddx, ddy)


def _lp1(lines, index, radius, opt_x, opt_y, direction_opt, result):
    """Optimize along line `index` subject to lines [0, index) and the disc."""
    line = lines[index]
    dot_product = line.px * line.dx + line.py * line.dy
    discriminant = dot_product * dot_product + radius * radius \
        - (line.px * line.px + line.py * line.py)
    if discriminant < 0.0:
        return False
    sqrt_disc = math.sqrt(discriminant)
    t_left = -dot_product - sqrt_disc
    t_right = -dot_product + sqrt_disc
    for i in range(index):
        other = lines[i]
        denom = _det(line.dx, line.dy, other.dx, other.dy)
        numer = _det(other.dx, other.dy, line.px - other.px, line.py - other.py)
        if abs(denom) <= _EPS:
            if numer < 0.0:
                return False
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return False
    if direction_opt:
        if opt_x * line.dx + opt_y * line.dy > 0.0:
            t = t_right
        else:
            t = t_left
    else:
        t = line.dx * (opt_x - line.px) + line.dy * (opt_y - line.py)
        t = min(max(t, t_left), t_right)
    result[0] = line.px + t * line.dx
    result[1] = line.py + t * line.dy
    return True


def _lp2(lines, radius, opt_x, opt_y, direction_opt, result):
    """Find the feasible velocity closest to (opt_x, opt_y) in the disc."""
    if direction_opt:
        result[0] = opt_x * radius
        result[1] = opt_y * radius
    elif opt_x * opt_x + opt_y * opt_y > radius * radius:
        norm = math.hypot(opt_x, opt_y)
        result[0] = opt_x / norm * radius
        result[1] = opt_y / norm * radius
    else:
        result[0] = opt_x
        result[1] = opt_y
    for i, line in enumerate(lines):
        if _det(line.dx, line.dy, line.px - result[0], line.py - result[1]) > 0.0:
            saved = (result[0], result[1])
            if not _lp1(lines, i, radius, opt_x, opt_y, direction_opt, result):
                result[0], result[1] = saved
                return i
    return len(lines)


def _lp3(lines, begin, radius, result):
    """Infeasible case: minimize the largest violation over all half-planes."""
    distance = 0.0
    for i in range(begin, len(lines)):
        line = lines[i]
        if _det(line.dx, line.dy, line.px - result[0], line.py - result[1]) > distance:
            proj = []
            for j in range(i):
                other = lines[j]
                denom = _det(line.dx, line.dy, other.dx, other.dy)
                if abs(denom) <= _EPS:
                    if line.dx * other.dx + line.dy * other.dy > 0.0:
                        continue
                    px = 0.5 * (line.px + other.px)
                    py = 0.5 * (line.py + other.py)
                else:
                    t = _det(other.dx, other.dy,
                             line.px - other.px, line.py - other.py) / denom
                    px = line.px + t * line.dx
                    py = line.py + t * line.dy
                ndx = other.dx - line.dx
                ndy = other.dy - line.dy
                norm = math.hypot(ndx, ndy)
                proj.append(HalfPlane(px, py, ndx / norm, ndy / norm))
            saved = (result[0], result[1])
            if _lp2(proj, radius, -line.dy, line.dx, True, result) < len(proj):
                result[0], result[1] = saved
            distance = _det(line.dx, line.dy,
                            line.px - result[0], line.py - result[1])


def orca_velocity(position, velocity, radius, preferred, neighbors,
                  tau, dt, v_max):
    """New velocity for an agent given neighbor discs.

    neighbors: iterable of (position, velocity, radius) in a fixed order.
    Returns the feasible velocity closest to `preferred`, capped at v_max;
    falls back to the minimal-violation velocity when infeasible.
    """
    px, py = float(position[0]), float(position[1])
    vx, vy = float(velocity[0]), float(velocity[1])
    lines = []
    for n_pos, n_vel, n_rad in neighbors:
        rel_pos = (float(n_pos[0]) - px, float(n_pos[1]) - py)
        rel_vel = (vx - float(n_vel[0]), vy - float(n_vel[1]))
        hp = orca_halfplane(rel_pos, rel_vel, radius + float(n_rad), tau, dt)
        # each agent takes half the avoidance effort
        lines.append(HalfPlane(vx + 0.5 * hp.px, vy + 0.5 * hp.py, hp.dx, hp.dy))
    result = [0.0, 0.0]
    fail_at = _lp2(lines, v_max, float(preferred[0]), float(preferred[1]),
                   False, result)
    if fail_at < len(lines):
        _lp3(lines, fail_at, v_max, result)
    return np.array(result)


def in_velocity_obstacle(rel_pos, rel_vel, radius_sum, tau):
    """True if rel_vel hits the neighbor disc within tau (geometric check)."""
    px, py = float(rel_pos[0]), float(rel_pos[1])
    vx, vy = float(rel_vel[0]), float(rel_vel[1])
    if px * px + py * py <= radius_sum * radius_sum:
        return True
    # min_t |t*v - p| <= r for t in [0, tau]
    vv = vx * vx + vy * vy
    if vv < _EPS:
        return False
    t = max(0.0, min(tau, (px * vx + py * vy) / vv))
    dx = t * vx - px
    dy = t * vy - py
    return dx * dx + dy * dy <= radius_sum * radius_sum
