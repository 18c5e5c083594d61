import math

import numpy as np
import pytest

from socnav import forces as F
from socnav.engine import Simulation
from socnav.errors import NonFiniteForce, UnknownPlugin
from socnav.mapgen import WALL, generate_map
from socnav.world import AgentState, WorldState, step_world

from conftest import bordered_grid, manual_grid


def agent(aid=0, pos=(0.0, 0.0), vel=(0.0, 0.0), speed=1.3, wps=(),
          group=None, leader=False, plugin="pysocial"):
    return AgentState(aid, np.array(pos, float), np.array(vel, float),
                      desired_speed=speed,
                      waypoints=[np.array(w, float) for w in wps],
                      group_id=group, is_group_leader=leader, plugin=plugin)


# ---------------------------------------------------------------------------
# Goal force


def test_goal_force_at_rest_toward_east_waypoint():
    a = agent(wps=[(10.0, 0.0)])
    f = F.goal_force(a)
    assert np.allclose(f, [2.6, 0.0], atol=1e-12)  # 1.3 / 0.5


def test_goal_force_equilibrium():
    a = agent(vel=(1.3, 0.0), wps=[(10.0, 0.0)])
    assert np.allclose(F.goal_force(a), [0.0, 0.0], atol=1e-12)


def test_goal_force_at_waypoint_is_pure_braking():
    a = agent(pos=(3.0, 4.0), vel=(0.6, -0.4), wps=[(3.0, 4.0)])
    assert np.allclose(F.goal_force(a), [-1.2, 0.8], atol=1e-12)


# ---------------------------------------------------------------------------
# Pedestrian repulsion


def test_repulsion_zero_beyond_cutoff():
    a = agent(0, (0, 0))
    b = agent(1, (10, 0))
    assert np.array_equal(F.pedestrian_repulsion(a, b), np.zeros(2))


def test_repulsion_swap_symmetry_at_rest():
    a = agent(0, (0.3, 0.7))
    b = agent(1, (1.1, -0.2))
    fab = F.pedestrian_repulsion(a, b)
    fba = F.pedestrian_repulsion(b, a)
    assert np.allclose(fab, -fba, atol=1e-12)
    assert np.linalg.norm(fab) == pytest.approx(np.linalg.norm(fba))


def test_repulsion_hand_value_surface_distance():
    # centers 1.1 m apart with radii 0.3 each -> surface distance 0.5 m;
    # at rest the anisotropy weight is 1
    a = agent(0, (0.0, 0.0))
    b = agent(1, (1.1, 0.0))
    f = F.pedestrian_repulsion(a, b)
    expected = 4.5 * math.exp(-0.5 / 0.3)
    assert np.linalg.norm(f) == pytest.approx(expected, abs=1e-9)
    assert f[0] < 0  # pushed away from the neighbor


def test_repulsion_anisotropy_weight():
    # agent moving +x; neighbor dead ahead -> phi = 0 -> w = lam + (1-lam) = 1
    ahead = agent(0, (0, 0), vel=(1.0, 0.0))
    other = agent(1, (1.1, 0.0))
    f_ahead = np.linalg.norm(F.pedestrian_repulsion(ahead, other))
    # neighbor behind -> phi = pi -> w = lam = 2
    behind = agent(1, (-1.1, 0.0))
    f_behind = np.linalg.norm(F.pedestrian_repulsion(ahead, behind))
    base = 4.5 * math.exp(-0.5 / 0.3)
    assert f_ahead == pytest.approx(base * 1.0, abs=1e-9)
    assert f_behind == pytest.approx(base * 2.0, abs=1e-9)


def test_repulsion_strictly_decreasing_in_distance():
    a = agent(0, (0, 0))
    mags = []
    for d in np.linspace(0.7, 4.9, 40):
        b = agent(1, (d, 0.0))
        mags.append(np.linalg.norm(F.pedestrian_repulsion(a, b)))
    assert all(m1 > m2 for m1, m2 in zip(mags, mags[1:]))


def test_repulsion_coincident_positions_deterministic():
    a = agent(0, (1.0, 1.0))
    b = agent(1, (1.0, 1.0))
    f1 = F.pedestrian_repulsion(a, b)
    f2 = F.pedestrian_repulsion(a, b)
    assert np.array_equal(f1, f2)
    assert f1[0] > 0 and f1[1] == 0.0  # +x jitter convention


# ---------------------------------------------------------------------------
# Border repulsion


def test_border_negligible_far_from_walls():
    g = bordered_grid(120, 120)  # 30 m square room
    a = agent(0, (15.0, 15.0))
    f = F.border_repulsion(a, g.distance_map())
    assert np.linalg.norm(f) < 1e-6


def test_border_wall_on_left_pushes_right():
    g = bordered_grid(40, 40)
    # wall cells at col 0 have centers at x = 0.125; interpolated distance is
    # linear in x along mid-row, so x = 0.325 sits exactly 0.2 m out
    a = agent(0, (0.325, 5.125))
    f = F.border_repulsion(a, g.distance_map())
    assert f[0] == pytest.approx(10.0 * math.exp(-0.2 / 0.2), abs=1e-9)
    assert abs(f[1]) < 1e-9


def test_border_cancels_between_parallel_walls():
    cells = np.zeros((20, 21), dtype=np.uint8)
    cells[:, 0] = WALL
    cells[:, 20] = WALL
    g = manual_grid(cells)
    a = agent(0, (10 * 0.25 + 0.125, 2.5))  # exactly midway
    f = F.border_repulsion(a, g.distance_map())
    assert np.linalg.norm(f) < 1e-9


# ---------------------------------------------------------------------------
# Group forces


def test_group_of_one_is_all_zero():
    a = agent(0, (0, 0), group=1, leader=True)
    gaze, attr, rep = F.group_forces(a, [a])
    assert not gaze.any() and not attr.any() and not rep.any()


def test_group_attraction_beyond_threshold():
    # 3-person group: centroid 3 m from the agent, threshold (3-1)/2 = 1 m
    a = agent(0, (0.0, 0.0), group=1, leader=True, wps=[(10, 0)])
    b = agent(1, (4.5, 0.0), group=1)
    c = agent(2, (4.5, 0.0), group=1)
    gaze, attr, rep = F.group_forces(a, [a, b, c])
    assert np.allclose(attr, [3.0, 0.0], atol=1e-9)  # beta2 toward centroid


def test_group_attraction_inside_threshold_is_zero():
    a = agent(0, (0.0, 0.0), group=1)
    b = agent(1, (1.0, 0.0), group=1)
    c = agent(2, (-1.0, 0.0), group=1)  # centroid exactly on the agent
    _, attr, _ = F.group_forces(a, [a, b, c])
    assert not attr.any()


def test_group_attraction_mirror_symmetry():
    left = agent(0, (-2.0, 0.0), group=1)
    right = agent(1, (2.0, 0.0), group=1)
    _, attr_l, _ = F.group_forces(left, [left, right])
    _, attr_r, _ = F.group_forces(right, [left, right])
    assert np.allclose(attr_l, -attr_r, atol=1e-12)


def test_group_repulsion_when_overlapping():
    a = agent(0, (0.0, 0.0), group=1)
    b = agent(1, (0.3, 0.0), group=1)  # inside the 0.55 m overlap distance
    _, _, rep = F.group_forces(a, [a, b])
    assert rep[0] == pytest.approx(-1.0)  # beta3 away from the neighbor


def test_group_gaze_brakes_when_centroid_behind():
    a = agent(0, (0.0, 0.0), vel=(1.0, 0.0), group=1, wps=[(10, 0)])
    b = agent(1, (-3.0, 0.0), group=1)
    gaze, _, _ = F.group_forces(a, [a, b])
    # head rotation pi, force = -beta1 * pi * v
    assert np.allclose(gaze, [-4.0 * math.pi, 0.0], atol=1e-9)


# ---------------------------------------------------------------------------
# Aggregation


def test_aggregate_all_zero():
    bd = F.aggregate(np.zeros(2))
    assert np.array_equal(bd.total, np.zeros(2))


def test_aggregate_vector_sum():
    bd = F.aggregate([1, 0], [0, 1], [-1, 0])
    assert np.allclose(bd.total, [0, 1])


def test_aggregate_ungrouped_excludes_group_terms():
    bd = F.aggregate([1, 2], [3, 4], [5, 6])
    assert not bd.group_gaze.any()
    assert not bd.group_attraction.any()
    assert np.allclose(bd.total, [9, 12])


def test_aggregate_sum_identity_random():
    rng = np.random.default_rng(0)
    for _ in range(500):
        parts = rng.normal(size=(6, 2)) * 10
        bd = F.aggregate(*parts)
        assert np.allclose(
            bd.total,
            bd.goal + bd.ped_repulsion + bd.border + bd.group_gaze
            + bd.group_attraction + bd.group_repulsion, atol=1e-9)


def test_aggregate_rejects_nonfinite():
    with pytest.raises(NonFiniteForce):
        F.aggregate([np.nan, 0.0])


# ---------------------------------------------------------------------------
# Dataframe


def make_world(agents, grid=None):
    grid = grid or bordered_grid(80, 80)
    return WorldState(grid, agents=agents)


def test_dataframe_snapshot_contents():
    a = agent(3, (2, 2), vel=(0.5, 0), wps=[(5, 2)], group=7, leader=True)
    b = agent(1, (4, 2))
    world = make_world([a, b])
    world.time = 1.5
    frame = F.AgentsDataframe.capture(world, world.dmap)
    assert frame.timestamp == 1.5
    assert list(frame.ids) == [1, 3]  # sorted by id
    rows = frame.agents
    assert len(rows) == 2
    rid, pos, vel, wp, gid, state = rows[1]
    assert rid == 3 and gid == 7
    assert np.allclose(wp, [5, 2])
    assert frame.pairwise_dist[0, 1] == pytest.approx(2.0)
    assert frame.pairwise_dist[1, 0] == pytest.approx(2.0)
    assert (frame.border_dist > 0).all()


def test_vectorized_fields_match_scalar_functions():
    rng = np.random.default_rng(5)
    grid = bordered_grid(80, 80)
    agents = [agent(i, pos=rng.uniform(3, 17, 2), vel=rng.normal(0, 1, 2),
                    wps=[rng.uniform(3, 17, 2)],
                    group=1 if i < 3 else None, leader=(i == 0))
              for i in range(6)]
    world = make_world(agents, grid)
    frame = F.AgentsDataframe.capture(world, grid.distance_map())
    goal = F.goal_field(frame, F.DEFAULT_PARAMS)
    rep = F.repulsion_field(frame, F.DEFAULT_PARAMS)
    border = F.border_field(frame, grid.distance_map(), F.DEFAULT_PARAMS)
    ordered = sorted(agents, key=lambda a: a.id)
    group = [a for a in ordered if a.group_id == 1]
    for i, a in enumerate(ordered):
        assert np.allclose(goal[i], F.goal_force(a), atol=1e-12)
        scalar_rep = sum(F.pedestrian_repulsion(a, other)
                         for other in ordered if other.id != a.id)
        assert np.allclose(rep[i], scalar_rep, atol=1e-12)
        assert np.allclose(border[i],
                           F.border_repulsion(a, grid.distance_map()),
                           atol=1e-12)
    gaze, attr, grp = F.group_field(frame, F.DEFAULT_PARAMS)
    for i, a in enumerate(ordered):
        if a.group_id == 1:
            sg, sa, sr = F.group_forces(a, group)
            assert np.allclose(gaze[i], sg, atol=1e-12)
            assert np.allclose(attr[i], sa, atol=1e-12)
            assert np.allclose(grp[i], sr, atol=1e-12)
        else:
            assert not gaze[i].any() and not attr[i].any() and not grp[i].any()


# ---------------------------------------------------------------------------
# Plugins


def test_unknown_plugin_rejected_at_construction():
    with pytest.raises(UnknownPlugin):
        F.make_plugin("definitely-not-registered")


def test_passthrough_single_agent_equals_goal_force():
    a = agent(0, (10, 10), wps=[(15, 10)], plugin="passthrough")
    world = make_world([a], bordered_grid(120, 120))
    frame = F.AgentsDataframe.capture(world, world.dmap)
    plugin = F.make_plugin("passthrough")
    [(aid, force)] = F.plugin_step(frame, plugin, world.dmap)
    assert aid == 0
    # border force underflows in mid-room; goal term dominates identically
    assert np.allclose(force, F.goal_force(a), atol=1e-6)


def test_pysocial_zero_group_coefficients_match_passthrough_bitwise():
    rng = np.random.default_rng(9)
    grid = bordered_grid(80, 80)
    agents = [agent(i, pos=rng.uniform(4, 16, 2), vel=rng.normal(0, 1, 2),
                    wps=[rng.uniform(4, 16, 2)],
                    group=i % 2, leader=(i < 2))
              for i in range(8)]
    world = make_world(agents, grid)
    frame = F.AgentsDataframe.capture(world, grid.distance_map())
    idx = np.arange(len(agents))
    zeroed = F.ForceParams(beta_gaze=0.0, beta_attraction=0.0,
                           beta_repulsion=0.0)
    pysocial = F.PySocialPlugin(zeroed)
    passthrough = F.PassthroughPlugin(zeroed)
    f_social, _ = pysocial.compute(frame, grid.distance_map(), idx)
    f_pass, _ = passthrough.compute(frame, grid.distance_map(), idx)
    assert np.array_equal(f_social, f_pass)


def test_evacuation_overrides_waypoints_to_shared_exit():
    exit_point = np.array([10.0, 10.0])
    a = agent(0, (5, 5), wps=[(2, 2)], plugin="evacuation")
    b = agent(1, (15, 15), wps=[(18, 18)], plugin="evacuation")
    world = make_world([a, b], bordered_grid(120, 120))
    frame = F.AgentsDataframe.capture(world, world.dmap)
    plugin = F.make_plugin("evacuation", extra={"exit": exit_point.tolist()})
    override = plugin.goal_override(frame, np.array([0, 1]))
    assert np.allclose(override, np.tile(exit_point, (2, 1)))
    forces, comps = plugin.compute(frame, world.dmap, np.array([0, 1]))
    # both goal components point at the shared exit
    for i, ag in enumerate([a, b]):
        direction = exit_point - ag.position
        direction = direction / np.linalg.norm(direction)
        goal = comps["goal"][i]
        assert np.allclose(goal / np.linalg.norm(goal), direction, atol=1e-9)


def test_evacuation_scales_repulsion():
    a = agent(0, (9.8, 10), plugin="evacuation")
    b = agent(1, (10.2, 10), plugin="evacuation")
    world = make_world([a, b], bordered_grid(120, 120))
    frame = F.AgentsDataframe.capture(world, world.dmap)
    base = F.repulsion_field(frame, F.DEFAULT_PARAMS)
    plugin = F.make_plugin("evacuation", extra={"exit": [10, 10],
                                                "k_evac": 3.0})
    _, comps = plugin.compute(frame, world.dmap, np.array([0, 1]))
    assert np.allclose(comps["ped_repulsion"], 3.0 * base, atol=1e-12)


def test_bonding_spring_between_partners():
    a = agent(0, (8.0, 10.0), plugin="bonding")
    b = agent(1, (11.0, 10.0), plugin="bonding")
    world = make_world([a, b], bordered_grid(120, 120))
    frame = F.AgentsDataframe.capture(world, world.dmap)
    evac = F.make_plugin("evacuation", extra={"exit": [10, 10]})
    bond = F.make_plugin("bonding", extra={"exit": [10, 10],
                                           "bond_k": 2.0, "bond_rest": 1.0})
    idx = np.array([0, 1])
    f_evac, _ = evac.compute(frame, world.dmap, idx)
    f_bond, _ = bond.compute(frame, world.dmap, idx)
    spring = f_bond - f_evac
    # partners 3 m apart, rest 1 m -> pull 2*(3-1) = 4 toward each other
    assert np.allclose(spring[0], [4.0, 0.0], atol=1e-9)
    assert np.allclose(spring[1], [-4.0, 0.0], atol=1e-9)


def test_spinny_trajectory_circles_spawn_point():
    a = agent(0, (15.0, 15.0), speed=1.0, plugin="spinny")
    grid = bordered_grid(120, 120)
    world = WorldState(grid, agents=[a])
    sim = Simulation(world, np.random.default_rng(0), drivers=[],
                     plugin_extras={"spinny": {"r_spin": 2.0}},
                     track_semantics=False)
    for _ in range(1000):
        sim.tick()
    trace = sim.recorder.finalize()
    xy = trace.agents_xy[:, 0, :]
    radii = np.sqrt(((xy[500:] - np.array([15.0, 15.0])) ** 2).sum(axis=1))
    rms = math.sqrt(float(((radii - 2.0) ** 2).mean()))
    assert rms <= 0.05 * 2.0


def test_orca_plugin_integrates_to_chosen_velocity():
    from socnav.orca import orca_velocity
    a = agent(0, (10, 10), vel=(0.5, 0.0), wps=[(15, 10)], plugin="orca")
    b = agent(1, (12, 10), vel=(0.0, 0.0), wps=[(12, 10)], plugin="orca")
    world = make_world([a, b], bordered_grid(120, 120))
    frame = F.AgentsDataframe.capture(world, world.dmap)
    plugin = F.make_plugin("orca", extra={"tau_orca": 2.0}, dt=0.1)
    results = dict(F.plugin_step(frame, plugin, world.dmap))
    step_world(world, np.array([results[0], results[1]]), 0.1)
    expected = orca_velocity([10, 10], [0.5, 0.0], 0.3, [1.3, 0.0],
                             [(np.array([12.0, 10.0]), np.zeros(2), 0.3)],
                             2.0, 0.1, 2.0)
    assert np.allclose(world.agents[0].velocity, expected, atol=1e-9)


def test_plugin_parameter_validation():
    with pytest.raises(ValueError):
        F.make_plugin("spinny", extra={"r_spin": -1})
    with pytest.raises(ValueError):
        F.make_plugin("evacuation", extra={})  # exit required
    with pytest.raises(ValueError):
        F.make_plugin("orca", extra={"tau_orca": 0})


def test_custom_plugin_registration():
    class Lazy(F.ForcePlugin):
        kind = "lazy"

        def compute(self, frame, dmap, idx):
            out = np.zeros((len(idx), 2))
            return out, {"goal": out}

    F.register_plugin("lazy", Lazy)
    try:
        plugin = F.make_plugin("lazy")
        a = agent(0, (5, 5), plugin="lazy")
        world = make_world([a])
        frame = F.AgentsDataframe.capture(world, world.dmap)
        [(aid, force)] = F.plugin_step(frame, plugin, world.dmap)
        assert aid == 0 and not force.any()
    finally:
        del F.PLUGIN_FACTORIES["lazy"]
