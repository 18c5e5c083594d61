import math

import numpy as np
import pytest

from socnav import mapgen
from socnav.errors import PlacementExhausted
from socnav.mapgen import (CHAIR, FREE, RACK, SEPARATOR, SHELF, TABLE, TREE,
                           WALL, distance_transform, export_world,
                           generate_map, rasterize_world, regenerate,
                           validate_connectivity, validate_generator_params)

from conftest import bordered_grid, manual_grid


# ---------------------------------------------------------------------------
# Distance transform


def brute_force_sq(occupied):
    """O(n^2) nearest-occupied scan in integer squared cell units."""
    coords = np.argwhere(occupied)
    rows, cols = np.indices(occupied.shape)
    dr = rows[:, :, None] - coords[None, None, :, 0]
    dc = cols[:, :, None] - coords[None, None, :, 1]
    return (dr * dr + dc * dc).min(axis=2)


def test_edt_fully_occupied_is_zero():
    g = manual_grid(np.ones((8, 8)), resolution=1.0)
    assert (distance_transform(g).distances == 0).all()


def test_edt_single_cell_pythagoras():
    cells = np.zeros((9, 9), dtype=np.uint8)
    cells[0, 0] = WALL
    g = manual_grid(cells, resolution=1.0)
    d = distance_transform(g).distances
    assert d[4, 3] == 5.0  # offsets (3, 4) from the corner cell


def test_edt_matches_brute_force_on_random_maps():
    rng = np.random.default_rng(42)
    for _ in range(100):
        occ = rng.random((50, 50)) < rng.uniform(0.02, 0.3)
        occ[0, 0] = True  # at least one occupied cell
        got = mapgen._edt_squared(occ)
        assert np.array_equal(got, brute_force_sq(occ))


def test_edt_requires_an_occupied_cell():
    g = manual_grid(np.zeros((5, 5)))
    with pytest.raises(ValueError):
        distance_transform(g)


def test_distance_map_lipschitz():
    rng = np.random.default_rng(3)
    for seed in range(10):
        g = generate_map("barn", {"fill_pct": 0.1}, (50, 50), seed)
        d = g.distance_map().distances
        res = g.resolution
        assert (np.abs(np.diff(d, axis=0)) <= res + 1e-9).all()
        assert (np.abs(np.diff(d, axis=1)) <= res + 1e-9).all()


def test_distance_interpolation_clamps_at_edges():
    g = bordered_grid(20, 20)
    d = g.distance_map()
    inside = d.distance_at(np.array([2.5, 2.5]))
    assert np.isfinite(inside)
    assert d.distance_at(np.array([0.0, 0.0])) == 0.0


# ---------------------------------------------------------------------------
# Determinism and provenance


@pytest.mark.parametrize("algorithm", mapgen.ALGORITHMS)
def test_seed_determinism(algorithm):
    a = generate_map(algorithm, None, (60, 60), seed=9)
    b = generate_map(algorithm, None, (60, 60), seed=9)
    assert a.digest() == b.digest()
    c = generate_map(algorithm, None, (60, 60), seed=10)
    assert c.digest() != a.digest()


@pytest.mark.parametrize("algorithm", mapgen.ALGORITHMS)
def test_provenance_regenerates_bit_exactly(algorithm):
    g = generate_map(algorithm, None, (48, 48), seed=17)
    again = regenerate(g.provenance)
    assert np.array_equal(again.cells, g.cells)


@pytest.mark.parametrize("algorithm",
                         ["barn", "rosmap_outdoor", "rosnav_outdoor"])
def test_border_fully_walled(algorithm):
    g = generate_map(algorithm, None, (40, 52), seed=2)
    assert (g.cells[0, :] != FREE).all()
    assert (g.cells[-1, :] != FREE).all()
    assert (g.cells[:, 0] != FREE).all()
    assert (g.cells[:, -1] != FREE).all()


def test_param_validation():
    with pytest.raises(ValueError):
        validate_generator_params("nope", {})
    with pytest.raises(ValueError):
        validate_generator_params("barn", {"fill_pct": 1.5})
    with pytest.raises(ValueError):
        validate_generator_params("canteen", {"weird": 1})
    with pytest.raises(ValueError):
        validate_generator_params("rosmap_indoor", {"corridor_radius": -1})
    merged = validate_generator_params("barn", {"fill_pct": 0.2})
    assert merged["smooth_iter"] == 2  # default preserved


# ---------------------------------------------------------------------------
# Barn


def test_barn_boundary_fill_values():
    empty = generate_map("barn", {"fill_pct": 0.0, "smooth_iter": 0},
                         (40, 40), 1)
    assert (empty.cells[1:-1, 1:-1] == FREE).all()
    full = generate_map("barn", {"fill_pct": 1.0, "smooth_iter": 0},
                        (40, 40), 1)
    assert (full.cells[1:-1, 1:-1] != FREE).all()


@pytest.mark.parametrize("fill", [0.1, 0.25, 0.4])
def test_barn_fill_ratio_within_two_points(fill):
    for seed in range(5):
        g = generate_map("barn", {"fill_pct": fill, "smooth_iter": 0},
                         (80, 80), seed)
        interior = g.cells[1:-1, 1:-1]
        ratio = (interior != FREE).mean()
        assert abs(ratio - fill) <= 0.02


def test_barn_smoothing_majority_vote():
    rough = generate_map("barn", {"fill_pct": 0.4, "smooth_iter": 0},
                         (60, 60), 7)
    smooth = generate_map("barn", {"fill_pct": 0.4, "smooth_iter": 1},
                          (60, 60), 7)
    occ = (rough.cells != FREE).astype(int)
    votes = sum(np.roll(np.roll(occ, dr, 0), dc, 1)
                for dr in (-1, 0, 1) for dc in (-1, 0, 1))
    expected = np.where(votes >= 5, WALL, FREE)
    inner = (slice(2, -2), slice(2, -2))  # away from the fixed border
    assert np.array_equal(smooth.cells[inner], expected[inner].astype(np.uint8))


# ---------------------------------------------------------------------------
# Tree / blocked-square generators


def test_trees_nonoverlapping_reserved_squares():
    radius = 1
    g = generate_map("rosmap_outdoor",
                     {"obstacle_num": 15, "obstacle_extra_radius": radius},
                     (60, 60), 4)
    trees = [f for f in g.features if f.tag == "tree"]
    assert len(trees) == 15
    edge = 1 + 2 * radius
    boxes = []
    for f in trees:
        assert f.width == edge and f.height == edge
        assert (g.cells[f.cells()] == TREE).all()
        boxes.append((f.col, f.row))
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            ci, ri = boxes[i]
            cj, rj = boxes[j]
            assert abs(ci - cj) >= edge or abs(ri - rj) >= edge


def test_blocked_squares_union_equality():
    radius = 2
    for seed in range(10):
        g = generate_map("rosnav_outdoor",
                         {"obstacle_num": 6, "obstacle_extra_radius": radius},
                         (50, 50), seed)
        expected = np.zeros_like(g.cells, dtype=bool)
        expected[0, :] = expected[-1, :] = True
        expected[:, 0] = expected[:, -1] = True
        edge = 1 + 2 * radius
        for sq in g.meta["squares"]:
            assert sq["edge"] == edge
            expected[sq["row"]:sq["row"] + edge,
                     sq["col"]:sq["col"] + edge] = True
        assert np.array_equal(g.cells != FREE, expected)


def test_blocked_square_edge_measured_from_cells():
    radius = 3
    g = generate_map("rosnav_outdoor",
                     {"obstacle_num": 1, "obstacle_extra_radius": radius},
                     (40, 40), 11)
    interior = g.cells[1:-1, 1:-1] != FREE
    rows = np.flatnonzero(interior.any(axis=1))
    cols = np.flatnonzero(interior.any(axis=0))
    edge = 1 + 2 * radius
    assert rows[-1] - rows[0] + 1 == edge
    assert cols[-1] - cols[0] + 1 == edge
    assert interior.sum() == edge * edge


# ---------------------------------------------------------------------------
# Indoor rooms and corridors


def corridor_sections_exact(grid, radius):
    """Check every tunnel cross-section of every corridor; returns count."""
    width = 1 + 2 * radius
    checked = 0
    for seg in grid.meta["corridors"]:
        center = seg["center"]
        for along in range(seg["lo"], seg["hi"] + 1):
            if seg["axis"] == "h":
                lo_flank = (center - radius - 1, along)
                hi_flank = (center + radius + 1, along)
                column = grid.cells[:, along]
            else:
                lo_flank = (along, center - radius - 1)
                hi_flank = (along, center + radius + 1)
                column = grid.cells[along, :]
            if not (0 <= lo_flank[0] < grid.height
                    and 0 <= hi_flank[0] < grid.height):
                continue
            if grid.cells[lo_flank] == FREE or grid.cells[hi_flank] == FREE:
                continue  # a room or another corridor widens this section
            run = 0
            idx = center
            while idx >= 0 and column[idx] == FREE:
                run += 1
                idx -= 1
            idx = center + 1
            while idx < len(column) and column[idx] == FREE:
                run += 1
                idx += 1
            assert run == width
            checked += 1
    return checked


def test_corridor_width_exact():
    total = 0
    for seed in range(30):
        g = generate_map("rosmap_indoor",
                         {"corridor_radius": 1, "iterations": 5},
                         (60, 60), seed)
        total += corridor_sections_exact(g, 1)
    assert total > 50  # plenty of tunnel sections actually measured


def test_rooms_connected_across_seeds():
    for seed in range(100):
        g = generate_map("rosmap_indoor",
                         {"corridor_radius": 1, "iterations": 6},
                         (60, 60), seed)
        report = validate_connectivity(g)
        assert report.connected, f"seed {seed} produced {report.components}"


# ---------------------------------------------------------------------------
# Canteen


def chairs_of(grid, feature, radius):
    cx = feature.col + radius
    cy = feature.row + radius
    count = 0
    for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
        cc = cx + dx * (radius + 1)
        cr = cy + dy * (radius + 1)
        if grid.cells[cr, cc] == CHAIR:
            count += 1
    return count


def test_canteen_reserved_table_footprints():
    radius = 1
    g = generate_map("canteen", {"obstacle_num": 8,
                                 "obstacle_extra_radius": radius,
                                 "chair_chance": 1.0}, (60, 60), 3)
    tables = [f for f in g.features if f.tag == "table"]
    assert len(tables) == 8
    edge = 1 + 2 * radius
    for f in tables:
        assert f.width == edge and f.height == edge
        assert (g.cells[f.cells()] == TABLE).all()
        assert chairs_of(g, f, radius) == 4  # chance 1.0 spawns all four


def test_canteen_chair_counts_binomial():
    # chi-square against Binomial(4, 0.5) over >= 2500 tables, closed-form
    # survival for 4 dof: S(x) = exp(-x/2) * (1 + x/2)
    radius = 1
    counts = np.zeros(5, dtype=int)
    tables = 0
    seed = 0
    while tables < 2500:
        g = generate_map("canteen", {"obstacle_num": 25,
                                     "obstacle_extra_radius": radius,
                                     "chair_chance": 0.5}, (100, 100), seed)
        seed += 1
        for f in g.features:
            if f.tag == "table":
                counts[chairs_of(g, f, radius)] += 1
                tables += 1
    probs = np.array([math.comb(4, k) * 0.5 ** 4 for k in range(5)])
    expected = probs * tables
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    p_value = math.exp(-chi2 / 2) * (1 + chi2 / 2)
    assert p_value > 0.01, f"chi2={chi2:.2f} counts={counts.tolist()}"


# ---------------------------------------------------------------------------
# Warehouse and office


def test_warehouse_shelves_and_racks():
    g = generate_map("warehouse", {"obstacle_num": 8, "rack_chance": 1.0},
                     (60, 60), 5)
    shelves = [f for f in g.features if f.tag == "shelf"]
    racks = [f for f in g.features if f.tag == "rack"]
    assert len(shelves) == 8
    assert len(racks) == 16  # chance 1.0 spawns both end racks
    for f in shelves:
        assert {f.width, f.height} == {1, mapgen.SHELF_LEN}
        assert (g.cells[f.cells()] == SHELF).all()
    for f in racks:
        assert f.width == 1 and f.height == 1
        assert g.cells[f.row, f.col] == RACK


def test_warehouse_rack_chance_zero():
    g = generate_map("warehouse", {"obstacle_num": 6, "rack_chance": 0.0},
                     (60, 60), 5)
    assert not [f for f in g.features if f.tag == "rack"]
    assert (g.cells != RACK).all()


def test_office_workplaces_complete():
    g = generate_map("office", {"obstacle_num": 7}, (60, 60), 8)
    by_tag = {}
    for f in g.features:
        by_tag.setdefault(f.tag, []).append(f)
    assert len(by_tag["separator"]) == 7
    assert len(by_tag["table"]) == 7
    assert len(by_tag["chair"]) == 7
    for f in by_tag["separator"]:
        assert (g.cells[f.cells()] == SEPARATOR).all()
        assert {f.width, f.height} == {1, 3}


def test_placement_exhausted_when_overfull():
    with pytest.raises(PlacementExhausted):
        generate_map("canteen", {"obstacle_num": 500,
                                 "obstacle_extra_radius": 2}, (30, 30), 0)
    with pytest.raises(PlacementExhausted):
        generate_map("rosmap_outdoor", {"obstacle_num": 900,
                                        "obstacle_extra_radius": 2},
                     (40, 40), 0)


# ---------------------------------------------------------------------------
# Connectivity


def test_connectivity_empty_interior():
    g = generate_map("barn", {"fill_pct": 0.0}, (40, 40), 0)
    report = validate_connectivity(g)
    assert report.connected and report.components == 1
    assert report.largest_fraction == 1.0


def test_connectivity_split_by_wall():
    g = bordered_grid(30, 30)
    g.cells[15, :] = WALL  # full-width wall
    report = validate_connectivity(g)
    assert not report.connected
    assert report.components == 2


# ---------------------------------------------------------------------------
# World descriptor export


def test_single_wall_run_is_one_segment():
    g = bordered_grid(20, 20, resolution=0.5)
    g.cells[:] = FREE
    g.cells[10, 4:14] = WALL  # 10-cell straight wall
    wd = export_world(g)
    assert len(wd.walls) == 1
    seg = wd.walls[0]
    assert seg.width == pytest.approx(10 * 0.5)
    assert seg.height == pytest.approx(0.5)


def test_vertical_wall_merges_too():
    g = bordered_grid(20, 20, resolution=0.5)
    g.cells[:] = FREE
    g.cells[4:14, 7] = WALL
    wd = export_world(g)
    assert len(wd.walls) == 1
    assert wd.walls[0].height == pytest.approx(10 * 0.5)


def test_table_block_is_one_primitive():
    g = generate_map("canteen", {"obstacle_num": 1,
                                 "obstacle_extra_radius": 1,
                                 "chair_chance": 0.0}, (40, 40), 2)
    wd = export_world(g)
    tables = [s for s in wd.furniture if s.tag == "table"]
    assert len(tables) == 1
    assert tables[0].width == pytest.approx(3 * g.resolution)


@pytest.mark.parametrize("algorithm", mapgen.ALGORITHMS)
def test_export_rasterize_roundtrip(algorithm):
    for seed in range(15):
        g = generate_map(algorithm, None, (50, 50), seed)
        back = rasterize_world(export_world(g))
        assert np.array_equal(back, g.cells), f"{algorithm} seed {seed}"


def test_descriptor_yaml_roundtrip(tmp_path):
    import yaml
    g = generate_map("warehouse", None, (40, 40), 3)
    wd = export_world(g)
    path = tmp_path / "world.yaml"
    path.write_text(yaml.safe_dump(wd.to_dict()))
    loaded = mapgen.WorldDescriptor.from_dict(yaml.safe_load(path.read_text()))
    assert np.array_equal(rasterize_world(loaded), g.cells)


# ---------------------------------------------------------------------------
# Grid I/O


def test_pgm_roundtrip(tmp_path):
    g = generate_map("canteen", None, (40, 40), 6)
    path = tmp_path / "map.pgm"
    mapgen.save_map(g, path)
    loaded = mapgen.load_map(path)
    assert np.array_equal(loaded.cells, g.cells)
    assert loaded.resolution == g.resolution
    assert loaded.provenance.algorithm == "canteen"
    assert len(loaded.features) == len(g.features)
    assert regenerate(loaded.provenance).digest() == g.digest()
