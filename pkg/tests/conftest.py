import numpy as np
import pytest

from socnav.mapgen import FREE, WALL, GridMap, Provenance


def manual_grid(cells, resolution=0.25):
    cells = np.asarray(cells, dtype=np.uint8)
    prov = Provenance("manual", {}, (cells.shape[1], cells.shape[0]), 0,
                      resolution)
    return GridMap(resolution, cells, prov)


def bordered_grid(width, height, resolution=0.25):
    cells = np.zeros((height, width), dtype=np.uint8)
    cells[0, :] = WALL
    cells[-1, :] = WALL
    cells[:, 0] = WALL
    cells[:, -1] = WALL
    prov = Provenance("manual", {}, (width, height), 0, resolution)
    return GridMap(resolution, cells, prov)


@pytest.fixture
def empty_room():
    return bordered_grid(60, 60)


def mini_stage(**overrides):
    """A small random-mode benchmark stage for orchestration tests."""
    stage = {
        "name": "mini",
        "episodes": 2,
        "seed_base": 500,
        "map": {"generator": {"algorithm": "rosnav_outdoor",
                              "size": [60, 60], "resolution": 0.25,
                              "params": {"obstacle_num": 2,
                                         "obstacle_extra_radius": 2}}},
        "obstacles": {"mode": "random", "pedestrians": [3, 6],
                      "statics": [0, 2], "groups": [0, 1]},
        "robot": {"mode": "random"},
        "modules": {"dynamic_map": True},
    }
    stage.update(overrides)
    return stage
