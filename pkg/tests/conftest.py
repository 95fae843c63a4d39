import numpy as np
import pytest

from voxhunt.mapio import fixture_path, load_fixture_map
from voxhunt.world import GoalRegion, SOLID, VoxelMap


@pytest.fixture(scope="session")
def area1():
    return load_fixture_map("testmap_area1")


@pytest.fixture(scope="session")
def area2():
    return load_fixture_map("testmap_area2")


@pytest.fixture(scope="session")
def corridor():
    return load_fixture_map("corridor")


@pytest.fixture(scope="session")
def area1_demo_paths():
    return [str(fixture_path(f"demo_area1_{i}.txt")) for i in range(1, 7)]


def flat_map(dims=(5, 4, 5), spawn=(2, 1, 2), goals=()):
    """Minimal synthetic map: solid floor, empty air, optional goal boxes."""
    vox = np.zeros(dims, dtype=np.uint8)
    vox[:, 0, :] = SOLID
    return VoxelMap(
        name="flat",
        dims=dims,
        voxels=vox,
        spawn=spawn,
        goals=[GoalRegion(id=i, voxels=frozenset(g)) for i, g in enumerate(goals)],
    )


@pytest.fixture
def flat5():
    return flat_map()
