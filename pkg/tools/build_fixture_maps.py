"""Build the bundled fixture maps and demo scripts under src/voxhunt/fixtures.

Run from the repository root:  python tools/build_fixture_maps.py

Each map is written as a versioned JSON document; demo scripts are replayed
before being written, so a script that no longer reaches its goal (or touches
a bug region) fails the build instead of producing a broken fixture.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from voxhunt.world import (
    Action as A,
    BugRegion,
    GoalRegion,
    MovingPlatform,
    VoxelMap,
    EMPTY,
    SOLID,
    CLIMBABLE,
    INFINITE_JUMP_GLITCH,
    MISSING_COLLISION,
    UNINTENDED_CLIMBABLE,
    play_script,
)
from voxhunt.mapio import save_map, save_demo_script

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "voxhunt" / "fixtures"


def box(x0, x1, y0, y1, z0, z1):
    return [(x, y, z) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1) for z in range(z0, z1 + 1)]


def build_corridor() -> VoxelMap:
    dims = (12, 4, 3)
    vox = np.zeros(dims, dtype=np.uint8)
    vox[:, 0, :] = SOLID
    return VoxelMap(
        name="corridor",
        dims=dims,
        voxels=vox,
        spawn=(1, 1, 1),
        goals=[GoalRegion(id=0, voxels=frozenset(box(9, 10, 1, 2, 0, 2)))],
    )


def build_area1() -> VoxelMap:
    dims = (16, 10, 14)
    vox = np.zeros(dims, dtype=np.uint8)
    vox[:, 0, :] = SOLID
    # Pit in the south-west corner, spanned by a shuttling platform.
    for x in range(2, 6):
        for z in range(1, 3):
            vox[x, 0, z] = EMPTY
    # Dividing wall with a walk-through door at the north end (z=12..13).
    for z in range(0, 12):
        for y in range(1, 7):
            vox[10, y, z] = SOLID
    # Goal room east of the wall: too tall to hop into, entered through a
    # doorway on its west side at z=6..7.
    for x, y, z in box(12, 15, 1, 5, 9, 9):   # north wall
        vox[x, y, z] = SOLID
    for x, y, z in box(12, 15, 1, 5, 4, 4):   # south wall
        vox[x, y, z] = SOLID
    for x, y, z in box(12, 12, 1, 5, 5, 8):   # west wall
        vox[x, y, z] = SOLID
    for x, y, z in box(12, 12, 1, 2, 6, 7):   # doorway
        vox[x, y, z] = EMPTY

    hole = box(10, 10, 1, 2, 5, 6)        # looks solid, physically passable
    glitch = box(9, 9, 1, 9, 1, 2)        # empty column with jump recharge
    return VoxelMap(
        name="testmap_area1",
        dims=dims,
        voxels=vox,
        spawn=(4, 1, 6),
        goals=[GoalRegion(id=0, voxels=frozenset(box(13, 14, 1, 2, 6, 7)))],
        bugs=[
            BugRegion(kind=MISSING_COLLISION, voxels=frozenset(hole)),
            BugRegion(kind=INFINITE_JUMP_GLITCH, voxels=frozenset(glitch)),
        ],
        platforms=[
            MovingPlatform(
                footprint=((3, 1, 1), (3, 1, 2)), axis="x", amplitude=2, period=8
            )
        ],
    )


def build_area2() -> VoxelMap:
    dims = (10, 8, 8)
    vox = np.zeros(dims, dtype=np.uint8)
    vox[:, 0, :] = SOLID
    # Tall wall; the intended way over is the climbable strip at z=6.
    for z in range(0, 8):
        for y in range(1, 7):
            vox[5, y, z] = SOLID
    for y in range(1, 7):
        vox[5, y, 6] = CLIMBABLE

    return VoxelMap(
        name="testmap_area2",
        dims=dims,
        voxels=vox,
        spawn=(2, 1, 4),
        goals=[GoalRegion(id=0, voxels=frozenset(box(7, 8, 1, 2, 3, 5)))],
        bugs=[
            BugRegion(kind=MISSING_COLLISION, voxels=frozenset(box(5, 5, 1, 2, 3, 3))),
            BugRegion(kind=UNINTENDED_CLIMBABLE, voxels=frozenset(box(5, 5, 1, 6, 1, 1))),
        ],
    )


AREA1_DEMOS = [
    [A.MOVE_N] * 6 + [A.MOVE_E] * 7 + [A.MOVE_S] * 5 + [A.MOVE_E] * 2 + [A.WAIT] * 8,
    [A.MOVE_NE] * 6 + [A.MOVE_E] * 1 + [A.MOVE_S] * 5 + [A.MOVE_E] * 2 + [A.WAIT] * 8,
    [A.MOVE_N] * 6 + [A.MOVE_E] * 7 + [A.MOVE_S] * 4 + [A.MOVE_SE] + [A.MOVE_E] + [A.WAIT] * 8,
    [A.MOVE_W] + [A.MOVE_N] * 6 + [A.MOVE_E] * 8 + [A.MOVE_S] * 5 + [A.MOVE_E] * 2 + [A.WAIT] * 8,
    [A.MOVE_N] * 3 + [A.MOVE_NE] * 3 + [A.MOVE_E] * 4 + [A.MOVE_S] * 5 + [A.MOVE_E] * 2 + [A.WAIT] * 8,
    [A.MOVE_N] * 6 + [A.MOVE_E] * 7 + [A.MOVE_S] * 5 + [A.MOVE_E] + [A.MOVE_SE] + [A.WAIT] * 8,
]

AREA2_DEMOS = [
    [A.MOVE_N] * 2 + [A.MOVE_E] * 2 + [A.MOVE_E]
    + [A.JUMP, A.WAIT] * 3 + [A.MOVE_E, A.MOVE_E]
    + [A.WAIT] * 5 + [A.MOVE_SE] + [A.WAIT] * 6,
    [A.MOVE_E] * 2 + [A.MOVE_N] * 2 + [A.MOVE_E]
    + [A.JUMP, A.WAIT] * 3 + [A.MOVE_E, A.MOVE_E]
    + [A.WAIT] * 5 + [A.MOVE_S, A.MOVE_E] + [A.WAIT] * 6,
]


def verify_demo(vmap: VoxelMap, actions, label: str) -> None:
    traj = play_script(vmap, actions)
    if not traj.reached_goal:
        positions = traj.positions
        raise SystemExit(f"{label}: never reaches the goal; end pos {positions[-1]}")
    if traj.bug_regions_entered:
        raise SystemExit(f"{label}: enters bug regions {traj.bug_regions_entered}")


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    for builder in (build_corridor, build_area1, build_area2):
        vmap = builder()
        vmap.validate()
        save_map(vmap, FIXTURES / f"{vmap.name}.json")
        print(f"wrote {vmap.name}.json")

    area1 = build_area1()
    for i, actions in enumerate(AREA1_DEMOS, start=1):
        verify_demo(area1, actions, f"area1 demo {i}")
        save_demo_script(FIXTURES / f"demo_area1_{i}.txt", area1.name, 0, actions)
        print(f"wrote demo_area1_{i}.txt ({len(actions)} actions)")

    area2 = build_area2()
    for i, actions in enumerate(AREA2_DEMOS, start=1):
        verify_demo(area2, actions, f"area2 demo {i}")
        save_demo_script(FIXTURES / f"demo_area2_{i}.txt", area2.name, 0, actions)
        print(f"wrote demo_area2_{i}.txt ({len(actions)} actions)")


if __name__ == "__main__":
    main()
