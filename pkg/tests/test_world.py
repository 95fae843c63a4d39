"""Physics and map invariants for the voxel world."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxhunt.world import (
    Action,
    AgentState,
    BugRegion,
    Env,
    GoalRegion,
    MapInvariantError,
    MovingPlatform,
    Physics,
    SOLID,
    CLIMBABLE,
    EMPTY,
    MISSING_COLLISION,
    INFINITE_JUMP_GLITCH,
    UNINTENDED_CLIMBABLE,
    VoxelMap,
    platform_offset,
    play_script,
)

from .conftest import flat_map
from .oracles import explore_states


A = Action


def test_action_set_has_exactly_ten_members():
    assert len(Action) == 10
    assert {a.name for a in Action} == {
        "MOVE_N", "MOVE_S", "MOVE_E", "MOVE_W",
        "MOVE_NE", "MOVE_NW", "MOVE_SE", "MOVE_SW", "JUMP", "WAIT",
    }


class TestMapValidation:
    def test_minimal_map_with_floor_is_valid(self):
        vox = np.zeros((3, 3, 3), dtype=np.uint8)
        vox[:, 0, :] = SOLID
        m = VoxelMap(name="t", dims=(3, 3, 3), voxels=vox, spawn=(1, 1, 1))
        m.validate()
        assert int((m.voxels == SOLID).sum()) == 9

    def test_goal_out_of_bounds_rejected(self):
        vox = np.zeros((3, 3, 3), dtype=np.uint8)
        vox[:, 0, :] = SOLID
        m = VoxelMap(
            name="t", dims=(3, 3, 3), voxels=vox, spawn=(1, 1, 1),
            goals=[GoalRegion(id=0, voxels=frozenset({(5, 1, 1)}))],
        )
        with pytest.raises(MapInvariantError, match="out of bounds"):
            m.validate()

    def test_spawn_needs_support(self):
        vox = np.zeros((3, 3, 3), dtype=np.uint8)
        m = VoxelMap(name="t", dims=(3, 3, 3), voxels=vox, spawn=(1, 2, 1))
        with pytest.raises(MapInvariantError, match="support"):
            m.validate()

    def test_bug_semantics_enforced(self):
        vox = np.zeros((3, 3, 3), dtype=np.uint8)
        vox[:, 0, :] = SOLID
        m = VoxelMap(
            name="t", dims=(3, 3, 3), voxels=vox, spawn=(1, 1, 1),
            bugs=[BugRegion(kind=MISSING_COLLISION, voxels=frozenset({(0, 1, 0)}))],
        )
        with pytest.raises(MapInvariantError, match="semantic class"):
            m.validate()

    def test_reserved_agent_code_rejected(self):
        vox = np.zeros((3, 3, 3), dtype=np.uint8)
        vox[:, 0, :] = SOLID
        vox[2, 2, 2] = 3
        m = VoxelMap(name="t", dims=(3, 3, 3), voxels=vox, spawn=(1, 1, 1))
        with pytest.raises(MapInvariantError, match="reserved"):
            m.validate()

    def test_bundled_area1_contents(self, area1):
        assert len(area1.goals) == 1
        assert len(area1.bugs) == 2
        assert len(area1.platforms) == 1
        assert {b.kind for b in area1.bugs} == {MISSING_COLLISION, INFINITE_JUMP_GLITCH}


class TestReset:
    def test_reset_puts_agent_at_spawn(self, area1):
        env = Env(area1)
        s = env.reset()
        assert s.pos == area1.spawn
        assert s.grounded and s.double_jump_available and s.jump_ticks == 0

    def test_reset_deterministic(self, area1):
        env = Env(area1)
        assert env.reset(seed=3) == env.reset(seed=3)

    def test_visited_starts_at_spawn(self, area1):
        env = Env(area1)
        env.reset()
        assert env.visited == {area1.spawn}


class TestStepMechanics:
    def test_free_move_keeps_grounded(self, flat5):
        env = Env(flat5)
        env.reset()
        res = env.step(A.MOVE_N)
        assert res.state.pos == (2, 1, 3)
        assert res.state.grounded
        assert res.state.last_disp == (0, 0, 1)

    def test_blocked_move_is_noop(self, flat5):
        env = Env(flat5)
        env.reset()
        for _ in range(5):
            res = env.step(A.MOVE_W)  # runs into the world boundary
        assert res.state.pos == (0, 1, 2)

    def test_jump_rises_two_then_falls_one_per_tick(self, flat5):
        env = Env(flat5)
        env.reset()
        ys = [env.step(a).state.pos[1] for a in [A.JUMP, A.WAIT, A.WAIT, A.WAIT]]
        assert ys == [2, 3, 2, 1]

    def test_double_jump_consumes_flag(self):
        env = Env(flat_map(dims=(5, 8, 5)))
        env.reset()
        env.step(A.JUMP)
        env.step(A.WAIT)
        res = env.step(A.JUMP)  # airborne, second jump
        assert not res.state.double_jump_available
        # apex with delayed second press is +4
        res = env.step(A.WAIT)
        assert res.state.pos[1] == 5

    def test_missing_collision_is_passable_but_observed_solid(self, area1):
        env = Env(area1)
        env.reset()
        for _ in range(6):
            res = env.step(A.MOVE_E)
        assert res.state.pos == (10, 1, 6)  # inside the wall column
        assert area1.voxels[10, 1, 6] == SOLID
        assert MISSING_COLLISION in res.bug_kinds
        # with bugs disabled the same cell blocks
        env2 = Env(area1, bugs_enabled=False)
        env2.reset()
        for _ in range(6):
            res2 = env2.step(A.MOVE_E)
        assert res2.state.pos == (9, 1, 6)

    def test_infinite_jump_glitch_recharges_double_jump(self, area1):
        env = Env(area1)
        env.reset()
        for a in [A.MOVE_SE] * 4 + [A.MOVE_E]:
            res = env.step(a)
        assert res.state.pos == (9, 1, 2)  # inside the glitch column
        assert INFINITE_JUMP_GLITCH in res.bug_kinds
        ys = [env.step(A.JUMP).state.pos[1] for _ in range(8)]
        assert ys == [2, 3, 4, 5, 6, 7, 8, 9]  # net ascent 8 voxels, one per tick

    def test_glitch_allows_ten_plus_voxel_ascent(self):
        # airborne agent with the recharge glitch active can chain jumps freely
        m = flat_map(dims=(3, 16, 3), spawn=(1, 1, 1))
        glitch = frozenset((1, y, 1) for y in range(1, 15))
        m.bugs.append(BugRegion(kind=INFINITE_JUMP_GLITCH, voxels=glitch))
        env = Env(m)
        env.reset()
        start_y = env.state.pos[1]
        for _ in range(10):
            res = env.step(A.JUMP)
        assert res.state.pos[1] - start_y >= 10

    def test_goal_reward_per_tick_inside(self, corridor):
        env = Env(corridor, episode_length=40)
        env.reset()
        total = 0.0
        goal_ticks = 0
        for a in [A.MOVE_E] * 9 + [A.WAIT] * 5:
            res = env.step(a)
            total += res.r_e
            goal_ticks += 1 if res.goal_ids else 0
        assert goal_ticks > 0
        assert total == 10.0 * goal_ticks

    def test_done_exactly_at_episode_length(self, flat5):
        env = Env(flat5, episode_length=3)
        env.reset()
        assert not env.step(A.WAIT).done
        assert not env.step(A.WAIT).done
        assert env.step(A.WAIT).done


class TestClimbing:
    def test_attach_hold_and_ascend(self, area2):
        env = Env(area2)
        env.reset()
        for a in [A.MOVE_N] * 2 + [A.MOVE_E] * 2:
            env.step(a)
        res = env.step(A.MOVE_E)  # blocked by the climbable strip
        assert res.state.pos == (4, 1, 6)
        assert res.state.climbing
        res = env.step(A.JUMP)
        assert res.state.pos[1] == 2 and res.state.climbing
        res = env.step(A.WAIT)
        assert res.state.pos[1] == 3 and res.state.climbing  # holds, then keeps climbing

    def test_climbing_clears_away_from_wall(self, area2):
        env = Env(area2)
        env.reset()
        for a in [A.MOVE_N] * 2 + [A.MOVE_E] * 2 + [A.MOVE_E]:
            env.step(a)
        res = env.step(A.MOVE_W)  # detach horizontally
        assert not res.state.climbing

    def test_unintended_climbable_counts_as_bug_use(self, area2):
        env = Env(area2)
        env.reset()
        for a in [A.MOVE_S] * 3 + [A.MOVE_E] * 2:
            res = env.step(a)
        assert res.state.pos == (4, 1, 1)
        res = env.step(A.MOVE_E)  # attach to the unintended climbable strip
        assert res.state.climbing
        assert UNINTENDED_CLIMBABLE in res.bug_kinds
        # with bugs off the same wall cell does not hold the agent
        env2 = Env(area2, bugs_enabled=False)
        env2.reset()
        for a in [A.MOVE_S] * 3 + [A.MOVE_E] * 2:
            env2.step(a)
        res2 = env2.step(A.MOVE_E)
        assert not res2.state.climbing


class TestPlatform:
    def test_offset_examples(self):
        p = MovingPlatform(footprint=((0, 0, 0),), axis="x", amplitude=3, period=12)
        assert platform_offset(p, 0) == 0
        assert platform_offset(p, 6) == 3
        assert platform_offset(p, 9) == 1  # 1.5 truncated toward zero
        assert platform_offset(p, 12) == 0

    def test_offset_pure_function(self):
        p = MovingPlatform(footprint=((0, 0, 0),), axis="x", amplitude=2, period=8)
        series = [platform_offset(p, t) for t in range(32)]
        assert series[:8] * 4 == series

    def test_rider_is_carried(self):
        vox = np.zeros((8, 6, 3), dtype=np.uint8)
        vox[:, 0, :] = SOLID
        vox[1, 1, 1] = SOLID  # block the spawn stands on
        m = VoxelMap(
            name="ride", dims=(8, 6, 3), voxels=vox, spawn=(1, 2, 1),
            platforms=[MovingPlatform(footprint=((2, 1, 1),), axis="x", amplitude=3, period=12)],
        )
        env = Env(m)
        env.reset()
        res = env.step(A.MOVE_E)  # step across onto the platform top
        assert res.state.pos == (2, 2, 1)
        assert res.state.grounded
        xs = [env.step(A.WAIT).state.pos for _ in range(5)]
        # the rider follows the platform as it shuttles east
        assert xs[-1] == (2 + platform_offset(m.platforms[0], 6), 2, 1)
        assert all(p[1] == 2 for p in xs)

    def test_elevator_carries_up_and_down(self):
        vox = np.zeros((3, 8, 3), dtype=np.uint8)
        vox[:, 0, :] = SOLID
        vox[1, 0, 1] = EMPTY  # pit cell under the elevator shaft keeps footprint clear
        m = VoxelMap(
            name="lift", dims=(3, 8, 3), voxels=vox, spawn=(1, 1, 1),
            platforms=[MovingPlatform(footprint=((1, 0, 1),), axis="y", amplitude=4, period=16)],
        )
        env = Env(m)
        env.reset()
        ys = [env.step(A.WAIT).state.pos[1] for _ in range(16)]
        assert max(ys) == 5  # rode up with the platform (top at y=4)
        assert ys[-1] == 1  # and back down


class TestTrajectories:
    def test_empty_script_single_state(self, area1):
        traj = play_script(area1, [])
        assert len(traj.states) == 1 and traj.positions == [area1.spawn]

    def test_bundled_demo_reaches_goal_without_bugs(self, area1, area1_demo_paths):
        from voxhunt.mapio import load_demo_script

        name, goal, actions = load_demo_script(area1_demo_paths[0])
        assert name == area1.name and goal == 0
        traj = play_script(area1, actions)
        assert traj.reached_goal
        assert traj.bug_regions_entered == set()

    def test_replay_bit_identical(self, area1):
        rng = np.random.default_rng(0)
        actions = [Action(int(a)) for a in rng.integers(0, 10, size=60)]
        t1 = play_script(area1, actions)
        t2 = play_script(area1, actions)
        assert t1.positions == t2.positions
        assert t1.states == t2.states

    def test_reward_equals_ten_times_goal_ticks(self, area1):
        rng = np.random.default_rng(5)
        actions = [Action(int(a)) for a in rng.integers(0, 10, size=100)]
        traj = play_script(area1, actions)
        assert sum(traj.r_e) == 10.0 * sum(1 for f in traj.goal_flags[1:] if f)


@st.composite
def action_sequences(draw):
    return draw(st.lists(st.sampled_from(list(Action)), min_size=1, max_size=120))


class TestProperties:
    @given(actions=action_sequences())
    @settings(max_examples=60, deadline=None)
    def test_containment_and_state_invariants(self, actions):
        m = None
        from voxhunt.mapio import load_fixture_map

        for name in ("testmap_area1", "testmap_area2"):
            m = load_fixture_map(name)
            env = Env(m)
            env.reset()
            phys = env.physics
            for t, a in enumerate(actions):
                res = env.step(a)
                s = res.state
                assert m.in_bounds(s.pos), f"{name}: out of bounds at step {t}"
                assert phys.passable(s.pos, t + 1), f"{name}: inside solid at step {t}"
                below = (s.pos[0], s.pos[1] - 1, s.pos[2])
                if s.grounded:
                    assert phys.colliding(below, t + 1)
                if s.climbing:
                    assert phys._adjacent_climbable(s.pos)

    @given(actions=action_sequences())
    @settings(max_examples=30, deadline=None)
    def test_gravity_totality(self, actions):
        from voxhunt.mapio import load_fixture_map

        m = load_fixture_map("testmap_area2")  # no platforms: static support
        env = Env(m, episode_length=len(actions) + m.dims[1] + 2)
        env.reset()
        for a in actions:
            res = env.step(a)
        s = res.state
        if s.jump_ticks == 0 and not s.climbing and not s.grounded:
            for _ in range(m.dims[1]):
                res = env.step(Action.WAIT)
                if res.state.grounded:
                    break
            assert res.state.grounded


class TestBugAsymmetry:
    def test_mini_map_shortcut_only_with_bugs(self):
        # 1-thick wall fully dividing a corridor, with a missing-collision gap
        vox = np.zeros((7, 5, 3), dtype=np.uint8)
        vox[:, 0, :] = SOLID
        vox[3, 1:5, :] = SOLID
        hole = frozenset({(3, 1, z) for z in range(3)})
        m = VoxelMap(
            name="mini", dims=(7, 5, 3), voxels=vox, spawn=(1, 1, 1),
            bugs=[BugRegion(kind=MISSING_COLLISION, voxels=hole)],
        )
        pos_on, _, _ = explore_states(Physics(m, bugs_enabled=True))
        pos_off, _, _ = explore_states(Physics(m, bugs_enabled=False))
        assert hole <= pos_on
        assert not (hole & pos_off)
        assert (5, 1, 1) in pos_on and (5, 1, 1) not in pos_off
