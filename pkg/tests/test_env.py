import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mhairl import env as envlib
from mhairl.diffcore import ContractError
from mhairl.env import DOWN, LEFT, RIGHT, STAY, UP, TaskContext


def _discrete(i):
    return TaskContext("discrete", np.eye(2)[i])


def test_tinychain_prior_frequencies():
    spec = envlib.make_env("tinychain")
    draws = envlib.sample_tasks(spec, np.random.default_rng(0), 10_000)
    freq = draws.mean(axis=0)
    assert np.all(np.abs(freq - 0.5) < 0.02)


def test_grid_contexts_standard_normal():
    spec = envlib.make_env("grid_multigoal")
    draws = envlib.sample_tasks(spec, np.random.default_rng(0), 10_000)
    assert draws.shape == (10_000, 2)
    assert np.all(np.abs(draws.mean(axis=0)) < 0.05)
    # the resample-at-start rule removes only a small central mass
    assert np.all(np.abs(draws.std(axis=0) - 1) < 0.05)


def test_grid_goal_never_start():
    spec = envlib.make_env("grid_multigoal")
    draws = envlib.sample_tasks(spec, np.random.default_rng(3), 2000)
    assert not np.any(spec.goals_of(draws) == spec.start_cell)


@pytest.mark.parametrize("name", ["tinychain", "grid_multigoal"])
def test_sampling_is_seed_deterministic(name):
    spec = envlib.make_env(name)
    a = envlib.sample_tasks(spec, np.random.default_rng(42), 50)
    b = envlib.sample_tasks(spec, np.random.default_rng(42), 50)
    assert np.array_equal(a, b)


def test_reset_start_cells():
    chain = envlib.make_env("tinychain")
    assert envlib.reset(chain, _discrete(0)).cell == 1
    assert envlib.reset(chain, _discrete(1)).cell == 1
    grid = envlib.make_env("grid_multigoal")
    s = envlib.reset(grid, TaskContext("continuous", [0.7, -1.2]))
    assert grid.cell_xy(s.cell) == (5, 5) and s.step == 0
    for name in ("point_room", "point_maze"):
        for goal in range(4):
            spec = envlib.make_env(name, goal=goal)
            assert spec.cell_xy(envlib.reset(spec, TaskContext("continuous", [0.0, 0.0])).cell) == (5, 5)


def test_reset_rejects_mismatched_context():
    with pytest.raises(ContractError):
        envlib.reset(envlib.make_env("tinychain"), TaskContext("continuous", [0.0, 0.0]))
    with pytest.raises(ContractError):
        TaskContext("discrete", [0.5, 0.5])
    with pytest.raises(ContractError):
        TaskContext("continuous", [np.nan, 0.0])


def test_chain_step_right():
    spec = envlib.make_env("tinychain")
    s, r, done = envlib.step(spec, envlib.reset(spec, _discrete(1)), envlib.CHAIN_RIGHT)
    assert s.cell == 2 and r == 0.0 and not done


def test_chain_goal_rewards():
    spec = envlib.make_env("tinychain")
    s = envlib.reset(spec, _discrete(0))
    s, r, _ = envlib.step(spec, s, envlib.CHAIN_LEFT)
    assert (s.cell, r) == (0, 1.0)
    s, r, done = envlib.step(spec, s, envlib.CHAIN_LEFT)
    assert (s.cell, r) == (0, 1.0)


def _grid_state(spec, xy, goal_xy):
    c = TaskContext("continuous", [0.0, 0.0])
    return envlib.EnvState(spec.xy_cell(*xy), 0, c, spec.xy_cell(*goal_xy))


def test_grid_stay_at_goal_rewards():
    spec = envlib.make_env("grid_multigoal")
    s, r, _ = envlib.step(spec, _grid_state(spec, (8, 3), (8, 3)), STAY)
    assert r == 1.0 and spec.cell_xy(s.cell) == (8, 3)


@pytest.mark.parametrize("xy,action", [((0, 4), LEFT), ((10, 4), RIGHT), ((3, 0), DOWN), ((3, 10), UP)])
def test_grid_boundary_blocks(xy, action):
    spec = envlib.make_env("grid_multigoal")
    s, r, _ = envlib.step(spec, _grid_state(spec, xy, (5, 8)), action)
    assert spec.cell_xy(s.cell) == xy and r == 0.0


def test_point_room_walls_block():
    spec = envlib.make_env("point_room", goal=0)
    s, _, _ = envlib.step(spec, _grid_state(spec, (4, 0), (0, 0)), RIGHT)
    assert spec.cell_xy(s.cell) == (4, 0)


def test_sparse_episode_ends_on_goal():
    spec = envlib.make_env("point_room", goal=1)
    gx, gy = spec.cell_xy(spec.goal_cells[0])
    s, r, done = envlib.step(spec, _grid_state(spec, (gx - 1, gy), (gx, gy)), RIGHT)
    assert r == 1.0 and done
    with pytest.raises(ContractError):
        envlib.step(spec, s, RIGHT)


def test_episode_ends_at_horizon():
    spec = envlib.make_env("tinychain")
    s = envlib.reset(spec, _discrete(1))
    for _ in range(spec.horizon):
        s, _, done = envlib.step(spec, s, envlib.CHAIN_LEFT)
    assert done and s.step == spec.horizon
    with pytest.raises(ContractError):
        envlib.step(spec, s, 0)


def test_unknown_env_and_goal():
    with pytest.raises(ContractError):
        envlib.make_env("cheetah")
    with pytest.raises(ContractError):
        envlib.make_env("point_maze", goal=4)


def test_goal_mapping_examples():
    spec = envlib.make_env("grid_multigoal")
    assert spec.cell_xy(spec.goal_of([0.0, 0.0])) == (5, 5)
    assert spec.cell_xy(spec.goal_of([1.2, -0.8])) == (8, 3)
    assert spec.cell_xy(spec.goal_of([0.2, 0.0])) == (6, 5)    # 5.5 rounds half up
    assert spec.cell_xy(spec.goal_of([10.0, -10.0])) == (10, 0)  # clamped


def test_observation_is_cell_onehot_plus_context():
    spec = envlib.make_env("grid_multigoal")
    c = TaskContext("continuous", [1.2, -0.8])
    obs = envlib.observation(spec, envlib.reset(spec, c))
    assert obs.shape == (spec.n_cells + 2,)
    assert obs[spec.start_cell] == 1.0 and obs[: spec.n_cells].sum() == 1.0
    # the goal cell appears nowhere, only the raw context
    assert np.array_equal(obs[spec.n_cells:], c.value)


def test_tinychain_without_context_in_obs():
    spec = envlib.make_env("tinychain", context_in_obs=False)
    assert spec.obs_dim == 4
    obs = envlib.observation(spec, envlib.reset(spec, _discrete(0)))
    assert obs.tolist() == [0.0, 1.0, 0.0, 0.0]


@given(st.sampled_from(envlib.ENV_NAMES), st.lists(st.integers(0, 4), min_size=1, max_size=30))
def test_batched_and_single_step_dynamics_agree(name, actions):
    spec = envlib.make_env(name)
    actions = [a % spec.n_actions for a in actions]
    rng = np.random.default_rng(len(actions))
    c = envlib.sample_task(spec, rng)
    s = envlib.reset(spec, c)
    cell = torch.tensor([spec.start_cell])
    for a in actions:
        if s.done:
            break
        s, _, _ = envlib.step(spec, s, a)
        cell = envlib.next_cells(spec, cell, torch.tensor([a]))
        assert int(cell) == s.cell
        assert 0 <= s.cell < spec.n_cells
        x, y = spec.cell_xy(s.cell)
        assert (x, y) not in spec.walls


def test_transition_tables_are_total_and_local():
    for name in envlib.ENV_NAMES:
        spec = envlib.make_env(name)
        assert spec.next_cell.shape == (spec.n_cells, spec.n_actions)
        if spec.width:
            for cell in range(spec.n_cells):
                x, y = spec.cell_xy(cell)
                for a in range(spec.n_actions):
                    nx, ny = spec.cell_xy(int(spec.next_cell[cell, a]))
                    assert abs(nx - x) + abs(ny - y) <= 1


@pytest.mark.parametrize("name", ["point_room", "point_maze"])
def test_transfer_goals_reachable(name):
    """Breadth-first search from the start reaches every goal within the horizon."""
    for goal in range(4):
        spec = envlib.make_env(name, goal=goal)
        dist = {spec.start_cell: 0}
        frontier = [spec.start_cell]
        while frontier:
            nxt = []
            for c in frontier:
                for a in range(spec.n_actions):
                    n = int(spec.next_cell[c, a])
                    if n not in dist:
                        dist[n] = dist[c] + 1
                        nxt.append(n)
            frontier = nxt
        assert dist[spec.goal_cells[0]] <= spec.horizon
