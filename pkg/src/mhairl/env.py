"""Multi-task grid/chain MDP families.

All families are deterministic tabular worlds: a cell index, a fixed
``next_cell[cell, action]`` table (blocked moves are no-ops), and a goal cell
that depends on the task context. Rollouts over many trajectories use the
table directly; ``reset``/``step`` give the single-episode view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import torch

from .diffcore import DTYPE, ContractError

# grid action indices
UP, DOWN, LEFT, RIGHT, STAY = range(5)
GRID_ACTIONS = ("up", "down", "left", "right", "stay")
MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0), STAY: (0, 0)}
# chain action indices
CHAIN_LEFT, CHAIN_RIGHT = 0, 1

ENV_NAMES = ("tinychain", "grid_multigoal", "point_room", "point_maze")


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    n_cells: int
    n_actions: int
    horizon: int
    next_cell: np.ndarray            # (n_cells, n_actions) int
    start_cell: int
    context_kind: str                # "discrete" | "continuous"
    context_dim: int
    prior: tuple[float, ...] | None  # discrete prior over contexts
    goal_cells: tuple[int, ...] = ()  # discrete: goal per context; fixed-goal families: one entry
    width: int = 0
    height: int = 0
    terminate_on_goal: bool = False
    context_in_obs: bool = True
    walls: frozenset = field(default_factory=frozenset)
    fixed_context: bool = False      # prior is a point mass at zero (single-goal RL tasks)

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if self.next_cell.shape != (self.n_cells, self.n_actions):
            raise ContractError("transition table must be total over cells x actions")

    @property
    def obs_dim(self) -> int:
        return self.n_cells + (self.context_dim if self.context_in_obs else 0)

    def cell_xy(self, cell: int) -> tuple[int, int]:
        if self.width:
            return cell % self.width, cell // self.width
        return cell, 0

    def xy_cell(self, x: int, y: int) -> int:
        return y * self.width + x

    def goal_of(self, context: np.ndarray) -> int:
        """Goal cell for one context value."""
        return int(self.goals_of(np.asarray(context, dtype=np.float64)[None])[0])

    def goals_of(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.asarray(contexts, dtype=np.float64)
        if self.context_kind == "discrete":
            return np.asarray(self.goal_cells, dtype=np.int64)[contexts.argmax(axis=-1)]
        if self.fixed_context:
            return np.full(contexts.shape[0], self.goal_cells[0], dtype=np.int64)
        return grid_goal(contexts, self.width, self.height)


def grid_goal(contexts: np.ndarray, width: int, height: int) -> np.ndarray:
    """clamp(round(center + 2.5 c)) as cell indices; rounds half up."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    x = np.clip(np.floor(cx + 2.5 * contexts[..., 0] + 0.5), 0, width - 1).astype(np.int64)
    y = np.clip(np.floor(cy + 2.5 * contexts[..., 1] + 0.5), 0, height - 1).astype(np.int64)
    return y * width + x


@dataclass
class TaskContext:
    kind: str
    value: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise ContractError("context value must be finite")
        if self.kind == "discrete":
            v = self.value
            if not (np.all((v == 0) | (v == 1)) and v.sum() == 1):
                raise ContractError(f"discrete context must be one-hot, got {v}")


@dataclass
class EnvState:
    cell: int
    step: int
    context: TaskContext
    goal: int
    done: bool = False


def _grid_table(width: int, height: int, walls=frozenset()) -> np.ndarray:
    n = width * height
    table = np.zeros((n, 5), dtype=np.int64)
    for cell in range(n):
        x, y = cell % width, cell // width
        for a, (dx, dy) in MOVES.items():
            nx, ny = x + dx, y + dy
            ok = 0 <= nx < width and 0 <= ny < height and (nx, ny) not in walls
            table[cell, a] = ny * width + nx if ok else cell
    return table


def tinychain(context_in_obs: bool = True) -> TaskSpec:
    table = np.array([[max(p - 1, 0), min(p + 1, 3)] for p in range(4)], dtype=np.int64)
    return TaskSpec(
        name="tinychain", n_cells=4, n_actions=2, horizon=3, next_cell=table, start_cell=1,
        context_kind="discrete", context_dim=2, prior=(0.5, 0.5), goal_cells=(0, 3),
        context_in_obs=context_in_obs,
    )


def grid_multigoal() -> TaskSpec:
    return TaskSpec(
        name="grid_multigoal", n_cells=121, n_actions=5, horizon=24,
        next_cell=_grid_table(11, 11), start_cell=5 * 11 + 5,
        context_kind="continuous", context_dim=2, prior=None, width=11, height=11,
    )


# Cross-shaped walls splitting the grid into four rooms; a plus-shaped hub
# around the center joins them.
ROOM_WALLS = frozenset(
    {(5, y) for y in range(11) if abs(y - 5) > 1} | {(x, 5) for x in range(11) if abs(x - 5) > 1}
)
ROOM_GOALS = ((0, 0), (10, 0), (0, 10), (10, 10))
# Serpentine corridor: horizontal walls with gaps alternating at either end.
MAZE_WALLS = frozenset(
    {(x, 2) for x in range(10)} | {(x, 4) for x in range(1, 11)}
    | {(x, 6) for x in range(10)} | {(x, 8) for x in range(1, 11)}
)
MAZE_GOALS = ((10, 3), (0, 3), (10, 7), (0, 7))


def _point_env(name: str, walls, goals, goal: int) -> TaskSpec:
    if not 0 <= goal < len(goals):
        raise ContractError(f"{name} has {len(goals)} goals, got index {goal}")
    gx, gy = goals[goal]
    return TaskSpec(
        name=name, n_cells=121, n_actions=5, horizon=60, next_cell=_grid_table(11, 11, walls),
        start_cell=5 * 11 + 5, context_kind="continuous", context_dim=2, prior=None,
        goal_cells=(gy * 11 + gx,), width=11, height=11, terminate_on_goal=True,
        walls=walls, fixed_context=True,
    )


def point_room(goal: int = 0) -> TaskSpec:
    return _point_env("point_room", ROOM_WALLS, ROOM_GOALS, goal)


def point_maze(goal: int = 0) -> TaskSpec:
    return _point_env("point_maze", MAZE_WALLS, MAZE_GOALS, goal)


def make_env(name: str, **kwargs) -> TaskSpec:
    factories = {"tinychain": tinychain, "grid_multigoal": grid_multigoal,
                 "point_room": point_room, "point_maze": point_maze}
    if name not in factories:
        raise ContractError(f"unknown environment {name!r}; expected one of {', '.join(ENV_NAMES)}")
    key = (name, tuple(sorted(kwargs.items())))
    if key not in _ENV_CACHE:
        _ENV_CACHE[key] = factories[name](**kwargs)
    return _ENV_CACHE[key]


# specs are immutable, so one instance per (name, kwargs) is shared
_ENV_CACHE: dict = {}


# --- task sampling ----------------------------------------------------------

def sample_tasks(spec: TaskSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """(n, context_dim) context values drawn from the family prior."""
    if spec.context_kind == "discrete":
        idx = rng.choice(len(spec.prior), size=n, p=np.asarray(spec.prior))
        return np.eye(spec.context_dim)[idx]
    if spec.fixed_context:
        return np.zeros((n, spec.context_dim))
    out = np.empty((n, spec.context_dim))
    for i in range(n):
        while True:
            c = rng.standard_normal(spec.context_dim)
            if spec.goal_of(c) != spec.start_cell:
                break
        out[i] = c
    return out


def sample_task(spec: TaskSpec, rng: np.random.Generator) -> TaskContext:
    return TaskContext(spec.context_kind, sample_tasks(spec, rng, 1)[0])


def context_entropy(spec: TaskSpec) -> float:
    """H(C): exact for discrete priors, standard-normal differential entropy otherwise."""
    if spec.context_kind == "discrete":
        p = np.asarray(spec.prior)
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())
    return 0.5 * spec.context_dim * np.log(2.0 * np.pi * np.e)


# --- single-episode interface ------------------------------------------------

def _check_context(spec: TaskSpec, c: TaskContext) -> None:
    if c.kind != spec.context_kind or c.value.shape != (spec.context_dim,):
        raise ContractError(f"context {c.kind}/{c.value.shape} does not match {spec.name}")


def reset(spec: TaskSpec, c: TaskContext) -> EnvState:
    _check_context(spec, c)
    return EnvState(cell=spec.start_cell, step=0, context=c, goal=spec.goal_of(c.value))


def step(spec: TaskSpec, state: EnvState, action: int) -> tuple[EnvState, float, bool]:
    if state.done:
        raise ContractError("cannot step a finished episode")
    if not 0 <= action < spec.n_actions:
        raise ContractError(f"action {action} out of range for {spec.n_actions} actions")
    cell = int(spec.next_cell[state.cell, action])
    reward = 1.0 if cell == state.goal else 0.0
    t = state.step + 1
    done = t >= spec.horizon or (spec.terminate_on_goal and cell == state.goal)
    return EnvState(cell, t, state.context, state.goal, done), reward, done


def observation(spec: TaskSpec, state: EnvState) -> np.ndarray:
    onehot = np.zeros(spec.n_cells)
    onehot[state.cell] = 1.0
    if spec.context_in_obs:
        return np.concatenate([onehot, state.context.value])
    return onehot


# --- batched helpers ----------------------------------------------------------

@lru_cache(maxsize=None)
def _table_tensor(spec: TaskSpec) -> torch.Tensor:
    return torch.as_tensor(spec.next_cell, dtype=torch.long)


def next_cells(spec: TaskSpec, cells: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    return _table_tensor(spec)[cells, actions]


def cell_onehot(spec: TaskSpec, cells: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.one_hot(cells, spec.n_cells).to(DTYPE)


def observations(spec: TaskSpec, cells: torch.Tensor, contexts: torch.Tensor) -> torch.Tensor:
    """Observation vectors for cells (..., ) under per-trajectory contexts (B, d_C)."""
    oh = cell_onehot(spec, cells)
    if not spec.context_in_obs:
        return oh
    ctx = contexts.to(DTYPE)
    while ctx.dim() < oh.dim():
        ctx = ctx.unsqueeze(-2)
    return torch.cat([oh, ctx.expand(*oh.shape[:-1], ctx.shape[-1])], dim=-1)


def render(spec: TaskSpec, marks: dict[tuple[int, int], str] | None = None) -> str:
    """ASCII picture of a grid family (for debugging/reports)."""
    marks = marks or {}
    rows = []
    for y in reversed(range(spec.height)):
        rows.append("".join(marks.get((x, y), "#" if (x, y) in spec.walls else ".") for x in range(spec.width)))
    return "\n".join(rows)
