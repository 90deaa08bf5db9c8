"""Scripted experts and the JSON Lines demonstration format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env as envlib
from .diffcore import ContractError
from .env import EnvState, TaskContext, TaskSpec

DEMO_VERSION = 1


class DemoFormatError(ValueError):
    pass


@dataclass
class Demonstration:
    states: np.ndarray                 # (T+1, obs_dim)
    actions: np.ndarray                # (T,)
    context: np.ndarray | None = None
    options: np.ndarray | None = None  # (T+1,), options[0] is the dummy index 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.states.ndim != 2 or len(self.states) != len(self.actions) + 1:
            raise ContractError(f"{len(self.states)} states for {len(self.actions)} actions")
        if self.context is not None:
            self.context = np.asarray(self.context, dtype=np.float64)
        if self.options is not None:
            self.options = np.asarray(self.options, dtype=np.int64)
            if len(self.options) != len(self.states):
                raise ContractError("options must have one entry per state")
            if self.options[0] != 0:
                raise ContractError("Z_0 must be the dummy option 0")

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a.view(np.uint8) if a.dtype == np.float64 else a,
                                                         b.view(np.uint8) if b.dtype == np.float64 else b)
        return (same(self.states, other.states) and same(self.actions, other.actions)
                and same(self.context, other.context) and same(self.options, other.options))


@dataclass
class DemoSet:
    demos: list[Demonstration]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)

    @property
    def annotated(self) -> bool:
        return bool(self.demos) and all(d.context is not None and d.options is not None for d in self.demos)


# --- scripted experts ---------------------------------------------------------

def script_expert_action(spec: TaskSpec, state: EnvState, c: TaskContext | None = None) -> int:
    """Horizontal-then-vertical on grids; greedy toward the goal end on the chain."""
    if state.done:
        raise ContractError("expert asked to act in a finished episode")
    goal = state.goal if c is None else spec.goal_of(c.value)
    if spec.name == "tinychain":
        # keep pushing into the goal end once there
        return envlib.CHAIN_LEFT if goal == 0 else envlib.CHAIN_RIGHT
    if spec.name in ("grid_multigoal",):
        return grid_expert_action(spec, state.cell, goal)
    raise ContractError(f"no scripted expert for {spec.name!r}")


def grid_expert_action(spec: TaskSpec, cell: int, goal: int) -> int:
    x, y = spec.cell_xy(cell)
    gx, gy = spec.cell_xy(goal)
    if x < gx:
        return envlib.RIGHT
    if x > gx:
        return envlib.LEFT
    if y < gy:
        return envlib.UP
    if y > gy:
        return envlib.DOWN
    return envlib.STAY


def expert_direction_labels(spec: TaskSpec, cells: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """Expert action at each cell for per-row goals; used to label option usage."""
    cells = np.asarray(cells)
    out = np.empty(cells.shape, dtype=np.int64)
    for idx in np.ndindex(cells.shape):
        out[idx] = grid_expert_action(spec, int(cells[idx]), int(goals[idx[0]]))
    return out


# grid direction -> option index; "stay" keeps the current option
GRID_OPTION = {envlib.UP: 0, envlib.DOWN: 1, envlib.LEFT: 2, envlib.RIGHT: 3}


def expert_option_labels(spec: TaskSpec, actions: np.ndarray) -> np.ndarray:
    """Z_{0:T} for an expert action sequence: one option per movement direction."""
    z = [0]
    for a in actions:
        if spec.name == "tinychain":
            z.append(int(a))
        else:
            z.append(GRID_OPTION.get(int(a), z[-1]))
    return np.asarray(z, dtype=np.int64)


def expert_episode(spec: TaskSpec, c: TaskContext) -> tuple[Demonstration, float]:
    state = envlib.reset(spec, c)
    states = [envlib.observation(spec, state)]
    actions, total = [], 0.0
    while not state.done:
        a = script_expert_action(spec, state)
        state, r, _ = envlib.step(spec, state, a)
        actions.append(a)
        states.append(envlib.observation(spec, state))
        total += r
    return Demonstration(np.array(states), np.array(actions), context=c.value.copy()), total


def generate_dataset(spec: TaskSpec, n: int, seed: int, annotate: bool = False) -> DemoSet:
    """Roll out the scripted expert on ``n`` freshly sampled tasks.

    Context and options are kept only with ``annotate``; the observation still
    carries the context when the family appends it. Annotated options label
    each step with the expert's movement direction (see ``expert_option_labels``).
    """
    if n < 1:
        raise ContractError("need at least one demonstration")
    rng = np.random.default_rng(seed)
    contexts = envlib.sample_tasks(spec, rng, n)
    demos = []
    for c in contexts:
        demo, _ = expert_episode(spec, TaskContext(spec.context_kind, c))
        if annotate:
            demo.options = expert_option_labels(spec, demo.actions)
        else:
            demo.context = None
        demos.append(demo)
    return DemoSet(demos, {"env": spec.name, "seed": int(seed), "count": int(n)})


def expert_return(spec: TaskSpec, contexts: np.ndarray) -> np.ndarray:
    return np.array([expert_episode(spec, TaskContext(spec.context_kind, c))[1] for c in contexts])


# --- JSON Lines I/O -------------------------------------------------------------

def _floats(a: np.ndarray):
    # repr of a Python float round-trips exactly
    return [float(v) for v in a]


def write_demos(demos: DemoSet, path: str | Path) -> None:
    path = Path(path)
    lines = []
    for d in demos:
        rec = {"version": DEMO_VERSION, "states": [_floats(s) for s in d.states],
               "actions": [int(a) for a in d.actions]}
        if d.context is not None:
            rec["context"] = _floats(d.context)
        if d.options is not None:
            rec["options"] = [int(z) for z in d.options]
        lines.append(json.dumps(rec, separators=(",", ":")))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    if demos.meta:
        meta_path.write_text(json.dumps(demos.meta, sort_keys=True) + "\n", encoding="utf-8")


def read_demos(path: str | Path) -> DemoSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"demonstration file not found: {path}")
    demos = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DemoFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if rec.get("version") != DEMO_VERSION:
            raise DemoFormatError(f"{path}:{lineno}: unsupported version {rec.get('version')!r}, expected {DEMO_VERSION}")
        try:
            demos.append(Demonstration(rec["states"], rec["actions"], rec.get("context"), rec.get("options")))
        except (KeyError, ContractError, ValueError) as exc:
            raise DemoFormatError(f"{path}:{lineno}: {exc}") from None
    meta = {}
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    return DemoSet(demos, meta)
