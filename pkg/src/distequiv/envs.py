"""Tabular environments: the one-state counterexample and three grid worlds.

Grid conventions. Actions are ``0=up, 1=right, 2=down, 3=left``; bumping into
a wall or the border leaves the agent in place. Terminal cells (goal, hole,
cliff) are ordinary states in which every action emits the terminal reward
and moves to a zero-reward absorbing sink, the last state index. Open cells
are numbered in row-major order.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DiscreteDistribution, TabularMDP, default_horizon
from .model_learn import ApproxModel

MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
ACTION_NAMES = ("up", "right", "down", "left")
DEFAULT_GRID_GAMMA = 0.95
FIG1_DEFAULT_GAMMA = 0.5
FROZEN_LAKE_HORIZON = 200

# '#' wall, '.' open, 'S' start, 'G' goal (+1), 'H' hole (-1), 'C' cliff (-1), 'R' risky
FOUR_ROOMS_LAYOUT = (
    ".....#....G",
    ".....#.....",
    "...........",
    ".....#.....",
    ".....#.....",
    "#.####.....",
    ".....###.##",
    ".....#.....",
    ".....#.....",
    "...........",
    "S....#.....",
)

FROZEN_LAKE_8X8 = (
    "SFFFFFFF",
    "FFFFFFFF",
    "FFFHFFFF",
    "FFFFFHFF",
    "FFFHFFFF",
    "FHHFFFHF",
    "FHFFHFHF",
    "FFFHFFFG",
)

ENV_NAMES = ("fig1_counterexample", "four_rooms_risky", "windy_cliffs", "frozen_lake_8x8")


@dataclass(frozen=True)
class EnvSpec:
    """Environment descriptor; unset fields take the per-environment defaults."""

    name: str
    gamma: float | None = None
    c: float = 1.0
    slip: float | None = None
    r_small: float = 0.25
    r_big: float = 0.9
    width: int = 12
    height: int = 4
    risky_cells: tuple | None = None

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown environment {self.name!r}; expected one of {ENV_NAMES}")
        if self.gamma is not None and not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.slip is not None and not 0 <= self.slip <= 1:
            raise ValueError("slip must lie in [0, 1]")
        if self.r_small < 0 or self.r_big < 0:
            raise ValueError("risky rewards are given as nonnegative magnitudes")
        if self.width < 3 or self.height < 2:
            raise ValueError("windy_cliffs needs width >= 3 and height >= 2")
        if self.risky_cells is not None:
            object.__setattr__(self, "risky_cells", tuple(tuple(int(v) for v in rc) for rc in self.risky_cells))

    @property
    def resolved_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return FIG1_DEFAULT_GAMMA if self.name == "fig1_counterexample" else DEFAULT_GRID_GAMMA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma"] = self.resolved_gamma
        if d["risky_cells"] is not None:
            d["risky_cells"] = [list(rc) for rc in d["risky_cells"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown environment fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class BuiltEnv:
    """An MDP plus the metadata needed to roll it out and describe it."""

    mdp: TabularMDP
    name: str
    start_state: int
    terminal_states: tuple
    goal_states: tuple
    horizon: int
    map: tuple = ()
    cells: tuple = ()  # (row, col) per non-sink state
    extras: dict = field(default_factory=dict)
    return_bounds: tuple | None = None  # interval holding (essentially) all return mass

    def __post_init__(self):
        if self.return_bounds is None:
            self.return_bounds = (-self.mdp.v_max, self.mdp.v_max)

    def to_mdp(self) -> TabularMDP:
        return self.mdp

    @property
    def map_string(self) -> str:
        return "\n".join(self.map)

    def map_sha256(self) -> str:
        return hashlib.sha256(self.map_string.encode()).hexdigest()

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "start_state": self.start_state,
            "terminal_states": list(self.terminal_states),
            "goal_states": list(self.goal_states),
            "horizon": self.horizon,
            "map": list(self.map),
            "return_bounds": list(self.return_bounds),
            **self.extras,
        }


def fig1_counterexample(c: float = 1.0, gamma: float = FIG1_DEFAULT_GAMMA) -> TabularMDP:
    """One state, two self-looping actions: ``a`` pays 0, ``b`` pays ``-c`` or ``+c`` with equal odds."""
    reward = [[DiscreteDistribution.dirac(0.0), DiscreteDistribution(np.array([-c, c]), np.array([0.5, 0.5]))]]
    return TabularMDP(np.ones((1, 2, 1)), reward, gamma, c)


def pve_model_of_fig1(c: float = 1.0, gamma: float = FIG1_DEFAULT_GAMMA) -> ApproxModel:
    """The counterexample with action ``b``'s reward collapsed to its mean: value-equivalent, risk-blind."""
    true = fig1_counterexample(c, gamma)
    reward = [[DiscreteDistribution.dirac(0.0), DiscreteDistribution.dirac(0.0)]]
    return ApproxModel.from_transition(true.transition, reward, gamma, c, {"loss": "value_equivalence", "source": "fig1"})


def _shortest_path(open_cells: set, start, goal) -> list:
    parent = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            break
        for dr, dc in MOVES:
            nxt = (cur[0] + dr, cur[1] + dc)
            if nxt in open_cells and nxt not in parent:
                parent[nxt] = cur
                queue.append(nxt)
    if goal not in parent:
        raise ValueError("goal unreachable from start")
    path, cur = [], goal
    while cur is not None:
        path.append(cur)
        cur = parent[cur]
    return path[::-1]


def _is_doorway(cell, open_cells) -> bool:
    r, c = cell
    vertical = (r - 1, c) not in open_cells and (r + 1, c) not in open_cells
    horizontal = (r, c - 1) not in open_cells and (r, c + 1) not in open_cells
    return vertical or horizontal


def doorway_risky_cells(layout) -> tuple:
    """Cells just before and after each doorway on the BFS shortest start-goal path."""
    open_cells = {(r, c) for r, row in enumerate(layout) for c, ch in enumerate(row) if ch != "#"}
    start = next((r, c) for r, row in enumerate(layout) for c, ch in enumerate(row) if ch == "S")
    goal = next((r, c) for r, row in enumerate(layout) for c, ch in enumerate(row) if ch == "G")
    path = _shortest_path(open_cells, start, goal)
    risky = []
    for i in range(1, len(path) - 1):
        if _is_doorway(path[i], open_cells):
            risky += [path[i - 1], path[i + 1]]
    return tuple(dict.fromkeys(risky))


def _build_grid(
    name: str,
    layout,
    gamma: float,
    move_probs,
    terminal_rewards: dict,
    risky_reward: DiscreteDistribution | None = None,
    risky_cells=(),
    horizon: int | None = None,
) -> BuiltEnv:
    """``move_probs[a][d]`` is the chance that action ``a`` moves in direction ``d``."""
    layout = tuple(layout)
    n_rows, n_cols = len(layout), len(layout[0])
    cells = [(r, c) for r in range(n_rows) for c in range(n_cols) if layout[r][c] != "#"]
    index = {cell: i for i, cell in enumerate(cells)}
    sink = len(cells)
    n_states = sink + 1
    move_probs = np.asarray(move_probs, dtype=float)

    transition = np.zeros((n_states, 4, n_states))
    zero = DiscreteDistribution.dirac(0.0)
    reward = [[zero] * 4 for _ in range(n_states)]
    risky = set(risky_cells)
    terminals, goals = [], []
    start = None
    for cell, x in index.items():
        ch = layout[cell[0]][cell[1]]
        if ch == "S":
            start = x
        if ch in terminal_rewards:
            terminals.append(x)
            if terminal_rewards[ch] > 0:
                goals.append(x)
            transition[x, :, sink] = 1.0
            reward[x] = [DiscreteDistribution.dirac(terminal_rewards[ch])] * 4
            continue
        if cell in risky:
            reward[x] = [risky_reward] * 4
        for d, (dr, dc) in enumerate(MOVES):
            nxt = (cell[0] + dr, cell[1] + dc)
            y = index.get(nxt, x)
            transition[x, :, y] += move_probs[:, d]
    transition[sink, :, sink] = 1.0
    terminals.append(sink)

    r_max = max(max(abs(a) for row in reward for d in row for a in d.atoms), 1e-12)
    mdp = TabularMDP(transition, reward, gamma, r_max)
    marked = [list(row) for row in layout]
    for r, c in risky:
        marked[r][c] = "R"
    return BuiltEnv(
        mdp,
        name,
        start,
        tuple(terminals),
        tuple(goals),
        horizon or default_horizon(gamma, r_max),
        tuple("".join(row) for row in marked),
        tuple(cells),
        {"sink_state": sink, "risky_states": sorted(index[c] for c in risky)},
    )


def _uniform_slip(slip: float) -> np.ndarray:
    """Intended move with prob ``1 - slip``, otherwise a uniformly random direction (possibly the intended one)."""
    return (1 - slip) * np.eye(4) + slip / 4.0


def build_env(spec: EnvSpec) -> BuiltEnv:
    gamma = spec.resolved_gamma
    if spec.name == "fig1_counterexample":
        mdp = fig1_counterexample(spec.c, gamma)
        return BuiltEnv(mdp, spec.name, 0, (), (), default_horizon(gamma, mdp.r_max), extras={"c": spec.c})

    if spec.name == "four_rooms_risky":
        slip = 0.2 if spec.slip is None else spec.slip
        risky = spec.risky_cells if spec.risky_cells is not None else doorway_risky_cells(FOUR_ROOMS_LAYOUT)
        open_cells = {(r, c) for r, row in enumerate(FOUR_ROOMS_LAYOUT) for c, ch in enumerate(row) if ch != "#"}
        if not set(risky) <= open_cells:
            raise ValueError("risky cells must be open cells")
        # same odds as the slip: small gain 1 - slip of the time, large loss otherwise
        risky_reward = DiscreteDistribution.from_unsorted([spec.r_small, -spec.r_big], [1 - slip, slip])
        if risky_reward.mean() <= 0:
            raise ValueError("risky cells need a positive expected reward: r_small * (1 - slip) > r_big * slip")
        env = _build_grid(
            spec.name, FOUR_ROOMS_LAYOUT, gamma, _uniform_slip(slip), {"G": 1.0}, risky_reward, risky
        )
        env.extras["risky_expected_reward"] = risky_reward.mean()
        # the goal pays once; losing more than five times r_big on risky cells is vanishingly rare
        env.return_bounds = (-5.0, 5.0)
        return env

    if spec.name == "windy_cliffs":
        slip = 1 / 3 if spec.slip is None else spec.slip
        rows = ["." * spec.width] * (spec.height - 1) + ["S" + "C" * (spec.width - 2) + "G"]
        env = _build_grid(spec.name, rows, gamma, _uniform_slip(slip), {"G": 1.0, "C": -1.0})
        env.return_bounds = (-1.0, 1.0)  # exactly one terminal reward, or none
        return env

    # frozen lake: intended direction or either perpendicular one
    slip = 2 / 3 if spec.slip is None else spec.slip
    probs = np.zeros((4, 4))
    for a in range(4):
        probs[a, a] = 1 - slip
        probs[a, (a + 1) % 4] += slip / 2
        probs[a, (a - 1) % 4] += slip / 2
    layout = [row.replace("F", ".") for row in FROZEN_LAKE_8X8]
    env = _build_grid(spec.name, layout, gamma, probs, {"G": 1.0, "H": -1.0}, horizon=FROZEN_LAKE_HORIZON)
    env.return_bounds = (-1.0, 1.0)
    return env
