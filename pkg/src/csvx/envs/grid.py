"""Deterministic grid worlds: GridWorld-1, GridWorld-2 and FrozenLake."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources

from ..core import EnvSpec, FeatureSpace, Outcome, StructureError

GRID_CHARS = set(".SGHMRBY")

# row/col deltas
MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


def parse_grid(text: str) -> list[str]:
    """Parse the plain-text fixture format: one row per line."""
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise StructureError("empty grid")
    width = len(rows[0])
    for r in rows:
        if len(r) != width:
            raise StructureError("ragged grid")
        bad = set(r) - GRID_CHARS
        if bad:
            raise StructureError(f"unknown grid characters {sorted(bad)}")
    return rows


def load_fixture(name: str) -> list[str]:
    text = resources.files("csvx.envs").joinpath("fixtures", name).read_text()
    return parse_grid(text)


def cells(rows: list[str], char: str) -> frozenset[tuple[int, int]]:
    return frozenset((r, c) for r, line in enumerate(rows) for c, ch in enumerate(line) if ch == char)


@dataclass(frozen=True)
class GridWorldConfig:
    rows: int
    cols: int
    goal_cells: frozenset[tuple[int, int]]
    step_reward: float = -1.0
    goal_reward: float = 10.0
    start: tuple[int, int] | None = None
    holes: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    gamma: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise StructureError("grid needs positive dimensions")
        for r, c in self.goal_cells | self.holes:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise StructureError(f"cell {(r, c)} outside the grid")
        if not self.goal_cells:
            raise StructureError("grid needs at least one goal")
        if self.start is not None and self.start in self.goal_cells:
            raise StructureError("start cell cannot be a goal")

    @classmethod
    def from_rows(cls, rows: list[str], **kw) -> "GridWorldConfig":
        starts = cells(rows, "S")
        return cls(
            rows=len(rows),
            cols=len(rows[0]),
            goal_cells=cells(rows, "G"),
            holes=cells(rows, "H"),
            start=next(iter(starts)) if starts else None,
            **kw,
        )


def build_gridworld(cfg: GridWorldConfig, name: str = "gridworld") -> EnvSpec:
    """Grid with features (row, col) and actions up/down/left/right.

    Every move costs ``step_reward``; off-grid moves self-loop. Goal cells are
    terminal and worth ``goal_reward`` (their terminal value), so the cell
    next to a goal is worth ``step_reward + goal_reward``.
    """
    actions = ("up", "down", "left", "right")
    states = tuple((r, c) for r in range(cfg.rows) for c in range(cfg.cols))
    terminal = cfg.goal_cells | cfg.holes
    trans = {}
    for s in states:
        if s in terminal:
            trans[s] = tuple((Outcome(1.0, s, 0.0),) for _ in actions)
            continue
        row = []
        for a in actions:
            dr, dc = MOVES[a]
            nr, nc = s[0] + dr, s[1] + dc
            nxt = (nr, nc) if 0 <= nr < cfg.rows and 0 <= nc < cfg.cols else s
            row.append((Outcome(1.0, nxt, cfg.step_reward),))
        trans[s] = tuple(row)
    space = FeatureSpace((("row", cfg.rows), ("col", cfg.cols)))
    return EnvSpec(
        name=name,
        feature_space=space,
        action_names=actions,
        states=states,
        transitions=trans,
        terminal=frozenset(terminal),
        gamma=cfg.gamma,
        start_states=tuple(s for s in states if s not in terminal),
        terminal_values={g: cfg.goal_reward for g in cfg.goal_cells},
        meta={"rows": cfg.rows, "cols": cfg.cols},
    ).validate()


def _with_labels(env: EnvSpec, labels: dict[str, tuple[int, int]]) -> EnvSpec:
    meta = dict(env.meta)
    meta["labels"] = labels
    return replace(env, meta=meta)


def build_gridworld1() -> EnvSpec:
    """3x3 grid of decision states with a terminal goal column on the right.

    Decision states are labelled column-major: s1=(0,0), s2=(1,0), ..., s9=(2,2).
    """
    env = build_gridworld(GridWorldConfig.from_rows(load_fixture("gridworld1.txt")), "gridworld1")
    labels = {f"s{c * 3 + r + 1}": (r, c) for c in range(3) for r in range(3)}
    return _with_labels(env, labels)


GRIDWORLD2_LABELS = {
    "s1": (1, 0),
    "s2": (1, 1),
    "s3": (1, 2),
    "s4": (0, 2),
    "s5": (2, 2),
    "s6": (1, 3),
}


def build_gridworld2() -> EnvSpec:
    """3x4 grid with goals at (0, 3) and (2, 3), mirror-symmetric in the rows."""
    env = build_gridworld(GridWorldConfig.from_rows(load_fixture("gridworld2.txt")), "gridworld2")
    return _with_labels(env, dict(GRIDWORLD2_LABELS))


FROZEN_ACTIONS = ("west", "south", "east", "north")
FROZEN_MOVES = {"west": (-1, 0), "south": (0, 1), "east": (1, 0), "north": (0, -1)}


def build_frozenlake(
    rows: list[str] | None = None,
    step_reward: float = -1.0,
    goal_reward: float = 10.0,
    hole_reward: float = -10.0,
    gamma: float = 1.0,
) -> EnvSpec:
    """Deterministic FrozenLake with features (x, y): x is the column, y the row.

    Moving into a hole pays ``hole_reward``, into the goal ``goal_reward``;
    every other move (including bumping an edge) pays ``step_reward``.
    """
    rows = rows or load_fixture("frozenlake.txt")
    height, width = len(rows), len(rows[0])
    holes = {(c, r) for r, c in cells(rows, "H")}
    goals = {(c, r) for r, c in cells(rows, "G")}
    if not goals:
        raise StructureError("FrozenLake needs a goal")
    terminal = holes | goals
    states = tuple((x, y) for y in range(height) for x in range(width))
    trans = {}
    for s in states:
        if s in terminal:
            trans[s] = tuple((Outcome(1.0, s, 0.0),) for _ in FROZEN_ACTIONS)
            continue
        row = []
        for a in FROZEN_ACTIONS:
            dx, dy = FROZEN_MOVES[a]
            nx, ny = s[0] + dx, s[1] + dy
            nxt = (nx, ny) if 0 <= nx < width and 0 <= ny < height else s
            if nxt in holes:
                r = hole_reward
            elif nxt in goals:
                r = goal_reward
            else:
                r = step_reward
            row.append((Outcome(1.0, nxt, r),))
        trans[s] = tuple(row)
    # safe cells are labelled S0, S1, ... in row-major order, holes skipped
    labels = {}
    for y in range(height):
        for x in range(width):
            if (x, y) not in holes:
                labels[f"S{len(labels)}"] = (x, y)
    return EnvSpec(
        name="frozenlake",
        feature_space=FeatureSpace((("x", width), ("y", height))),
        action_names=FROZEN_ACTIONS,
        states=states,
        transitions=trans,
        terminal=frozenset(terminal),
        gamma=gamma,
        start_states=tuple(s for s in states if s not in terminal),
        meta={"labels": labels},
    ).validate()
