"""4x4 Minesweeper with a fixed mine layout.

Each cell is one feature: 0 hidden, 1..3 revealed with 0..2 adjacent mines,
and 4 for a revealed mine (only ever seen in a terminal state).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from ..core import EnvSpec, FeatureSpace, Outcome, StructureError
from .grid import cells, load_fixture, parse_grid

SIZE = 4
HIDDEN = 0
MINE_SHOWN = 4
MINE_REWARD = -20.0
MAX_COUNT = 2


def cell_index(r: int, c: int) -> int:
    return r * SIZE + c


def neighbours(r: int, c: int):
    for dr, dc in itertools.product((-1, 0, 1), repeat=2):
        if (dr or dc) and 0 <= r + dr < SIZE and 0 <= c + dc < SIZE:
            yield r + dr, c + dc


@dataclass(frozen=True)
class MinesweeperBoard:
    mines: frozenset[tuple[int, int]]

    def __post_init__(self):
        if not self.mines:
            raise StructureError("layout needs at least one mine")
        for r, c in self.mines:
            if not (0 <= r < SIZE and 0 <= c < SIZE):
                raise StructureError(f"mine {(r, c)} outside the 4x4 board")
        if len(self.mines) >= SIZE * SIZE:
            raise StructureError("layout has no safe cell")
        for cell in self.safe_cells:
            if self.count(*cell) > MAX_COUNT:
                raise StructureError(f"cell {cell} would show {self.count(*cell)} > {MAX_COUNT}")

    @classmethod
    def from_rows(cls, rows: list[str]) -> "MinesweeperBoard":
        if len(rows) != SIZE or any(len(r) != SIZE for r in rows):
            raise StructureError("minesweeper layout must be 4x4")
        return cls(cells(rows, "M"))

    @classmethod
    def from_text(cls, text: str) -> "MinesweeperBoard":
        return cls.from_rows(parse_grid(text))

    @property
    def safe_cells(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(SIZE) for c in range(SIZE) if (r, c) not in self.mines]

    def count(self, r: int, c: int) -> int:
        return sum((nr, nc) in self.mines for nr, nc in neighbours(r, c))

    def shown(self, r: int, c: int) -> int:
        return MINE_SHOWN if (r, c) in self.mines else 1 + self.count(r, c)


def build_minesweeper(layout: MinesweeperBoard | None = None, gamma: float = 1.0) -> EnvSpec:
    """Actions reveal cells 0..15 (row-major).

    Revealing a mine costs 20 and ends the game; revealing a safe cell pays 0
    and the game ends once every safe cell is open. Re-revealing is a no-op.
    """
    board = layout or MinesweeperBoard.from_rows(load_fixture("minesweeper.txt"))
    safe = board.safe_cells
    safe_idx = [cell_index(*cell) for cell in safe]
    shown = [board.shown(r, c) for r in range(SIZE) for c in range(SIZE)]

    nonterminal = []
    for mask in range(1 << len(safe)):
        if mask == (1 << len(safe)) - 1:
            continue
        values = [HIDDEN] * (SIZE * SIZE)
        for bit, idx in enumerate(safe_idx):
            if mask >> bit & 1:
                values[idx] = shown[idx]
        nonterminal.append(tuple(values))
    won = tuple(shown[i] if i in safe_idx else HIDDEN for i in range(SIZE * SIZE))

    trans = {}
    terminal = {won}
    for s in nonterminal:
        row = []
        for a in range(SIZE * SIZE):
            if s[a] != HIDDEN:
                row.append((Outcome(1.0, s, 0.0),))
                continue
            nxt = list(s)
            nxt[a] = shown[a]
            nxt = tuple(nxt)
            if shown[a] == MINE_SHOWN:
                terminal.add(nxt)
                row.append((Outcome(1.0, nxt, MINE_REWARD),))
            else:
                row.append((Outcome(1.0, nxt, 0.0),))
        trans[s] = tuple(row)
    for t in terminal:
        trans[t] = tuple((Outcome(1.0, t, 0.0),) for _ in range(SIZE * SIZE))

    states = tuple(nonterminal) + tuple(sorted(terminal))
    space = FeatureSpace(tuple((f"cell_{r}{c}", 5) for r in range(SIZE) for c in range(SIZE)))
    return EnvSpec(
        name="minesweeper",
        feature_space=space,
        action_names=tuple(f"reveal_{r}{c}" for r in range(SIZE) for c in range(SIZE)),
        states=states,
        transitions=trans,
        terminal=frozenset(terminal),
        gamma=gamma,
        start_states=tuple(nonterminal),
        meta={"mines": sorted(board.mines)},
    ).validate()


def default_groups(state) -> list[tuple[int, ...]]:
    """One player per hidden cell plus one aggregate player for every revealed cell."""
    hidden = [i for i, v in enumerate(state) if v == HIDDEN]
    revealed = tuple(i for i, v in enumerate(state) if v != HIDDEN)
    groups = [(i,) for i in hidden]
    if revealed:
        groups.append(revealed)
    return groups
