"""Taxi domain (5x5, four depots), laid out like the classic Gym map."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from ..core import EnvSpec, FeatureSpace, Outcome, StructureError

TAXI_MAP = (
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
)
DEPOTS = ((0, 0), (0, 4), (4, 0), (4, 3))  # R, G, Y, B
DEPOT_NAMES = ("R", "G", "Y", "B")
IN_TAXI = 4
TAXI_ACTIONS = ("south", "north", "east", "west", "pickup", "dropoff")

MOVE_REWARD = -1.0
DELIVERY_REWARD = 20.0
ILLEGAL_REWARD = -10.0


@dataclass(frozen=True)
class TaxiState:
    taxi_row: int
    taxi_col: int
    passenger_loc: int
    destination: int

    def __post_init__(self):
        if not (0 <= self.taxi_row < 5 and 0 <= self.taxi_col < 5):
            raise StructureError("taxi outside the 5x5 grid")
        if not 0 <= self.passenger_loc <= IN_TAXI:
            raise StructureError("passenger_loc must be a depot index or IN_TAXI")
        if not 0 <= self.destination < 4:
            raise StructureError("destination must be a depot")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.taxi_row, self.taxi_col, self.passenger_loc, self.destination)


def _move(row: int, col: int, action: str) -> tuple[int, int]:
    if action == "south":
        return min(row + 1, 4), col
    if action == "north":
        return max(row - 1, 0), col
    line = TAXI_MAP[1 + row]
    if action == "east" and line[2 * col + 2] == ":":
        return row, col + 1
    if action == "west" and line[2 * col] == ":":
        return row, col - 1
    return row, col


def is_delivered(s) -> bool:
    return s[2] == s[3]


def build_taxi(gamma: float = 0.9) -> EnvSpec:
    """Taxi with features [taxi_row, taxi_col, passenger_loc, destination].

    States with the passenger already at the destination depot are terminal.
    Moves and a legal pickup cost 1, a delivery pays 20, an illegal pickup or
    dropoff costs 10. Dropping the passenger at another depot leaves them there.
    """
    states = tuple(
        (r, c, p, d) for r in range(5) for c in range(5) for p in range(5) for d in range(4)
    )
    terminal = frozenset(s for s in states if is_delivered(s))
    trans = {}
    for s in states:
        if s in terminal:
            trans[s] = tuple((Outcome(1.0, s, 0.0),) for _ in TAXI_ACTIONS)
            continue
        r, c, p, d = s
        row = []
        for a in TAXI_ACTIONS:
            if a == "pickup":
                if p < IN_TAXI and DEPOTS[p] == (r, c):
                    out = ((r, c, IN_TAXI, d), MOVE_REWARD)
                else:
                    out = (s, ILLEGAL_REWARD)
            elif a == "dropoff":
                if p == IN_TAXI and (r, c) == DEPOTS[d]:
                    out = ((r, c, d, d), DELIVERY_REWARD)
                elif p == IN_TAXI and (r, c) in DEPOTS:
                    out = ((r, c, DEPOTS.index((r, c)), d), MOVE_REWARD)
                else:
                    out = (s, ILLEGAL_REWARD)
            else:
                nr, nc = _move(r, c, a)
                out = ((nr, nc, p, d), MOVE_REWARD)
            row.append((Outcome(1.0, out[0], out[1]),))
        trans[s] = tuple(row)
    space = FeatureSpace(
        (("taxi_row", 5), ("taxi_col", 5), ("passenger_loc", 5), ("destination", 4))
    )
    return EnvSpec(
        name="taxi",
        feature_space=space,
        action_names=TAXI_ACTIONS,
        states=states,
        transitions=trans,
        terminal=terminal,
        gamma=gamma,
        start_states=tuple(s for s in states if s not in terminal),
        meta={"labels": {"State 1": (0, 4, 4, 1), "State 2": (0, 0, 0, 1)}},
    ).validate()


def shortest_path(src: tuple[int, int], dst: tuple[int, int]) -> int:
    """Breadth-first move count between two cells, respecting the walls."""
    seen = {src: 0}
    queue = deque([src])
    while queue:
        cell = queue.popleft()
        if cell == dst:
            return seen[cell]
        for a in TAXI_ACTIONS[:4]:
            nxt = _move(*cell, a)
            if nxt not in seen:
                seen[nxt] = seen[cell] + 1
                queue.append(nxt)
    raise StructureError(f"{dst} unreachable from {src}")
