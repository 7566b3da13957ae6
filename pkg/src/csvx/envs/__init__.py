from __future__ import annotations

from dataclasses import replace

from ..core import EnvSpec, FeatureSpace, Outcome
from .grid import (
    GridWorldConfig,
    build_frozenlake,
    build_gridworld,
    build_gridworld1,
    build_gridworld2,
    parse_grid,
)
from .minesweeper import MinesweeperBoard, build_minesweeper
from .pendulum import PendulumDiscretization, build_pendulum
from .taxi import TaxiState, build_taxi

BUILDERS = {
    "gridworld1": build_gridworld1,
    "gridworld2": build_gridworld2,
    "frozenlake": build_frozenlake,
    "taxi": build_taxi,
    "minesweeper": build_minesweeper,
    "pendulum": build_pendulum,
}

_CACHE: dict[str, EnvSpec] = {}


def make_env(name: str) -> EnvSpec:
    """Build (and memoize) a named environment; ``<name>+dummy`` appends a constant feature."""
    if name in _CACHE:
        return _CACHE[name]
    base, _, suffix = name.partition("+")
    if base not in BUILDERS or suffix not in ("", "dummy"):
        raise KeyError(f"unknown environment {name!r}; choose from {sorted(BUILDERS)}")
    env = BUILDERS[base]()
    if suffix == "dummy":
        env = add_constant_feature(env)
    _CACHE[name] = env
    return env


def add_constant_feature(env: EnvSpec, feature: str = "dummy") -> EnvSpec:
    """Append a feature that always reads 0 and never affects the dynamics."""

    def ext(s):
        return tuple(s) + (0,)

    trans = {
        ext(s): tuple(tuple(Outcome(o.prob, ext(o.next_state), o.reward) for o in outs) for outs in rows)
        for s, rows in env.transitions.items()
    }
    meta = dict(env.meta)
    if "labels" in meta:
        meta["labels"] = {k: ext(v) for k, v in meta["labels"].items()}
    return replace(
        env,
        name=env.name + "+dummy",
        feature_space=FeatureSpace(env.feature_space.dims + ((feature, 1),)),
        states=tuple(ext(s) for s in env.states),
        transitions=trans,
        terminal=frozenset(ext(s) for s in env.terminal),
        start_states=tuple(ext(s) for s in env.start_states),
        terminal_values={ext(s): v for s, v in env.terminal_values.items()},
        meta=meta,
    ).validate()


__all__ = [
    "BUILDERS",
    "GridWorldConfig",
    "MinesweeperBoard",
    "PendulumDiscretization",
    "TaxiState",
    "add_constant_feature",
    "build_frozenlake",
    "build_gridworld",
    "build_gridworld1",
    "build_gridworld2",
    "build_minesweeper",
    "build_pendulum",
    "build_taxi",
    "make_env",
    "parse_grid",
]
