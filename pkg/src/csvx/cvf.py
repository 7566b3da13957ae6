"""Characteristic value functions over coalitions of state features.

Every function maps a coalition ``C`` to a payoff read from the artifact
trained on ``C``'s masked observations, with ``v(empty) = 0``:

===========  =========================================================
vanilla/q    Q^C(s^C, a_i)
vanilla/v    expected V^C over the abstract successor of s^C under a_i
cd/q         Q^C(s^C, a_i) - Q^C(s^C, a_j)
cd/v         the same gap on expected successor values
acd/q        mean over all actions a of Q^C(s^C, a*) - Q^C(s^C, a)
acd/v        mean over the reachable successor observations o' of
             W^C(a*) - V^C(o'), where W is the expected successor value
===========  =========================================================

The concrete actions behind ranks ``i``, ``j`` and ``a*`` are fixed once from
the exact full-feature ranking at ``s`` and reused in every coalition, unless
the query asks for per-coalition binding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .core import Coalition, StructureError, enumerate_coalitions
from .solver import (
    TERMINAL_PREFIX,
    ContractError,
    PolicyArtifact,
    abstract_successor_expectation,
    greedy_action,
    masked_key,
    rank_actions,
)
from .store import ArtifactStore

METHODS = ("vanilla", "cd", "acd")
SOURCES = ("q", "v")
BINDINGS = ("fixed", "per-coalition")


class CvfEvaluationError(RuntimeError):
    """An evaluation failure tagged with the coalition and observation involved."""


# raw deltas -----------------------------------------------------------------


def delta_q(art: PolicyArtifact, obs: str, a_star: int, a: int) -> float:
    return art.q_value(obs, a_star) - art.q_value(obs, a)


def delta_v(v: PolicyArtifact | dict, obs_star: str, obs_prime: str) -> float:
    if isinstance(v, PolicyArtifact):
        return v.value(obs_star) - v.value(obs_prime)
    try:
        return float(v[obs_star]) - float(v[obs_prime])
    except KeyError as exc:
        raise LookupError(f"observation {exc.args[0]!r} not in value table") from None


def _mean_q_gap(art: PolicyArtifact, obs: str, a_star: int) -> float:
    # |A| in the denominator, self-term included
    top = art.q_value(obs, a_star)
    return sum(top - art.q_value(obs, a) for a in range(art.n_actions)) / art.n_actions


def avg_delta_q(art: PolicyArtifact, obs: str, a_star: int) -> float:
    """Mean Q gap between the greedy action and every action, itself included."""
    if a_star != greedy_action(art, obs):
        raise ContractError(f"action {a_star} is not greedy at {obs!r}")
    return _mean_q_gap(art, obs, a_star)


def expected_successor_value(art: PolicyArtifact, obs: str, a: int) -> float:
    dist = abstract_successor_expectation(art, obs, a)
    return sum(p * art.value(nk) for nk, p in dist.items())


def successor_support(art: PolicyArtifact, obs: str) -> list[str]:
    """Observations reachable from ``obs`` with positive frequency under some action."""
    keys: set[str] = set()
    for a in range(art.n_actions):
        keys.update(abstract_successor_expectation(art, obs, a))
    return sorted(keys)


def _mean_v_gap(art: PolicyArtifact, obs: str, a_star: int) -> float:
    best = expected_successor_value(art, obs, a_star)
    support = successor_support(art, obs)
    return sum(best - art.value(k) for k in support) / len(support)


def avg_delta_v(art: PolicyArtifact, obs: str, a_star: int | None = None) -> float:
    """Mean gap between the value expected under ``a_star`` and each reachable successor.

    ``a_star`` defaults to the artifact's greedy action. A terminal observation
    is its own only successor, so the mean is 0.
    """
    if obs.startswith(TERMINAL_PREFIX):
        return 0.0
    if a_star is None:
        a_star = greedy_action(art, obs)
    return _mean_v_gap(art, obs, a_star)


# queries ----------------------------------------------------------------------


@dataclass(frozen=True)
class CvfQuery:
    env: str
    state: tuple[int, ...]
    method: str
    source: str = "q"
    i: int = 0
    j: int | None = None
    binding: str = "fixed"
    groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.binding not in BINDINGS:
            raise ValueError(f"binding must be one of {BINDINGS}, got {self.binding!r}")
        if self.method == "cd":
            if self.j is None:
                raise ValueError("cd needs an action pair (i, j)")
            if self.i == self.j:
                raise ValueError("cd needs i != j")
        if self.i < 0 or (self.j is not None and self.j < 0):
            raise ValueError("action indices must be nonnegative")
        object.__setattr__(self, "state", tuple(int(v) for v in self.state))
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(tuple(sorted(g)) for g in self.groups))

    def swapped(self) -> "CvfQuery":
        if self.method != "cd":
            raise ValueError("only cd queries have an operand order")
        return CvfQuery(self.env, self.state, "cd", self.source, self.j, self.i, self.binding, self.groups)

    @property
    def label(self) -> str:
        if self.method == "vanilla":
            return f"Vani({self.i})"
        if self.method == "cd":
            return f"CD({self.i},{self.j})"
        return "ACD"


@dataclass(frozen=True, eq=False)
class CharacteristicFn:
    """A total map from player coalitions to payoffs; v(empty) = 0."""

    query: CvfQuery
    n: int
    evaluate: Callable[[Coalition], float] = field(repr=False)
    player_names: tuple[str, ...] = ()
    actions: tuple[int, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, c: Coalition | Sequence[int]) -> float:
        c = c if isinstance(c, Coalition) else Coalition(c)
        if c not in self._cache:
            c.check(self.n)
            self._cache[c] = 0.0 if not c.members else float(self.evaluate(c))
        return self._cache[c]


def _players(env, query: CvfQuery) -> tuple[tuple[int, ...], ...]:
    if query.groups is None:
        return tuple((k,) for k in range(env.n_features))
    seen = [m for g in query.groups for m in g]
    if not query.groups or any(not g for g in query.groups):
        raise StructureError("groups must be nonempty")
    if len(seen) != len(set(seen)) or any(not 0 <= m < env.n_features for m in seen):
        raise StructureError("groups must be disjoint sets of valid feature indices")
    return query.groups


def build_cvf(query: CvfQuery, store: ArtifactStore, force: bool = False) -> CharacteristicFn:
    """Bind a query to the store's artifacts.

    Every coalition's artifact is fetched (and checked against the convergence
    gate) up front, so a bad table fails here rather than mid-attribution.
    """
    env = store.env
    if query.env != env.name:
        raise ValueError(f"query is for {query.env!r} but the store holds {env.name!r}")
    s = env.feature_space.validate(query.state)
    if env.is_terminal(s):
        raise StructureError(f"{s} is terminal; explanations need a decision state")
    n_actions = env.n_actions
    for idx in (query.i, query.j):
        if idx is not None and idx >= n_actions:
            raise ValueError(f"action rank {idx} out of range for {n_actions} actions")
    players = _players(env, query)
    n = len(players)

    full = store.exact()
    ranking = rank_actions(full, masked_key(s, Coalition.full(env.n_features)))

    def raw(c: Coalition) -> Coalition:
        return env.reduce_coalition(Coalition(m for p in c.members for m in players[p]))

    needed = []
    for c in enumerate_coalitions(n):
        r = raw(c)
        if r.members and r not in needed:
            needed.append(r)
    if not force:
        store.check_converged(needed)

    def bind(art: PolicyArtifact, obs: str) -> list[int]:
        return ranking if query.binding == "fixed" else rank_actions(art, obs)

    def evaluate(c: Coalition) -> float:
        rc = raw(c)
        if not rc.members:
            return 0.0
        art = store.get(rc)
        obs = masked_key(s, rc)
        order = bind(art, obs)
        try:
            return _payoff(query, art, obs, order)
        except LookupError as exc:
            raise CvfEvaluationError(f"coalition {c.label or 'empty'} ({rc.key}), obs {obs!r}: {exc}") from exc

    names = env.feature_space.names
    player_names = tuple("+".join(names[m] for m in p) if len(p) <= 2 else f"group({len(p)})" for p in players)
    return CharacteristicFn(
        query=query,
        n=n,
        evaluate=evaluate,
        player_names=player_names,
        actions=tuple(ranking),
    )


def _payoff(q: CvfQuery, art: PolicyArtifact, obs: str, order: list[int]) -> float:
    if q.method == "vanilla":
        a = order[q.i]
        return art.q_value(obs, a) if q.source == "q" else expected_successor_value(art, obs, a)
    if q.method == "cd":
        a_i, a_j = order[q.i], order[q.j]
        if q.source == "q":
            return delta_q(art, obs, a_i, a_j)
        return expected_successor_value(art, obs, a_i) - expected_successor_value(art, obs, a_j)
    a_star = order[0]
    return _mean_q_gap(art, obs, a_star) if q.source == "q" else _mean_v_gap(art, obs, a_star)


def cvf_table(fn: CharacteristicFn) -> list[tuple[Coalition, float]]:
    """All 2^n coalition values, ordered by size then lexicographically."""
    return [(c, fn(c)) for c in enumerate_coalitions(fn.n)]


def cvf_table_json(fn: CharacteristicFn) -> list[dict]:
    return [{"coalition": c.label, "value": v} for c, v in cvf_table(fn)]
