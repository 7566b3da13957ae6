"""Factored MDP data model, coalitions and state masking."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

State = tuple[int, ...]

MAX_EXACT_FEATURES = 24
PROB_TOL = 1e-12


class StructureError(ValueError):
    """Raised when a state, coalition or environment is malformed."""


class CapacityError(ValueError):
    """Raised when exact coalition enumeration would be intractable."""


@dataclass(frozen=True)
class FeatureSpace:
    dims: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if len(self.dims) < 1:
            raise StructureError("a feature space needs at least one dimension")
        for name, size in self.dims:
            if size < 1:
                raise StructureError(f"feature {name!r} has domain size {size}")

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.dims)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(size for _, size in self.dims)

    def validate(self, state: Sequence[int]) -> State:
        if len(state) != self.n:
            raise StructureError(f"state {tuple(state)} has {len(state)} values, expected {self.n}")
        for value, (name, size) in zip(state, self.dims):
            if not 0 <= value < size:
                raise StructureError(f"value {value} out of range for feature {name!r} (size {size})")
        return tuple(int(v) for v in state)


@dataclass(frozen=True, order=True)
class Coalition:
    """Canonical sorted set of feature indices.

    Ordering is by size, then lexicographic, which is the enumeration order
    used everywhere a coalition table is materialized.
    """

    size: int = field(init=False, repr=False)
    members: tuple[int, ...] = ()

    def __init__(self, members: Iterable[int] = ()):
        canon = tuple(sorted(set(int(m) for m in members)))
        if any(m < 0 for m in canon):
            raise StructureError(f"negative feature index in {canon}")
        object.__setattr__(self, "members", canon)
        object.__setattr__(self, "size", len(canon))

    def __len__(self) -> int:
        return self.size

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, item) -> bool:
        return item in self.members

    def union(self, other: Iterable[int]) -> "Coalition":
        return Coalition(self.members + tuple(other))

    def with_member(self, i: int) -> "Coalition":
        return Coalition(self.members + (i,))

    @property
    def key(self) -> str:
        """Cache key, e.g. ``c_0_2``."""
        return "c_" + "_".join(str(m) for m in self.members)

    @property
    def label(self) -> str:
        return ",".join(str(m) for m in self.members)

    @classmethod
    def from_key(cls, key: str) -> "Coalition":
        if not key.startswith("c_"):
            raise StructureError(f"not a coalition key: {key!r}")
        body = key[2:]
        return cls(int(x) for x in body.split("_")) if body else cls()

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls(range(n))

    def check(self, n: int) -> "Coalition":
        if self.members and self.members[-1] >= n:
            raise StructureError(f"coalition {self.members} has an index >= {n}")
        return self


@dataclass(frozen=True)
class MaskedObservation:
    coalition: Coalition
    values: tuple[int, ...]

    @property
    def key(self) -> str:
        return ",".join(str(v) for v in self.values)


def mask_state(s: Sequence[int], c: Coalition, space: FeatureSpace | None = None) -> MaskedObservation:
    """Project ``s`` onto the coalition's features, in index order."""
    if space is not None:
        s = space.validate(s)
        c.check(space.n)
    n = len(s)
    for i in c.members:
        if i >= n:
            raise StructureError(f"feature index {i} out of range for a state of length {n}")
    return MaskedObservation(c, tuple(int(s[i]) for i in c.members))


def enumerate_coalitions(n: int, exclude: int | None = None) -> list[Coalition]:
    """All subsets of ``{0..n-1} \\ {exclude}`` ordered by size then lexicographically."""
    if n > MAX_EXACT_FEATURES:
        raise CapacityError(
            f"{n} features exceed the exact limit of {MAX_EXACT_FEATURES}; use shapley_mc instead"
        )
    if exclude is not None and not 0 <= exclude < n:
        raise StructureError(f"exclude={exclude} not in 0..{n - 1}")
    pool = [i for i in range(n) if i != exclude]
    out = []
    for k in range(len(pool) + 1):
        out.extend(Coalition(combo) for combo in itertools.combinations(pool, k))
    return out


def all_coalitions(n: int) -> list[Coalition]:
    return enumerate_coalitions(n, None)


def shapley_weight_exact(c_size: int, n: int) -> Fraction:
    return Fraction(math.factorial(c_size) * math.factorial(n - c_size - 1), math.factorial(n))


def shapley_weight(c_size: int, n: int) -> float:
    """|C|!(n-|C|-1)!/n!, computed in integers and divided once."""
    if not 0 <= c_size <= n - 1:
        raise ValueError(f"c_size={c_size} outside 0..{n - 1}")
    return math.factorial(c_size) * math.factorial(n - c_size - 1) / math.factorial(n)


@dataclass(frozen=True)
class Outcome:
    prob: float
    next_state: State
    reward: float


@dataclass(frozen=True, eq=False)
class EnvSpec:
    """A finite factored MDP.

    ``transitions[s][a]`` lists the outcomes of taking action ``a`` in ``s``.
    Terminal states self-loop with reward 0; ``terminal_values`` gives the
    value a terminal state is worth (0 unless the environment pays a goal
    value on arrival, see the gridworld builders).
    """

    name: str
    feature_space: FeatureSpace
    action_names: tuple[str, ...]
    states: tuple[State, ...]
    transitions: Mapping[State, tuple[tuple[Outcome, ...], ...]]
    terminal: frozenset[State]
    gamma: float
    start_states: tuple[State, ...] = ()
    terminal_values: Mapping[State, float] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    @property
    def n_features(self) -> int:
        return self.feature_space.n

    def is_terminal(self, s: Sequence[int]) -> bool:
        return tuple(s) in self.terminal

    def terminal_value(self, s: State) -> float:
        return float(self.terminal_values.get(s, 0.0))

    def outcomes(self, s: Sequence[int], a: int) -> tuple[Outcome, ...]:
        try:
            return self.transitions[tuple(s)][a]
        except KeyError:
            raise StructureError(f"unknown state {tuple(s)} in {self.name}") from None

    def step(self, s: Sequence[int], a: int) -> tuple[State, float]:
        """Deterministic step; errors if (s, a) has more than one outcome."""
        outs = self.outcomes(s, a)
        if len(outs) != 1:
            raise StructureError(f"step() on stochastic transition {tuple(s)}, {a}")
        return outs[0].next_state, outs[0].reward

    def action_index(self, name: str) -> int:
        return self.action_names.index(name)

    @cached_property
    def nonterminal_states(self) -> tuple[State, ...]:
        return tuple(s for s in self.states if s not in self.terminal)

    @cached_property
    def informative_features(self) -> frozenset[int]:
        """Features that take at least two values across the state set."""
        arr = np.asarray(self.states, dtype=np.int64)
        return frozenset(i for i in range(self.n_features) if len(np.unique(arr[:, i])) > 1)

    def reduce_coalition(self, c: Coalition) -> Coalition:
        """Drop members that are constant over every state.

        Observing a constant feature induces the same partition of the
        state set as not observing it, so both coalitions share an artifact.
        """
        keep = self.informative_features
        return Coalition(m for m in c.members if m in keep)

    @cached_property
    def compiled(self) -> "CompiledEnv":
        return CompiledEnv.build(self)

    def validate(self) -> "EnvSpec":
        space = self.feature_space
        if not 0.0 <= self.gamma <= 1.0:
            raise StructureError(f"gamma={self.gamma} outside [0, 1]")
        known = set(self.states)
        if len(known) != len(self.states):
            raise StructureError("duplicate states")
        for s in self.states:
            space.validate(s)
            per_action = self.transitions.get(s)
            if per_action is None or len(per_action) != self.n_actions:
                raise StructureError(f"state {s} lacks a transition row for every action")
            for a, outs in enumerate(per_action):
                total = sum(o.prob for o in outs)
                if abs(total - 1.0) > PROB_TOL:
                    raise StructureError(f"P(.|{s},{a}) sums to {total}")
                for o in outs:
                    if o.prob < 0 or o.next_state not in known:
                        raise StructureError(f"bad outcome {o} from {s},{a}")
                if s in self.terminal:
                    if len(outs) != 1 or outs[0].next_state != s or outs[0].reward != 0.0:
                        raise StructureError(f"terminal state {s} must self-loop with reward 0")
        for s in self.start_states:
            if s not in known or s in self.terminal:
                raise StructureError(f"start state {s} is unknown or terminal")
        return self


def successor_set(env: EnvSpec, s: Sequence[int]) -> set[State]:
    """States reachable in one step under some action with positive probability."""
    s = env.feature_space.validate(s)
    out: set[State] = set()
    for a in range(env.n_actions):
        out.update(o.next_state for o in env.outcomes(s, a) if o.prob > 0)
    return out


@dataclass(frozen=True, eq=False)
class CompiledEnv:
    """Dense integer arrays for the learning kernels."""

    states: tuple[State, ...]
    index: Mapping[State, int]
    next_state: np.ndarray  # (S, A, K) int64, padded with -1
    cumprob: np.ndarray  # (S, A, K) float64
    reward: np.ndarray  # (S, A, K) float64
    n_out: np.ndarray  # (S, A) int64
    terminal: np.ndarray  # (S,) bool
    terminal_value: np.ndarray  # (S,) float64
    state_array: np.ndarray  # (S, n) int64

    @classmethod
    def build(cls, env: EnvSpec) -> "CompiledEnv":
        states = env.states
        index = {s: i for i, s in enumerate(states)}
        S, A = len(states), env.n_actions
        K = max(len(outs) for s in states for outs in env.transitions[s])
        nxt = np.full((S, A, K), -1, dtype=np.int64)
        cum = np.ones((S, A, K), dtype=np.float64)
        rew = np.zeros((S, A, K), dtype=np.float64)
        n_out = np.zeros((S, A), dtype=np.int64)
        for i, s in enumerate(states):
            for a, outs in enumerate(env.transitions[s]):
                acc = 0.0
                n_out[i, a] = len(outs)
                for k, o in enumerate(outs):
                    acc += o.prob
                    nxt[i, a, k] = index[o.next_state]
                    cum[i, a, k] = acc
                    rew[i, a, k] = o.reward
                cum[i, a, len(outs) - 1] = 1.0
        term = np.array([s in env.terminal for s in states], dtype=bool)
        tval = np.array([env.terminal_value(s) for s in states], dtype=np.float64)
        return cls(
            states=states,
            index=index,
            next_state=nxt,
            cumprob=cum,
            reward=rew,
            n_out=n_out,
            terminal=term,
            terminal_value=tval,
            state_array=np.asarray(states, dtype=np.int64).reshape(S, env.n_features),
        )

    def probs(self, i: int, a: int) -> np.ndarray:
        k = self.n_out[i, a]
        c = self.cumprob[i, a, :k]
        return np.diff(np.concatenate(([0.0], c)))
