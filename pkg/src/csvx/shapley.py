"""Exact and Monte-Carlo Shapley values over a characteristic function, plus axiom checks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import MAX_EXACT_FEATURES, CapacityError, Coalition, enumerate_coalitions

Game = Callable[[Coalition], float]


@dataclass(frozen=True)
class Attribution:
    phi: tuple[float, ...]
    total: float  # v(F)
    method: str = "exact"
    stderr: tuple[float, ...] | None = None
    samples: int | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return len(self.phi)

    @property
    def efficiency_residual(self) -> float:
        return abs(math.fsum(self.phi) - self.total)

    def to_dict(self) -> dict:
        out = {"phi": list(self.phi), "total": self.total, "method": self.method}
        if self.stderr is not None:
            out.update(stderr=list(self.stderr), samples=self.samples, seed=self.seed)
        return out


def _factorials(n: int) -> list[int]:
    return [math.factorial(k) for k in range(n + 1)]


def shapley_exact(fn: Game, n: int) -> Attribution:
    """Weighted marginal contributions over all coalitions; each v(C) evaluated once."""
    if n < 1:
        raise ValueError("need at least one player")
    if n > MAX_EXACT_FEATURES:
        raise CapacityError(f"{n} players exceed the exact limit of {MAX_EXACT_FEATURES}; use shapley_mc")
    values = {c.members: float(fn(c)) if c.members else 0.0 for c in enumerate_coalitions(n)}
    fact = _factorials(n)
    phi = []
    for i in range(n):
        terms = []
        for c in enumerate_coalitions(n, exclude=i):
            k = len(c.members)
            gain = values[tuple(sorted(c.members + (i,)))] - values[c.members]
            terms.append(fact[k] * fact[n - k - 1] * gain)
        phi.append(math.fsum(terms) / fact[n])
    return Attribution(tuple(phi), values[tuple(range(n))], "exact")


def shapley_mc(fn: Game, n: int, samples: int, seed: int) -> Attribution:
    """Mean marginal contribution over uniformly random player orderings.

    When ``samples`` covers all n! orderings they are enumerated instead, which
    makes the estimate exact (standard error 0).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if n < 1:
        raise ValueError("need at least one player")
    memo: dict[tuple[int, ...], float] = {(): 0.0}

    def v(members: tuple[int, ...]) -> float:
        key = tuple(sorted(members))
        if key not in memo:
            memo[key] = float(fn(Coalition(key)))
        return memo[key]

    exhaustive = n <= 10 and samples >= math.factorial(n)
    if exhaustive:
        orders = list(itertools.permutations(range(n)))
    else:
        rng = np.random.default_rng(seed)
        orders = [tuple(int(x) for x in rng.permutation(n)) for _ in range(samples)]
    contrib = np.zeros((len(orders), n))
    for r, order in enumerate(orders):
        prev = 0.0
        for pos, p in enumerate(order):
            cur = v(order[: pos + 1])
            contrib[r, p] = cur - prev
            prev = cur
    phi = contrib.mean(axis=0)
    if exhaustive:
        se = np.zeros(n)
    elif len(orders) > 1:
        se = contrib.std(axis=0, ddof=1) / math.sqrt(len(orders))
    else:
        se = np.full(n, np.inf)
    return Attribution(
        tuple(float(x) for x in phi),
        v(tuple(range(n))),
        "monte_carlo",
        stderr=tuple(float(x) for x in se),
        samples=len(orders),
        seed=seed,
    )


def permutation_shapley(fn: Game, n: int) -> tuple[float, ...]:
    """Average of marginals over all n! orderings (reference definition)."""
    total = [0.0] * n
    perms = list(itertools.permutations(range(n)))
    for order in perms:
        seen: list[int] = []
        for p in order:
            before = fn(Coalition(seen)) if seen else 0.0
            seen.append(p)
            total[p] += fn(Coalition(seen)) - before
    return tuple(t / len(perms) for t in total)


@dataclass
class AxiomReport:
    efficiency_residual: float
    dummy_violations: list[tuple[int, float]] = field(default_factory=list)
    symmetry_violations: list[tuple[int, int, float]] = field(default_factory=list)
    dummies: list[int] = field(default_factory=list)
    symmetric_pairs: list[tuple[int, int]] = field(default_factory=list)
    tol: float = 1e-9

    @property
    def efficiency_ok(self) -> bool:
        return self.efficiency_residual <= self.tol

    @property
    def ok(self) -> bool:
        return self.efficiency_ok and not self.dummy_violations and not self.symmetry_violations

    def to_dict(self) -> dict:
        return {
            "efficiency_residual": self.efficiency_residual,
            "efficiency_ok": self.efficiency_ok,
            "dummies": self.dummies,
            "dummy_violations": [list(x) for x in self.dummy_violations],
            "symmetric_pairs": [list(x) for x in self.symmetric_pairs],
            "symmetry_violations": [list(x) for x in self.symmetry_violations],
            "ok": self.ok,
        }


def check_axioms(fn: Game, attr: Attribution, tol: float = 1e-9, marginal_tol: float = 1e-12) -> AxiomReport:
    """Efficiency residual plus dummy and symmetry checks on the attribution.

    A player is a dummy when every marginal contribution is zero; two players
    are symmetric when swapping them never changes v. Both are detected from
    the game itself, then the attribution is held to them within ``tol``.
    """
    n = attr.n
    values = {c.members: (float(fn(c)) if c.members else 0.0) for c in enumerate_coalitions(n)}
    rep = AxiomReport(efficiency_residual=abs(math.fsum(attr.phi) - values[tuple(range(n))]), tol=tol)
    for i in range(n):
        if all(
            abs(values[tuple(sorted(c.members + (i,)))] - values[c.members]) <= marginal_tol
            for c in enumerate_coalitions(n, exclude=i)
        ):
            rep.dummies.append(i)
            if abs(attr.phi[i]) > tol:
                rep.dummy_violations.append((i, attr.phi[i]))
    for i, j in itertools.combinations(range(n), 2):
        same = True
        for c in enumerate_coalitions(n, exclude=i):
            if j in c.members:
                continue
            vi = values[tuple(sorted(c.members + (i,)))]
            vj = values[tuple(sorted(c.members + (j,)))]
            if abs(vi - vj) > marginal_tol:
                same = False
                break
        if same:
            rep.symmetric_pairs.append((i, j))
            if abs(attr.phi[i] - attr.phi[j]) > tol:
                rep.symmetry_violations.append((i, j, attr.phi[i] - attr.phi[j]))
    return rep
