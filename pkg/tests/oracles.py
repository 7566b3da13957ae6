"""Reference computations written independently of the package internals."""

from __future__ import annotations

import itertools
from collections import deque
from fractions import Fraction
from math import factorial


def permutation_average(v, n):
    """Shapley values as the mean marginal contribution over all n! orderings.

    ``v`` takes a frozenset of player indices.
    """
    phi = [Fraction(0)] * n if isinstance(v(frozenset()), Fraction) else [0.0] * n
    for order in itertools.permutations(range(n)):
        members = set()
        for p in order:
            before = v(frozenset(members))
            members.add(p)
            phi[p] += v(frozenset(members)) - before
    return [x / factorial(n) for x in phi]


def brute_weight_sum(n, i=0):
    """Sum of |C|!(n-|C|-1)!/n! over every C not containing i, in rationals."""
    others = [k for k in range(n) if k != i]
    total = Fraction(0)
    for k in range(len(others) + 1):
        for _ in itertools.combinations(others, k):
            total += Fraction(factorial(k) * factorial(n - k - 1), factorial(n))
    return total


def dense_value_iteration(env, tol=1e-12, max_iter=100_000):
    """Plain dictionary Bellman backups over the full state set."""
    V = {s: env.terminal_value(s) if s in env.terminal else 0.0 for s in env.states}
    for _ in range(max_iter):
        delta = 0.0
        for s in env.states:
            if s in env.terminal:
                continue
            best = max(
                sum(o.prob * (o.reward + env.gamma * V[o.next_state]) for o in outs)
                for outs in env.transitions[s]
            )
            delta = max(delta, abs(best - V[s]))
            V[s] = best
        if delta < tol:
            return V
    raise RuntimeError("oracle value iteration did not converge")


# Taxi walls transcribed by hand from the classic map: a wall sits on the east
# side of each listed cell (and so on the west side of its neighbour).
TAXI_EAST_WALLS = {(0, 1), (1, 1), (3, 0), (4, 0), (3, 2), (4, 2)}


def taxi_bfs(src, dst):
    def nbrs(cell):
        r, c = cell
        if r > 0:
            yield r - 1, c
        if r < 4:
            yield r + 1, c
        if c < 4 and (r, c) not in TAXI_EAST_WALLS:
            yield r, c + 1
        if c > 0 and (r, c - 1) not in TAXI_EAST_WALLS:
            yield r, c - 1

    dist = {src: 0}
    queue = deque([src])
    while queue:
        cell = queue.popleft()
        for nxt in nbrs(cell):
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return dist[dst]
