"""One test per acceptance criterion; each records a pass/fail line for the summary."""

import itertools
import time

import numpy as np
import pytest

from csvx.core import Coalition, enumerate_coalitions
from csvx.cvf import METHODS, CvfQuery, build_cvf
from csvx.envs import make_env
from csvx.report import RunConfig, default_states, explain, render
from csvx.shapley import shapley_exact
from csvx.solver import TrainConfig, masked_key, rank_actions
from csvx.store import ArtifactStore

from oracles import permutation_average


def _store(name, **train):
    return ArtifactStore(make_env(name), TrainConfig(**train), seed=0)


def _phi(store, s, method, source="q", i=0, j=None):
    fn = build_cvf(CvfQuery(store.env.name, s, method, source, i, j), store)
    return shapley_exact(fn, fn.n)


def test_criterion_1_efficiency(record_criterion, gw1_store, frozen_store, taxi_store):
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for store in (gw1_store, _store("gridworld2"), frozen_store, taxi_store):
        for s in default_states(store.env):
            for q in RunConfig(env=store.env.name).methods:
                for source in "qv":
                    rows = {"vanilla": [(i, None) for i in range(store.env.n_actions)],
                            "cd": [(0, j) for j in range(1, store.env.n_actions)],
                            "acd": [(0, None)]}[q]
                    for i, j in rows:
                        worst = max(worst, _phi(store, s, q, source, i, j).efficiency_residual)
                        count += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 120
    record_criterion(1, ok, f"{count} attributions, max residual {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_permutation_oracle(record_criterion):
    rng = np.random.default_rng(20240)
    worst = 0.0
    for k in range(50):
        n = (2, 3, 4)[k % 3]
        values = {frozenset(c.members): float(rng.normal(scale=5.0)) for c in enumerate_coalitions(n) if c.members}
        oracle = permutation_average(lambda s: values.get(s, 0.0), n)
        phi = shapley_exact(lambda c: values[frozenset(c.members)], n).phi
        worst = max(worst, max(abs(a - b) for a, b in zip(phi, oracle)))
    record_criterion(2, worst <= 1e-12, f"50 games, max deviation {worst:.2e}")
    assert worst <= 1e-12


def test_criterion_3_cd_antisymmetry(record_criterion, gw1_store, taxi_store):
    worst, count = 0.0, 0
    for store in (gw1_store, taxi_store):
        n_actions = store.env.n_actions
        for s in default_states(store.env):
            for source in "qv":
                for i, j in itertools.combinations(range(n_actions), 2):
                    a = _phi(store, s, "cd", source, i, j).phi
                    b = _phi(store, s, "cd", source, j, i).phi
                    worst = max(worst, max(abs(x + y) for x, y in zip(a, b)))
                    count += 1
    record_criterion(3, worst <= 1e-12, f"{count} pairs, max |phi_ij + phi_ji| {worst:.2e}")
    assert worst <= 1e-12


def test_criterion_4_dummy_feature(record_criterion):
    t0 = time.perf_counter()
    results = {}
    for backend, tol in (("qlearning", 1e-2), ("abstract", 1e-9)):
        store = _store("gridworld1+dummy", backend=backend)
        worst = 0.0
        for s in store.env.nonterminal_states:
            for source in "qv":
                for method, i, j in [("acd", 0, None)] + [("cd", 0, j) for j in range(1, 4)]:
                    worst = max(worst, abs(_phi(store, s, method, source, i, j).phi[2]))
        results[backend] = (worst, tol)
    elapsed = time.perf_counter() - t0
    ok = all(w <= t for w, t in results.values()) and elapsed < 300
    detail = ", ".join(f"{b} max |phi_dummy| {w:.2e} (tol {t:g})" for b, (w, t) in results.items())
    record_criterion(4, ok, f"{detail}, {elapsed:.1f}s")
    assert ok


def test_criterion_5_gridworld_direction(record_criterion, gw1_store):
    margins = {}
    for s in gw1_store.env.nonterminal_states:
        phi = _phi(gw1_store, s, "acd", "v").phi
        margins[s] = phi[1] - phi[0]
    worst = min(margins, key=margins.get)
    ok = margins[worst] >= 0.1
    record_criterion(5, ok, f"ACD/v min (phi_col - phi_row) {margins[worst]:+.3f} at {worst}, need >= 0.1")
    assert ok, margins


def test_criterion_6_taxi_direction(record_criterion, taxi_store):
    phi = _phi(taxi_store, (0, 4, 4, 1), "acd", "q").phi
    positive = [k for k, x in enumerate(phi) if x > 0]
    unique_dest = positive == [3]
    art = taxi_store.exact()
    names = taxi_store.env.action_names
    order = [names[a] for a in rank_actions(art, masked_key((0, 0, 0, 1), Coalition.full(4)))]
    ranking_ok = order[0] == "pickup" and order[-1] == "dropoff"
    ok = unique_dest and ranking_ok
    record_criterion(6, ok, f"State 1 ACD phi {tuple(round(x, 3) for x in phi)} "
                            f"(destination unique positive: {unique_dest}); State 2 ranking {order}")
    assert ok


def test_criterion_7_frozenlake_direction(record_criterion, frozen_store):
    s2 = (2, 0)
    names = frozen_store.env.action_names
    first = _phi(frozen_store, s2, "vanilla", "q", 0).phi[1]
    second = _phi(frozen_store, s2, "vanilla", "q", 1).phi[1]
    art = frozen_store.exact()
    order = [names[a] for a in rank_actions(art, masked_key(s2, Coalition.full(2)))]
    ok = first > second and order[:2] == ["south", "north"]
    record_criterion(7, ok, f"Vani(0)={order[0]} y {first:.3f} vs Vani(1)={order[1]} y {second:.3f}")
    assert ok


def _pipeline(name):
    store = _store(name)
    cfg = RunConfig(env=name, methods=METHODS)
    return "".join(render(explain(cfg, s, store), "json") for s in default_states(store.env))


def test_criterion_8_determinism(record_criterion):
    same = {name: _pipeline(name) == _pipeline(name) for name in ("gridworld1", "taxi")}
    record_criterion(8, all(same.values()), f"byte-identical reports: {same}")
    assert all(same.values())


def test_criterion_9_runtime(record_criterion):
    timings = {}
    for name, budget in (("gridworld1", 60.0), ("taxi", 900.0)):
        t0 = time.perf_counter()
        store = _store(name)
        store.populate()
        states = default_states(store.env) if name == "taxi" else list(store.env.nonterminal_states)
        for s in states:
            explain(RunConfig(env=name), s, store)
        timings[name] = (time.perf_counter() - t0, budget, len(store.required()))
    ok = all(t < b for t, b, _ in timings.values())
    record_criterion(9, ok, ", ".join(f"{k} {n} coalitions {t:.1f}s (< {b:.0f}s)" for k, (t, b, n) in timings.items()))
    assert ok
