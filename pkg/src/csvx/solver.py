"""Q/V tables for the full state and for every coalition's masked observation space.

Three ways to produce a :class:`PolicyArtifact`:

* :func:`value_iteration` solves the full MDP exactly (coalition = all features).
* :func:`q_learning_masked` runs epsilon-greedy tabular Q-learning over masked
  observations, records the empirical abstract transitions it saw, and by
  default finishes with a planning pass on that empirical model so the table is
  a converged fixed point rather than a snapshot of a still-moving estimate.
* :func:`abstract_value_iteration` solves the coalition's abstract MDP built by
  averaging the true dynamics uniformly over the states behind each observation.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .core import Coalition, EnvSpec, StructureError

ARTIFACT_FORMAT = "csvx-policy-artifact"
ARTIFACT_VERSION = 1
TERMINAL_PREFIX = "!"


class ConvergenceError(RuntimeError):
    pass


class ContractError(ValueError):
    pass


class UnobservedTransitionError(LookupError):
    pass


class IntegrityError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for masked training; gamma always comes from the env."""

    episodes: int = 20_000
    max_steps: int = 200
    alpha0: float = 0.1
    eps_start: float = 0.3
    eps_end: float = 0.05
    convergence_tol: float = 0.05
    refine: bool = True
    backend: str = "qlearning"
    solve_tol: float = 1e-10
    solve_max_iter: int = 20_000
    batch_episodes: int = 500

    def __post_init__(self):
        if self.episodes < 1 or self.max_steps < 1 or self.batch_episodes < 1:
            raise ValueError("episode counts must be positive")
        for name in ("alpha0", "eps_start", "eps_end"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name}={v} must lie in (0, 1]")
        if self.backend not in ("qlearning", "abstract"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.convergence_tol <= 0 or self.solve_tol <= 0:
            raise ValueError("tolerances must be positive")

    def digest(self, seed: int | None = None) -> str:
        payload = json.dumps({"cfg": asdict(self), "seed": seed}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def stream_seed(master_seed: int, coalition: Coalition) -> int:
    """Per-coalition RNG seed: master seed XOR a stable hash of the coalition key."""
    h = int.from_bytes(hashlib.sha256(coalition.key.encode()).digest()[:8], "little")
    return (int(master_seed) ^ h) & ((1 << 63) - 1)


# (obs index, action) -> list of [next key, weight, reward sum]
Model = Mapping[tuple[int, int], list]


@dataclass(frozen=True, eq=False)
class PolicyArtifact:
    env: str
    coalition: Coalition
    seed: int | None
    config_hash: str
    exact: bool
    gamma: float
    action_names: tuple[str, ...]
    obs_keys: tuple[str, ...]
    q: np.ndarray
    visited: np.ndarray
    terminal_values: Mapping[str, float]
    model: Model
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    @cached_property
    def obs_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.obs_keys)}

    @cached_property
    def v(self) -> np.ndarray:
        """V(o) = max over visited actions of Q(o, .); all actions when none are flagged."""
        masked = np.where(self.visited, self.q, -np.inf)
        out = masked.max(axis=1)
        none = ~self.visited.any(axis=1)
        out[none] = self.q[none].max(axis=1)
        return out

    @property
    def n_actions(self) -> int:
        return self.q.shape[1]

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", self.exact))

    def row(self, key: str) -> int:
        try:
            return self.obs_index[key]
        except KeyError:
            raise LookupError(f"observation {key!r} not in artifact {self.coalition.key}") from None

    def q_value(self, key: str, a: int) -> float:
        i = self.row(key)
        if not 0 <= a < self.n_actions:
            raise LookupError(f"action {a} out of range")
        if not self.visited[i, a]:
            raise UnobservedTransitionError(
                f"Q({key!r}, {self.action_names[a]}) was never updated in {self.coalition.key}"
            )
        return float(self.q[i, a])

    def value(self, key: str) -> float:
        if key.startswith(TERMINAL_PREFIX):
            try:
                return float(self.terminal_values[key])
            except KeyError:
                raise LookupError(f"terminal observation {key!r} not in artifact") from None
        return float(self.v[self.row(key)])

    # serialization -------------------------------------------------------

    def payload(self) -> dict:
        model = [
            [o, a, nk, float(w), float(rs)]
            for (o, a), entries in sorted(self.model.items())
            for nk, w, rs in entries
        ]
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "env": self.env,
            "coalition": list(self.coalition.members),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "exact": self.exact,
            "gamma": self.gamma,
            "action_names": list(self.action_names),
            "obs_keys": list(self.obs_keys),
            "q": [[float(x) for x in row] for row in self.q],
            "visited": [[int(x) for x in row] for row in self.visited],
            "terminal_values": {k: float(v) for k, v in sorted(self.terminal_values.items())},
            "model": model,
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self) -> str:
        body = self.payload()
        body["content_hash"] = content_hash(body)
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PolicyArtifact":
        try:
            body = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"artifact is not valid JSON: {exc}") from None
        if body.get("format") != ARTIFACT_FORMAT or body.get("version") != ARTIFACT_VERSION:
            raise IntegrityError("unrecognised artifact format or version")
        stored = body.pop("content_hash", None)
        if stored != content_hash(body):
            raise IntegrityError("artifact content hash mismatch")
        model: dict[tuple[int, int], list] = {}
        for o, a, nk, w, rs in body["model"]:
            model.setdefault((o, a), []).append((nk, w, rs))
        return cls(
            env=body["env"],
            coalition=Coalition(body["coalition"]),
            seed=body["seed"],
            config_hash=body["config_hash"],
            exact=body["exact"],
            gamma=body["gamma"],
            action_names=tuple(body["action_names"]),
            obs_keys=tuple(body["obs_keys"]),
            q=np.asarray(body["q"], dtype=np.float64).reshape(len(body["obs_keys"]), -1),
            visited=np.asarray(body["visited"], dtype=bool).reshape(len(body["obs_keys"]), -1),
            terminal_values=body["terminal_values"],
            model=model,
            diagnostics=body["diagnostics"],
        )


def content_hash(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# observation spaces ------------------------------------------------------


def obs_key(values) -> str:
    return ",".join(str(int(v)) for v in values)


@dataclass(frozen=True, eq=False)
class ObservationSpace:
    """Maps every env state to its masked observation under one coalition."""

    coalition: Coalition
    keys: tuple[str, ...]
    obs_of: np.ndarray  # (S,) observation row for non-terminal states, -1 for terminal
    next_key: tuple[str, ...]  # (S,) key a transition into each state lands on

    @classmethod
    def build(cls, env: EnvSpec, coalition: Coalition) -> "ObservationSpace":
        ce = env.compiled
        cols = list(coalition.members)
        masked = ce.state_array[:, cols]
        nonterm = ~ce.terminal
        uniq = sorted({tuple(row) for row in masked[nonterm]})
        index = {u: i for i, u in enumerate(uniq)}
        obs_of = np.full(len(ce.states), -1, dtype=np.int64)
        next_key = []
        for i, row in enumerate(masked):
            t = tuple(int(v) for v in row)
            if ce.terminal[i]:
                next_key.append(TERMINAL_PREFIX + obs_key(t))
            else:
                obs_of[i] = index[t]
                next_key.append(obs_key(t))
        return cls(coalition, tuple(obs_key(u) for u in uniq), obs_of, tuple(next_key))


def masked_key(s, coalition: Coalition) -> str:
    return obs_key(s[i] for i in coalition.members)


# model solving -----------------------------------------------------------


@dataclass
class _Solution:
    q: np.ndarray
    residual: float
    iterations: int
    converged: bool
    worst_row: int


def _solve(model, obs_keys, n_actions, gamma, terminal_values, tol, max_iter, q0=None) -> _Solution:
    """Value iteration on an (abstract) model, then policy iteration if still moving."""
    n_obs = len(obs_keys)
    index = {k: i for i, k in enumerate(obs_keys)}
    P, R, has, v_term = _model_matrices(model, index, n_obs, n_actions, terminal_values)
    q = np.zeros(n_obs * n_actions) if q0 is None else q0.reshape(-1).copy()
    live = has.any(axis=1)

    def values(qflat):
        m = np.where(has, qflat.reshape(n_obs, n_actions), -np.inf).max(axis=1)
        return np.where(live, m, 0.0)

    def backup(qflat):
        return np.where(has.reshape(-1), R + gamma * (P @ np.concatenate([values(qflat), v_term])), 0.0)

    residual, it = math.inf, 0
    for it in range(1, max_iter + 1):
        new = backup(q)
        residual = float(np.max(np.abs(new - q))) if q.size else 0.0
        q = new
        if residual <= tol:
            break
    if residual > tol and q.size:
        q, residual = _policy_iteration(P, R, has, v_term, gamma, q, n_obs, n_actions, backup)
    worst = int(np.argmax(np.abs(backup(q) - q))) // max(n_actions, 1) if q.size else 0
    return _Solution(q.reshape(n_obs, n_actions), residual, it, residual <= max(tol, 1e-8), worst)


def _model_matrices(model, index, n_obs, n_actions, terminal_values):
    term_keys = sorted(terminal_values)
    term_pos = {k: n_obs + j for j, k in enumerate(term_keys)}
    rows, cols, vals = [], [], []
    r_exp = np.zeros(n_obs * n_actions)
    has = np.zeros((n_obs, n_actions), dtype=bool)
    for (o, a), entries in model.items():
        total = sum(w for _, w, _ in entries)
        if total <= 0:
            continue
        has[o, a] = True
        r_exp[o * n_actions + a] = sum(rs for _, _, rs in entries) / total
        for nk, w, _ in entries:
            col = term_pos[nk] if nk.startswith(TERMINAL_PREFIX) else index[nk]
            rows.append(o * n_actions + a)
            cols.append(col)
            vals.append(w / total)
    P = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(n_obs * n_actions, n_obs + len(term_keys)),
    )
    v_term = np.array([terminal_values[k] for k in term_keys], dtype=np.float64)
    return P, r_exp, has, v_term


def _policy_iteration(P, R, has, v_term, gamma, q, n_obs, n_actions, backup, max_rounds=100):
    """Howard policy iteration starting from the greedy policy of ``q``."""
    live = has.any(axis=1)
    idx = np.arange(n_obs)

    def greedy(qflat, prev=None):
        qm = np.where(has, qflat.reshape(n_obs, n_actions), -np.inf)
        pol = np.argmax(qm, axis=1)
        if prev is not None:
            keep = qm[idx, prev] >= qm[idx, pol] - 1e-12
            pol = np.where(keep, prev, pol)
        return pol

    pol = greedy(q)
    residual = float(np.max(np.abs(backup(q) - q)))
    for _ in range(max_rounds):
        rows = idx * n_actions + pol
        Ppi = P[rows]
        A = sp.identity(n_obs, format="csr") - gamma * Ppi[:, :n_obs]
        b = R[rows] + gamma * (Ppi[:, n_obs:] @ v_term)
        A = A.tolil()
        for o in np.flatnonzero(~live):
            A.rows[o], A.data[o] = [o], [1.0]
            b[o] = 0.0
        try:
            with warnings.catch_warnings(), np.errstate(all="ignore"):
                # a singular system means the greedy policy never terminates
                warnings.simplefilter("error", spla.MatrixRankWarning)
                v = spla.spsolve(A.tocsc(), b)
        except (spla.MatrixRankWarning, RuntimeError, ValueError):
            break
        if not np.all(np.isfinite(v)):
            break
        q_new = np.where(has.reshape(-1), R + gamma * (P @ np.concatenate([v, v_term])), 0.0)
        new_pol = greedy(q_new, pol)
        q = q_new
        residual = float(np.max(np.abs(backup(q) - q)))
        if np.array_equal(new_pol, pol):
            break
        pol = new_pol
    return q, residual


def _exact_model(env: EnvSpec, space: ObservationSpace, weighting: str = "uniform"):
    """Marginalized transitions: each state behind an observation counts equally."""
    ce = env.compiled
    model: dict[tuple[int, int], dict[str, list]] = {}
    tvals: dict[str, list[float]] = {}
    for i in range(len(ce.states)):
        if ce.terminal[i]:
            tvals.setdefault(space.next_key[i], []).append(float(ce.terminal_value[i]))
            continue
        o = int(space.obs_of[i])
        for a in range(env.n_actions):
            probs = ce.probs(i, a)
            for k, p in enumerate(probs):
                if p <= 0:
                    continue
                ns = int(ce.next_state[i, a, k])
                slot = model.setdefault((o, a), {}).setdefault(space.next_key[ns], [0.0, 0.0])
                slot[0] += p
                slot[1] += p * float(ce.reward[i, a, k])
    flat = {oa: [(nk, w, rs) for nk, (w, rs) in sorted(d.items())] for oa, d in model.items()}
    terminal_values = {k: float(np.mean(v)) for k, v in tvals.items()}
    return flat, terminal_values


def value_iteration(env: EnvSpec, tol: float = 1e-10, max_iter: int = 100_000) -> PolicyArtifact:
    """Exact Bellman-optimal Q over the full state space."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    full = Coalition.full(env.n_features)
    space = ObservationSpace.build(env, full)
    model, tvals = _exact_model(env, space)
    sol = _solve(model, space.keys, env.n_actions, env.gamma, tvals, tol, max_iter)
    if not sol.converged:
        raise ConvergenceError(
            f"value iteration on {env.name} did not converge (residual {sol.residual:.3g}); "
            f"worst state {space.keys[sol.worst_row]}"
        )
    return PolicyArtifact(
        env=env.name,
        coalition=full,
        seed=None,
        config_hash="exact",
        exact=True,
        gamma=env.gamma,
        action_names=env.action_names,
        obs_keys=space.keys,
        q=sol.q,
        visited=np.ones_like(sol.q, dtype=bool),
        terminal_values=tvals,
        model=model,
        diagnostics={"backend": "value_iteration", "bellman_residual": sol.residual,
                     "iterations": sol.iterations, "converged": True},
    )


def abstract_value_iteration(env: EnvSpec, c: Coalition, cfg: TrainConfig | None = None) -> PolicyArtifact:
    """Solve the coalition's abstract MDP (uniform weighting over aliased states)."""
    cfg = cfg or TrainConfig(backend="abstract")
    if not c.members:
        raise ContractError("the empty coalition is never trained; v(empty) = 0")
    c.check(env.n_features)
    space = ObservationSpace.build(env, c)
    model, tvals = _exact_model(env, space)
    sol = _solve(model, space.keys, env.n_actions, env.gamma, tvals, cfg.solve_tol, cfg.solve_max_iter)
    return PolicyArtifact(
        env=env.name,
        coalition=c,
        seed=None,
        config_hash=cfg.digest(None),
        exact=True,
        gamma=env.gamma,
        action_names=env.action_names,
        obs_keys=space.keys,
        q=sol.q,
        visited=np.ones_like(sol.q, dtype=bool),
        terminal_values=tvals,
        model=model,
        diagnostics={"backend": "abstract", "bellman_residual": sol.residual,
                     "iterations": sol.iterations, "converged": bool(sol.residual <= cfg.convergence_tol)},
    )


@njit(cache=True)
def _qlearn_batch(q, visits, counts, obs_of, next_state, cumprob, reward, n_out, terminal, tval,
                  starts, draws, start_draws, ep0, n_total, eps_start, eps_end, alpha0, gamma,
                  track_from):
    n_eps, max_steps = draws.shape[0], draws.shape[1]
    n_actions = q.shape[1]
    max_td = 0.0
    steps = 0
    for e in range(n_eps):
        ep = ep0 + e
        frac = ep / max(n_total - 1, 1)
        eps = eps_start + (eps_end - eps_start) * frac
        j = int(start_draws[e] * starts.shape[0])
        if j >= starts.shape[0]:
            j = starts.shape[0] - 1
        s = starts[j]
        for t in range(max_steps):
            o = obs_of[s]
            if draws[e, t, 0] < eps:
                a = int(draws[e, t, 1] * n_actions)
                if a >= n_actions:
                    a = n_actions - 1
            else:
                a = 0
                best = q[o, 0]
                for b in range(1, n_actions):
                    if q[o, b] > best:
                        best = q[o, b]
                        a = b
            k = 0
            while k < n_out[s, a] - 1 and draws[e, t, 2] > cumprob[s, a, k]:
                k += 1
            ns = next_state[s, a, k]
            r = reward[s, a, k]
            counts[s, a, k] += 1
            visits[o, a] += 1
            if terminal[ns]:
                target = r + gamma * tval[ns]
            else:
                o2 = obs_of[ns]
                m = q[o2, 0]
                for b in range(1, n_actions):
                    if q[o2, b] > m:
                        m = q[o2, b]
                target = r + gamma * m
            td = target - q[o, a]
            q[o, a] += alpha0 / math.sqrt(visits[o, a]) * td
            steps += 1
            if ep >= track_from and abs(td) > max_td:
                max_td = abs(td)
            if terminal[ns]:
                break
            s = ns
    return max_td, steps


def _empirical_model(env: EnvSpec, space: ObservationSpace, counts: np.ndarray):
    ce = env.compiled
    model: dict[tuple[int, int], dict[str, list]] = {}
    tvals: dict[str, list] = {}
    for i, a, k in zip(*np.nonzero(counts)):
        n = int(counts[i, a, k])
        ns = int(ce.next_state[i, a, k])
        nk = space.next_key[ns]
        slot = model.setdefault((int(space.obs_of[i]), int(a)), {}).setdefault(nk, [0, 0.0])
        slot[0] += n
        slot[1] += n * float(ce.reward[i, a, k])
        if ce.terminal[ns]:
            acc = tvals.setdefault(nk, [0, 0.0])
            acc[0] += n
            acc[1] += n * float(ce.terminal_value[ns])
    flat = {oa: [(nk, float(w), rs) for nk, (w, rs) in sorted(d.items())] for oa, d in sorted(model.items())}
    terminal_values = {k: s / n for k, (n, s) in sorted(tvals.items())}
    return flat, terminal_values


def bellman_residual(art: PolicyArtifact) -> float:
    """Sup-norm expected TD error of the table against its own recorded model."""
    n_obs, n_actions = art.q.shape
    index = art.obs_index
    P, R, has, v_term = _model_matrices(art.model, index, n_obs, n_actions, art.terminal_values)
    live = has.any(axis=1)
    v = np.where(live, np.where(has, art.q, -np.inf).max(axis=1), 0.0)
    target = R + art.gamma * (P @ np.concatenate([v, v_term]))
    diff = np.where(has.reshape(-1), target - art.q.reshape(-1), 0.0)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def q_learning_masked(env: EnvSpec, c: Coalition, cfg: TrainConfig | None = None, seed: int = 0) -> PolicyArtifact:
    """Tabular epsilon-greedy Q-learning where the agent only sees ``s`` masked to ``c``.

    Episodes start uniformly over non-terminal states. Step size for a pair is
    ``alpha0 / sqrt(visits)``; epsilon decays linearly. Deterministic given
    (env, c, cfg, seed).
    """
    cfg = cfg or TrainConfig()
    if not c.members:
        raise ContractError("the empty coalition is never trained; v(empty) = 0")
    c.check(env.n_features)
    if cfg.backend == "abstract":
        return abstract_value_iteration(env, c, cfg)
    ce = env.compiled
    space = ObservationSpace.build(env, c)
    n_obs = len(space.keys)
    q = np.zeros((n_obs, env.n_actions))
    visits = np.zeros((n_obs, env.n_actions), dtype=np.int64)
    counts = np.zeros(ce.next_state.shape, dtype=np.int64)
    starts = np.array([ce.index[s] for s in (env.start_states or env.nonterminal_states)], dtype=np.int64)
    obs_of = np.where(space.obs_of < 0, 0, space.obs_of)
    rng = np.random.default_rng(stream_seed(seed, c))
    track_from = max(cfg.episodes - 100, 0)
    max_td, steps = 0.0, 0
    for ep0 in range(0, cfg.episodes, cfg.batch_episodes):
        n = min(cfg.batch_episodes, cfg.episodes - ep0)
        draws = rng.random((n, cfg.max_steps, 3))
        start_draws = rng.random(n)
        td, st = _qlearn_batch(q, visits, counts, obs_of, ce.next_state, ce.cumprob, ce.reward, ce.n_out,
                               ce.terminal, ce.terminal_value, starts, draws, start_draws, ep0, cfg.episodes,
                               cfg.eps_start, cfg.eps_end, cfg.alpha0, env.gamma, track_from)
        max_td = max(max_td, td)
        steps += st
    model, tvals = _empirical_model(env, space, counts)
    visited = visits > 0
    diagnostics = {
        "backend": "qlearning",
        "episodes": cfg.episodes,
        "steps": steps,
        "max_td_last100": max_td,
        "unvisited_pairs": int((~visited).sum()),
        "unvisited_obs": int((~visited.any(axis=1)).sum()),
        "refined": cfg.refine,
    }
    if cfg.refine:
        sol = _solve(model, space.keys, env.n_actions, env.gamma, tvals, cfg.solve_tol, cfg.solve_max_iter, q0=q)
        q = np.where(visited, sol.q, 0.0)
        diagnostics["refine_iterations"] = sol.iterations
    art = PolicyArtifact(
        env=env.name,
        coalition=c,
        seed=seed,
        config_hash=cfg.digest(seed),
        exact=False,
        gamma=env.gamma,
        action_names=env.action_names,
        obs_keys=space.keys,
        q=q,
        visited=visited,
        terminal_values=tvals,
        model=model,
        diagnostics=diagnostics,
    )
    res = bellman_residual(art)
    art.diagnostics["bellman_residual"] = res
    art.diagnostics["converged"] = bool(res <= cfg.convergence_tol)
    return art


def train_coalition(env: EnvSpec, c: Coalition, cfg: TrainConfig, seed: int) -> PolicyArtifact:
    if cfg.backend == "abstract":
        return abstract_value_iteration(env, c, cfg)
    return q_learning_masked(env, c, cfg, seed)


# policy queries ----------------------------------------------------------


def rank_actions(art: PolicyArtifact, obs: str) -> list[int]:
    """Actions by Q descending; ties go to the lower action id."""
    row = art.q[art.row(obs)]
    return sorted(range(len(row)), key=lambda a: (-row[a], a))


def greedy_action(art: PolicyArtifact, obs: str) -> int:
    return rank_actions(art, obs)[0]


def abstract_successor_expectation(art: PolicyArtifact, obs: str, a: int) -> dict[str, float]:
    """Empirical (or exact) distribution over next observation keys."""
    entries = art.model.get((art.row(obs), a))
    total = sum(w for _, w, _ in entries) if entries else 0.0
    if total <= 0:
        raise UnobservedTransitionError(
            f"no recorded transition from {obs!r} under {art.action_names[a]} in {art.coalition.key}"
        )
    return {nk: w / total for nk, w, _ in entries}
