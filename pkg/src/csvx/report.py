"""Run configuration, explanation reports and their json/csv/markdown renderings."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

from .core import Coalition, EnvSpec, StructureError
from .cvf import BINDINGS, METHODS, SOURCES, CvfQuery, build_cvf, cvf_table_json
from .envs import BUILDERS, make_env
from .envs.minesweeper import default_groups
from .shapley import check_axioms, shapley_exact
from .solver import TrainConfig, masked_key, rank_actions
from .store import ArtifactStore

REPORT_FORMAT = "csvx-report"
REPORT_VERSION = 1
FORMATS = ("json", "csv", "markdown")


@dataclass(frozen=True)
class RunConfig:
    env: str = "gridworld1"
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: tuple[str, ...] = METHODS
    source: str = "q"
    format: str = "json"
    cache_dir: str | None = None
    binding: str = "fixed"
    actions: tuple[int, int] | None = None
    force: bool = False

    def validate(self) -> "RunConfig":
        base = self.env.partition("+")[0]
        if base not in BUILDERS:
            raise ValueError(f"unknown env {self.env!r}; choose from {sorted(BUILDERS)}")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be drawn from {METHODS}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.binding not in BINDINGS:
            raise ValueError(f"binding must be one of {BINDINGS}")
        if self.actions is not None and (len(self.actions) != 2 or self.actions[0] == self.actions[1]):
            raise ValueError("--actions needs two distinct ranks i,j")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "train" in data:
            data["train"] = TrainConfig(**data["train"])
        for key in ("methods", "actions"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data).validate()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["actions"] = list(self.actions) if self.actions else None
        return out

    def store(self, env: EnvSpec | None = None) -> ArtifactStore:
        env = env or make_env(self.env)
        return ArtifactStore(env, self.train, self.seed, self.cache_dir, autotrain=self.cache_dir is None)


def parse_state(env: EnvSpec, text: str | Sequence[int]) -> tuple[int, ...]:
    """Accept ``0,4,4,1``, ``[0, 4, 4, 1]`` or a named state such as ``s1``."""
    if not isinstance(text, str):
        return env.feature_space.validate(text)
    labels = env.meta.get("labels", {})
    if text in labels:
        return tuple(labels[text])
    body = text.strip().strip("[]()")
    try:
        values = [int(v) for v in body.replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise StructureError(f"cannot parse state {text!r}; known labels: {sorted(labels)}") from None
    return env.feature_space.validate(values)


def state_label(env: EnvSpec, s: tuple[int, ...]) -> str | None:
    for name, value in env.meta.get("labels", {}).items():
        if tuple(value) == tuple(s):
            return name
    return None


def default_states(env: EnvSpec) -> list[tuple[int, ...]]:
    """Labelled decision states, else every decision state."""
    labels = env.meta.get("labels")
    if labels:
        return [tuple(v) for v in labels.values() if not env.is_terminal(v)]
    return list(env.nonterminal_states)


def default_players(env: EnvSpec, s: tuple[int, ...]):
    if env.name.startswith("minesweeper"):
        return tuple(default_groups(s))
    return None


def _queries(cfg: RunConfig, env: EnvSpec, s) -> list[CvfQuery]:
    groups = default_players(env, s)
    n_actions = env.n_actions
    out = []
    common = dict(env=env.name, state=s, source=cfg.source, binding=cfg.binding, groups=groups)
    if "vanilla" in cfg.methods:
        out += [CvfQuery(method="vanilla", i=i, **common) for i in range(n_actions)]
    if "cd" in cfg.methods:
        if cfg.actions is not None:
            out.append(CvfQuery(method="cd", i=cfg.actions[0], j=cfg.actions[1], **common))
        else:
            out += [CvfQuery(method="cd", i=0, j=j, **common) for j in range(1, n_actions)]
    if "acd" in cfg.methods:
        out.append(CvfQuery(method="acd", **common))
    return out


@dataclass
class ExplanationReport:
    env: str
    state: tuple[int, ...]
    label: str | None
    features: tuple[str, ...]
    ranking: tuple[str, ...]
    rows: list[dict]
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "env": self.env,
            "state": list(self.state),
            "label": self.label,
            "features": list(self.features),
            "ranking": list(self.ranking),
            "rows": self.rows,
            "bar_chart": {r["method"]: dict(zip(self.features, r["phi"])) for r in self.rows},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExplanationReport":
        if d.get("format") != REPORT_FORMAT:
            raise ValueError("not an explanation report")
        return cls(d["env"], tuple(d["state"]), d["label"], tuple(d["features"]), tuple(d["ranking"]),
                   d["rows"], d["provenance"])

    def row(self, method: str) -> dict:
        for r in self.rows:
            if r["method"] == method:
                return r
        raise KeyError(method)


def _artifact_summary(art) -> dict:
    d = art.diagnostics
    keep = ("backend", "bellman_residual", "converged", "episodes", "max_td_last100", "unvisited_pairs")
    return {"config_hash": art.config_hash, **{k: d[k] for k in keep if k in d}}


def explain(cfg: RunConfig, state, store: ArtifactStore | None = None) -> ExplanationReport:
    """Shapley attributions for every requested CVF row at one state."""
    cfg.validate()
    store = store or cfg.store()
    env = store.env
    s = parse_state(env, state)
    full = store.exact()
    ranking = rank_actions(full, masked_key(s, Coalition.full(env.n_features)))
    rows = []
    features = None
    for q in _queries(cfg, env, s):
        fn = build_cvf(q, store, force=cfg.force)
        features = features or fn.player_names
        attr = shapley_exact(fn, fn.n)
        table = cvf_table_json(fn)
        rows.append({
            "method": q.label,
            "kind": q.method,
            "source": q.source,
            "actions": _row_actions(q, ranking, env),
            "phi": list(attr.phi),
            "total": attr.total,
            "efficiency_residual": attr.efficiency_residual,
            "cvf": table,
        })
    provenance = {
        "seed": cfg.seed,
        "config": cfg.to_dict() | {"cache_dir": None, "format": None},
        "config_hash": store.config_hash,
        "binding": cfg.binding,
        "exact": _artifact_summary(full),
        "artifacts": {c.key: _artifact_summary(store.get(c)) for c in required_coalitions(env, [s])},
    }
    return ExplanationReport(env.name, s, state_label(env, s), tuple(features or ()),
                             tuple(env.action_names[a] for a in ranking), rows, provenance)


def required_coalitions(env: EnvSpec, states) -> list[Coalition]:
    """Reduced raw coalitions an explanation of ``states`` will touch."""
    out: set[Coalition] = set()
    for s in states:
        groups = default_players(env, s) or tuple((k,) for k in range(env.n_features))
        for mask in range(1, 1 << len(groups)):
            c = env.reduce_coalition(Coalition(m for p, g in enumerate(groups) if mask >> p & 1 for m in g))
            if c.members:
                out.add(c)
    return sorted(out)


def _row_actions(q: CvfQuery, ranking, env) -> list[str]:
    names = env.action_names
    if q.method == "vanilla":
        return [names[ranking[q.i]]]
    if q.method == "cd":
        return [names[ranking[q.i]], names[ranking[q.j]]]
    return [names[ranking[0]]]


def render(report: ExplanationReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    n = len(report.features)
    header = ["method"] + [f"f{k}" for k in range(n)]
    body = [[r["method"]] + [f"{x:.2f}" for x in r["phi"]] for r in report.rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(row) + " |" for row in body]
        legend = ", ".join(f"f{k} = {name}" for k, name in enumerate(report.features))
        where = ",".join(map(str, report.state))
        title = f"{report.label} ({where})" if report.label else where
        return f"{report.env} {title}; {legend}\n\n" + "\n".join(lines) + "\n"
    raise ValueError(f"format must be one of {FORMATS}")


def axiom_suite(cfg: RunConfig, states=None, store: ArtifactStore | None = None) -> list[dict]:
    """Efficiency, dummy and symmetry checks per (state, row), plus CD antisymmetry."""
    store = store or cfg.store()
    env = store.env
    if states is None:
        states = default_states(env)
    results = []
    all_cfg = replace(cfg, methods=METHODS)
    for s in states:
        s = parse_state(env, s)
        for q in _queries(all_cfg, env, s):
            fn = build_cvf(q, store, force=cfg.force)
            attr = shapley_exact(fn, fn.n)
            rep = check_axioms(fn, attr)
            base = {"env": env.name, "state": list(s), "method": q.label, "source": q.source}
            results.append(base | {"axiom": "efficiency", "value": rep.efficiency_residual, "pass": rep.efficiency_ok})
            results.append(base | {"axiom": "dummy", "value": len(rep.dummy_violations), "pass": not rep.dummy_violations})
            results.append(base | {"axiom": "symmetry", "value": len(rep.symmetry_violations),
                                   "pass": not rep.symmetry_violations})
            if q.method == "cd":
                back = shapley_exact(build_cvf(q.swapped(), store, force=cfg.force), fn.n)
                gap = max(abs(a + b) for a, b in zip(attr.phi, back.phi))
                results.append(base | {"axiom": "cd_antisymmetry", "value": gap, "pass": gap <= 1e-12})
    return results
