"""On-disk cache of policy artifacts, one JSON file per (env, coalition, config)."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .core import Coalition, EnvSpec, enumerate_coalitions
from .solver import (
    IntegrityError,
    PolicyArtifact,
    TrainConfig,
    train_coalition,
    value_iteration,
)

EXACT_KEY = "exact"


class MissingArtifactError(LookupError):
    pass


class UnconvergedArtifactError(RuntimeError):
    def __init__(self, coalitions: list[Coalition], detail: str = ""):
        self.coalitions = coalitions
        keys = ", ".join(c.key for c in coalitions)
        super().__init__(f"artifacts failed the convergence gate: {keys}{detail}")


@dataclass
class ArtifactStore:
    """Loads, trains and caches the artifacts one environment needs.

    Coalitions are reduced (constant features dropped) before lookup, so
    coalitions that induce the same partition of the state set share a file.
    With ``autotrain=False`` a missing artifact is an error instead of a
    training run.
    """

    env: EnvSpec
    cfg: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    cache_dir: str | os.PathLike | None = None
    autotrain: bool = True
    _memo: dict = field(default_factory=dict, init=False, repr=False)
    trained: int = field(default=0, init=False)
    loaded: int = field(default=0, init=False)

    @property
    def config_hash(self) -> str:
        return self.cfg.digest(None if self.cfg.backend == "abstract" else self.seed)

    def path(self, c: Coalition | None) -> Path | None:
        if self.cache_dir is None:
            return None
        if c is None:
            return Path(self.cache_dir) / self.env.name / EXACT_KEY / "value_iteration.json"
        return Path(self.cache_dir) / self.env.name / c.key / f"{self.config_hash}.json"

    def exact(self) -> PolicyArtifact:
        """Full-feature artifact solved by value iteration."""
        return self._get(None)

    def get(self, c: Coalition) -> PolicyArtifact:
        c = self.env.reduce_coalition(c.check(self.env.n_features))
        if not c.members:
            raise ValueError("the empty coalition has no artifact")
        return self._get(c)

    def _get(self, c: Coalition | None) -> PolicyArtifact:
        if c in self._memo:
            return self._memo[c]
        path = self.path(c)
        art = None
        if path is not None and path.exists():
            art = PolicyArtifact.from_json(path.read_text())
            if art.env != self.env.name or (c is not None and art.coalition != c):
                raise IntegrityError(f"{path} holds an artifact for a different env or coalition")
            self.loaded += 1
        else:
            if not self.autotrain:
                label = EXACT_KEY if c is None else c.key
                raise MissingArtifactError(
                    f"no cached artifact for {self.env.name}/{label}; run `csvx train --env {self.env.name}` first"
                )
            art = value_iteration(self.env) if c is None else train_coalition(self.env, c, self.cfg, self.seed)
            self.trained += 1
            if path is not None:
                _atomic_write(path, art.to_json())
        self._memo[c] = art
        return art

    def required(self, players: int | None = None) -> list[Coalition]:
        """Distinct reduced nonempty coalitions over the raw features."""
        seen = []
        for c in enumerate_coalitions(self.env.n_features):
            r = self.env.reduce_coalition(c)
            if r.members and r not in seen:
                seen.append(r)
        return seen

    def populate(self, coalitions: list[Coalition] | None = None) -> dict[Coalition, PolicyArtifact]:
        out = {}
        self.exact()
        for c in coalitions or self.required():
            out[c] = self.get(c)
        return out

    def check_converged(self, coalitions: list[Coalition]) -> None:
        bad = [c for c in coalitions if c.members and not self.get(c).converged]
        if bad:
            worst = max(float(self.get(c).diagnostics.get("bellman_residual", float("inf"))) for c in bad)
            raise UnconvergedArtifactError(bad, f" (worst Bellman residual {worst:.3g})")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
