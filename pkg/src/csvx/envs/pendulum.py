"""Tabular pendulum swing-up over (angle bin, velocity bin) with an 11-torque grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import EnvSpec, FeatureSpace, Outcome, StructureError

MAX_SPEED = 8.0
MAX_TORQUE = 2.0
G, M, L = 10.0, 1.0, 1.0
DT = 0.05


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


@dataclass(frozen=True)
class PendulumDiscretization:
    angle_bins: int = 16
    velocity_bins: int = 16
    substeps: int = 4
    torques: tuple[float, ...] = tuple(round(-2.0 + 0.4 * k, 1) for k in range(11))

    def __post_init__(self):
        if self.angle_bins < 3 or self.velocity_bins < 3:
            raise StructureError("pendulum needs at least 3 angle and 3 velocity bins")
        if self.substeps < 1:
            raise StructureError("substeps must be positive")
        if len(self.torques) != 11 or self.torques[0] != -MAX_TORQUE or self.torques[-1] != MAX_TORQUE:
            raise StructureError("torque grid must be the 11 values -2.0..2.0")

    @property
    def angle_width(self) -> float:
        return 2 * math.pi / self.angle_bins

    @property
    def velocity_width(self) -> float:
        return 2 * MAX_SPEED / self.velocity_bins

    def angle_center(self, k: int) -> float:
        """Bin k is centred on k * width; bin 0 is upright."""
        return angle_normalize(k * self.angle_width)

    def velocity_center(self, k: int) -> float:
        return -MAX_SPEED + (k + 0.5) * self.velocity_width

    def angle_bin(self, theta: float) -> int:
        return int(round((theta % (2 * math.pi)) / self.angle_width)) % self.angle_bins

    def velocity_bin(self, omega: float) -> int:
        k = int(math.floor((omega + MAX_SPEED) / self.velocity_width))
        return min(max(k, 0), self.velocity_bins - 1)

    def state_from_observation(self, cos_theta: float, sin_theta: float, omega: float) -> tuple[int, int]:
        return self.angle_bin(math.atan2(sin_theta, cos_theta)), self.velocity_bin(omega)


def dynamics(theta: float, omega: float, u: float, substeps: int = 1) -> tuple[float, float, float]:
    """Standard swing-up update applied ``substeps`` times; returns (theta', omega', mean reward)."""
    total = 0.0
    for _ in range(substeps):
        total += -(angle_normalize(theta) ** 2 + 0.1 * omega**2 + 0.001 * u**2)
        omega = omega + (3 * G / (2 * L) * math.sin(theta) + 3.0 / (M * L**2) * u) * DT
        omega = float(np.clip(omega, -MAX_SPEED, MAX_SPEED))
        theta = theta + omega * DT
    return theta, omega, total / substeps


def build_pendulum(disc: PendulumDiscretization | None = None, gamma: float = 0.95) -> EnvSpec:
    """Deterministic bin-centre dynamics; reward is the swing-up cost at the bin centre."""
    disc = disc or PendulumDiscretization()
    states = tuple((a, v) for a in range(disc.angle_bins) for v in range(disc.velocity_bins))
    trans = {}
    for s in states:
        theta, omega = disc.angle_center(s[0]), disc.velocity_center(s[1])
        row = []
        for u in disc.torques:
            th2, om2, r = dynamics(theta, omega, u, disc.substeps)
            nxt = (disc.angle_bin(th2), disc.velocity_bin(om2))
            row.append((Outcome(1.0, nxt, r),))
        trans[s] = tuple(row)
    space = FeatureSpace((("angle", disc.angle_bins), ("velocity", disc.velocity_bins)))
    return EnvSpec(
        name="pendulum",
        feature_space=space,
        action_names=tuple(f"torque_{u:+.1f}" for u in disc.torques),
        states=states,
        transitions=trans,
        terminal=frozenset(),
        gamma=gamma,
        start_states=states,
        meta={"torques": disc.torques},
    ).validate()
