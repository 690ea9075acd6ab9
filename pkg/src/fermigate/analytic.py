"""Closed-form two-band results for the non-interacting SWAP.

With U = 0 the two-band dynamics starting from |ud> stays in the span of
|ud>, |du> and (|D0> + |0D>)/sqrt(2).  For a constant hopping J = A the
amplitudes are x1 = cos^2(At), x2 = -sin^2(At), x3 = i sin(2At)/sqrt(2), and
the shortest transfer under |J| <= J_max uses the constant pulse J = J_max.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def qsl_duration(J_max: float) -> float:
    """Minimum SWAP duration pi / (2 J_max) in ms for J_max in rad/ms."""
    if not np.isfinite(J_max) or J_max <= 0:
        raise ValueError("J_max must be positive")
    return float(np.pi / (2 * J_max))


def analytic_trajectory(A: float, t) -> tuple:
    """(x1, x2, x3) amplitudes of |ud>, |du> and the symmetric doublon state."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("times must be non-negative")
    x1 = np.cos(A * t) ** 2 + 0j
    x2 = -np.sin(A * t) ** 2 + 0j
    x3 = 1j * np.sin(2 * A * t) / np.sqrt(2)
    return x1, x2, x3


def reduced_hamiltonian(A: float) -> np.ndarray:
    """3x3 generator over (|ud>, |du>, (|D0> + |0D>)/sqrt(2)) with J~ = -sqrt(2) A.

    Uses the same sign convention as the four-state two-band matrix, whose
    |ud> and |du> rows couple to both doublons with -J.
    """
    Jt = -np.sqrt(2) * A
    return np.array([[0.0, 0.0, Jt], [0.0, 0.0, Jt], [Jt, Jt, 0.0]])


def swap_cost(A: float, t) -> np.ndarray:
    """C(t) = 1 - |x2|^2 = 1 - sin^4(At)."""
    return 1.0 - np.sin(A * np.asarray(t, dtype=float)) ** 4


def swap_cost_derivative(A: float, t) -> np.ndarray:
    """dC/dA of the constant-pulse SWAP cost."""
    t = np.asarray(t, dtype=float)
    return -4 * t * np.sin(A * t) ** 3 * np.cos(A * t)


@dataclass(frozen=True)
class AnalyticSolution:
    """Time-optimal constant pulse J(t) = A of the two-band SWAP."""

    A: float

    def __post_init__(self):
        if not np.isfinite(self.A) or self.A <= 0:
            raise ValueError("amplitude must be positive")

    @property
    def T_qsl(self) -> float:
        return qsl_duration(self.A)

    def trajectory(self, t):
        return analytic_trajectory(self.A, t)

    def doublon_population(self, t):
        return np.abs(self.trajectory(t)[2]) ** 2
