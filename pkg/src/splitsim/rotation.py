"""Angular drift metrics over backbone parameter vectors.

A checkpoint's rotation score is built in three steps: pairwise angles to
the other checkpoints in the window, the sum over the closest majority of
those angles (its angular neighborhood), and the per-analysis velocity of
that neighborhood value normalized to full turns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

ZERO_NORM_FLOOR = 1e-12


@dataclass
class AngularState:
    """Rolling angular-neighborhood bookkeeping for one checkpoint.

    ``adn_previous`` is None until the checkpoint has been scored once;
    the first velocity therefore measures the full neighborhood value, so
    a freshly pushed checkpoint never gets an artificially zero velocity.
    """

    adn_current: float = 0.0
    adn_previous: float | None = None
    delta_t: float = 1.0

    def __post_init__(self):
        if self.adn_current < 0.0:
            raise InputError("angular neighborhood values are nonnegative")
        if self.delta_t <= 0.0:
            raise InputError("delta_t must be positive")


def angular_displacement(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in radians between two parameter vectors.

    ``arccos`` of the cosine similarity, clamped into [-1, 1] against
    rounding. If either vector has norm below 1e-12 the angle is defined
    as 0 (a degenerate vector carries no direction to compare).
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape or u.size == 0:
        raise InputError("vectors must be nonempty and of equal length")
    norm_u = np.linalg.norm(u)
    norm_v = np.linalg.norm(v)
    if norm_u < ZERO_NORM_FLOOR or norm_v < ZERO_NORM_FLOOR:
        return 0.0
    cosine = float(np.dot(u, v) / (norm_u * norm_v))
    return float(np.arccos(min(1.0, max(-1.0, cosine))))


def smallest_majority_sum(values, m: int) -> float:
    """Sum of the m smallest entries (stable sort, so ties keep input order)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise InputError("expected a nonempty 1-D value list")
    if not 1 <= m <= values.size:
        raise InputError(f"majority size {m} outside 1..{values.size}")
    return float(np.sort(values, kind="stable")[:m].sum())


def angular_velocity(state: AngularState) -> float:
    """Change of the neighborhood value per analysis interval."""
    previous = state.adn_previous if state.adn_previous is not None else 0.0
    return (state.adn_current - previous) / state.delta_t


def rotational_displacement(omega: float) -> float:
    """Absolute angular velocity expressed in full turns: |omega| / 2pi."""
    return abs(omega) / (2.0 * np.pi)
