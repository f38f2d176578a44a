"""Server-side checkpoint screening and rollback selection.

The server keeps a FIFO window of the most recent backbone checkpoints.
Before handing a backbone to the next client it scores every slot twice:

* frequency score E: each slot's update (against the checkpoint it was
  actually trained from) is reduced to a low-frequency signature; E is the
  summed distance to the closest majority of the other slots' signatures.
* rotation score R: the per-analysis velocity of the slot's angular
  neighborhood value, in full turns.

Slots ranking in the smallest majority on BOTH scores form the benign set,
which is nonempty by pigeonhole because each majority holds more than half
the window. The newest benign slot wins; picking an older one is a rollback.

Scores never look at who produced a checkpoint: the window carries owner
ids for logging only, and ground-truth attacker labels live entirely
outside this module.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .dct import frequency_signature
from .errors import ConfigError, InputError
from .rotation import (
    AngularState,
    angular_velocity,
    rotational_displacement,
    smallest_majority_sum,
)


@dataclass
class Checkpoint:
    """One trained backbone plus the metadata the server tracks for it."""

    index: int
    owner_client: int
    backbone: np.ndarray
    base_index: int              # checkpoint the owner actually started from
    head_ref: object = None      # opaque client-side segment handles
    tail_ref: object = None
    angular_state: AngularState = field(default_factory=AngularState)

    def __post_init__(self):
        self.backbone = np.asarray(self.backbone, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.backbone)):
            raise InputError("checkpoint backbone must be finite")
        if self.base_index >= self.index:
            raise InputError("a checkpoint must be newer than its base")


class CheckpointWindow:
    """FIFO of the last ``capacity`` checkpoints plus their base backbones.

    Base backbones are retained in a side table so a slot's update can be
    recomputed even after the base itself was evicted (rollback makes
    non-consecutive bases routine). The table is pruned to the bases still
    referenced by live slots.
    """

    def __init__(self, capacity: int, initial_backbone: np.ndarray | None = None,
                 initial_index: int = 0):
        if capacity < 1:
            raise ConfigError("window capacity must be at least 1")
        self.capacity = capacity
        self.slots: list[Checkpoint] = []
        self._bases: dict[int, np.ndarray] = {}
        if initial_backbone is not None:
            self._bases[initial_index] = (
                np.asarray(initial_backbone, dtype=np.float64).ravel().copy()
            )

    def __len__(self) -> int:
        return len(self.slots)

    def indices(self) -> list[int]:
        return [cp.index for cp in self.slots]

    def newest(self) -> Checkpoint:
        if not self.slots:
            raise InputError("window is empty")
        return self.slots[-1]

    def get(self, index: int) -> Checkpoint:
        for cp in self.slots:
            if cp.index == index:
                return cp
        raise InputError(f"checkpoint {index} is not in the window")

    def base_backbone(self, checkpoint: Checkpoint) -> np.ndarray:
        base = self._bases.get(checkpoint.base_index)
        if base is None:
            raise RuntimeError(
                f"base backbone {checkpoint.base_index} was not retained"
            )
        return base

    def push(self, checkpoint: Checkpoint) -> None:
        """Append a checkpoint, evicting the oldest slot beyond capacity."""
        if self.slots and checkpoint.index <= self.slots[-1].index:
            raise RuntimeError("checkpoint indices must increase monotonically")
        if checkpoint.base_index not in self._bases:
            # the base must still be a live slot; retain its backbone
            self._bases[checkpoint.base_index] = self.get(
                checkpoint.base_index
            ).backbone.copy()
        self.slots.append(checkpoint)
        if len(self.slots) > self.capacity:
            self.slots.pop(0)
        live = {cp.base_index for cp in self.slots}
        self._bases = {i: b for i, b in self._bases.items() if i in live}

    def clone(self) -> "CheckpointWindow":
        """Deep copy, used by tests to freeze angular state."""
        return copy.deepcopy(self)


@dataclass
class SlotScore:
    """Per-slot scoring row, in window (oldest-first) order."""

    index: int
    owner: int
    frequency: float
    rotation: float
    in_frequency_majority: bool
    in_rotation_majority: bool


@dataclass
class ScoreBoard:
    """Outcome of one analysis pass over the window."""

    slots: list[SlotScore]
    m: int
    frequency_majority: set[int]
    rotation_majority: set[int]
    benign_majority: set[int]
    warmup: bool = False


def majority_count(window_len: int) -> int:
    """Closest-majority size: floor(W/2) + 1, capped at W - 1 other slots."""
    if window_len < 2:
        raise InputError("majorities need at least two slots")
    return min(window_len // 2 + 1, window_len - 1)


def frequency_scores(window: CheckpointWindow, low_fraction: float = 0.5) -> np.ndarray:
    """Summed signature distance to each slot's closest majority.

    Signatures are recomputed from each slot's stored update on every pass;
    nothing is cached across analyses, keeping the per-pass cost linear in
    the window length for the transform stage.
    """
    if len(window) < 2:
        raise InputError("frequency scoring needs at least two slots")
    signatures = np.stack([
        frequency_signature(cp.backbone, window.base_backbone(cp), low_fraction).values
        for cp in window.slots
    ])
    distances = np.linalg.norm(signatures[:, None, :] - signatures[None, :, :], axis=2)
    m = majority_count(len(window))
    scores = np.empty(len(window))
    for i in range(len(window)):
        others = np.delete(distances[i], i)  # self-distance is always 0; excluded
        scores[i] = smallest_majority_sum(others, m)
    return scores


def pairwise_angles(window: CheckpointWindow) -> np.ndarray:
    """Angle matrix between all slot backbones (vectorized arccos)."""
    stacked = np.stack([cp.backbone for cp in window.slots])
    norms = np.linalg.norm(stacked, axis=1)
    safe = np.where(norms < 1e-12, 1.0, norms)
    cosine = (stacked @ stacked.T) / np.outer(safe, safe)
    angles = np.arccos(np.clip(cosine, -1.0, 1.0))
    degenerate = norms < 1e-12  # zero-norm backbones compare at angle 0
    angles[degenerate, :] = 0.0
    angles[:, degenerate] = 0.0
    np.fill_diagonal(angles, 0.0)
    return angles


def rotation_scores(window: CheckpointWindow) -> np.ndarray:
    """Rotational displacement per slot; updates each slot's angular state.

    After scoring, every slot's ``adn_previous`` is advanced to the value
    just computed, so re-scoring an unchanged window yields zero velocity.
    """
    if len(window) < 2:
        raise InputError("rotation scoring needs at least two slots")
    angles = pairwise_angles(window)
    m = majority_count(len(window))
    scores = np.empty(len(window))
    for i, cp in enumerate(window.slots):
        others = np.delete(angles[i], i)
        neighborhood = smallest_majority_sum(others, m)
        state = cp.angular_state
        state.adn_current = neighborhood
        scores[i] = rotational_displacement(angular_velocity(state))
        state.adn_previous = neighborhood
    return scores


def _majority_indices(scores: np.ndarray, indices: list[int], m: int) -> set[int]:
    # ascending by score, ties resolved toward the older checkpoint
    order = np.lexsort((np.asarray(indices), np.asarray(scores)))
    return {indices[i] for i in order[:m]}


def benign_majority(
    freq_scores: np.ndarray,
    rot_scores: np.ndarray,
    indices: list[int],
    m: int,
) -> tuple[set[int], set[int], set[int]]:
    """Intersect the two smallest-majority index sets.

    Requires 2m > window length so the intersection is nonempty by
    pigeonhole; returns (frequency majority, rotation majority, benign).
    """
    count = len(indices)
    if not (m <= count and 2 * m > count):
        raise ConfigError(f"majority size {m} cannot cover a window of {count}")
    freq_set = _majority_indices(freq_scores, indices, m)
    rot_set = _majority_indices(rot_scores, indices, m)
    benign = freq_set & rot_set
    if not benign:
        raise RuntimeError("majority intersection came up empty despite 2m > W")
    return freq_set, rot_set, benign


def select_latest_benign(window: CheckpointWindow, benign: set[int]) -> Checkpoint:
    """Most recent checkpoint whose index is in the benign set."""
    for cp in reversed(window.slots):
        if cp.index in benign:
            return cp
    raise RuntimeError("benign set references no live slot")


def analyze(
    window: CheckpointWindow,
    low_fraction: float = 0.5,
    warmup_min: int = 3,
) -> tuple[ScoreBoard, Checkpoint]:
    """Score the window and pick the checkpoint the next session starts from.

    Below ``warmup_min`` slots there is no meaningful majority, so the
    newest checkpoint is accepted and the board is flagged as warm-up.
    """
    if len(window) == 0:
        raise InputError("cannot analyze an empty window")
    if len(window) < warmup_min:
        slots = [
            SlotScore(cp.index, cp.owner_client, float("nan"), float("nan"),
                      False, False)
            for cp in window.slots
        ]
        return ScoreBoard(slots, 0, set(), set(), set(), warmup=True), window.newest()

    freq = frequency_scores(window, low_fraction)
    rot = rotation_scores(window)
    indices = window.indices()
    m = majority_count(len(window))
    freq_set, rot_set, benign = benign_majority(freq, rot, indices, m)
    slots = [
        SlotScore(cp.index, cp.owner_client, float(freq[i]), float(rot[i]),
                  cp.index in freq_set, cp.index in rot_set)
        for i, cp in enumerate(window.slots)
    ]
    board = ScoreBoard(slots, m, freq_set, rot_set, benign)
    return board, select_latest_benign(window, benign)


def krum_select(window: CheckpointWindow) -> Checkpoint:
    """Aggregation baseline: smallest summed distance to the nearest updates.

    Each slot's update is compared to the others by Euclidean distance and
    scored by the sum over its ``m`` nearest; the minimal score wins, ties
    going to the older checkpoint. Unlike the rollback defense this ignores
    recency, which is exactly the weakness it demonstrates.
    """
    if len(window) < 2:
        raise InputError("the aggregation baseline needs at least two slots")
    updates = np.stack([
        cp.backbone - window.base_backbone(cp) for cp in window.slots
    ])
    distances = np.linalg.norm(updates[:, None, :] - updates[None, :, :], axis=2)
    m = majority_count(len(window))
    scores = np.empty(len(window))
    for i in range(len(window)):
        scores[i] = smallest_majority_sum(np.delete(distances[i], i), m)
    indices = window.indices()
    order = np.lexsort((np.asarray(indices), scores))
    return window.get(indices[order[0]])


def dp_sanitize(
    update: np.ndarray,
    clip_norm: float,
    noise_sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Noisy-update baseline: clip to a norm budget, then add Gaussian noise."""
    if clip_norm <= 0.0:
        raise InputError("clip_norm must be positive")
    if noise_sigma < 0.0:
        raise InputError("noise_sigma must be nonnegative")
    update = np.asarray(update, dtype=np.float64).ravel().copy()
    norm = np.linalg.norm(update)
    if norm > clip_norm:
        update *= clip_norm / norm
    if noise_sigma > 0.0:
        update += rng.normal(0.0, noise_sigma, size=update.shape)
    return update
