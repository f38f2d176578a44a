"""Sequential U-shaped split training protocol.

Clients take turns in round-robin order. Each session starts from the
head/tail handles and backbone the server designates, trains locally for a
fixed number of epochs, and hands back new head/tail handles plus the
backbone delta. The server never sees raw samples or labels; between
sessions it may screen the checkpoint window and roll back to an older
backbone.

Attacker behaviors
------------------
* ``naive_poison``: trains on a trigger-poisoned shard.
* ``adaptive_rotation`` / ``adaptive_frequency`` / ``adaptive_both`` /
  ``adaptive_euclidean``: poisoned shard plus a backbone penalty that
  imitates a reference backbone under the corresponding defense metric.
* ``tail_only``: alternates clean batches (full update) with poisoned
  batches that update the tail only, so the backbone delta carries no
  poisoned gradient at all.
* ``label_swap``: swaps two class labels on its shard.
* ``loss_max``: untargeted; ascends the classification loss.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .data import (
    Dataset,
    TriggerSpec,
    generate_synthetic,
    partition_main_label,
    poison_label_swap,
    poison_pixel_trigger,
    stamp_trigger,
)
from .defense import Checkpoint, CheckpointWindow, analyze, dp_sanitize, krum_select
from .dct import frequency_signature, signature_backprop
from .errors import ConfigError, InputError
from .nn import (
    GradientSet,
    RegularizerSpec,
    SplitModel,
    flatten_backbone,
    forward_split,
    init_model,
    loss_and_backward,
    sgd_step,
    unflatten_backbone,
)
from .rotation import angular_displacement

logger = logging.getLogger(__name__)

BENIGN = "benign"
ADAPTIVE_BEHAVIORS = (
    "adaptive_rotation",
    "adaptive_frequency",
    "adaptive_both",
    "adaptive_euclidean",
)
BEHAVIORS = (
    BENIGN,
    "naive_poison",
    *ADAPTIVE_BEHAVIORS,
    "tail_only",
    "label_swap",
    "loss_max",
)


@dataclass
class AttackParams:
    pdr: float = 0.75
    alpha: float = 0.5
    trigger: TriggerSpec = field(default_factory=TriggerSpec)
    reference_mode: str = "base_backbone"
    swap_classes: tuple[int, int] = (0, 1)


@dataclass
class ClientProfile:
    """A participant: its shard, behavior, and prepared training material."""

    client_id: int
    shard: Dataset
    behavior: str = BENIGN
    attack: AttackParams | None = None
    train_data: Dataset | None = None   # what sessions iterate over
    poison_data: Dataset | None = None  # tail_only: the tail-restricted batches

    def __post_init__(self):
        if self.behavior not in BEHAVIORS:
            raise ConfigError(f"unknown behavior {self.behavior!r}")
        if (self.attack is None) != (self.behavior == BENIGN):
            raise ConfigError("attack parameters go with malicious behaviors only")
        if self.train_data is None:
            self.train_data = self.shard

    @property
    def is_malicious(self) -> bool:
        return self.behavior != BENIGN


@dataclass(frozen=True)
class SegmentHandle:
    """Opaque wrapper around a client-held model segment.

    The server stores and forwards handles but never inspects the layers;
    (owner, step) identifies which session produced the segment, with
    (-1, 0) marking the initial model.
    """

    kind: str
    owner: int
    step: int
    layers: tuple


@dataclass
class SessionResult:
    client_id: int
    head: SegmentHandle
    tail: SegmentHandle
    backbone_delta: np.ndarray
    loss_trace: list[float]
    aborted: bool = False


@dataclass
class SessionRecord:
    step: int
    owner: int
    base_index: int
    aborted: bool


def make_regularizer(
    behavior: str,
    attack: AttackParams,
    base_backbone: np.ndarray,
    shadow_backbone: np.ndarray | None = None,
    low_fraction: float = 0.5,
) -> RegularizerSpec | None:
    """Penalty steering a poisoned backbone toward a reference backbone.

    The reference is the session's base backbone, or a shadow backbone the
    attacker trained on clean data; an unavailable shadow falls back to the
    base with a warning. The penalty variants mirror the defense metrics:
    angle to the reference, low-frequency signature distance between the
    session update and the reference's update, both summed, or plain
    Euclidean distance.
    """
    if behavior not in ADAPTIVE_BEHAVIORS:
        return None
    base = np.asarray(base_backbone, dtype=np.float64).copy()
    if attack.reference_mode == "shadow_backbone" and shadow_backbone is None:
        logger.warning("shadow reference unavailable; falling back to base backbone")
    if attack.reference_mode == "shadow_backbone" and shadow_backbone is not None:
        reference = np.asarray(shadow_backbone, dtype=np.float64).copy()
    else:
        reference = base

    def rotation_term(vec):
        norm_v = np.linalg.norm(vec)
        norm_r = np.linalg.norm(reference)
        value = angular_displacement(vec, reference)
        if norm_v < 1e-12 or norm_r < 1e-12:
            return value, np.zeros_like(vec)
        cosine = float(np.dot(vec, reference) / (norm_v * norm_r))
        if abs(cosine) >= 1.0 - 1e-9:  # clamped arccos is flat here
            return value, np.zeros_like(vec)
        dcos = reference / (norm_v * norm_r) - cosine * vec / norm_v**2
        return value, -dcos / np.sqrt(1.0 - cosine**2)

    d = int(np.ceil(np.sqrt(base.size)))
    ref_signature = frequency_signature(reference, base, low_fraction)

    def frequency_term(vec):
        signature = frequency_signature(vec, base, low_fraction)
        residual = signature.values - ref_signature.values
        norm = np.linalg.norm(residual)
        if norm < 1e-12:
            return 0.0, np.zeros_like(vec)
        grad = signature_backprop(residual / norm, signature.block, (d, d), base.size)
        return float(norm), grad

    def euclidean_term(vec):
        residual = vec - reference
        norm = np.linalg.norm(residual)
        if norm < 1e-12:
            return 0.0, np.zeros_like(vec)
        return float(norm), residual / norm

    terms = {
        "adaptive_rotation": (rotation_term,),
        "adaptive_frequency": (frequency_term,),
        "adaptive_both": (rotation_term, frequency_term),
        "adaptive_euclidean": (euclidean_term,),
    }[behavior]

    def penalty(vec):
        total, grad = 0.0, np.zeros_like(vec)
        for term in terms:
            value, term_grad = term(vec)
            total += value
            grad += term_grad
        return total, grad

    return RegularizerSpec(attack.alpha, penalty, behavior)


def _batches(data: Dataset, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        chosen = order[start:start + batch_size]
        yield data.samples[chosen], data.labels[chosen]


def run_session(
    profile: ClientProfile,
    start_head: SegmentHandle,
    start_tail: SegmentHandle,
    server_backbone: np.ndarray,
    template: SplitModel,
    *,
    lr: float,
    epochs: int,
    batch: int,
    rng: np.random.Generator,
    step: int = 0,
    regularizer: RegularizerSpec | None = None,
) -> SessionResult:
    """One client session: local SGD from the designated starting point.

    Returns new segment handles and the backbone delta relative to
    ``server_backbone``. A non-finite loss aborts the session; the caller
    discards the result and re-uses the base checkpoint.
    """
    model = SplitModel(
        [l.copy() for l in start_head.layers],
        unflatten_backbone(template, server_backbone),
        [l.copy() for l in start_tail.layers],
    )

    losses: list[float] = []
    aborted = False
    for _ in range(epochs):
        if profile.behavior == "tail_only":
            clean = [(x, y, False) for x, y in _batches(profile.train_data, batch, rng)]
            poisoned = [(x, y, True) for x, y in _batches(profile.poison_data, batch, rng)]
            plan = []
            for i in range(max(len(clean), len(poisoned))):
                if i < len(clean):
                    plan.append(clean[i])
                if i < len(poisoned):
                    plan.append(poisoned[i])
        else:
            plan = [(x, y, False) for x, y in _batches(profile.train_data, batch, rng)]

        epoch_losses = []
        for inputs, labels, tail_restricted in plan:
            trace = forward_split(model, inputs)
            loss, grads = loss_and_backward(model, trace, labels, regularizer)
            if not np.isfinite(loss):
                aborted = True
                break
            if profile.behavior == "loss_max":  # untargeted ascent
                grads = _scale_grads(grads, -1.0)
            if tail_restricted:
                grads = _zero_non_tail(grads)
            model = sgd_step(model, grads, lr)
            epoch_losses.append(loss)
        if aborted:
            break
        losses.append(float(np.mean(epoch_losses)))

    return SessionResult(
        client_id=profile.client_id,
        head=SegmentHandle("head", profile.client_id, step,
                           tuple(l.copy() for l in model.head)),
        tail=SegmentHandle("tail", profile.client_id, step,
                           tuple(l.copy() for l in model.tail)),
        backbone_delta=flatten_backbone(model) - np.asarray(server_backbone),
        loss_trace=losses,
        aborted=aborted,
    )


def _scale_grads(grads: GradientSet, factor: float) -> GradientSet:
    scale = lambda pairs: [(factor * gw, factor * gb) for gw, gb in pairs]
    return GradientSet(scale(grads.head), scale(grads.backbone), scale(grads.tail))


def _zero_non_tail(grads: GradientSet) -> GradientSet:
    zero = lambda pairs: [(np.zeros_like(gw), np.zeros_like(gb)) for gw, gb in pairs]
    return GradientSet(zero(grads.head), zero(grads.backbone), list(grads.tail))


def build_profiles(
    cfg: ExperimentConfig,
    train: Dataset,
    plan,
    attacker_ids: list[int],
    trigger: TriggerSpec,
) -> list[ClientProfile]:
    """Assemble client profiles, poisoning attacker shards once, seeded."""
    profiles = []
    for cid in range(cfg.n_clients):
        shard = train.subset(plan.client_indices[cid])
        if cid not in attacker_ids:
            profiles.append(ClientProfile(cid, shard))
            continue
        params = AttackParams(cfg.pdr, cfg.alpha, trigger, cfg.reference_mode,
                              cfg.swap_classes)
        seed = cfg.seed + 101 + cid
        train_data = poison_data = None
        if cfg.attack in ("naive_poison",) + ADAPTIVE_BEHAVIORS:
            train_data = poison_pixel_trigger(shard, trigger, cfg.pdr, seed)
        elif cfg.attack == "tail_only":
            rng = np.random.default_rng(seed)
            n_poison = int(cfg.pdr * len(shard) + 0.5)
            chosen = rng.choice(len(shard), size=n_poison, replace=False)
            rest = np.setdiff1d(np.arange(len(shard)), chosen)
            if len(rest) == 0:  # keep at least one clean batch in the rotation
                raise ConfigError("tail_only needs pdr < 1 to alternate batches")
            poison_data = poison_pixel_trigger(shard.subset(chosen), trigger, 1.0, seed)
            train_data = shard.subset(rest)
        elif cfg.attack == "label_swap":
            train_data = poison_label_swap(shard, *cfg.swap_classes)
        elif cfg.attack == "loss_max":
            train_data = shard
        profiles.append(ClientProfile(cid, shard, cfg.attack, params,
                                      train_data, poison_data))
    return profiles


@dataclass
class PendingStart:
    """The checkpoint the next session will start from."""

    index: int
    head: SegmentHandle
    tail: SegmentHandle
    backbone: np.ndarray


@dataclass
class ExperimentLog:
    """Everything a run produced, ready for metric emission."""

    config: ExperimentConfig
    attacker_ids: list[int]
    eval_reports: list = field(default_factory=list)      # metrics.EvalReport
    score_records: list = field(default_factory=list)     # metrics.ScoreRecord
    session_records: list[SessionRecord] = field(default_factory=list)
    aborted_sessions: int = 0
    wall_time_s: float = 0.0

    @property
    def final_report(self):
        return self.eval_reports[-1] if self.eval_reports else None

    def analysis_times(self) -> list[float]:
        return [r.elapsed_s for r in self.score_records]

    def attacker_selections(self, include_warmup: bool = True) -> int:
        malicious = set(self.attacker_ids)
        count = 0
        for record in self.score_records:
            if record.warmup and not include_warmup:
                continue
            if record.selected_owner in malicious:
                count += 1
        return count


def assemble_model(pending: PendingStart, template: SplitModel) -> SplitModel:
    return SplitModel(
        [l.copy() for l in pending.head.layers],
        unflatten_backbone(template, pending.backbone),
        [l.copy() for l in pending.tail.layers],
    )


def run_experiment(
    cfg: ExperimentConfig,
    malicious_ids_for_logging: list[int] | None = None,
) -> ExperimentLog:
    """Run the full sequential protocol and return its log.

    ``malicious_ids_for_logging`` overrides the ground-truth attacker set
    recorded in score rows; it exists so tests can corrupt the flag and
    verify the defense's selections do not depend on it. The defense only
    ever sees the checkpoint window.
    """
    from . import metrics  # local import to keep module layering acyclic

    cfg.validate()
    start_time = time.perf_counter()

    pattern_seed = cfg.seed + 1000003
    train = generate_synthetic(cfg.classes, cfg.per_class_train, cfg.image_dims,
                               cfg.noise_sigma, cfg.seed, pattern_seed)
    test = generate_synthetic(cfg.classes, cfg.per_class_test, cfg.image_dims,
                              cfg.noise_sigma, cfg.seed + 1, pattern_seed)
    trigger = TriggerSpec(cfg.trigger_origin, cfg.trigger_size,
                          cfg.trigger_intensity, cfg.target_label)
    triggered_test = stamp_trigger(test, trigger)

    plan = partition_main_label(train, cfg.n_clients, cfg.iid_rate, cfg.seed + 11)
    attacker_ids = cfg.attacker_ids()
    logged_malicious = set(
        attacker_ids if malicious_ids_for_logging is None else malicious_ids_for_logging
    )
    profiles = build_profiles(cfg, train, plan, attacker_ids, trigger)

    h, w = cfg.image_dims
    template = init_model(h * w, cfg.classes, cfg.head_width, cfg.backbone_hidden,
                          cfg.backbone_layers, seed=cfg.seed + 29)
    initial_backbone = flatten_backbone(template)
    pending = PendingStart(
        index=0,
        head=SegmentHandle("head", -1, 0, tuple(l.copy() for l in template.head)),
        tail=SegmentHandle("tail", -1, 0, tuple(l.copy() for l in template.tail)),
        backbone=initial_backbone,
    )

    window = CheckpointWindow(cfg.n_clients, initial_backbone, initial_index=0)
    session_rng = np.random.default_rng(cfg.seed + 37)
    dp_rng = np.random.default_rng(cfg.seed + 53)
    shadow_rng = np.random.default_rng(cfg.seed + 61)

    shadows: dict[int, SplitModel] = {}
    if cfg.attack in ADAPTIVE_BEHAVIORS and cfg.reference_mode == "shadow_backbone":
        shadows = {cid: template.copy() for cid in attacker_ids}

    log = ExperimentLog(config=cfg, attacker_ids=attacker_ids)

    for step in range(1, cfg.rounds * cfg.n_clients + 1):
        profile = profiles[(step - 1) % cfg.n_clients]

        regularizer = None
        if profile.behavior in ADAPTIVE_BEHAVIORS:
            shadow_vec = None
            if profile.client_id in shadows:
                # refresh the attacker's clean-data shadow once per round
                shadow = shadows[profile.client_id]
                shadow_result = run_session(
                    ClientProfile(profile.client_id, profile.shard),
                    SegmentHandle("head", -1, 0, tuple(shadow.head)),
                    SegmentHandle("tail", -1, 0, tuple(shadow.tail)),
                    flatten_backbone(shadow), template,
                    lr=cfg.lr, epochs=1, batch=cfg.batch, rng=shadow_rng,
                )
                shadows[profile.client_id] = SplitModel(
                    list(shadow_result.head.layers),
                    unflatten_backbone(
                        template, flatten_backbone(shadow) + shadow_result.backbone_delta
                    ),
                    list(shadow_result.tail.layers),
                )
                shadow_vec = flatten_backbone(shadows[profile.client_id])
            regularizer = make_regularizer(profile.behavior, profile.attack,
                                           pending.backbone, shadow_vec,
                                           cfg.low_fraction)

        result = run_session(
            profile, pending.head, pending.tail, pending.backbone, template,
            lr=cfg.lr, epochs=cfg.epochs, batch=cfg.batch,
            rng=session_rng, step=step, regularizer=regularizer,
        )
        log.session_records.append(
            SessionRecord(step, profile.client_id, pending.index, result.aborted)
        )

        if result.aborted:
            log.aborted_sessions += 1
        else:
            delta = result.backbone_delta
            if cfg.baseline == "dp":
                delta = dp_sanitize(delta, cfg.dp_clip_norm, cfg.dp_noise_sigma, dp_rng)
            window.push(Checkpoint(
                index=step,
                owner_client=profile.client_id,
                backbone=pending.backbone + delta,
                base_index=pending.index,
                head_ref=result.head,
                tail_ref=result.tail,
            ))

            analysis_start = time.perf_counter()
            board = None
            if cfg.baseline == "krum" and len(window) >= 2:
                selected = krum_select(window)
            elif cfg.baseline == "none" and cfg.defense_enabled:
                board, selected = analyze(window, cfg.low_fraction, cfg.warmup_min)
            else:
                selected = window.newest()
            elapsed = time.perf_counter() - analysis_start

            pending = PendingStart(selected.index, selected.head_ref,
                                   selected.tail_ref, selected.backbone)
            if board is not None:
                log.score_records.append(metrics.score_record_from_board(
                    step, board, selected, window, logged_malicious, elapsed,
                ))

        if step % cfg.n_clients == 0:
            model = assemble_model(pending, template)
            log.eval_reports.append(metrics.evaluate_round(
                step // cfg.n_clients, model, test, triggered_test,
                cfg.target_label,
                cfg.swap_classes if cfg.attack == "label_swap" else None,
            ))

    log.wall_time_s = time.perf_counter() - start_time
    return log
