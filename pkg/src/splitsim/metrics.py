"""Evaluation metrics and run artifacts (CSV/JSON emission).

Ground-truth attacker identity appears here and only here: score rows carry
an ``is_malicious`` column for later analysis, but it is attached after the
defense made its selections, so nothing in the decision path can read it.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .nn import SplitModel, forward_split


def predict(model: SplitModel, samples: np.ndarray) -> np.ndarray:
    return np.argmax(forward_split(model, samples).logits, axis=1)


def main_accuracy(model: SplitModel, test) -> float:
    """Fraction of clean test samples classified correctly."""
    if len(test) == 0:
        raise InputError("empty test set")
    return float(np.mean(predict(model, test.samples) == test.labels))


def backdoor_accuracy(model: SplitModel, triggered_test, target: int) -> tuple[float, float]:
    """(strict, raw) rate of triggered samples mapped to the target label.

    Raw counts every triggered sample predicted as the target. Strict
    restricts to samples whose true label differs from the target, so a
    model that merely classifies target-class images correctly scores 0.
    """
    preds = predict(model, triggered_test.samples)
    hits = preds == target
    raw = float(np.mean(hits))
    foreign = triggered_test.labels != target
    if not foreign.any():
        raise InputError("strict backdoor accuracy needs non-target samples")
    strict = float(np.mean(hits[foreign]))
    return strict, raw


def attack_success_rate(model: SplitModel, test, class_a: int, class_b: int) -> float:
    """Fraction of class-a/b samples predicted as the swapped class."""
    mask = (test.labels == class_a) | (test.labels == class_b)
    if not mask.any():
        raise InputError("test set contains neither swap class")
    preds = predict(model, test.samples[mask])
    truth = test.labels[mask]
    swapped = np.where(truth == class_a, class_b, class_a)
    return float(np.mean(preds == swapped))


def confusion_matrix(model: SplitModel, test) -> np.ndarray:
    """counts[i, j] = samples of true class i predicted as j."""
    preds = predict(model, test.samples)
    counts = np.zeros((test.classes, test.classes), dtype=np.int64)
    np.add.at(counts, (test.labels, preds), 1)
    return counts


@dataclass
class EvalReport:
    round: int
    ma: float
    ba_strict: float
    ba_raw: float
    asr: float | None
    confusion: np.ndarray


def evaluate_round(
    round_index: int,
    model: SplitModel,
    clean_test,
    triggered_test,
    target: int,
    swap_classes: tuple[int, int] | None = None,
) -> EvalReport:
    strict, raw = backdoor_accuracy(model, triggered_test, target)
    asr = None
    if swap_classes is not None:
        asr = attack_success_rate(model, clean_test, *swap_classes)
    return EvalReport(
        round=round_index,
        ma=main_accuracy(model, clean_test),
        ba_strict=strict,
        ba_raw=raw,
        asr=asr,
        confusion=confusion_matrix(model, clean_test),
    )


@dataclass
class ScoreRow:
    """One slot of one analysis pass, mirroring a scores.csv line."""

    step: int
    slot_index: int
    owner: int
    is_malicious: bool
    frequency: float | None
    rotation: float | None
    in_freq_majority: bool
    in_rot_majority: bool
    selected: bool
    rollback_depth: int


@dataclass
class ScoreRecord:
    step: int
    rows: list[ScoreRow]
    selected_index: int
    selected_owner: int
    rollback_depth: int
    warmup: bool
    elapsed_s: float


def score_record_from_board(
    step: int,
    board,
    selected,
    window,
    malicious_owners: set[int],
    elapsed_s: float,
) -> ScoreRecord:
    rollback = window.newest().index - selected.index
    rows = [
        ScoreRow(
            step=step,
            slot_index=slot.index,
            owner=slot.owner,
            is_malicious=slot.owner in malicious_owners,
            frequency=None if board.warmup else slot.frequency,
            rotation=None if board.warmup else slot.rotation,
            in_freq_majority=slot.in_frequency_majority,
            in_rot_majority=slot.in_rotation_majority,
            selected=slot.index == selected.index,
            rollback_depth=rollback,
        )
        for slot in board.slots
    ]
    return ScoreRecord(step, rows, selected.index, selected.owner_client,
                       rollback, board.warmup, elapsed_s)


SCORES_HEADER = [
    "step", "slot_index", "owner", "is_malicious", "E", "R",
    "in_freq_majority", "in_rot_majority", "selected", "rollback_depth",
]
EVAL_HEADER = ["round", "ma", "ba_strict", "ba_raw", "asr"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)  # shortest round-trip representation
    return str(value)


def write_scores_csv(records: list[ScoreRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SCORES_HEADER)
        for record in records:
            for row in record.rows:
                writer.writerow([
                    _fmt(row.step), _fmt(row.slot_index), _fmt(row.owner),
                    _fmt(row.is_malicious), _fmt(row.frequency), _fmt(row.rotation),
                    _fmt(row.in_freq_majority), _fmt(row.in_rot_majority),
                    _fmt(row.selected), _fmt(row.rollback_depth),
                ])


def load_scores_csv(path) -> list[ScoreRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SCORES_HEADER:
            raise InputError(f"unexpected scores header in {path}")
        for line in reader:
            rows.append(ScoreRow(
                step=int(line["step"]),
                slot_index=int(line["slot_index"]),
                owner=int(line["owner"]),
                is_malicious=bool(int(line["is_malicious"])),
                frequency=float(line["E"]) if line["E"] else None,
                rotation=float(line["R"]) if line["R"] else None,
                in_freq_majority=bool(int(line["in_freq_majority"])),
                in_rot_majority=bool(int(line["in_rot_majority"])),
                selected=bool(int(line["selected"])),
                rollback_depth=int(line["rollback_depth"]),
            ))
    return rows


def write_eval_csv(reports: list[EvalReport], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EVAL_HEADER)
        for report in reports:
            writer.writerow([
                _fmt(report.round), _fmt(report.ma), _fmt(report.ba_strict),
                _fmt(report.ba_raw), _fmt(report.asr),
            ])


def load_eval_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != EVAL_HEADER:
            raise InputError(f"unexpected eval header in {path}")
        for line in reader:
            out.append({
                "round": int(line["round"]),
                "ma": float(line["ma"]),
                "ba_strict": float(line["ba_strict"]),
                "ba_raw": float(line["ba_raw"]),
                "asr": float(line["asr"]) if line["asr"] else None,
            })
    return out


def summarize(log) -> dict:
    """JSON-ready run summary; schema documented in the README."""
    final = log.final_report
    times = log.analysis_times()
    return {
        "config": log.config.to_dict(),
        "attacker_ids": list(log.attacker_ids),
        "rounds_completed": len(log.eval_reports),
        "final": None if final is None else {
            "round": final.round,
            "ma": final.ma,
            "ba_strict": final.ba_strict,
            "ba_raw": final.ba_raw,
            "asr": final.asr,
        },
        "final_confusion": None if final is None else final.confusion.tolist(),
        "attacker_selections": log.attacker_selections(include_warmup=True),
        "attacker_selections_post_warmup": log.attacker_selections(include_warmup=False),
        "defense": {
            "analyses": len(times),
            "warmup_passes": sum(1 for r in log.score_records if r.warmup),
            "analysis_times_s": times,
            "total_analysis_time_s": float(sum(times)),
        },
        "aborted_sessions": log.aborted_sessions,
        "wall_time_s": log.wall_time_s,
        "emitted_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


def emit_logs(log, out_dir) -> dict:
    """Write scores.csv, eval.csv and summary.json; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scores_csv(log.score_records, out / "scores.csv")
    write_eval_csv(log.eval_reports, out / "eval.csv")
    summary = summarize(log)
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary
