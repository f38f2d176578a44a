"""Evaluation metrics and CSV/JSON emission."""

import json

import numpy as np
import pytest

from splitsim.config import ExperimentConfig
from splitsim.data import Dataset
from splitsim.errors import InputError
from splitsim.metrics import (
    EVAL_HEADER,
    SCORES_HEADER,
    EvalReport,
    ScoreRecord,
    ScoreRow,
    attack_success_rate,
    backdoor_accuracy,
    confusion_matrix,
    emit_logs,
    evaluate_round,
    load_eval_csv,
    load_scores_csv,
    main_accuracy,
    predict,
    summarize,
    write_eval_csv,
    write_scores_csv,
)
from splitsim.nn import init_model
from splitsim.protocol import ExperimentLog, run_experiment


def constant_model(classes, predicted, input_dim=4):
    """Zero network whose tail bias forces one fixed prediction."""
    model = init_model(input_dim, classes, 4, 4, 1, seed=0)
    for layer in model.layers():
        layer.weights[:] = 0.0
        layer.biases[:] = 0.0
    model.tail[-1].biases[predicted] = 1.0
    return model


def identity_model():
    """Three-class model whose logits equal the (nonnegative) inputs."""
    model = init_model(3, 3, 3, 3, 1, seed=0)
    for layer in model.layers():
        layer.weights[:] = np.eye(3)
        layer.biases[:] = 0.0
    return model


def rows_predicting(preds, labels):
    samples = 0.9 * np.eye(3)[np.asarray(preds)]
    return Dataset(samples, np.asarray(labels), classes=3)


def balanced_test(classes=2, per_class=10, dim=4):
    rng = np.random.default_rng(0)
    samples = rng.uniform(size=(classes * per_class, dim))
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(samples, labels, classes)


def test_constant_predictor_accuracy():
    test = balanced_test()
    model = constant_model(2, predicted=1)
    assert np.all(predict(model, test.samples) == 1)
    assert main_accuracy(model, test) == 0.5
    with pytest.raises(InputError):
        main_accuracy(model, balanced_test(per_class=0))


def test_backdoor_accuracy_strict_vs_raw():
    # foreign rows: 2 of 4 hit the target; target rows: 1 of 4
    triggered = rows_predicting([0, 0, 1, 2, 0, 1, 1, 2],
                                [1, 1, 2, 2, 0, 0, 0, 0])
    strict, raw = backdoor_accuracy(identity_model(), triggered, target=0)
    assert strict == 0.5
    assert raw == 3 / 8


def test_backdoor_accuracy_constant_cases():
    triggered = rows_predicting([0, 1, 2, 0], [1, 2, 2, 0])
    strict, raw = backdoor_accuracy(constant_model(3, 0, input_dim=3),
                                    triggered, target=0)
    assert strict == 1.0 and raw == 1.0
    strict, raw = backdoor_accuracy(constant_model(3, 1, input_dim=3),
                                    triggered, target=0)
    assert strict == 0.0 and raw == 0.0
    all_target = rows_predicting([0, 0], [0, 0])
    with pytest.raises(InputError):
        backdoor_accuracy(identity_model(), all_target, target=0)


def test_attack_success_rate_constant_predictor():
    test = balanced_test()
    assert attack_success_rate(constant_model(2, 1), test, 0, 1) == 0.5
    assert attack_success_rate(constant_model(2, 0), test, 0, 1) == 0.5
    three = rows_predicting([2, 2], [2, 2])
    with pytest.raises(InputError):
        attack_success_rate(identity_model(), three, 0, 1)


def test_confusion_matrix_counts():
    test = rows_predicting([0, 0, 1, 2], [0, 0, 0, 1])
    counts = confusion_matrix(identity_model(), test)
    assert np.array_equal(counts, [[2, 1, 0], [0, 0, 1], [0, 0, 0]])
    assert counts.sum() == len(test)
    assert np.trace(counts) / len(test) == main_accuracy(identity_model(), test)


def test_evaluate_round_fields():
    clean = rows_predicting([0, 1, 2], [0, 1, 2])
    triggered = rows_predicting([0, 0, 0], [0, 1, 2])
    report = evaluate_round(4, identity_model(), clean, triggered, target=0)
    assert report.round == 4
    assert report.ma == 1.0
    assert report.ba_strict == 1.0
    assert report.asr is None
    swapped = evaluate_round(4, identity_model(), clean, triggered, 0, (1, 2))
    assert swapped.asr == 0.0


def sample_score_records():
    warm = ScoreRecord(
        step=1,
        rows=[ScoreRow(1, 1, 0, False, None, None, False, False, True, 0)],
        selected_index=1, selected_owner=0, rollback_depth=0,
        warmup=True, elapsed_s=0.001,
    )
    scored = ScoreRecord(
        step=2,
        rows=[
            ScoreRow(2, 1, 0, False, 0.1 + 0.2, 1e-17, True, True, False, 1),
            ScoreRow(2, 2, 3, True, 123.456, 0.25, False, True, True, 1),
        ],
        selected_index=2, selected_owner=3, rollback_depth=1,
        warmup=False, elapsed_s=0.002,
    )
    return [warm, scored]


def test_scores_csv_round_trip(tmp_path):
    path = tmp_path / "scores.csv"
    write_scores_csv(sample_score_records(), path)
    text = path.read_text().splitlines()
    assert text[0] == ",".join(SCORES_HEADER)
    assert text[1] == "1,1,0,0,,,0,0,1,0"  # warm-up: empty score cells
    assert "0.30000000000000004" in text[2]  # repr keeps the exact double

    rows = load_scores_csv(path)
    assert len(rows) == 3
    assert rows[0].frequency is None and rows[0].rotation is None
    assert rows[1].frequency == 0.1 + 0.2
    assert rows[1].rotation == 1e-17
    assert rows[2].is_malicious is True
    assert rows[2].selected is True


def test_eval_csv_round_trip(tmp_path):
    path = tmp_path / "eval.csv"
    reports = [
        EvalReport(1, 0.975, 1 / 3, 0.4, None, np.zeros((2, 2), dtype=np.int64)),
        EvalReport(2, 1.0, 0.0, 0.1, 0.5, np.zeros((2, 2), dtype=np.int64)),
    ]
    write_eval_csv(reports, path)
    assert path.read_text().splitlines()[0] == ",".join(EVAL_HEADER)
    loaded = load_eval_csv(path)
    assert loaded[0]["ba_strict"] == 1 / 3
    assert loaded[0]["asr"] is None
    assert loaded[1]["asr"] == 0.5


def test_empty_logs_write_headers_only(tmp_path):
    write_scores_csv([], tmp_path / "scores.csv")
    write_eval_csv([], tmp_path / "eval.csv")
    assert (tmp_path / "scores.csv").read_text() == ",".join(SCORES_HEADER) + "\n"
    assert (tmp_path / "eval.csv").read_text() == ",".join(EVAL_HEADER) + "\n"
    assert load_scores_csv(tmp_path / "scores.csv") == []
    assert load_eval_csv(tmp_path / "eval.csv") == []


def test_csv_header_check(tmp_path):
    path = tmp_path / "odd.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(InputError):
        load_scores_csv(path)
    with pytest.raises(InputError):
        load_eval_csv(path)


def test_attacker_selection_counting():
    cfg = ExperimentConfig()
    records = sample_score_records()  # selected owners 0 (warm-up) and 3
    log = ExperimentLog(config=cfg, attacker_ids=[3], score_records=records)
    assert log.attacker_selections() == 1
    assert log.attacker_selections(include_warmup=False) == 1
    log_warm = ExperimentLog(config=cfg, attacker_ids=[0], score_records=records)
    assert log_warm.attacker_selections() == 1
    assert log_warm.attacker_selections(include_warmup=False) == 0


def tiny_run_config(**changes):
    cfg = ExperimentConfig(n_clients=4, rounds=2, classes=4, per_class_train=25,
                           per_class_test=10, image_dims=(4, 4), head_width=8,
                           backbone_hidden=8, backbone_layers=1, batch=16)
    return cfg.replace(**changes) if changes else cfg


def test_emit_logs_writes_consistent_files(tmp_path):
    log = run_experiment(tiny_run_config())
    summary = emit_logs(log, tmp_path / "out")
    for name in ("scores.csv", "eval.csv", "summary.json"):
        assert (tmp_path / "out" / name).exists()
    on_disk = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert on_disk["rounds_completed"] == 2
    assert on_disk["final"]["ma"] == summary["final"]["ma"]
    assert on_disk["config"] == tiny_run_config().to_dict()
    assert on_disk["defense"]["analyses"] == len(log.score_records)
    assert summarize(log)["attacker_ids"] == []


def test_repeated_runs_emit_identical_csv_bytes(tmp_path):
    emit_logs(run_experiment(tiny_run_config()), tmp_path / "a")
    emit_logs(run_experiment(tiny_run_config()), tmp_path / "b")
    for name in ("scores.csv", "eval.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()
