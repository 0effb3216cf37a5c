import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from sensoradv.attacks import AttackResult
from sensoradv.autodiff import Dense, Network
from sensoradv.evaluation import (EnsembleSpec, attach_ensemble, emit_report, ensemble_error,
                                  ensemble_from_accuracy, ensemble_predict, ensemble_row, read_report_csv,
                                  read_report_json, report_markdown, transfer_matrix, weighted_vote)
from sensoradv.models import build

from helpers import random_vote_case, vote_oracle

# 1 - clean error of the four reference models
PAPER_WEIGHTS = (0.9175, 0.9180, 0.9555, 0.9420)


def test_vote_example_from_reference_weights():
    a, b = 0, 1
    votes = np.array([[a], [a], [b], [b]])
    assert weighted_vote(votes, PAPER_WEIGHTS, class_count=2).tolist() == [b]
    assert PAPER_WEIGHTS[2] + PAPER_WEIGHTS[3] == pytest.approx(1.8975)
    assert PAPER_WEIGHTS[0] + PAPER_WEIGHTS[1] == pytest.approx(1.8355)


def test_unanimous_vote_ignores_weights():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = int(rng.integers(4))
        assert weighted_vote(np.full((4, 1), c), rng.uniform(0.01, 1, 4), class_count=4)[0] == c


def test_vote_matches_enumeration_oracle():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        k, votes, weights, probs = random_vote_case(rng)
        got = weighted_vote(votes[:, None], weights, probs[:, None, :], class_count=k)[0]
        assert got == vote_oracle(votes.tolist(), weights, probs)


def test_vote_invariant_under_rescaling():
    rng = np.random.default_rng(1)
    votes = rng.integers(0, 5, size=(4, 500))
    weights = rng.uniform(0.1, 1, 4)
    probs = rng.dirichlet(np.ones(5), size=(4, 500))
    base = weighted_vote(votes, weights, probs, class_count=5)
    np.testing.assert_array_equal(weighted_vote(votes, 7 * weights, probs, class_count=5), base)


def test_ensemble_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec([object()], [0.0])
    with pytest.raises(ValueError):
        EnsembleSpec([object(), object()], [0.5])


def _linear(seed, k=3, d=5):
    layer = Dense(d, k)
    layer.params["W"][...] = np.random.default_rng(seed).normal(size=(d, k))
    return Network([layer], (d,))


def test_identical_members_match_single_model():
    model = _linear(0)
    spec = EnsembleSpec([model] * 4, [0.9, 0.8, 0.7, 0.6])
    x = np.random.default_rng(2).normal(size=(200, 5))
    np.testing.assert_array_equal(ensemble_predict(spec, x), np.argmax(model.logits(x), axis=1))
    assert isinstance(ensemble_predict(spec, x[0]), int)


def test_weights_are_clean_accuracy():
    members = [_linear(s) for s in range(4)]
    x = np.random.default_rng(3).normal(size=(60, 5))
    y = np.argmax(members[0].logits(x), axis=1)
    spec = ensemble_from_accuracy(members, x, y)
    assert spec.weights[0] == 1.0
    for m, w in zip(members, spec.weights):
        assert w == pytest.approx(np.mean(np.argmax(m.logits(x), axis=1) == y))


def _result(image, index, converged):
    return AttackResult("fgsm", image, index, 0, 0, 0, converged, 0.0, 0.0, 0)


def _toy_report():
    names = ["cnn4", "cnn6", "cnn9", "cnn12"]
    models = {n: build(n, 3, seed=i, input_shape=(36, 8)) for i, n in enumerate(names)}
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(12, 36, 8))
    y = np.arange(12) % 3
    outputs = {}
    for s in ("fgsm", "deepfool_l2", "jsma", "boundary"):
        for n in names:
            adv = np.clip(x + rng.normal(scale=0.3, size=x.shape), 0, 1)
            outputs[(s, n)] = [_result(adv[i], i, bool(i % 2)) for i in range(12)]
    report = transfer_matrix(models, outputs, x, y, indices=range(12), metadata={"seed": 7, "config_hash": "abc"})
    spec = ensemble_from_accuracy(list(models.values()), x, y)
    spec.weights = np.maximum(spec.weights, 0.01)
    attach_ensemble(report, ensemble_row(spec, outputs, x, y, indices=range(12)))
    return report, models, outputs, x, y


def test_transfer_matrix_layout_and_replay():
    report, models, outputs, x, y = _toy_report()
    assert report.cells.shape == (17, 4)
    assert report.rows[0] == (None, None)
    assert report.rows[1:5] == [("boundary", "cnn4"), ("deepfool_l2", "cnn4"), ("fgsm", "cnn4"), ("jsma", "cnn4")]
    assert [r[1] for r in report.rows[1::4]] == ["cnn4", "cnn6", "cnn9", "cnn12"]
    adv = np.stack([r.adversarial for r in outputs[("jsma", "cnn9")]])
    expected = np.mean(np.argmax(models["cnn6"].logits(adv), axis=1) != y)
    assert report.cell("jsma", "cnn9", "cnn6") == expected
    assert report.converged[("jsma", "cnn9")] == 0.5
    assert report.column_count == 5


def test_cell_is_zero_when_nothing_changes():
    model = _linear(0)
    x = np.random.default_rng(0).normal(size=(10, 5))
    y = np.argmax(model.logits(x), axis=1)
    outputs = {("fgsm", "m"): [_result(x[i], i, False) for i in range(10)]}
    report = transfer_matrix({"m": model}, outputs, x, y)
    assert report.cell("fgsm", "m", "m") == 0.0


def test_coverage_mismatch_rejected():
    model = _linear(0)
    x = np.zeros((4, 5))
    outputs = {("fgsm", "m"): [_result(x[i], i, False) for i in range(3)]}
    with pytest.raises(ValueError):
        transfer_matrix({"m": model}, outputs, x, np.zeros(4, dtype=int))
    shuffled = {("fgsm", "m"): [_result(x[i], i, False) for i in (1, 0, 2, 3)]}
    with pytest.raises(ValueError):
        transfer_matrix({"m": model}, shuffled, x, np.zeros(4, dtype=int), indices=range(4))


def test_markdown_has_seventeen_rows(tmp_path):
    report, *_ = _toy_report()
    text = report_markdown(report)
    body = [l for l in text.splitlines() if l.startswith("| ") and "Strategy" not in l]
    assert len(body) == 17
    assert body[0].startswith("| None |")
    assert "CNN Ensemble" in text.splitlines()[0]
    assert all(l.count("*") == 1 for l in body[1:])
    emit_report(report, tmp_path / "r.md")
    assert (tmp_path / "r.md").read_text() == text


def test_csv_round_trip(tmp_path):
    report, *_ = _toy_report()
    emit_report(report, tmp_path / "r.csv", "csv")
    cells = read_report_csv(tmp_path / "r.csv")
    for i, (s, src) in enumerate(report.rows):
        for j, t in enumerate(report.targets):
            assert cells[(s, src, t)] == report.cells[i, j]
        assert cells[(s, src, "ensemble")] == report.ensemble[i]


def test_json_matches_schema_and_round_trips(tmp_path):
    report, *_ = _toy_report()
    emit_report(report, tmp_path / "r.json", "json")
    data = json.loads((tmp_path / "r.json").read_text())
    schema = json.loads(resources.files("sensoradv").joinpath("report_schema.json").read_text())
    jsonschema.validate(data, schema)
    assert data["metadata"]["config_hash"] == "abc" and data["metadata"]["seed"] == 7
    back = read_report_json(tmp_path / "r.json")
    np.testing.assert_array_equal(back.cells, report.cells)
    np.testing.assert_array_equal(back.ensemble, report.ensemble)
    assert back.rows == report.rows


def test_unknown_format():
    report, *_ = _toy_report()
    with pytest.raises(ValueError):
        emit_report(report, "/dev/null", "xlsx")


def test_ensemble_error_requires_samples():
    spec = EnsembleSpec([_linear(0)], [1.0])
    with pytest.raises(ValueError):
        ensemble_error(spec, np.zeros((0, 5)), [])
