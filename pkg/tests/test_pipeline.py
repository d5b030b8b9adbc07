import dataclasses
import json

import jsonschema
import numpy as np
import pytest

from tinydrop.data import make_toy_dataset
from tinydrop.dropper import select_tokens
from tinydrop.model import ViTConfig, ViTModel, init_weights
from tinydrop.pipeline import SampleError, _SampleState, evaluate, infer_one, sweep
from tinydrop.policy import PolicyParams, decide
from tinydrop.reports import SAMPLE_SCHEMA, SUMMARY_COLUMNS, samples_jsonl, summary_csv
from tinydrop.tensor import softmax

GCFG = ViTConfig(dim=8, depth=1, heads=2, num_classes=8, readout="mean")
TCFG = ViTConfig(dim=16, depth=2, heads=2, num_classes=8)


@pytest.fixture(scope="module")
def models():
    return ViTModel(GCFG, init_weights(GCFG, 1)), ViTModel(TCFG, init_weights(TCFG, 2))


@pytest.fixture(scope="module")
def data():
    return make_toy_dataset(24, 9)


def confident(model, cls=3, margin=50.0):
    w = model.weights
    head_b = np.zeros_like(w.head_b)
    head_b[cls] = margin
    return ViTModel(model.cfg, dataclasses.replace(w, head_b=head_b))


def test_exit_path(models, data):
    g, t = models
    r = infer_one(data.images[0], 5, confident(g), t, PolicyParams(0.9))
    assert r.exited_early and r.prediction == 3 and r.correct is False
    assert r.keep_indices is None and r.kept_tokens == 16
    assert r.flops.target_forward == 0 and r.flops.token_count_used == 0


def test_proceed_path_matches_manual(models, data):
    g, t = models
    params = PolicyParams(0.999, 0.5, 0.7)
    img = data.images[1]
    r = infer_one(img, None, g, t, params)
    probs = softmax(g.forward_full(img).logits)
    d = decide(probs, params, 16)
    assert not r.exited_early and r.kept_tokens == d.kept_count
    state = _SampleState(0, img, None, g, t)
    sel = select_tokens(state.saliency, d.kept_count)
    assert r.keep_indices == sel.keep_indices
    np.testing.assert_array_equal(r.logits, t.forward_selected(img, sel).logits)
    assert "label" not in r.to_json_dict()


def test_sweep_equals_individual_evaluations(models, data):
    g, t = models
    rows = sweep(data, g, t, [0.3, 0.999], [0.25, 1.0])
    assert [(r.tau, r.gamma) for r in rows] == [(0.3, 0.25), (0.3, 1.0), (0.999, 0.25), (0.999, 1.0)]
    for row in rows:
        single, _ = evaluate(data, g, t, PolicyParams(row.tau, row.gamma, 0.7))
        assert single == row


def test_workers_do_not_change_results(models, data):
    g, t = models
    params = PolicyParams(0.2, 0.5, 0.7)
    a = evaluate(data, g, t, params, workers=1)
    b = evaluate(data, g, t, params, workers=4)
    assert a[0] == b[0]
    assert samples_jsonl(a[1]) == samples_jsonl(b[1])


def test_unlabelled_summary(models, data):
    g, t = models
    unl = dataclasses.replace(data, labels=np.full(len(data), -1))
    summary, records = evaluate(unl, g, t, PolicyParams(0.5))
    assert summary.accuracy is None
    line = summary_csv([summary]).splitlines()[1]
    assert line.split(",")[3] == ""
    assert all("correct" not in r.to_json_dict() for r in records)


def test_report_schema(models, data):
    g, t = models
    _, records = evaluate(data, g, t, PolicyParams(0.2))
    lines = samples_jsonl(records).splitlines()
    assert len(lines) == len(data)
    for line in lines:
        jsonschema.validate(json.loads(line), SAMPLE_SCHEMA)
    header = summary_csv([]).splitlines()[0]
    assert header.split(",") == SUMMARY_COLUMNS


def test_bad_sample_reports_index(models):
    g, t = models
    bad = make_toy_dataset(3, 0, image_size=32)
    with pytest.raises(SampleError) as e:
        evaluate(bad, g, t, PolicyParams(0.5))
    assert e.value.index == 0
