import json

import numpy as np
import pytest

from oracles import forward_loops, predicted_flops
from qrprune import zoo
from qrprune.analysis import (
    SWEEP_FIELDS,
    evaluate_topk,
    format_ratio,
    render_report,
    report,
    sensitivity_sweep,
)
from qrprune.inference import forward
from qrprune.model_graph import count_flops, rewrite_conv_pair
from qrprune.sampling import SampleConfig


def _labeled(graph, n, seed, n_classes):
    xs = zoo.random_inputs(graph, n, seed=seed)
    labels = np.random.default_rng(seed + 1).integers(0, n_classes, n)
    return list(zip(xs, labels.tolist()))


def test_topk_single_item():
    g = zoo.tiny_cnn()
    x = zoo.random_inputs(g, 1)[0]
    label = int(np.argmax(forward(g, x)))
    assert evaluate_topk(g, [(x, label)], 1) == 1.0
    assert evaluate_topk(g, [(x, (label + 1) % 5)], 1) == 0.0


def test_topk_all_classes():
    g = zoo.tiny_cnn()
    assert evaluate_topk(g, _labeled(g, 10, 0, 5), 5) == 1.0


def test_topk_empty():
    with pytest.raises(ValueError):
        evaluate_topk(zoo.tiny_cnn(), [], 1)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_topk_matches_recount(k):
    g = zoo.tiny_cnn(seed=5)
    data = _labeled(g, 100, 3, 5)
    hits = 0
    for x, label in data:
        logits = forward_loops(g, x)
        # label is in the top k iff fewer than k classes beat it
        # (a tie with a lower index also beats it)
        better = sum(1 for c, v in enumerate(logits)
                     if v > logits[label] or (v == logits[label] and c < label))
        hits += better < k
    assert evaluate_topk(g, data, k) == hits / 100


def test_topk_tie_breaks_to_lower_index():
    from qrprune.analysis import topk_hits

    assert topk_hits([1.0, 1.0, 0.0], 0, 1)
    assert not topk_hits([1.0, 1.0, 0.0], 1, 1)


def test_sweep_fraction_zero_is_baseline(planted_net):
    calib = zoo.random_inputs(planted_net, 6)
    evalset = _labeled(planted_net, 20, 4, 6)
    rep = sensitivity_sweep(planted_net, "conv2", [0.0], 2, calib, evalset, SampleConfig(0, 500))
    top1 = evaluate_topk(planted_net, evalset, 1)
    top5 = evaluate_topk(planted_net, evalset, 5)
    assert all(r.top1 == top1 and r.top5 == top5 and r.residual == 0.0 for r in rep.rows)
    assert all(r.flops == count_flops(planted_net).total for r in rep.rows)


def test_sweep_planted_redundancy_curve(planted_net):
    calib = zoo.random_inputs(planted_net, 8, seed=2)
    fractions = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875]
    rep = sensitivity_sweep(planted_net, "conv2", fractions, 5, calib, None, SampleConfig(10, 800))
    means = rep.mean_residuals()
    assert np.all(means[:4] <= 1e-5)
    assert np.all(means[4:] > 1e-3)
    assert np.all(np.diff(means) >= -1e-6)
    assert rep.seeds == [10, 11, 12, 13, 14]
    for row in rep.rows:
        assert row.residual <= row.zero_out_residual + 1e-12


def test_sweep_validates_fractions(planted_net):
    with pytest.raises(ValueError):
        sensitivity_sweep(planted_net, "conv2", [0.5, 0.25], 1, [], None, SampleConfig(0))
    with pytest.raises(ValueError):
        sensitivity_sweep(planted_net, "conv2", [1.0], 1, [], None, SampleConfig(0))


def test_sweep_csv_deterministic(planted_net):
    calib = zoo.random_inputs(planted_net, 4)
    evalset = _labeled(planted_net, 10, 1, 6)
    run = lambda: sensitivity_sweep(planted_net, "conv2", [0.25, 0.5], 2, calib, evalset,
                                    SampleConfig(3, 400))
    a, b = run(), run()
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    header = a.to_csv().splitlines()[0]
    assert header == ",".join(SWEEP_FIELDS)
    doc = json.loads(a.to_json())
    assert list(doc["rows"][0]) == SWEEP_FIELDS


def test_report_identity():
    g = zoo.tiny_cnn()
    rep = report(g, g, _labeled(g, 5, 0, 5))
    assert rep["flops_reduction"] == 1.0
    assert format_ratio(rep["flops_before"], rep["flops_after"]) == "1.00×"
    assert "1.00×" in render_report(rep)
    assert json.loads(render_report(rep, "json")) == json.loads(json.dumps(rep))
    assert render_report(rep, "csv").splitlines()[0].startswith("model_before,")


def test_report_half_channels_closed_form(planted_net):
    pruned = rewrite_conv_pair(planted_net, "conv2", np.arange(4), np.ones(4))
    rep = report(planted_net, pruned)
    expected = count_flops(planted_net).total / predicted_flops(planted_net, {"conv2": 4})
    assert rep["flops_reduction"] == pytest.approx(expected, rel=1e-15)
    assert rep["params_after"] < rep["params_before"]


def test_vgg16_table_ratio():
    before = count_flops(zoo.vgg16(init="zeros")).total
    assert format_ratio(before, 3_610_000_000) == "4.29×"
