import math
import statistics

import numpy as np
import pytest

from rramft.config import RunConfig, SweepSection, parse_config
from rramft.data import gaussian_clusters
from rramft.prune import PruneConfig, train_prune
from rramft.sweep import (CSV_HEADER, QuantizedNetwork, SweepRow, build_network, clean_accuracy,
                          mean_var, method_config, monte_carlo, rows_to_csv, run_sweep,
                          summary_to_csv, sweep_summary, tolerated_rate, trial_accuracy)


@pytest.fixture(scope="module")
def toy():
    data = gaussian_clusters(dim=16, clusters_per_class=2, n_train=600, n_test=400, seed=2)
    cfg = PruneConfig(mu=0.5, epochs_joint=30, epochs_finetune=3, hidden=(24, 24),
                      stop_sparsity=0.3, seed=2)
    net, report = train_prune(cfg, data)
    assert min(report.sparsity[:2]) >= 0.3
    return QuantizedNetwork.from_gated(net, 8), data


def test_quantized_network_records_pruning(toy):
    qnet, _ = toy
    assert len(qnet.pruned[0]) > 0 and qnet.pruned[-1] == ()
    for ql, idx in zip(qnet.layers, qnet.pruned):
        if idx:
            assert not ql.planes[:, :, list(idx)].any()


@pytest.mark.parametrize("method", ["no_voting", "voting", "voting_embedded"])
def test_rate_zero_is_clean(toy, method):
    qnet, data = toy
    mean, var = monte_carlo(qnet, data, 0.0, method, 3, 0)
    assert mean == pytest.approx(clean_accuracy(qnet, data), abs=1e-9)
    assert var == 0.0


def test_single_trial_has_zero_variance(toy):
    qnet, data = toy
    assert monte_carlo(qnet, data, 0.002, "no_voting", 1, 0)[1] == 0.0


def test_determinism_and_order_independence(toy):
    qnet, data = toy
    a = monte_carlo(qnet, data, 0.001, "voting", 6, 4)
    b = monte_carlo(qnet, data, 0.001, "voting", 6, 4)
    c = monte_carlo(qnet, data, 0.001, "voting", 6, 4, order=[5, 3, 1, 0, 2, 4])
    assert a == b == c


def test_trials_are_functions_of_seed_and_index(toy):
    qnet, data = toy
    ftcfg = method_config("no_voting", RunConfig(), 0.003, 9)
    first = [trial_accuracy(qnet, data, "no_voting", ftcfg, t) for t in range(4)]
    again = [trial_accuracy(qnet, data, "no_voting", ftcfg, t) for t in (3, 2, 1, 0)][::-1]
    assert first == again
    other_seed = method_config("no_voting", RunConfig(), 0.003, 10)
    layers_a = build_network(qnet, "no_voting", ftcfg, 0)
    layers_b = build_network(qnet, "no_voting", other_seed, 0)
    fa = layers_a[0].layer.base.planes[0].pos_faults.cells()
    fb = layers_b[0].layer.base.planes[0].pos_faults.cells()
    assert fa != fb


def test_methods_build_expected_layers(toy):
    qnet, _ = toy
    cfg = RunConfig()
    nv = build_network(qnet, "no_voting", method_config("no_voting", cfg, 0.001, 0), 0)
    assert all(l.layer.candidates == 1 for l in nv)
    assert not any(p.flipped for p in nv[0].layer.base.planes)
    v = build_network(qnet, "voting", method_config("voting", cfg, 0.001, 0), 0)
    assert all(l.layer.candidates == 3 for l in v)
    emb = build_network(qnet, "voting_embedded", method_config("voting_embedded", cfg, 0.001, 0), 0)
    assert type(emb[0].layer).__name__ == "EmbeddedLayer"
    assert type(emb[-1].layer).__name__ == "FtLayer"     # output layer has nothing pruned
    with pytest.raises(ValueError):
        method_config("majority", cfg, 0.001, 0)


def test_degradation_with_rate(toy):
    qnet, data = toy
    low = monte_carlo(qnet, data, 0.0001, "no_voting", 30, 0)[0]
    high = monte_carlo(qnet, data, 0.002, "no_voting", 30, 0)[0]
    assert high <= low


def test_sweep_rows_and_csv(toy):
    qnet, data = toy
    cfg = parse_config("sweep.trials = 2")
    rows = run_sweep(qnet, data, cfg)
    assert len(rows) == 18
    text = rows_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER == "rate,method,acc_mean,acc_var,trials,seed"
    assert lines[1].startswith("0.000100,no_voting,")
    assert lines[-1].startswith("0.002000,voting,")
    for ln in lines[1:]:
        f = ln.split(",")
        assert len(f) == 6 and len(f[2].split(".")[1]) == 6 and float(f[3]) >= 0
    assert rows_to_csv(run_sweep(qnet, data, cfg)) == text


def test_mean_var_unbiased():
    vals = [81.0, 83.5, 80.25, 84.0]
    m, v = mean_var(vals)
    assert m == pytest.approx(statistics.mean(vals))
    assert v == pytest.approx(statistics.variance(vals))
    assert mean_var([5.0]) == (5.0, 0.0)


def test_tolerance_summary():
    def row(rate, method, acc):
        return SweepRow(rate, method, acc, 0.0, 30, 0)
    rows = [row(0.001, "no_voting", 85), row(0.002, "no_voting", 70), row(0.003, "no_voting", 60),
            row(0.001, "voting", 89), row(0.002, "voting", 85), row(0.003, "voting", 81)]
    assert tolerated_rate(rows, "no_voting", 90, 10) == 0.001
    assert tolerated_rate(rows, "voting", 90, 10) == 0.003
    summary = sweep_summary(rows, 90.0, SweepSection(rates=(0.001, 0.002, 0.003)))
    assert summary["tolerance_ratio"] == pytest.approx(3.0)
    text = summary_to_csv(summary)
    assert text.splitlines()[0] == "metric,value"
    assert "tolerance_ratio,3.000000" in text
    worst = [row(0.001, "no_voting", 50), row(0.001, "voting", 85)]
    s = sweep_summary(worst, 90.0, SweepSection(rates=(0.001,)))
    assert math.isinf(s["tolerance_ratio"])
    assert "tolerance_ratio,inf" in summary_to_csv(s)


def test_bad_trials(toy):
    qnet, data = toy
    with pytest.raises(ValueError):
        monte_carlo(qnet, data, 0.001, "voting", 0, 0)
