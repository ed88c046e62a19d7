import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import one_bad_candidate_case
from rramft.ftol import (ConfigError, FtConfig, FtNetworkLayer, build_ft_layer, duplicate_msb,
                         identity, infer_layer_ft, infer_network_ft, msb_candidates, relu,
                         vote_median)
from rramft.quant import quantize, reconstruct
from rramft.xbar import FaultMap, FaultModel, inject_layer, layer_matvec, map_layer


def test_vote_median_examples():
    assert vote_median([np.array([5.0]), np.array([5.0]), np.array([99.0])])[0] == 5
    assert vote_median([np.array([3.0]), np.array([7.0]), np.array([5.0])])[0] == 5
    c = np.array([1.5, -2.0])
    np.testing.assert_array_equal(vote_median([c, c, c]), c)
    with pytest.raises(ValueError):
        vote_median([])
    with pytest.raises(ValueError):
        vote_median([c, c])


def test_config_validation():
    with pytest.raises(ConfigError):
        FtConfig(candidates=2)
    with pytest.raises(ConfigError):
        FtConfig(candidates=0)
    with pytest.raises(ConfigError):
        FtConfig(flip="sometimes")


def test_single_candidate_is_plain_matvec():
    rng = np.random.default_rng(0)
    ql = quantize(rng.normal(size=(10, 6)), 8)
    cfg = FtConfig(1, "msb_only", FaultModel(0.05, seed=3))
    ft = build_ft_layer(ql, cfg, (4,))
    assert ft.candidates == 1 and ft.duplicates == []
    x = rng.normal(size=10)
    # the same faults via the plain crossbar path
    plain = inject_layer(map_layer(ql, "msb_only"), cfg.fault, (4,))
    np.testing.assert_array_equal(infer_layer_ft(ft, x), layer_matvec(plain, x))


def test_rate_zero_copies_identical():
    rng = np.random.default_rng(1)
    ql = quantize(rng.normal(size=(8, 5)), 8)
    ft = build_ft_layer(ql, FtConfig(3, "msb_only", FaultModel(0.0)))
    planes = ft.msb_planes
    assert len(planes) == 3
    for p in planes[1:]:
        np.testing.assert_array_equal(p.effective()[0], planes[0].effective()[0])
        np.testing.assert_array_equal(p.effective()[1], planes[0].effective()[1])
    x = rng.normal(size=8)
    np.testing.assert_array_equal(infer_layer_ft(ft, x), layer_matvec(map_layer(ql), x))


def test_copies_get_distinct_streams():
    rng = np.random.default_rng(2)
    ql = quantize(rng.normal(size=(64, 64)), 8)
    ft = build_ft_layer(ql, FtConfig(3, "msb_only", FaultModel(0.001, seed=0)), (0, 0))
    maps = [tuple(p.pos_faults.cells()) for p in ft.msb_planes]
    assert len(set(maps)) == 3


def test_base_faults_do_not_depend_on_candidates():
    rng = np.random.default_rng(5)
    ql = quantize(rng.normal(size=(20, 20)), 8)
    m = FaultModel(0.02, seed=1)
    one = build_ft_layer(ql, FtConfig(1, "msb_only", m), (2,))
    three = build_ft_layer(ql, FtConfig(3, "msb_only", m), (2,))
    for a, b in zip(one.base.planes, three.base.planes):
        assert a.pos_faults.cells() == b.pos_faults.cells()


def test_one_corrupt_candidate_is_outvoted():
    rng = np.random.default_rng(3)
    for _ in range(50):
        ft, clean = one_bad_candidate_case(rng)
        x = rng.normal(size=clean.shape[0])
        np.testing.assert_array_equal(infer_layer_ft(ft, x), layer_matvec(clean, x))


def test_identical_corruption_passes_through():
    rng = np.random.default_rng(4)
    ql = quantize(rng.normal(size=(6, 4)), 8)
    ft = duplicate_msb(map_layer(ql), FtConfig(3, "msb_only", FaultModel(0.0)))
    bad = FaultMap.from_cells((6, 4), [(0, 1, 0), (2, 1, 0)])
    msb = [p.with_faults(bad, p.neg_faults) for p in ft.msb_planes]
    corrupted = type(ft)(type(ft.base)(ft.base.q, [msb[0], *ft.base.planes[1:]]), msb[1:])
    x = rng.normal(size=6)
    single = type(ft)(corrupted.base, [])
    np.testing.assert_array_equal(infer_layer_ft(corrupted, x), infer_layer_ft(single, x))
    assert infer_layer_ft(corrupted, x)[1] != layer_matvec(map_layer(ql), x)[1]


def test_lsb_fault_not_mitigated_but_bounded():
    rng = np.random.default_rng(6)
    ql = quantize(rng.normal(size=(9, 5)), 8)
    ft = build_ft_layer(ql, FtConfig(3, "msb_only", FaultModel(0.0)))
    p = 5
    plane = ft.base.planes[p]
    stored = int(plane.pos[3, 2])
    hit = plane.with_faults(FaultMap.from_cells(plane.shape, [(3, 2, 1 - stored)]), plane.neg_faults)
    planes = list(ft.base.planes)
    planes[p] = hit
    faulty = type(ft)(type(ft.base)(ft.base.q, planes), ft.duplicates)
    x = rng.normal(size=9)
    diff = infer_layer_ft(faulty, x) - infer_layer_ft(ft, x)
    assert diff[2] != 0
    assert np.abs(diff).max() <= ql.q * 2 ** plane.power * np.abs(x).max() + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3, 5]))
def test_median_within_candidate_range(seed, T):
    rng = np.random.default_rng(seed)
    ql = quantize(rng.normal(size=(10, 7)), 6)
    ft = build_ft_layer(ql, FtConfig(T, "msb_only", FaultModel(0.2, seed=seed)))
    x = rng.normal(size=10)
    cands = np.stack(msb_candidates(ft, x))
    voted = vote_median(list(cands))
    assert (voted >= cands.min(0)).all() and (voted <= cands.max(0)).all()


def test_pruned_columns_zeroed():
    rng = np.random.default_rng(7)
    W = rng.normal(size=(8, 6))
    W[:, [1, 4]] = 0
    ql = quantize(W, 8)
    ft = build_ft_layer(ql, FtConfig(3, "msb_only", FaultModel(0.3, seed=2)), pruned=[1, 4])
    out = infer_layer_ft(ft, rng.normal(size=(5, 8)))
    assert not out[:, [1, 4]].any()


def test_network_rate_zero_matches_dense():
    rng = np.random.default_rng(8)
    sizes = [10, 16, 12, 3]
    qls = [quantize(rng.normal(size=(a, b)), 8) for a, b in zip(sizes, sizes[1:])]
    bs = [rng.normal(size=b) for b in sizes[1:]]
    acts = [relu, relu, identity]
    cfg = FtConfig(3, "msb_only", FaultModel(0.0))
    layers = [FtNetworkLayer(build_ft_layer(q, cfg), b, a) for q, b, a in zip(qls, bs, acts)]
    x = rng.normal(size=(20, 10))
    h = x
    for q, b, a in zip(qls, bs, acts):
        h = a(h @ reconstruct(q) + b)
    assert np.max(np.abs(infer_network_ft(layers, x) - h)) < 1e-6
    single = [FtNetworkLayer(layers[0].layer, bs[0], relu)]
    np.testing.assert_array_equal(infer_network_ft(single, x),
                                  relu(infer_layer_ft(layers[0].layer, x) + bs[0]))
