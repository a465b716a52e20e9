import json
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurorrm.configspace import (
    ClassCatalog, ConfigSpace, EmptyCatalogError, PayloadConfig, default_w_max,
    enumerate_configs, feasible_count, feasible_space, is_feasible, load_catalog,
    reduce_classes, save_catalog,
)
from neurorrm.linkbudget import build_capacity_table

TABLE = build_capacity_table()


def dp_feasible_count(B, table, p_max, w_max=math.inf):
    """Dynamic programme over beams.

    State = how many beams use each distinct power level and each distinct
    bandwidth; value = number of ordered configurations reaching it. Sums
    are evaluated once per final state, so no running float totals.
    """
    powers = sorted({r.power_dbw for r in table})
    bws = sorted({r.bandwidth_hz for r in table})
    opts = [(powers.index(r.power_dbw), bws.index(r.bandwidth_hz)) for r in table]
    states = {((0,) * len(powers), (0,) * len(bws)): 1}
    for _ in range(B):
        nxt = defaultdict(int)
        for (pc, wc), ways in states.items():
            for pi, wi in opts:
                p2 = list(pc); p2[pi] += 1
                w2 = list(wc); w2[wi] += 1
                nxt[(tuple(p2), tuple(w2))] += ways
        states = nxt
    total = 0
    for (pc, wc), ways in states.items():
        p_tot = sum(n * 10 ** (p / 10) for n, p in zip(pc, powers))
        w_tot = sum(n * w for n, w in zip(wc, bws))
        if p_tot <= p_max and w_tot <= w_max:
            total += ways
    return total


def test_enumeration_count_small():
    assert sum(1 for _ in enumerate_configs(3, TABLE)) == 6 ** 3
    first = next(enumerate_configs(3, TABLE))
    assert first.indices == (0, 0, 0)


def test_full_space_size_eight_beams():
    assert feasible_count(8, TABLE, p_max=math.inf, w_max=math.inf) == 6 ** 8 == 1_679_616


@pytest.mark.parametrize("B,p_max", [(3, 40.0), (4, 60.0), (5, 80.0), (8, 115.0), (8, 100.0)])
def test_feasible_count_matches_dp(B, p_max):
    assert feasible_count(B, TABLE, p_max) == dp_feasible_count(B, TABLE, p_max)


def test_feasible_count_with_binding_bandwidth():
    assert feasible_count(6, TABLE, 115.0, 2.0e9) == dp_feasible_count(6, TABLE, 115.0, 2.0e9)


def test_feasible_count_115w_value():
    # frozen from the DP oracle
    assert dp_feasible_count(8, TABLE, 115.0) == 194_304
    assert feasible_count(8, TABLE, 115.0) == 194_304


def test_feasible_space_consistent_with_predicate():
    space = feasible_space(4, TABLE, 60.0)
    assert len(space) == feasible_count(4, TABLE, 60.0)
    flags = [is_feasible(c, 60.0, default_w_max(4, TABLE)) for c in enumerate_configs(4, TABLE)]
    assert len(space) == sum(flags)
    for k in range(0, len(space), 37):
        cfg = space.config(k)
        assert is_feasible(cfg, 60.0, 4 * 500e6)
        assert space.total_power[k] == cfg.total_power
        assert space.total_bandwidth[k] == cfg.total_bandwidth
    assert np.all(np.diff(space.rank) > 0)


def test_is_feasible_examples():
    all14 = PayloadConfig.from_indices([TABLE.index_of(250e6, 14.0)] * 8, TABLE)
    assert all14.total_power == pytest.approx(200.95, abs=0.01)
    assert not is_feasible(all14, 115.0, math.inf)
    all10 = PayloadConfig.from_indices([TABLE.index_of(250e6, 10.0)] * 8, TABLE)
    assert all10.total_power == pytest.approx(80.0)
    assert all10.total_bandwidth == 2e9
    assert is_feasible(all10, 115.0, 4e9)


def test_default_w_max_non_binding():
    assert default_w_max(8, TABLE) == 4e9


@given(st.lists(st.integers(0, 5), min_size=1, max_size=8))
def test_config_totals(idx):
    cfg = PayloadConfig.from_indices(idx, TABLE)
    assert cfg.total_power == pytest.approx(sum(10 ** (TABLE[i].power_dbw / 10) for i in idx))
    assert cfg.total_bandwidth == sum(TABLE[i].bandwidth_hz for i in idx)
    assert len(cfg) == len(idx)


@given(st.integers(1, 4), st.floats(5.0, 120.0))
@settings(max_examples=30, deadline=None)
def test_infinite_caps_give_full_space_and_caps_shrink(B, p_max):
    assert feasible_count(B, TABLE, math.inf, math.inf) == 6 ** B
    assert feasible_count(B, TABLE, p_max) <= 6 ** B


def _cfgs(*idx_lists):
    return [PayloadConfig.from_indices(i, TABLE) for i in idx_lists]


def test_reduce_classes_support_and_order():
    a, b, c = _cfgs([0, 0], [1, 0], [0, 1])
    labels = [b] * 50 + [a] * 50 + [c] * 3
    cat = reduce_classes(labels, min_support=0.05)
    assert cat.classes == [a, b]          # ties in support break by enumeration order
    assert cat.support == [50, 50]
    assert reduce_classes(list(reversed(labels)), 0.05).classes == cat.classes
    with pytest.raises(EmptyCatalogError):
        reduce_classes(labels, min_support=0.9)


def test_catalog_round_trip(tmp_path):
    cfgs = _cfgs([0, 1, 2], [3, 4, 5])
    cat = ClassCatalog(cfgs, [7, 3])
    save_catalog(cat, tmp_path, {"p_max_w": 115.0}, 0.005)
    back = load_catalog(tmp_path, TABLE)
    assert back.classes == cat.classes and back.support == cat.support
    assert json.loads((tmp_path / "catalog.json").read_text())["indices"] == [[0, 1, 2], [3, 4, 5]]
    caps = back.capacities()
    assert caps.shape == (2, 3)
    assert caps[0, 0] == TABLE[0].capacity_bps


def test_config_space_from_configs_sorts():
    cfgs = _cfgs([2, 2], [0, 1], [1, 0])
    space = ConfigSpace.from_configs(cfgs, TABLE)
    assert [tuple(r) for r in space.indices] == [(0, 1), (1, 0), (2, 2)]
    assert space.n_beams == 2
