import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurorrm.configspace import ConfigSpace, PayloadConfig, feasible_space
from neurorrm.linkbudget import build_capacity_table, default_beams
from neurorrm.oracle import (
    ObjectiveWeights, build_dataset, load_dataset, objective, relabel, sample_seed,
    save_dataset, solve_exhaustive, solve_many, split_indices,
)
from neurorrm.traffic import Hotspot, TrafficModel

TABLE = build_capacity_table()
W = ObjectiveWeights()


def brute_force(demand, table, p_max, beta):
    """Independent exhaustive search: plain tuples, dB-to-watt by hand.

    Same tie rule as the solver: scores within 1e-9 (relative) of the best
    are ties, then lowest power, then lowest bandwidth, then first in
    lexicographic order.
    """
    b0, b1, b2 = beta
    rows = [(r.capacity_bps, 10 ** (r.power_dbw / 10), r.bandwidth_hz) for r in table]
    results = []
    for idx in itertools.product(range(len(rows)), repeat=len(demand)):
        p = sum(rows[i][1] for i in idx)
        if p > p_max:
            continue
        w = sum(rows[i][2] for i in idx)
        s = b0 * sum(abs(rows[i][0] - d) for i, d in zip(idx, demand)) + b1 * p + b2 * w
        results.append((s, p, w, idx))
    lo = min(r[0] for r in results)
    ties = [r for r in results if r[0] <= lo + 1e-9 * max(abs(lo), 1.0)]
    best = min(ties, key=lambda r: (r[1], r[2], r[3]))
    return best[3], best[0]


def test_objective_single_beam_arithmetic():
    cfg = PayloadConfig.from_indices([TABLE.index_of(250e6, 10.0)], TABLE)
    w = ObjectiveWeights(beta0=1e-6, beta1=0.0, beta2=0.0)   # 1 per Mbps
    assert objective(cfg, [400e6], w) == pytest.approx(71.6312, rel=1e-9)


def test_objective_rejects_shape_mismatch():
    cfg = PayloadConfig.from_indices([0, 1], TABLE)
    with pytest.raises(ValueError):
        objective(cfg, [1.0], W)


def test_weights_validation():
    with pytest.raises(ValueError):
        ObjectiveWeights(beta0=0.0)
    with pytest.raises(ValueError):
        ObjectiveWeights(beta1=-1.0)


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force_three_beams(seed):
    rng = np.random.default_rng(seed)
    demand = rng.uniform(0, 1.2e9, 3)
    p_max = float(rng.choice([40.0, 55.0, math.inf]))
    space = feasible_space(3, TABLE, p_max)
    cfg, score = solve_exhaustive(demand, space, W)
    idx, want = brute_force(demand, TABLE, p_max, (W.beta0, W.beta1, W.beta2))
    assert cfg.indices == idx
    assert score == pytest.approx(want, rel=1e-12)


def test_zero_demand_minimiser_is_global():
    space = feasible_space(3, TABLE, math.inf)
    cfg, score = solve_exhaustive(np.zeros(3), space, W)
    every = [objective(space.config(k), np.zeros(3), W) for k in range(len(space))]
    assert score == pytest.approx(min(every))
    assert cfg.indices == (0, 0, 0)    # 250 MHz at 10 dBW: least capacity, power, bandwidth


@given(st.lists(st.floats(0, 1.5e9), min_size=3, max_size=3))
@settings(max_examples=25, deadline=None)
def test_solution_is_global_minimum(demand):
    space = feasible_space(3, TABLE, 50.0)
    cfg, score = solve_exhaustive(demand, space, W)
    scores = [objective(space.config(k), demand, W) for k in range(len(space))]
    assert score <= min(scores) * (1 + 1e-9) + 1e-12
    assert score == pytest.approx(objective(cfg, demand, W), rel=1e-12)


@given(st.lists(st.floats(1e8, 1.2e9), min_size=3, max_size=3), st.floats(0.1, 100.0))
@settings(max_examples=25, deadline=None)
def test_argmin_invariant_to_common_scaling(demand, c):
    space = feasible_space(3, TABLE, 50.0)
    scaled = ObjectiveWeights(W.beta0 * c, W.beta1 * c, W.beta2 * c)
    assert solve_exhaustive(demand, space, W)[0] == solve_exhaustive(demand, space, scaled)[0]


def test_solve_many_matches_single():
    space = feasible_space(3, TABLE, 50.0)
    dem = np.random.default_rng(0).uniform(0, 1e9, (6, 3))
    k, s = solve_many(dem, space, W)
    for i in range(6):
        cfg, sc = solve_exhaustive(dem[i], space, W)
        assert space.config(int(k[i])) == cfg and s[i] == sc


def test_solver_input_errors():
    space = feasible_space(3, TABLE, 50.0)
    with pytest.raises(ValueError):
        solve_exhaustive(np.zeros(2), space, W)
    empty = ConfigSpace.from_indices(np.zeros((0, 3), dtype=int), TABLE)
    with pytest.raises(ValueError):
        solve_exhaustive(np.zeros(3), empty, W)


def test_split_indices_properties():
    tr, va = split_indices(101, seed=3)
    assert len(tr) == round(0.8 * 101)
    assert set(tr).isdisjoint(va) and set(tr) | set(va) == set(range(101))
    assert np.array_equal(split_indices(101, 3)[0], tr)
    assert sample_seed(7, 5) == 7 ^ 5


def _tiny_model():
    day = tuple(0.2 + 0.8 * math.sin(math.pi * h / 24) ** 2 for h in range(24))
    spots = tuple(Hotspot(b.center_lat, b.center_lon, 300.0 + 60 * b.id, 1.5)
                  for b in default_beams())
    return TrafficModel(hotspots=spots, diurnal_population=day, shape=(36, 64),
                        amplitude_jitter=0.1)


@pytest.fixture(scope="module")
def tiny_dataset():
    return build_dataset(_tiny_model(), 120, seed=11, min_support=0.05)


def test_dataset_invariants(tiny_dataset):
    ds = tiny_dataset
    assert len(ds) == 120
    assert ds.labels.min() >= 0 and ds.labels.max() < ds.n_classes
    assert len(ds.train_idx) == 96
    for cfg in ds.catalog.classes:
        assert cfg.total_power <= ds.p_max and cfg.total_bandwidth <= ds.w_max
    # restricted labels can only be worse than the unrestricted optimum
    assert np.all(ds.label_scores >= ds.full_scores - 1e-9 * np.abs(ds.full_scores))
    for i in range(0, 120, 13):
        assert ds.label_scores[i] == pytest.approx(
            objective(ds.catalog.classes[ds.labels[i]], ds.demands[i], ds.weights), rel=1e-12)


def test_dataset_round_trip(tiny_dataset, tmp_path):
    save_dataset(tiny_dataset, tmp_path, 0.05)
    back = load_dataset(tmp_path)
    assert np.array_equal(back.labels, tiny_dataset.labels)
    assert np.array_equal(back.demands, tiny_dataset.demands)
    assert np.array_equal(back.val_idx, tiny_dataset.val_idx)
    assert back.catalog.classes == tiny_dataset.catalog.classes
    assert np.array_equal(back.grid(5).values, tiny_dataset.grid(5).values)


def test_dataset_is_deterministic(tiny_dataset):
    again = build_dataset(_tiny_model(), 120, seed=11, min_support=0.05)
    assert np.array_equal(again.labels, tiny_dataset.labels)
    assert np.array_equal(again.demands, tiny_dataset.demands)


def test_relabel_with_tighter_cap(tiny_dataset):
    tight = relabel(tiny_dataset, p_max=90.0, min_support=0.05)
    for cfg in tight.catalog.classes:
        assert cfg.total_power <= 90.0
    # a smaller feasible set cannot lower the optimum
    assert np.all(tight.full_scores >= tiny_dataset.full_scores * (1 - 1e-12))
