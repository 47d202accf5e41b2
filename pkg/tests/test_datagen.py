"""Generators: toy task invariants, asynchronize partition, missingness count."""

import numpy as np
import pytest

from dcsf.datagen import (RegularSeries, ToyConfig, asynchronize,
                          asynchronize_table, induce_missing,
                          induce_missing_table, load_regular_table,
                          make_toy_dataset, make_toy_instance,
                          save_regular_table)


def test_toy_instance_has_both_spikes():
    config = ToyConfig(T=20, n=1, sparsity=0.5, seed=0)
    rng = np.random.default_rng(0)
    for positive in (True, False):
        for _ in range(50):
            inst = make_toy_instance(positive, config, rng)
            assert sorted(inst.channel_ids()) == [1, 2]
            for ch in inst.channels:
                assert np.count_nonzero(ch.values == 1.0) == 1
                assert np.all((ch.values == 0.0) | (ch.values == 1.0))
                assert np.all(ch.times == np.sort(ch.times))
                assert np.all((ch.times >= 0) & (ch.times <= config.T))


def test_toy_label_marks_coincident_spikes():
    config = ToyConfig(T=20, n=1, sparsity=0.0, seed=0)
    rng = np.random.default_rng(1)
    for _ in range(100):
        positive = bool(rng.integers(2))
        inst = make_toy_instance(positive, config, rng)
        spike_time = {ch.channel_id: ch.times[np.argmax(ch.values)]
                      for ch in inst.channels}
        assert inst.label == int(positive)
        if positive:
            assert spike_time[1] == spike_time[2]
        else:
            assert spike_time[1] != spike_time[2]


def test_toy_sparsity_removes_only_zeros():
    config = ToyConfig(T=20, n=1, sparsity=0.9, seed=0)
    rng = np.random.default_rng(2)
    inst = make_toy_instance(True, config, rng)
    kept = config.T - int(config.sparsity * config.T)
    for ch in inst.channels:
        assert len(ch.values) == kept
        assert np.count_nonzero(ch.values == 1.0) == 1  # spike survives


def test_toy_dataset_balanced_and_sized():
    ds = make_toy_dataset(ToyConfig(T=20, n=100, sparsity=0.5, seed=3))
    assert len(ds.instances) == 100
    labels = ds.labels()
    assert abs(int(labels.sum()) - 50) <= 1
    assert ds.D == 2 and ds.L == 2


def test_toy_dataset_deterministic_and_parallel_identical():
    config = ToyConfig(T=20, n=40, sparsity=0.3, seed=4)
    a = make_toy_dataset(config)
    b = make_toy_dataset(config)
    c = make_toy_dataset(config, jobs=2)
    for x, y in ((a, b), (a, c)):
        for ia, ib in zip(x.instances, y.instances):
            assert ia.label == ib.label and ia.channels == ib.channels


def _table(rng, n=10, D=3, L=8):
    return [RegularSeries(values=rng.standard_normal((D, L)), label=int(i % 2))
            for i in range(n)]


def test_asynchronize_partitions_time_steps():
    rng = np.random.default_rng(5)
    series = _table(rng, n=1)[0]
    inst = asynchronize(series, np.random.default_rng(6))
    D, L = series.values.shape
    seen = np.zeros(L, dtype=int)
    for ch in inst.channels:
        for t, v in zip(ch.times, ch.values):
            step = int(t)
            assert v == series.values[ch.channel_id - 1, step]
            seen[step] += 1
    np.testing.assert_array_equal(seen, 1)  # exactly one channel per step


def test_induce_missing_exact_count():
    rng = np.random.default_rng(7)
    series = _table(rng, n=1, D=2, L=10)[0]
    inst = induce_missing(series, 0.5, np.random.default_rng(8))
    total = sum(len(ch.values) for ch in inst.channels)
    assert total == 2 * 10 - int(0.5 * 2 * 10)  # 10 kept


def test_induce_missing_worked_example():
    # D=5, L=50, p=10%: 250 - 25 = 225 observations survive
    rng = np.random.default_rng(9)
    series = RegularSeries(values=rng.standard_normal((5, 50)), label=0)
    inst = induce_missing(series, 0.10, np.random.default_rng(10))
    assert sum(len(ch.values) for ch in inst.channels) == 225


def test_induce_missing_rejects_bad_p():
    rng = np.random.default_rng(11)
    series = _table(rng, n=1)[0]
    with pytest.raises(ValueError):
        induce_missing_table([series], p=1.5, seed=0)


def test_table_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    series = _table(rng)
    path = tmp_path / "table.csv"
    save_regular_table(series, path)
    back = load_regular_table(path)
    assert len(back) == len(series)
    for a, b in zip(series, back):
        assert a.label == b.label
        np.testing.assert_array_equal(a.values, b.values)


def test_converters_parallel_identical(tmp_path):
    rng = np.random.default_rng(13)
    series = _table(rng, n=12)
    for fn, kw in ((asynchronize_table, {}), (induce_missing_table, {"p": 0.25})):
        serial = fn(series, seed=14, jobs=1, **kw)
        parallel = fn(series, seed=14, jobs=3, **kw)
        for ia, ib in zip(serial.instances, parallel.instances):
            assert ia.label == ib.label and ia.channels == ib.channels


def test_asynchronize_table_shapes():
    rng = np.random.default_rng(15)
    ds = asynchronize_table(_table(rng, n=6, D=4, L=5), seed=16)
    assert ds.D == 4
    for inst in ds.instances:
        assert sum(len(ch.values) for ch in inst.channels) == 5
