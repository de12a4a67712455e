import numpy as np
import pytest

from varformer.data import (LoadError, SplitError, SplitSpec, SynthSpec,
                            TimeSeriesDataset, chronological_split, load_csv,
                            select_variates, synth_generate, variate_partition,
                            window_count, window_iter, write_csv)


def make_ds(values):
    values = np.asarray(values, dtype=np.float64)
    return TimeSeriesDataset(values=values,
                             variate_names=[f"v{i}" for i in range(values.shape[1])],
                             timestamps=[str(i) for i in range(values.shape[0])])


# -- csv ----------------------------------------------------------------------


def test_load_small_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,a,b\n2020-01-01,1.5,2\n2020-01-02,3,4\n2020-01-03,5,6.25\n")
    ds = load_csv(p)
    assert ds.values.shape == (3, 2)
    assert ds.variate_names == ["a", "b"]
    assert ds.timestamps[0] == "2020-01-01"
    np.testing.assert_array_equal(ds.values, [[1.5, 2], [3, 4], [5, 6.25]])


def test_blank_cell_reports_location(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,a,b\nt0,1,2\nt1,,4\n")
    with pytest.raises(LoadError, match=r"row 2, col 1"):
        load_csv(p)


def test_non_numeric_cell_reports_location(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,a,b\nt0,1,2\nt1,3,oops\n")
    with pytest.raises(LoadError, match=r"row 2, col 2"):
        load_csv(p)


def test_ragged_row_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,a,b\nt0,1,2\nt1,3\n")
    with pytest.raises(LoadError, match="ragged"):
        load_csv(p)


def test_duplicate_header_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,a,a\nt0,1,2\n")
    with pytest.raises(LoadError, match="duplicate"):
        load_csv(p)


def test_missing_date_header_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,a\nt0,1\n")
    with pytest.raises(LoadError, match="date"):
        load_csv(p)


def test_write_load_round_trip_is_exact(tmp_path, rng):
    ds = synth_generate(SynthSpec("sin_mix", length=40, n_variates=3, noise=0.5),
                        seed=9)
    p = tmp_path / "rt.csv"
    write_csv(p, ds)
    back = load_csv(p)
    np.testing.assert_array_equal(back.values, ds.values)
    assert back.variate_names == ds.variate_names
    assert back.timestamps == ds.timestamps


# -- splits ---------------------------------------------------------------


def test_ratio_split_sizes():
    tr, va, te = chronological_split(make_ds(np.zeros((10, 2))),
                                     SplitSpec(ratios=(0.7, 0.1, 0.2)))
    assert (len(tr), len(va), len(te)) == (7, 1, 2)


def test_explicit_counts_accepted_verbatim():
    ds = make_ds(np.zeros((8545 + 2881 + 2881, 1)))
    tr, va, te = chronological_split(ds, SplitSpec(counts=(8545, 2881, 2881)))
    assert (len(tr), len(va), len(te)) == (8545, 2881, 2881)


def test_split_is_an_ordered_partition():
    ds = make_ds(np.zeros((37, 1)))
    tr, va, te = chronological_split(ds, SplitSpec(ratios=(0.6, 0.2, 0.2)))
    ranges = [(p.start, p.stop) for p in (tr, va, te)]
    assert ranges[0][0] == 0 and ranges[2][1] == 37
    assert ranges[0][1] == ranges[1][0] and ranges[1][1] == ranges[2][0]


def test_split_spec_validation():
    with pytest.raises(SplitError):
        SplitSpec(ratios=(0.5, 0.5, 0.5))
    with pytest.raises(SplitError):
        SplitSpec()
    with pytest.raises(SplitError):
        SplitSpec(ratios=(0.7, 0.1, 0.2), counts=(1, 1, 1))
    with pytest.raises(SplitError):
        chronological_split(make_ds(np.zeros((5, 1))), SplitSpec(counts=(4, 1, 1)))


# -- windows ---------------------------------------------------------------


def test_window_count_by_enumeration():
    # oracle: enumerate admissible start offsets directly
    length, T, S = 10, 4, 2
    starts = [s for s in range(length) if s + T + S <= length]
    assert len(starts) == 5
    assert window_count(length, T, S, 1) == 5


def test_short_partition_yields_nothing():
    ds = make_ds(np.zeros((5, 1)))
    tr, _, _ = chronological_split(ds, SplitSpec(counts=(5, 0, 0)))
    assert list(window_iter(tr, 4, 2)) == []


def test_windows_are_contiguous_and_aligned():
    ds = make_ds(np.arange(20, dtype=float).reshape(10, 2))
    tr, _, _ = chronological_split(ds, SplitSpec(counts=(10, 0, 0)))
    wins = list(window_iter(tr, 4, 2, 1))
    assert len(wins) == 5
    for w in wins:
        # Y immediately follows X
        np.testing.assert_array_equal(ds.values[w.origin:w.origin + 4], w.x)
        np.testing.assert_array_equal(ds.values[w.origin + 4:w.origin + 6], w.y)
    # consecutive stride-1 windows share T+S-1 time indices
    for a, b in zip(wins, wins[1:]):
        ia = set(range(a.origin, a.origin + 6))
        ib = set(range(b.origin, b.origin + 6))
        assert len(ia & ib) == 5


def test_no_window_crosses_a_split_boundary():
    ds = make_ds(np.zeros((30, 1)))
    parts = chronological_split(ds, SplitSpec(ratios=(0.5, 0.2, 0.3)))
    for part in parts:
        for w in window_iter(part, 3, 2, 1):
            assert w.origin >= part.start
            assert w.origin + 5 <= part.stop


# -- variate folds ----------------------------------------------------------


def test_even_folds():
    folds = variate_partition(make_ds(np.zeros((4, 10))), folds=5, seed=0)
    assert [len(f) for f in folds] == [2, 2, 2, 2, 2]


def test_uneven_fold_sizes_differ_by_at_most_one():
    folds = variate_partition(make_ds(np.zeros((4, 11))), folds=5, seed=0)
    assert sorted(len(f) for f in folds) == [2, 2, 2, 2, 3]


def test_folds_deterministic_and_a_partition():
    ds = make_ds(np.zeros((4, 13)))
    for folds in (2, 3, 5, 13):
        a = variate_partition(ds, folds, seed=42)
        b = variate_partition(ds, folds, seed=42)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa, fb)
        merged = np.sort(np.concatenate(a))
        np.testing.assert_array_equal(merged, np.arange(13))


def test_fold_bounds_checked():
    ds = make_ds(np.zeros((4, 3)))
    with pytest.raises(ValueError):
        variate_partition(ds, 1, seed=0)
    with pytest.raises(ValueError):
        variate_partition(ds, 4, seed=0)


def test_select_variates():
    ds = make_ds(np.arange(12, dtype=float).reshape(3, 4))
    sub = select_variates(ds, [2, 0])
    np.testing.assert_array_equal(sub.values, ds.values[:, [2, 0]])
    assert sub.variate_names == ["v2", "v0"]


# -- synthetic generators ----------------------------------------------------


def test_sin_mix_matches_closed_form():
    spec = SynthSpec("sin_mix", length=64, n_variates=3, noise=0.0, n_components=2)
    ds = synth_generate(spec, seed=5)
    t = np.arange(64, dtype=np.float64)
    for n, parts in enumerate(ds.metadata["components"]):
        col = np.zeros(64)
        for amp, cyc, phase in parts:
            col += amp * np.sin(2 * np.pi * cyc * t / 64 + phase)
        np.testing.assert_allclose(ds.values[:, n], col, atol=1e-12)


def test_lagged_copy_shift_structure():
    spec = SynthSpec("lagged_copy", length=50, n_variates=4, noise=0.0, lag=3)
    ds = synth_generate(spec, seed=7)
    (i, j, d), = [tuple(p) for p in ds.metadata["planted"]]
    assert (i, j, d) == (0, 1, 3)
    np.testing.assert_allclose(ds.values[d:, j], ds.values[:-d, i], atol=1e-12)


def test_generators_deterministic():
    for gen in ("sin_mix", "lagged_copy", "ar1"):
        spec = SynthSpec(gen, length=30, n_variates=4, noise=0.3)
        a = synth_generate(spec, seed=11)
        b = synth_generate(spec, seed=11)
        np.testing.assert_array_equal(a.values, b.values)
        c = synth_generate(spec, seed=12)
        assert np.any(a.values != c.values)


def test_ar1_shape_and_metadata():
    ds = synth_generate(SynthSpec("ar1", length=25, n_variates=3), seed=2)
    assert ds.values.shape == (25, 3)
    assert len(ds.metadata["phi"]) == 3
    assert all(0.3 <= p <= 0.9 for p in ds.metadata["phi"])


def test_bad_generator_rejected():
    with pytest.raises(ValueError, match="unknown generator"):
        SynthSpec("brownian")


def test_dataset_rejects_nan():
    with pytest.raises(ValueError):
        make_ds(np.array([[1.0], [np.nan]]))
