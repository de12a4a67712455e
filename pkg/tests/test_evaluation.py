import math

import numpy as np
import pytest

from varformer.data import (Partition, SplitSpec, SynthSpec, TimeSeriesDataset,
                            chronological_split, synth_generate, window_iter)
from varformer.evaluation import (AnalysisError, GeneralizationReport,
                                  collect_analysis, evaluate,
                                  generalization_eval, linear_cka, mae, mse,
                                  pearson_matrix)
from varformer.model import ConfigError, ModelConfig, build_model
from varformer.training import TrainConfig


def test_metric_hand_values():
    assert mse([1.0, 2.0], [0.0, 0.0]) == 2.5
    assert mae([1.0, 2.0], [0.0, 0.0]) == 1.5
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_mae_bounded_by_rms(rng):
    for _ in range(30):
        p = rng.standard_normal(17) * rng.uniform(0.1, 10)
        t = rng.standard_normal(17)
        assert mae(p, t) <= math.sqrt(mse(p, t)) + 1e-15


def test_metric_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros(3), np.zeros(4))


# -- evaluate ------------------------------------------------------------------


class OracleModel:
    """Duck-typed stand-in whose predictions are an exact offset of truth."""

    def __init__(self, config, offset=0.0):
        self.config = config
        self.offset = offset

    def forward(self, x, **kw):
        from varformer.model import ForwardResult
        from varformer.autodiff import Tensor
        arr = np.asarray(x, dtype=np.float64)
        s = self.config.horizon_S
        shape = arr.shape[:-2] + (s, arr.shape[-1])
        return ForwardResult(y_hat=Tensor(np.full(shape, self.offset)))


def zero_mean_dataset(rng, length=400, n=3):
    return TimeSeriesDataset(values=rng.standard_normal((length, n)),
                             variate_names=[f"v{i}" for i in range(n)],
                             timestamps=[str(i) for i in range(length)])


def test_perfect_predictor_scores_zero(rng):
    # constant data, constant predictor at the same value
    values = np.full((50, 2), 3.25)
    ds = TimeSeriesDataset(values=values, variate_names=["a", "b"],
                           timestamps=[str(i) for i in range(50)])
    part = Partition(ds, 0, 50, "test")
    cfg = ModelConfig(lookback_T=8, horizon_S=4)
    rep = evaluate(OracleModel(cfg, offset=3.25), part)
    assert rep.mse == 0.0 and rep.mae == 0.0


def test_zero_predictor_matches_target_variance(rng):
    ds = zero_mean_dataset(rng)
    part = Partition(ds, 0, ds.n_steps, "test")
    cfg = ModelConfig(lookback_T=8, horizon_S=4)
    rep = evaluate(OracleModel(cfg, offset=0.0), part)
    var = float(np.var(ds.values))
    assert abs(rep.mse - var) / var < 0.05


def test_evaluate_is_deterministic(rng):
    ds = zero_mean_dataset(rng, length=80)
    part = Partition(ds, 0, 80, "test")
    cfg = ModelConfig(lookback_T=8, horizon_S=4)
    params, model = build_model(cfg, seed=1)
    a = evaluate(model, part)
    b = evaluate(model, part)
    assert a.mse == b.mse and a.mae == b.mae
    np.testing.assert_array_equal(a.per_horizon_mse, b.per_horizon_mse)


def test_report_aggregates_are_window_means(rng):
    ds = zero_mean_dataset(rng, length=60)
    part = Partition(ds, 0, 60, "test")
    cfg = ModelConfig(lookback_T=8, horizon_S=4)
    params, model = build_model(cfg, seed=1)
    rep = evaluate(model, part)
    # recompute the mean over per-window metrics directly
    per_window = []
    for w in window_iter(part, 8, 4, 1):
        pred = model.forward(w.x).prediction
        per_window.append(np.mean((pred - w.y) ** 2))
    assert abs(rep.mse - np.mean(per_window)) < 1e-12
    assert rep.n_windows == len(per_window)


def test_report_additive_over_bipartition(rng):
    ds = zero_mean_dataset(rng, length=60)
    cfg = ModelConfig(lookback_T=8, horizon_S=4)
    params, model = build_model(cfg, seed=1)
    whole = evaluate(model, Partition(ds, 0, 60, "all"))
    left = evaluate(model, Partition(ds, 0, 36, "left"))
    right = evaluate(model, Partition(ds, 25, 60, "right"))
    # left covers window origins 0..24, right covers 25..48
    assert left.n_windows + right.n_windows == whole.n_windows
    blended = (left.mse * left.n_windows + right.mse * right.n_windows) / whole.n_windows
    assert abs(blended - whole.mse) < 1e-12


def test_horizon_truncation(rng):
    ds = zero_mean_dataset(rng, length=60)
    part = Partition(ds, 0, 60, "test")
    cfg = ModelConfig(lookback_T=8, horizon_S=6)
    params, model = build_model(cfg, seed=2)
    full = evaluate(model, part)
    h2 = evaluate(model, part, horizon=2)
    np.testing.assert_allclose(h2.per_horizon_mse, full.per_horizon_mse[:2],
                               atol=1e-15)
    with pytest.raises(ValueError):
        evaluate(model, part, horizon=7)


# -- pearson -------------------------------------------------------------------


def test_pearson_identities(rng):
    x = rng.standard_normal(40)
    w = np.stack([x, -x, 2 * x + 3], axis=1)
    m = pearson_matrix(w)
    assert m[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert m[0, 1] == pytest.approx(-1.0, abs=1e-12)
    assert m[0, 2] == pytest.approx(1.0, abs=1e-9)   # affine invariance
    np.testing.assert_allclose(m, m.T, atol=1e-12)


def test_pearson_affine_invariance_entrywise(rng):
    w = rng.standard_normal((50, 4))
    scales = rng.uniform(0.5, 3.0, 4)
    shifts = rng.standard_normal(4)
    m1 = pearson_matrix(w)
    m2 = pearson_matrix(w * scales + shifts)
    np.testing.assert_allclose(m2, m1, atol=1e-9)


def test_pearson_constant_column_is_nan_sentinel(rng):
    w = np.stack([rng.standard_normal(30), np.full(30, 2.0)], axis=1)
    m = pearson_matrix(w)
    assert m[0, 0] == pytest.approx(1.0)
    assert np.isnan(m[0, 1]) and np.isnan(m[1, 1])


# -- linear CKA ----------------------------------------------------------------


def test_cka_self_similarity(rng):
    f = rng.standard_normal((20, 7))
    assert abs(linear_cka(f, f) - 1.0) < 1e-9


def test_cka_orthogonal_invariance(rng):
    f = rng.standard_normal((20, 7))
    q, _ = np.linalg.qr(rng.standard_normal((7, 7)))
    assert abs(linear_cka(f, f @ q) - 1.0) < 1e-9


def test_cka_scale_invariance(rng):
    f = rng.standard_normal((20, 7))
    for c in (0.01, -3.7, 100.0):
        assert abs(linear_cka(f, c * f) - 1.0) < 1e-9


def test_cka_symmetric_and_bounded(rng):
    a = rng.standard_normal((30, 5))
    b = rng.standard_normal((30, 9))
    assert abs(linear_cka(a, b) - linear_cka(b, a)) < 1e-12
    assert 0.0 <= linear_cka(a, b) <= 1.0 + 1e-9


def test_cka_rejects_degenerate_input(rng):
    with pytest.raises(ValueError):
        linear_cka(np.ones((10, 3)), rng.standard_normal((10, 3)))
    with pytest.raises(ValueError):
        linear_cka(rng.standard_normal((10, 3)), rng.standard_normal((9, 3)))


# -- analysis bundle -----------------------------------------------------------


def lag_setup(seed=0, n=6, length=300, lag=3, noise=0.05):
    ds = synth_generate(SynthSpec("lagged_copy", length=length, n_variates=n,
                                  lag=lag, noise=noise), seed=seed)
    tr, va, te = chronological_split(ds, SplitSpec(ratios=(0.7, 0.1, 0.2)))
    cfg = ModelConfig(lookback_T=16, horizon_S=4, token_dim_D=16, blocks_L=2,
                      heads=4, ffn_hidden=16)
    return ds, te, cfg


def test_analysis_bundle_shapes_and_row_sums():
    ds, te, cfg = lag_setup()
    params, model = build_model(cfg, seed=1)
    samples = list(window_iter(te, 16, 4, 16))[:4]
    bundle = collect_analysis(model, samples)
    assert len(bundle.attention_scores) == cfg.blocks_L
    for m in bundle.attention_scores:
        assert m.shape == (6, 6)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-6)
    assert bundle.pearson_lookback.shape == (6, 6)
    assert bundle.pearson_future.shape == (6, 6)
    assert 0.0 <= bundle.cka_first_last <= 1.0 + 1e-9


def test_lookback_pearson_finds_planted_pair():
    hits = 0
    for seed in range(10):
        ds, te, cfg = lag_setup(seed=seed)
        params, model = build_model(cfg, seed=1)
        samples = list(window_iter(te, 16, 4, 16))[:4]
        bundle = collect_analysis(model, samples)
        i, j, _ = ds.metadata["planted"][0]
        off = np.abs(bundle.pearson_lookback.copy())
        np.fill_diagonal(off, 0.0)
        top = np.unravel_index(np.nanargmax(off), off.shape)
        if tuple(sorted(top)) == (i, j):
            hits += 1
    assert hits >= 9


def test_analysis_requires_variate_attention():
    ds, te, _ = lag_setup()
    cfg = ModelConfig(lookback_T=16, horizon_S=4, token_dim_D=16, blocks_L=1,
                      heads=4, ffn_hidden=16, variate_role="none",
                      temporal_role="ffn")
    params, model = build_model(cfg, seed=1)
    samples = list(window_iter(te, 16, 4, 16))[:4]
    with pytest.raises(AnalysisError, match="variate attention"):
        collect_analysis(model, samples)


def test_analysis_needs_two_samples():
    ds, te, cfg = lag_setup()
    params, model = build_model(cfg, seed=1)
    samples = list(window_iter(te, 16, 4, 16))[:1]
    with pytest.raises(ValueError, match="2 samples"):
        collect_analysis(model, samples)


# -- generalization harness ------------------------------------------------


def test_generalization_rejects_n_bound_designs():
    ds = synth_generate(SynthSpec("lagged_copy", length=100, n_variates=10,
                                  lag=3, noise=0.1), seed=0)
    cfg = ModelConfig(lookback_T=8, horizon_S=4, token_dim_D=16, heads=4,
                      blocks_L=1, ffn_hidden=8, variate_role="ffn",
                      temporal_role="ffn", n_variates=10)
    with pytest.raises(ConfigError):
        generalization_eval(ds, cfg, TrainConfig(epochs=1), folds=5)


def test_generalization_folds_cover_all_variates():
    ds = synth_generate(SynthSpec("lagged_copy", length=160, n_variates=10,
                                  lag=3, noise=0.1), seed=0)
    cfg = ModelConfig(lookback_T=8, horizon_S=4, token_dim_D=16, heads=4,
                      blocks_L=1, ffn_hidden=8)
    rep = generalization_eval(ds, cfg,
                              TrainConfig(epochs=1, batch_size=16, max_steps=4),
                              folds=5, include_full=False)
    assert len(rep.fold_reports) == 5
    for idx in rep.fold_indices:
        assert len(idx) == 2          # 20% of 10 variates per fold
    for fold_rep in rep.fold_reports:
        assert fold_rep.per_variate_mse.shape == (10,)
    assert math.isfinite(rep.mean_mse)
    assert "fold-averaged" in rep.comparison_line()
