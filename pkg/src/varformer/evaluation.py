"""Forecast metrics, representation/correlation analysis, and the
variate-generalization harness.

Exports use one ``# name: shape`` header line per comma-separated
matrix; floats are written with repr so reruns are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .data import (Partition, SplitSpec, TimeSeriesDataset, WindowSample,
                   chronological_split, select_variates, variate_partition,
                   window_iter)
from .model import Model, ModelConfig, ROLE_ATTENTION, ROLE_FFN, ConfigError, build_model
from .training import TrainConfig, train


class AnalysisError(ValueError):
    """Requested analysis is unavailable for this model."""


def mse(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mse: shapes {pred.shape} and {truth.shape} differ")
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mae: shapes {pred.shape} and {truth.shape} differ")
    return float(np.mean(np.abs(pred - truth)))


def _matrix_block(name: str, arr: np.ndarray) -> str:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    rows, cols = arr.shape
    lines = [f"# {name}: {rows}x{cols}"]
    for r in range(rows):
        lines.append(",".join(repr(float(v)) for v in arr[r]))
    return "\n".join(lines)


def format_matrices(named) -> str:
    return "\n".join(_matrix_block(name, arr) for name, arr in named) + "\n"


@dataclass
class MetricsReport:
    mse: float
    mae: float
    per_horizon_mse: np.ndarray   # (S,)
    per_horizon_mae: np.ndarray
    per_variate_mse: np.ndarray   # (N,)
    per_variate_mae: np.ndarray
    n_windows: int

    def to_text(self) -> str:
        return format_matrices([
            ("summary_mse_mae_windows", np.array([[self.mse, self.mae,
                                                   float(self.n_windows)]])),
            ("per_horizon_mse", self.per_horizon_mse[None, :]),
            ("per_horizon_mae", self.per_horizon_mae[None, :]),
            ("per_variate_mse", self.per_variate_mse[None, :]),
            ("per_variate_mae", self.per_variate_mae[None, :]),
        ])


def evaluate(model: Model, partition: Partition, *, horizon: int | None = None,
             batch_size: int = 64) -> MetricsReport:
    """Stride-1 sweep over every window of the partition. Predictions come
    out of the model on the raw scale (instance-norm statistics already
    restored), so metrics are on raw units. ``horizon`` truncates scoring
    to the first h prediction steps."""
    cfg = model.config
    S = cfg.horizon_S
    h = S if horizon is None else int(horizon)
    if not (1 <= h <= S):
        raise ValueError(f"horizon must lie in [1, {S}], got {h}")
    windows = list(window_iter(partition, cfg.lookback_T, S, 1))
    if not windows:
        raise ValueError(f"partition {partition.name!r} yields no windows")

    sq = abs_ = None
    count = 0
    with no_grad():
        for ofs in range(0, len(windows), batch_size):
            chunk = windows[ofs:ofs + batch_size]
            x = np.stack([s.x for s in chunk])
            y = np.stack([s.y for s in chunk])[:, :h, :]
            pred = model.forward(x).prediction[:, :h, :]
            d = pred - y
            if sq is None:
                sq = np.zeros(d.shape[1:])
                abs_ = np.zeros(d.shape[1:])
            sq += np.sum(d * d, axis=0)
            abs_ += np.sum(np.abs(d), axis=0)
            count += len(chunk)

    sq /= count
    abs_ /= count
    return MetricsReport(mse=float(sq.mean()), mae=float(abs_.mean()),
                         per_horizon_mse=sq.mean(axis=1),
                         per_horizon_mae=abs_.mean(axis=1),
                         per_variate_mse=sq.mean(axis=0),
                         per_variate_mae=abs_.mean(axis=0),
                         n_windows=count)


def pearson_matrix(w: np.ndarray) -> np.ndarray:
    """Pairwise correlation of columns: centered dot product over the
    product of centered norms. Constant columns have no defined
    correlation; their entries are NaN and excluded from aggregates."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ValueError(f"pearson_matrix needs a (len >= 2, N) matrix, got {w.shape}")
    c = w - w.mean(axis=0)
    norms = np.sqrt(np.sum(c * c, axis=0))
    out = np.empty((w.shape[1], w.shape[1]))
    out.fill(np.nan)
    ok = norms > 0.0
    denom = np.outer(norms, norms)
    cov = c.T @ c
    valid = np.outer(ok, ok)
    out[valid] = (cov / np.where(denom == 0, 1.0, denom))[valid]
    return out


def linear_cka(f1: np.ndarray, f2: np.ndarray) -> float:
    """||F2^T F1||_F^2 / (||F1^T F1||_F ||F2^T F2||_F) on column-centered
    matrices; 1 for identical features, invariant to orthogonal maps and
    nonzero isotropic scaling."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.ndim != 2 or f2.ndim != 2 or f1.shape[0] != f2.shape[0] or f1.shape[0] < 2:
        raise ValueError(f"linear_cka needs two (samples >= 2, features) matrices "
                         f"with equal sample counts, got {f1.shape} and {f2.shape}")
    a = f1 - f1.mean(axis=0)
    b = f2 - f2.mean(axis=0)
    cross = float(np.sum((b.T @ a) ** 2))
    na = float(np.linalg.norm(a.T @ a))
    nb = float(np.linalg.norm(b.T @ b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("linear_cka undefined for a constant feature matrix")
    return cross / (na * nb)


@dataclass
class AnalysisBundle:
    attention_scores: list[np.ndarray]      # per layer, (N, N), head+sample mean
    attention_pre_scores: list[np.ndarray]  # per layer, (N, N)
    pearson_lookback: np.ndarray            # (N, N) over concatenated X windows
    pearson_future: np.ndarray              # (N, N) over concatenated Y windows
    cka_first_last: float

    def to_text(self, include_pre: bool = False) -> str:
        named = [(f"attention_layer{i}", m)
                 for i, m in enumerate(self.attention_scores)]
        if include_pre:
            named += [(f"attention_pre_layer{i}", m)
                      for i, m in enumerate(self.attention_pre_scores)]
        named += [("pearson_lookback", self.pearson_lookback),
                  ("pearson_future", self.pearson_future),
                  ("cka_first_last", np.array([[self.cka_first_last]]))]
        return format_matrices(named)


def collect_analysis(model: Model, samples: list[WindowSample]) -> AnalysisBundle:
    """Forward each sample with diagnostics; average attention maps over
    heads and samples per layer, correlate the raw lookback/future
    windows, and compare first-vs-last block features with linear CKA."""
    if model.config.variate_role != ROLE_ATTENTION:
        raise AnalysisError("analysis requires variate attention")
    if len(samples) < 2:
        raise ValueError("collect_analysis needs at least 2 samples for CKA")

    layers = model.config.blocks_L
    score_sum = [None] * layers
    pre_sum = [None] * layers
    first_feats, last_feats = [], []
    with no_grad():
        for s in samples:
            res = model.forward(s.x, collect_diagnostics=True)
            per_layer_scores = [[] for _ in range(layers)]
            per_layer_pre = [[] for _ in range(layers)]
            for m in res.attention_maps:
                per_layer_scores[m.layer].append(m.scores)
                per_layer_pre[m.layer].append(m.pre_scores)
            for l in range(layers):
                sc = np.mean(per_layer_scores[l], axis=0)
                pr = np.mean(per_layer_pre[l], axis=0)
                score_sum[l] = sc if score_sum[l] is None else score_sum[l] + sc
                pre_sum[l] = pr if pre_sum[l] is None else pre_sum[l] + pr
            first_feats.append(res.block_outputs[0].ravel())
            last_feats.append(res.block_outputs[-1].ravel())

    k = len(samples)
    return AnalysisBundle(
        attention_scores=[m / k for m in score_sum],
        attention_pre_scores=[m / k for m in pre_sum],
        pearson_lookback=pearson_matrix(np.concatenate([s.x for s in samples])),
        pearson_future=pearson_matrix(np.concatenate([s.y for s in samples])),
        cka_first_last=linear_cka(np.stack(first_feats), np.stack(last_feats)),
    )


@dataclass
class GeneralizationReport:
    fold_indices: list[np.ndarray]
    fold_reports: list[MetricsReport]
    mean_mse: float
    mean_mae: float
    full_report: MetricsReport | None = None

    def comparison_line(self) -> str:
        if self.full_report is None:
            return f"fold-averaged mse {self.mean_mse!r} (no full-variate reference)"
        rel = ("<=" if self.full_report.mse <= self.mean_mse else ">")
        return (f"full-variate mse {self.full_report.mse!r} {rel} "
                f"fold-averaged mse {self.mean_mse!r}")


def generalization_eval(dataset: TimeSeriesDataset, model_cfg: ModelConfig,
                        train_cfg: TrainConfig, folds: int = 5,
                        split: SplitSpec | None = None, seed: int = 0,
                        include_full: bool = True) -> GeneralizationReport:
    """Partition the variates into folds; for each fold, train a model on
    that fold's variates only and evaluate it on ALL variates of the test
    partition. Needs a token-count-flexible design."""
    if model_cfg.binds_variate_count:
        raise ConfigError(f"design {model_cfg.design} binds the variate count; "
                          "variate generalization needs a flexible design "
                          "(variate attention or no variate component)")
    split = split or SplitSpec(ratios=(0.7, 0.1, 0.2))
    fold_idx = variate_partition(dataset, folds, seed)
    _, _, test_full = chronological_split(dataset, split)

    fold_reports = []
    for idx in fold_idx:
        sub = select_variates(dataset, idx)
        tr, va, _ = chronological_split(sub, split)
        params, model = build_model(model_cfg, seed)
        _, best = train(model, tr, va, train_cfg)
        model.params.load_state_arrays(best)
        fold_reports.append(evaluate(model, test_full))

    full_report = None
    if include_full:
        tr, va, _ = chronological_split(dataset, split)
        params, model = build_model(model_cfg, seed)
        _, best = train(model, tr, va, train_cfg)
        model.params.load_state_arrays(best)
        full_report = evaluate(model, test_full)

    return GeneralizationReport(
        fold_indices=fold_idx,
        fold_reports=fold_reports,
        mean_mse=float(np.mean([r.mse for r in fold_reports])),
        mean_mae=float(np.mean([r.mae for r in fold_reports])),
        full_report=full_report,
    )
