"""Multivariate time-series forecasting with attention over variate
tokens, built on a self-contained float64 autodiff core."""

from .autodiff import (Tensor, Tape, ShapeError, TapeError, backward,
                       new_tape, no_grad)
from .data import (Partition, SplitSpec, SynthSpec, TimeSeriesDataset,
                   WindowSample, chronological_split, load_csv, synth_generate,
                   variate_partition, window_iter, write_csv)
from .evaluation import (AnalysisBundle, MetricsReport, collect_analysis,
                         evaluate, generalization_eval, linear_cka, mae, mse,
                         pearson_matrix)
from .model import (AttentionMap, Model, ModelConfig, ModelParams,
                    build_model, load_checkpoint, save_checkpoint)
from .training import (AdamState, TrainConfig, TrainReport, adam_step,
                       sample_variate_subset, train)

__version__ = "0.1.0"
