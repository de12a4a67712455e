"""Adam optimization and the mini-batch training loop.

Per step: assemble a batch of windows (seeded shuffle each epoch, last
partial batch kept), optionally restrict every sample in the batch to a
random variate subset, run the batched forward, take the mean-squared
loss, backpropagate, and apply one Adam update. Validation runs on the
full variate set each epoch; the best-validation parameter snapshot is
retained as the checkpoint.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Tensor, backward, mse_loss, new_tape, no_grad
from .data import Partition, WindowSample, window_iter
from .model import Model

LEARNING_RATE_GRID = (1e-3, 5e-4, 1e-4)


class TrainingError(RuntimeError):
    """Numeric failure during optimization (NaN loss/gradient)."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    variate_sample_ratio: float = 1.0
    seed: int = 0
    grad_clip: float | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size must be positive; epochs >= 0")
        if not (0.0 < self.variate_sample_ratio <= 1.0):
            raise ValueError("variate_sample_ratio must lie in (0, 1]")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0 when set")


class AdamState:
    """First/second-moment buffers mirroring the parameter shapes."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(t.values) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.values) for name, t in params.items()}
        self.t = 0


def adam_step(params, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update over all parameters; a parameter
    without a gradient is treated as zero-gradient (left unchanged)."""
    state.t += 1
    grads = {}
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.values)
        elif not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        grads[name] = g

    if cfg.grad_clip is not None:
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > cfg.grad_clip:
            factor = cfg.grad_clip / total
            grads = {name: g * factor for name, g in grads.items()}

    for name, p in params.items():
        kernels.adam_update(p.values, grads[name], state.m[name], state.v[name],
                            state.t, cfg.learning_rate, cfg.beta1, cfg.beta2,
                            cfg.adam_eps)


def sample_variate_subset(batch: list[WindowSample], ratio: float,
                          rng) -> tuple[list[WindowSample], np.ndarray]:
    """Keep ceil(ratio*N) variate columns, the same uniformly-drawn subset
    for every sample's X and Y; ratio 1 is the identity."""
    if not (0.0 < ratio <= 1.0):
        raise ValueError("ratio must lie in (0, 1]")
    n = batch[0].x.shape[1]
    if ratio == 1.0:
        return batch, np.arange(n)
    k = math.ceil(ratio * n)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    reduced = [WindowSample(x=s.x[:, idx], y=s.y[:, idx], origin=s.origin)
               for s in batch]
    return reduced, idx


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    steps: int


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time_s: float = 0.0
    best_epoch: int = -1
    best_val_loss: float = math.inf
    step_token_counts: list[int] = field(default_factory=list)
    total_steps: int = 0

    def to_text(self) -> str:
        lines = ["epoch,train_loss,val_loss,steps"]
        for r in self.epochs:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.steps}")
        lines.append(f"# best_epoch,{self.best_epoch}")
        lines.append(f"# best_val_loss,{self.best_val_loss!r}")
        lines.append(f"# total_steps,{self.total_steps}")
        return "\n".join(lines) + "\n"


def _stack_batch(batch):
    x = np.stack([s.x for s in batch])
    y = np.stack([s.y for s in batch])
    return x, y


def partition_mse(model: Model, partition: Partition, batch_size: int = 64,
                  stride: int = 1) -> float:
    """Mean squared error over every window of a partition (full variates)."""
    cfg = model.config
    windows = list(window_iter(partition, cfg.lookback_T, cfg.horizon_S, stride))
    if not windows:
        return math.nan
    sq_sum, count = 0.0, 0
    with no_grad():
        for ofs in range(0, len(windows), batch_size):
            x, y = _stack_batch(windows[ofs:ofs + batch_size])
            pred = model.forward(x).prediction
            sq_sum += float(np.sum((pred - y) ** 2))
            count += y.size
    return sq_sum / count


def train(model: Model, train_part: Partition, val_part: Partition,
          cfg: TrainConfig) -> tuple[TrainReport, dict[str, np.ndarray]]:
    """Run the optimization loop; returns the report and the
    best-validation parameter snapshot (falls back to the final state if
    the validation partition yields no windows)."""
    mcfg = model.config
    windows = list(window_iter(train_part, mcfg.lookback_T, mcfg.horizon_S, 1))
    if not windows:
        raise ValueError("training partition yields no windows")
    if mcfg.binds_variate_count and cfg.variate_sample_ratio < 1.0:
        raise ValueError(f"design {mcfg.design} binds the variate count; "
                         "variate subsampling is unavailable")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState(model.params)
    report = TrainReport()
    best_state = None
    t_start = time.perf_counter()
    steps_done = 0
    stop = False

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        epoch_losses = []
        epoch_steps = 0
        for ofs in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and steps_done >= cfg.max_steps:
                stop = True
                break
            batch = [windows[i] for i in order[ofs:ofs + cfg.batch_size]]
            batch, kept = sample_variate_subset(batch, cfg.variate_sample_ratio, rng)
            x, y = _stack_batch(batch)
            model.params.zero_grad()
            with new_tape():
                out = model.forward(x, train_mode=True,
                                    rng=rng if mcfg.dropout > 0 else None)
                loss = mse_loss(out.y_hat, Tensor(y))
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise TrainingError(
                        f"non-finite loss at step {steps_done}; lower the learning "
                        f"rate (grid {LEARNING_RATE_GRID}) or enable grad_clip")
                backward(loss)
            adam_step(model.params, state, cfg)
            epoch_losses.append(loss_val)
            report.step_token_counts.append(len(kept))
            steps_done += 1
            epoch_steps += 1

        if epoch_steps:
            train_loss = float(np.mean(epoch_losses))
            val_loss = partition_mse(model, val_part, batch_size=max(cfg.batch_size, 8))
            report.epochs.append(EpochRecord(epoch, train_loss, val_loss, epoch_steps))
            if math.isfinite(val_loss) and val_loss < report.best_val_loss:
                report.best_val_loss = val_loss
                report.best_epoch = epoch
                best_state = model.params.state_arrays()
        if stop:
            break

    report.total_steps = steps_done
    report.wall_time_s = time.perf_counter() - t_start
    if best_state is None:
        best_state = model.params.state_arrays()
    return report, best_state
