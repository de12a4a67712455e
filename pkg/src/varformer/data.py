"""Dataset ingestion, chronological splits, window sampling, variate
folds, and synthetic generators.

CSV layout: header ``date,<name>,...``; one timestamp column followed by
numeric variate columns. Values are float64 end to end and files are
written with 17 significant digits so a write/load round trip is exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class LoadError(ValueError):
    """Malformed dataset file; message carries the (row, column) location."""


class SplitError(ValueError):
    """Invalid split specification."""


@dataclass
class TimeSeriesDataset:
    values: np.ndarray                  # (T_total, N) float64, no gaps
    variate_names: list[str]
    timestamps: list[str]
    frequency: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a (T_total, N) matrix")
        if len(self.variate_names) != self.values.shape[1]:
            raise ValueError("variate_names length must match column count")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError("timestamps length must match row count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dataset contains non-finite values")

    @property
    def n_variates(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]


@dataclass
class SplitSpec:
    """Either fractional ratios or explicit row counts, train/val/test."""
    ratios: tuple[float, float, float] | None = None
    counts: tuple[int, int, int] | None = None

    def __post_init__(self):
        if (self.ratios is None) == (self.counts is None):
            raise SplitError("provide exactly one of ratios or counts")
        if self.ratios is not None:
            r = self.ratios
            if len(r) != 3 or any(x <= 0 for x in r):
                raise SplitError("ratios must be three positive numbers")
            if abs(sum(r) - 1.0) > 1e-9:
                raise SplitError(f"ratios must sum to 1, got {sum(r)}")
        else:
            c = self.counts
            if len(c) != 3 or any(int(x) < 0 for x in c):
                raise SplitError("counts must be three non-negative integers")


@dataclass
class Partition:
    """A contiguous [start, stop) row range of a dataset."""
    dataset: TimeSeriesDataset
    start: int
    stop: int
    name: str = ""

    @property
    def values(self) -> np.ndarray:
        return self.dataset.values[self.start:self.stop]

    def __len__(self):
        return self.stop - self.start


@dataclass
class WindowSample:
    x: np.ndarray     # (T, N) lookback
    y: np.ndarray     # (S, N) target, immediately following x
    origin: int       # absolute dataset row where x starts


def load_csv(path) -> TimeSeriesDataset:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        if not header or header[0] != "date":
            raise LoadError(f"{path}: first header column must be 'date', "
                            f"got {header[0] if header else 'nothing'!r} (row 0, col 0)")
        names = header[1:]
        if len(names) < 1:
            raise LoadError(f"{path}: no variate columns (row 0)")
        seen = set()
        for j, name in enumerate(names):
            if name in seen:
                raise LoadError(f"{path}: duplicate header {name!r} (row 0, col {j + 1})")
            seen.add(name)

        timestamps, rows = [], []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise LoadError(f"{path}: ragged row with {len(row)} cells, "
                                f"expected {len(header)} (row {i})")
            timestamps.append(row[0])
            parsed = []
            for j, cell in enumerate(row[1:], start=1):
                if cell.strip() == "":
                    raise LoadError(f"{path}: blank cell (row {i}, col {j})")
                try:
                    v = float(cell)
                except ValueError:
                    raise LoadError(f"{path}: non-numeric cell {cell!r} "
                                    f"(row {i}, col {j})") from None
                if not math.isfinite(v):
                    raise LoadError(f"{path}: non-finite cell {cell!r} (row {i}, col {j})")
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise LoadError(f"{path}: no data rows")
    return TimeSeriesDataset(values=np.array(rows, dtype=np.float64),
                             variate_names=names, timestamps=timestamps)


def write_csv(path, ds: TimeSeriesDataset):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date"] + list(ds.variate_names))
        for i in range(ds.n_steps):
            w.writerow([ds.timestamps[i]] + [("%.17g" % v) for v in ds.values[i]])


def chronological_split(ds: TimeSeriesDataset,
                        spec: SplitSpec) -> tuple[Partition, Partition, Partition]:
    total = ds.n_steps
    if spec.counts is not None:
        n_train, n_val, n_test = (int(c) for c in spec.counts)
        if n_train + n_val + n_test > total:
            raise SplitError(f"counts sum {n_train + n_val + n_test} exceeds "
                             f"{total} available rows")
    else:
        n_train = int(spec.ratios[0] * total)
        n_val = int(spec.ratios[1] * total)
        n_test = total - n_train - n_val
    b1, b2, b3 = n_train, n_train + n_val, n_train + n_val + n_test
    return (Partition(ds, 0, b1, "train"),
            Partition(ds, b1, b2, "val"),
            Partition(ds, b2, b3, "test"))


def window_count(length: int, lookback: int, horizon: int, stride: int = 1) -> int:
    return max(0, (length - lookback - horizon) // stride + 1)


def window_iter(partition: Partition, lookback: int, horizon: int, stride: int = 1):
    """Deterministic sweep of fully-contained (X, Y) pairs; Y starts the
    step after X ends. Too-short partitions yield nothing."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    vals = partition.values
    for w in range(window_count(len(partition), lookback, horizon, stride)):
        s = w * stride
        yield WindowSample(x=vals[s:s + lookback],
                           y=vals[s + lookback:s + lookback + horizon],
                           origin=partition.start + s)


def variate_partition(ds: TimeSeriesDataset, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle of the variate indices, chunked into `folds` pieces
    whose sizes differ by at most one."""
    n = ds.n_variates
    if folds < 2 or folds > n:
        raise ValueError(f"folds must lie in [2, {n}], got {folds}")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(order, folds)]


def select_variates(ds: TimeSeriesDataset, indices) -> TimeSeriesDataset:
    idx = np.asarray(indices, dtype=int)
    return TimeSeriesDataset(values=ds.values[:, idx].copy(),
                             variate_names=[ds.variate_names[i] for i in idx],
                             timestamps=list(ds.timestamps),
                             frequency=ds.frequency,
                             metadata=dict(ds.metadata, selected=[int(i) for i in idx]))


# ---------------------------------------------------------------------------
# synthetic generators

GENERATORS = ("sin_mix", "lagged_copy", "ar1")


@dataclass
class SynthSpec:
    generator: str
    length: int = 400
    n_variates: int = 4
    noise: float = 0.0
    lag: int = 3                 # lagged_copy
    n_components: int = 2        # sinusoids per variate
    extra_pairs: int = 0         # additional planted (source, copy) pairs

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; "
                             f"choose one of {GENERATORS}")
        if self.length < 2 or self.n_variates < 1:
            raise ValueError("length must be >= 2 and n_variates >= 1")
        if self.generator == "lagged_copy":
            if self.n_variates < 2:
                raise ValueError("lagged_copy needs at least 2 variates")
            if not (1 <= self.lag < self.length):
                raise ValueError("lag must lie in [1, length)")
            if 2 * (1 + self.extra_pairs) > self.n_variates:
                raise ValueError("too many planted pairs for n_variates")


def _sin_columns(rng, length, count, n_components, lo, hi, t0=0):
    """count columns, each a sum of sinusoids; returns (values, components)."""
    t = np.arange(t0, t0 + length, dtype=np.float64)
    cols, comps = [], []
    for _ in range(count):
        parts = [(float(rng.uniform(0.5, 1.5)),        # amplitude
                  float(rng.uniform(lo, hi)),          # cycles over `length`
                  float(rng.uniform(0, 2 * np.pi)))    # phase
                 for _ in range(n_components)]
        col = np.zeros(length)
        for amp, cyc, phase in parts:
            col += amp * np.sin(2 * np.pi * cyc * t / length + phase)
        cols.append(col)
        comps.append(parts)
    return np.stack(cols, axis=1), comps


def synth_generate(spec: SynthSpec, seed: int) -> TimeSeriesDataset:
    """Deterministic synthetic dataset; metadata records everything a test
    oracle needs (sinusoid components, planted lag triples, AR coefficients)."""
    rng = np.random.default_rng(seed)
    n, length = spec.n_variates, spec.length
    meta = {"generator": spec.generator, "seed": int(seed), "noise": spec.noise}

    if spec.generator == "sin_mix":
        values, comps = _sin_columns(rng, length, n, spec.n_components, 1.0, 10.0)
        meta["components"] = comps
    elif spec.generator == "ar1":
        phis = rng.uniform(0.3, 0.9, size=n)
        burn = 50
        eps = rng.standard_normal((burn + length, n))
        buf = np.zeros((burn + length, n))
        for t in range(1, burn + length):
            buf[t] = phis * buf[t - 1] + eps[t]
        values = buf[burn:].copy()
        meta["phi"] = [float(p) for p in phis]
    else:  # lagged_copy
        n_pairs = 1 + spec.extra_pairs
        d = spec.lag
        planted = []
        cols = np.zeros((length, n))
        # smooth low-frequency sources so the copy stays highly correlated
        # with its source at the planted lag
        ext, comps = _sin_columns(rng, length + d, n_pairs, spec.n_components,
                                  1.5, 4.0)
        for k in range(n_pairs):
            i, j = 2 * k, 2 * k + 1
            cols[:, i] = ext[d:, k]
            cols[:, j] = ext[:length, k]   # source delayed by d, warmup included
            planted.append((i, j, d))
        # independent mid-frequency distractors
        rest = n - 2 * n_pairs
        if rest > 0:
            distract, dcomps = _sin_columns(rng, length, rest, spec.n_components,
                                            6.0, 16.0)
            cols[:, 2 * n_pairs:] = distract
            meta["distractor_components"] = dcomps
        values = cols
        meta["planted"] = [[int(i), int(j), int(dd)] for i, j, dd in planted]
        meta["source_components"] = comps

    if spec.noise > 0:
        values = values + spec.noise * rng.standard_normal(values.shape)

    return TimeSeriesDataset(values=values,
                             variate_names=[f"v{i}" for i in range(n)],
                             timestamps=[str(i) for i in range(length)],
                             frequency="synthetic",
                             metadata=meta)
