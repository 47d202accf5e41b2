"""Synthetic data: the coincidence toy task and regular-series converters.

Three generators, all pure functions of (input, seed):

* ``make_toy_dataset``: two channels of length T, zero everywhere except a
  unit spike per channel; the class is whether the spikes coincide.
  Sparsification removes zero-valued observations only, so the signal
  survives any sparsity level.
* ``asynchronize``: turns a fully observed D x L series into a set of
  channels where every time step is kept by exactly one channel, chosen
  uniformly.
* ``induce_missing``: deletes a uniform sample of floor(p*D*L) of the D*L
  observations.

Per-instance generators draw from seeds spawned off the master seed, so
generating in parallel or serially yields identical datasets.

Regular series are read from a line-delimited table::

    #regular v=1 D=<int> L=<int>
    <label>,<v[1,1]>,...,<v[1,L]>,<v[2,1]>,...,<v[D,L]>

one series per line, values row-major by channel.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import AsTSInstance, Channel, Dataset, DatasetFormatError

REGULAR_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ToyConfig:
    T: int = 20
    n: int = 4000
    sparsity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("toy series length T must be >= 2")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError("sparsity must lie in [0, 1)")
        if self.n < 1:
            raise ValueError("instance count must be >= 1")
        if self.T - math.floor(self.sparsity * self.T) < 2:
            raise ValueError(
                "sparsity this high would leave only the spike observation; "
                f"T={self.T} keeps {self.T - math.floor(self.sparsity * self.T)} points")


@dataclass
class RegularSeries:
    """Fully observed D x L series with a class label."""

    values: np.ndarray
    label: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"regular series must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("regular series contains non-finite values")
        self.label = int(self.label)


def make_toy_instance(positive, config, rng):
    """One two-channel instance; spikes coincide iff ``positive``.

    Each channel starts as T zeros with a single 1 at its spike position
    (the same position for both channels in the positive class, distinct
    positions otherwise), then loses floor(sparsity*T) zero-valued
    observations, drawn uniformly.  Surviving observation times are the
    integer grid positions.
    """
    T = config.T
    if positive:
        t = int(rng.integers(T))
        spikes = (t, t)
    else:
        t1 = int(rng.integers(T))
        t2 = int(rng.integers(T - 1))
        if t2 >= t1:
            t2 += 1
        spikes = (t1, t2)
    remove = math.floor(config.sparsity * T)
    channels = []
    for d, spike in enumerate(spikes, start=1):
        values = np.zeros(T)
        values[spike] = 1.0
        zeros = np.flatnonzero(values == 0.0)
        dropped = rng.choice(zeros, size=remove, replace=False)
        keep = np.setdiff1d(np.arange(T), dropped)
        channels.append(Channel(d, values[keep], keep.astype(np.float64)))
    return AsTSInstance(channels, 1 if positive else 0)


def _chunk_ranges(n, parts):
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _toy_chunk(args):
    config, flags, seeds = args
    return [make_toy_instance(bool(f), config, np.random.default_rng(s))
            for f, s in zip(flags, seeds)]


def make_toy_dataset(config, jobs=1):
    """Balanced, shuffled toy dataset of ``config.n`` instances (D=2, L=2).

    Each instance draws from its own spawned seed, so ``jobs > 1`` splits
    the work across processes without changing a single byte of output.
    """
    n = config.n
    if n % 2:
        warnings.warn(f"odd instance count {n}; generating {n - 1} for class balance")
        n -= 1
    seeds = np.random.SeedSequence(config.seed).spawn(n + 1)
    order_rng = np.random.default_rng(seeds[0])
    flags = np.array([True] * (n // 2) + [False] * (n // 2))
    flags = flags[order_rng.permutation(n)]
    work = [(config, flags[a:b], seeds[a + 1:b + 1])
            for a, b in _chunk_ranges(n, jobs if jobs > 1 else 1)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_toy_chunk, work))
    else:
        parts = [_toy_chunk(w) for w in work]
    return Dataset([inst for part in parts for inst in part], D=2, L=2)


def asynchronize(series, rng):
    """Keep exactly one uniformly chosen channel per time step.

    The resulting instance has exactly L observations; the (channel, time)
    pairs partition the grid.  Channels never chosen are omitted.
    """
    D, L = series.values.shape
    picks = rng.integers(0, D, size=L)
    channels = []
    for d in range(D):
        at = np.flatnonzero(picks == d)
        if at.size:
            channels.append(Channel(d + 1, series.values[d, at], at.astype(np.float64)))
    return AsTSInstance(channels, series.label)


def induce_missing(series, p, rng):
    """Delete a uniform sample of floor(p*D*L) observations.

    Exactly D*L - floor(p*D*L) observations survive; channels losing every
    observation are omitted.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError("missing fraction must lie in [0, 1)")
    D, L = series.values.shape
    total = D * L
    dropped = rng.choice(total, size=math.floor(p * total), replace=False)
    keep = np.ones(total, dtype=bool)
    keep[dropped] = False
    grid = keep.reshape(D, L)
    channels = []
    for d in range(D):
        at = np.flatnonzero(grid[d])
        if at.size:
            channels.append(Channel(d + 1, series.values[d, at], at.astype(np.float64)))
    return AsTSInstance(channels, series.label)


def _convert_chunk(args):
    series, seeds, kind, p = args
    if kind == "asynchronize":
        return [asynchronize(s, np.random.default_rng(c))
                for s, c in zip(series, seeds)]
    return [induce_missing(s, p, np.random.default_rng(c))
            for s, c in zip(series, seeds)]


def _convert_table(series_list, seed, kind, p=None, jobs=1):
    if not series_list:
        raise ValueError("no regular series to convert")
    D = series_list[0].values.shape[0]
    for s in series_list:
        if s.values.shape[0] != D:
            raise ValueError("all regular series must share the channel count")
        if s.label < 0:
            raise ValueError("labels must be non-negative class indices")
    seeds = np.random.SeedSequence(seed).spawn(len(series_list))
    work = [(series_list[a:b], seeds[a:b], kind, p)
            for a, b in _chunk_ranges(len(series_list), jobs if jobs > 1 else 1)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_convert_chunk, work))
    else:
        parts = [_convert_chunk(w) for w in work]
    instances = [inst for part in parts for inst in part]
    num_classes = max(s.label for s in series_list) + 1
    return Dataset(instances, D=D, L=max(num_classes, 2))


def asynchronize_table(series_list, seed, jobs=1):
    """Asynchronize every series; one spawned seed per instance."""
    return _convert_table(series_list, seed, "asynchronize", jobs=jobs)


def induce_missing_table(series_list, p, seed, jobs=1):
    """Apply ``induce_missing`` to every series; one spawned seed each."""
    if not 0.0 <= p < 1.0:
        raise ValueError("missing fraction must lie in [0, 1)")
    return _convert_table(series_list, seed, "missing", p=p, jobs=jobs)


def save_regular_table(series_list, path):
    if not series_list:
        raise ValueError("no series to save")
    D, L = series_list[0].values.shape
    with open(path, "w") as fh:
        fh.write(f"#regular v={REGULAR_FORMAT_VERSION} D={D} L={L}\n")
        for s in series_list:
            if s.values.shape != (D, L):
                raise ValueError("all series in one table must share D and L")
            flat = ",".join(repr(float(v)) for v in s.values.reshape(-1))
            fh.write(f"{s.label},{flat}\n")


def load_regular_table(path):
    """Parse the regular-series table format (grammar in module docstring)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty table")
    parts = lines[0].split()
    if len(parts) != 4 or parts[0] != "#regular":
        raise DatasetFormatError("line 1: malformed header")
    try:
        fields = dict(p.split("=", 1) for p in parts[1:])
        version, D, L = int(fields["v"]), int(fields["D"]), int(fields["L"])
    except (KeyError, ValueError):
        raise DatasetFormatError("line 1: malformed header") from None
    if version != REGULAR_FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported table version {version}")
    series = []
    for line_no, line in enumerate(lines[1:], start=2):
        tokens = line.split(",")
        if len(tokens) != 1 + D * L:
            raise DatasetFormatError(
                f"line {line_no}: expected 1 label + {D * L} values, got {len(tokens)}")
        try:
            label = int(tokens[0])
            values = np.array([float(t) for t in tokens[1:]]).reshape(D, L)
        except ValueError:
            raise DatasetFormatError(f"line {line_no}: non-numeric entry") from None
        series.append(RegularSeries(values, label))
    if not series:
        raise DatasetFormatError("table has no series")
    return series
