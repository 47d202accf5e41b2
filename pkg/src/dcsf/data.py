"""Asynchronous time series as sets of channels.

An instance is an unordered set of channels; each channel carries a fixed
indicator identifying it, the observed values, and the observation times.
Channels may have different lengths and unobserved channels are simply
absent from the set.  This module owns the data model, the indicator
encodings, validation, time/value normalization, and the line-delimited
dataset file format (grammar below).

File format (version 1)::

    #asts v=1 D=<int> L=<int>[ time_range=<float>:<float>]
    <label>|<d>:<t>=<v>,<t>=<v>;<d>:<t>=<v>

One instance per line.  ``d`` are 1-based channel ids, observations are
``time=value`` pairs, floats are written with ``repr`` so reading a saved
dataset reproduces it exactly.  Parsers reject anything outside this
grammar.
"""

import math
from dataclasses import dataclass, field

import numpy as np

INDICATOR_KINDS = ("onehot", "binary", "nominal")
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """A dataset file does not conform to the documented grammar."""


class ValidationError(ValueError):
    """Instances violate the data-model invariants."""


@dataclass(frozen=True)
class ChannelIndicatorScheme:
    """How channel identities are encoded into the fixed indicator vector."""

    kind: str
    D: int

    def __post_init__(self):
        if self.kind not in INDICATOR_KINDS:
            raise ValueError(f"indicator kind must be one of {INDICATOR_KINDS}, got {self.kind!r}")
        if self.D < 1:
            raise ValueError("channel vocabulary size D must be >= 1")

    @property
    def P(self):
        if self.kind == "onehot":
            return self.D
        if self.kind == "binary":
            return (self.D - 1).bit_length()  # == ceil(log2 D)
        return 1


def encode_channel_indicator(d, scheme):
    """Indicator vector for channel ``d`` (1-based), length ``scheme.P``."""
    if not 1 <= d <= scheme.D:
        raise IndexError(f"channel id {d} outside 1..{scheme.D}")
    if scheme.kind == "onehot":
        vec = np.zeros(scheme.D)
        vec[d - 1] = 1.0
        return vec
    if scheme.kind == "binary":
        bits = format(d - 1, "b").zfill(scheme.P) if scheme.P else ""
        return np.array([float(c) for c in bits])
    return np.array([float(d)])


class Channel:
    """One set element: channel id plus its observed (value, time) sequences."""

    __slots__ = ("channel_id", "values", "times")

    def __init__(self, channel_id, values, times):
        self.channel_id = int(channel_id)
        self.values = np.asarray(values, dtype=np.float64)
        self.times = np.asarray(times, dtype=np.float64)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, Channel):
            return NotImplemented
        return (self.channel_id == other.channel_id
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.times, other.times))

    def __repr__(self):
        return f"Channel(id={self.channel_id}, n={len(self.values)})"


class AsTSInstance:
    """A set of channels with a class label.

    The channel list keeps whatever order it was given; consumers that need
    determinism sort by channel_id themselves (the model must not depend on
    the order, and serialization writes ascending ids).
    """

    __slots__ = ("channels", "label")

    def __init__(self, channels, label):
        self.channels = list(channels)
        self.label = int(label)

    def channel_ids(self):
        return [c.channel_id for c in self.channels]

    def sorted_channels(self):
        return sorted(self.channels, key=lambda c: c.channel_id)

    def __eq__(self, other):
        if not isinstance(other, AsTSInstance):
            return NotImplemented
        return (self.label == other.label
                and self.sorted_channels() == other.sorted_channels())

    def __repr__(self):
        return f"AsTSInstance(label={self.label}, channels={self.channel_ids()})"


@dataclass
class Dataset:
    """A labeled collection of instances over a fixed channel vocabulary."""

    instances: list
    D: int
    L: int
    time_range: tuple = None

    def __len__(self):
        return len(self.instances)

    def labels(self):
        return np.array([inst.label for inst in self.instances], dtype=np.intp)

    def replace_instances(self, instances):
        return Dataset(list(instances), self.D, self.L, self.time_range)


def validate(instance, D, L):
    """Collect invariant violations; an empty list means the instance is ok."""
    violations = []
    if not instance.channels:
        violations.append("no channels")
    ids = instance.channel_ids()
    if len(set(ids)) != len(ids):
        violations.append("duplicate channel ids")
    for ch in instance.channels:
        tag = f"channel {ch.channel_id}"
        if not 1 <= ch.channel_id <= D:
            violations.append(f"{tag}: id outside 1..{D}")
        if len(ch.values) != len(ch.times):
            violations.append(
                f"{tag}: length mismatch (|V|={len(ch.values)}, |T|={len(ch.times)})")
        elif len(ch.values) == 0:
            violations.append(f"{tag}: empty")
        if len(ch.times) > 1 and np.any(np.diff(ch.times) < 0):
            violations.append(f"{tag}: non-monotone times")
        if not (np.all(np.isfinite(ch.values)) and np.all(np.isfinite(ch.times))):
            violations.append(f"{tag}: non-finite entries")
    if not 0 <= instance.label < L:
        violations.append(f"label {instance.label} outside 0..{L - 1}")
    return violations


def channel_to_array(channel, scheme, include_time=True):
    """Stack a channel into the encoder input matrix.

    Columns are [indicator, value, time]; the indicator is replicated in
    every column.  With ``include_time=False`` the time row is dropped,
    giving (P+1) instead of (P+2) rows.
    """
    n = len(channel.values)
    indicator = encode_channel_indicator(channel.channel_id, scheme)
    rows = [np.repeat(indicator[:, None], n, axis=1), channel.values[None, :]]
    if include_time:
        rows.append(channel.times[None, :])
    return np.concatenate(rows, axis=0)


def time_extent(dataset):
    """Global (min, max) over all observation times in the dataset."""
    lo, hi = math.inf, -math.inf
    for inst in dataset.instances:
        for ch in inst.channels:
            if len(ch.times):
                lo = min(lo, float(ch.times.min()))
                hi = max(hi, float(ch.times.max()))
    if lo is math.inf:
        raise ValueError("dataset has no observations")
    return lo, hi


def normalize_times(dataset, time_range=None):
    """Min-max scale all observation times with one global range.

    The range defaults to the dataset's own extent but can be supplied (to
    reuse training-split statistics on validation/test data).  A degenerate
    range maps every time to 0.  The raw range is recorded on the result.
    """
    if not dataset.instances:
        raise ValueError("cannot normalize an empty dataset")
    t0, t1 = time_range if time_range is not None else time_extent(dataset)
    span = t1 - t0
    scaled = []
    for inst in dataset.instances:
        channels = []
        for ch in inst.channels:
            if span > 0:
                times = (ch.times - t0) / span
            else:
                times = np.zeros_like(ch.times)
            channels.append(Channel(ch.channel_id, ch.values.copy(), times))
        scaled.append(AsTSInstance(channels, inst.label))
    return Dataset(scaled, dataset.D, dataset.L, (float(t0), float(t1)))


def value_statistics(dataset):
    """Per-channel mean/std of observed values (for optional z-normalization)."""
    collected = {}
    for inst in dataset.instances:
        for ch in inst.channels:
            collected.setdefault(ch.channel_id, []).append(ch.values)
    stats = {}
    for d, chunks in collected.items():
        vals = np.concatenate(chunks)
        std = float(vals.std())
        stats[d] = (float(vals.mean()), std if std > 0 else 1.0)
    return stats


def normalize_values(dataset, stats):
    """Apply per-channel z-normalization with precomputed statistics."""
    out = []
    for inst in dataset.instances:
        channels = []
        for ch in inst.channels:
            mean, std = stats.get(ch.channel_id, (0.0, 1.0))
            channels.append(Channel(ch.channel_id, (ch.values - mean) / std, ch.times.copy()))
        out.append(AsTSInstance(channels, inst.label))
    return dataset.replace_instances(out)


def save_dataset(dataset, path):
    """Write the line-delimited format; channels in ascending id order."""
    with open(path, "w") as fh:
        header = f"#asts v={FORMAT_VERSION} D={dataset.D} L={dataset.L}"
        if dataset.time_range is not None:
            header += (f" time_range={float(dataset.time_range[0])!r}"
                       f":{float(dataset.time_range[1])!r}")
        fh.write(header + "\n")
        for inst in dataset.instances:
            groups = []
            for ch in inst.sorted_channels():
                obs = ",".join(f"{float(t)!r}={float(v)!r}"
                               for t, v in zip(ch.times, ch.values))
                groups.append(f"{ch.channel_id}:{obs}")
            fh.write(f"{inst.label}|" + ";".join(groups) + "\n")


def _parse_int(token, line_no, what):
    try:
        return int(token)
    except ValueError:
        raise DatasetFormatError(f"line {line_no}: bad {what} {token!r}") from None


def _parse_float(token, line_no, what):
    try:
        return float(token)
    except ValueError:
        raise DatasetFormatError(f"line {line_no}: bad {what} {token!r}") from None


def _parse_header(line):
    parts = line.strip().split()
    if len(parts) not in (4, 5) or parts[0] != "#asts":
        raise DatasetFormatError("line 1: malformed header")
    fields = {}
    for part in parts[1:]:
        key, _, value = part.partition("=")
        if not value:
            raise DatasetFormatError("line 1: malformed header")
        fields[key] = value
    try:
        version = int(fields["v"])
        D = int(fields["D"])
        L = int(fields["L"])
    except (KeyError, ValueError):
        raise DatasetFormatError("line 1: malformed header") from None
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported format version {version}")
    time_range = None
    if "time_range" in fields:
        lo, sep, hi = fields["time_range"].partition(":")
        if not sep:
            raise DatasetFormatError("line 1: malformed time_range")
        time_range = (_parse_float(lo, 1, "time_range"), _parse_float(hi, 1, "time_range"))
    return D, L, time_range


def _parse_instance(line, line_no):
    label_part, sep, rest = line.partition("|")
    if not sep:
        raise DatasetFormatError(f"line {line_no}: missing '|' after label")
    label = _parse_int(label_part.strip(), line_no, "label")
    channels = []
    for group in rest.split(";"):
        id_part, sep, obs_part = group.partition(":")
        if not sep:
            raise DatasetFormatError(f"line {line_no}: malformed channel group {group!r}")
        channel_id = _parse_int(id_part.strip(), line_no, "channel id")
        times, values = [], []
        for obs in obs_part.split(","):
            t_part, sep, v_part = obs.partition("=")
            if not sep:
                raise DatasetFormatError(f"line {line_no}: malformed observation {obs!r}")
            times.append(_parse_float(t_part.strip(), line_no, "time"))
            values.append(_parse_float(v_part.strip(), line_no, "value"))
        channels.append(Channel(channel_id, values, times))
    return AsTSInstance(channels, label)


def load_dataset(path):
    """Parse a dataset file; raises on grammar or invariant violations."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset")
    D, L, time_range = _parse_header(lines[0])
    instances = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise DatasetFormatError(f"line {line_no}: blank line")
        instances.append(_parse_instance(line, line_no))
    if not instances:
        raise DatasetFormatError("empty dataset")
    problems = []
    for index, inst in enumerate(instances):
        for violation in validate(inst, D, L):
            problems.append(f"instance {index}: {violation}")
    if problems:
        raise ValidationError("; ".join(problems))
    return Dataset(instances, D, L, time_range)
