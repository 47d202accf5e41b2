"""Set-function classifier over channels: F(X) = C(A(E(s_1), ..., E(s_D))).

One shared convolutional encoder E turns each channel array into a
K-dimensional embedding, the embeddings are summed (order-free aggregation
A), and a dense classifier C maps the sum to logits.  The encoder stacks
residual blocks of three masked convolutions with kernel lengths 8/5/3 and
64 filters in the first block, 128 in the rest, followed by masked global
average pooling and a linear projection to K.

With ``causal=True`` every convolution pads on the left only and
:func:`forward_online` emits one logit vector per global time step, each a
function of observations at or before that step.  The offline embedding of
a causal encoder is the causal pool's final valid column, which the global
pool reproduces bit for bit (both sum left to right).

Channels are always processed in ascending channel_id order no matter how
the instance stores them, so permutation invariance holds bitwise rather
than merely up to float reassociation.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .data import ChannelIndicatorScheme, encode_channel_indicator

TIME_EMBEDDINGS = ("absolute", "delta", "sinusoidal", "none")
AGGREGATIONS = ("sum", "mean")
LOSS_KINDS = ("auto", "bce", "softmax", "sigmoid")


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the shared channel encoder."""

    num_blocks: int = 2
    embedding_dim: int = 128
    include_time: bool = True
    time_embedding: str = "absolute"
    causal: bool = False
    use_batch_norm: bool = False
    kernel_length_override: int = None
    sinusoidal_dim: int = 8
    sinusoidal_max_timescale: float = 1.0

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("encoder needs at least one residual block")
        if self.embedding_dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        if self.time_embedding not in TIME_EMBEDDINGS:
            raise ValueError(f"time_embedding must be one of {TIME_EMBEDDINGS}")
        if self.kernel_length_override is not None and self.kernel_length_override < 1:
            raise ValueError("kernel length override must be >= 1")
        if self.time_embedding == "sinusoidal":
            if self.sinusoidal_dim < 2 or self.sinusoidal_dim % 2:
                raise ValueError("sinusoidal_dim must be an even number >= 2")
            if self.sinusoidal_max_timescale <= 0:
                raise ValueError("sinusoidal_max_timescale must be positive")
        if self.causal and self.use_batch_norm:
            raise ValueError("batch statistics leak future steps; causal and "
                             "use_batch_norm cannot be combined")

    @property
    def kernel_lengths(self):
        k = self.kernel_length_override
        return (k, k, k) if k else (8, 5, 3)

    @property
    def block_filters(self):
        return (64,) + (128,) * (self.num_blocks - 1)

    @property
    def time_rows(self):
        if not self.include_time or self.time_embedding == "none":
            return 0
        if self.time_embedding == "sinusoidal":
            return self.sinusoidal_dim
        return 1


@dataclass(frozen=True)
class ClassifierConfig:
    """Dense head: ``num_dense_layers`` ReLU layers then a linear output."""

    num_classes: int
    num_dense_layers: int = 2
    width: int = 128
    dropout: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("classification needs at least two classes")
        if self.num_dense_layers < 0:
            raise ValueError("num_dense_layers must be >= 0")
        if self.width < 1:
            raise ValueError("classifier width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build and run the model on one task."""

    scheme: ChannelIndicatorScheme
    encoder: EncoderConfig
    classifier: ClassifierConfig
    aggregation: str = "sum"
    independent_encoders: bool = False
    loss_kind: str = "auto"

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.loss_kind == "bce" and self.classifier.num_classes != 2:
            raise ValueError("bce loss requires exactly two classes")

    @property
    def resolved_loss(self):
        """'auto' picks sigmoid BCE for binary tasks and softmax otherwise."""
        if self.loss_kind == "auto":
            return "bce" if self.classifier.num_classes == 2 else "softmax"
        return self.loss_kind

    @property
    def head_size(self):
        """Number of output logits: 1 under BCE, else the class count."""
        return 1 if self.resolved_loss == "bce" else self.classifier.num_classes

    @property
    def input_rows(self):
        return self.scheme.P + 1 + self.encoder.time_rows

    def encoder_prefixes(self):
        if self.independent_encoders:
            return [f"enc{d}." for d in range(1, self.scheme.D + 1)]
        return ["enc."]

    def prefix_for(self, channel_id):
        return f"enc{channel_id}." if self.independent_encoders else "enc."


def _he_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _add_conv(params, buffers, rng, key, c_out, c_in, k, use_bn):
    params[key + ".w"] = Tensor(_he_uniform(rng, (c_out, c_in, k), c_in * k),
                                requires_grad=True)
    params[key + ".b"] = Tensor(np.zeros(c_out), requires_grad=True)
    if use_bn:
        params[key + ".gamma"] = Tensor(np.ones(c_out), requires_grad=True)
        params[key + ".beta"] = Tensor(np.zeros(c_out), requires_grad=True)
        buffers[key + ".mean"] = np.zeros(c_out)
        buffers[key + ".var"] = np.ones(c_out)


def _add_encoder(params, buffers, rng, config, prefix):
    enc = config.encoder
    c_in = config.input_rows
    for i, f in enumerate(enc.block_filters, start=1):
        for j, k in enumerate(enc.kernel_lengths, start=1):
            _add_conv(params, buffers, rng, f"{prefix}b{i}.c{j}",
                      f, c_in if j == 1 else f, k, enc.use_batch_norm)
        if c_in != f:
            _add_conv(params, buffers, rng, f"{prefix}b{i}.skip",
                      f, c_in, 1, enc.use_batch_norm)
        c_in = f
    params[prefix + "proj.w"] = Tensor(_he_uniform(rng, (enc.embedding_dim, c_in), c_in),
                                       requires_grad=True)
    params[prefix + "proj.b"] = Tensor(np.zeros(enc.embedding_dim), requires_grad=True)


def init_params(config, seed):
    """Fresh parameters and batch-norm buffers, deterministic under seed.

    Weights are fan-in scaled uniform, biases zero.  Returns
    ``(params, buffers)``: named Tensors marked for gradients and plain
    arrays for running statistics (empty unless batch norm is enabled).
    """
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for prefix in config.encoder_prefixes():
        _add_encoder(params, buffers, rng, config, prefix)
    clf = config.classifier
    in_dim = config.encoder.embedding_dim
    for j in range(1, clf.num_dense_layers + 1):
        params[f"clf.d{j}.w"] = Tensor(_he_uniform(rng, (clf.width, in_dim), in_dim),
                                       requires_grad=True)
        params[f"clf.d{j}.b"] = Tensor(np.zeros(clf.width), requires_grad=True)
        in_dim = clf.width
    params["clf.out.w"] = Tensor(_he_uniform(rng, (config.head_size, in_dim), in_dim),
                                 requires_grad=True)
    params["clf.out.b"] = Tensor(np.zeros(config.head_size), requires_grad=True)
    return params, buffers


def _time_features(times, enc):
    """Rows appended below the value row; None when time is excluded."""
    if enc.time_rows == 0:
        return None
    if enc.time_embedding == "delta":
        row = np.zeros_like(times)
        row[1:] = np.diff(times)
        return row[None, :]
    if enc.time_embedding == "sinusoidal":
        pairs = enc.sinusoidal_dim // 2
        top = enc.sinusoidal_max_timescale
        scales = np.geomspace(top * 1e-3, top, pairs) if pairs > 1 else np.array([top])
        angles = 2.0 * np.pi * times[None, :] / scales[:, None]
        feats = np.empty((enc.sinusoidal_dim, times.shape[0]))
        feats[0::2] = np.sin(angles)
        feats[1::2] = np.cos(angles)
        return feats
    return times[None, :]


def instance_arrays(instance, config):
    """Per-channel encoder inputs in canonical channel order.

    Returns ``[(channel_id, matrix)]`` where each matrix stacks the
    replicated indicator, the value row, and the configured time rows.
    """
    if not instance.channels:
        raise ValueError("instance has no channels")
    out = []
    for ch in instance.sorted_channels():
        n = len(ch.values)
        indicator = encode_channel_indicator(ch.channel_id, config.scheme)
        rows = [np.repeat(indicator[:, None], n, axis=1), ch.values[None, :]]
        tf = _time_features(ch.times, config.encoder)
        if tf is not None:
            rows.append(tf)
        out.append((ch.channel_id, np.concatenate(rows, axis=0)))
    return out


@dataclass
class PaddedBatch:
    """Channels of a batch packed into one zero-padded block.

    ``segments[i]`` is the instance each channel row belongs to; ``mask`` is
    1 on real columns, 0 on padding.
    """

    x: np.ndarray
    mask: np.ndarray
    segments: np.ndarray
    channel_ids: np.ndarray
    num_instances: int


def assemble_arrays(per_instance, config, pad_to=None):
    """Pack precomputed ``instance_arrays`` outputs into a PaddedBatch."""
    rows = config.input_rows
    flat = [(idx, d, arr) for idx, arrays in enumerate(per_instance)
            for d, arr in arrays]
    if not flat:
        raise ValueError("cannot assemble an empty batch")
    for _, d, arr in flat:
        if arr.ndim != 2 or arr.shape[0] != rows:
            raise ShapeError(
                f"channel {d}: expected {rows} input rows, got shape {arr.shape}")
    longest = max(arr.shape[1] for _, _, arr in flat)
    width = max(longest, pad_to or 1)
    x = np.zeros((len(flat), rows, width))
    mask = np.zeros((len(flat), width))
    segments = np.empty(len(flat), dtype=np.intp)
    channel_ids = np.empty(len(flat), dtype=np.intp)
    for pos, (idx, d, arr) in enumerate(flat):
        n = arr.shape[1]
        x[pos, :, :n] = arr
        mask[pos, :n] = 1.0
        segments[pos] = idx
        channel_ids[pos] = d
    return PaddedBatch(x, mask, segments, channel_ids, len(per_instance))


def assemble_batch(instances, config, pad_to=None):
    return assemble_arrays([instance_arrays(inst, config) for inst in instances],
                           config, pad_to)


def _conv_unit(h, mask, params, key, config, training, buffers, padding):
    h = ad.conv1d(h, params[key + ".w"], params[key + ".b"], padding)
    h = ad.apply_mask(h, mask)
    if config.encoder.use_batch_norm:
        h = ad.masked_batch_norm(h, params[key + ".gamma"], params[key + ".beta"],
                                 mask, buffers[key + ".mean"], buffers[key + ".var"],
                                 training)
    return h


def _trunk(x, mask, params, prefix, config, training, buffers):
    """Residual blocks over (.., rows, L) activations; output stays masked."""
    enc = config.encoder
    if enc.use_batch_norm and buffers is None:
        raise ValueError("batch-norm config requires the buffers dict")
    padding = "causal" if enc.causal else "same"
    h = ad.apply_mask(x, mask)
    c_in = config.input_rows
    for i, f in enumerate(enc.block_filters, start=1):
        block_in = h
        for j in range(1, 4):
            h = _conv_unit(h, mask, params, f"{prefix}b{i}.c{j}", config,
                           training, buffers, padding)
            if j < 3:
                h = ad.relu(h)
        if c_in != f:
            skip = _conv_unit(block_in, mask, params, f"{prefix}b{i}.skip", config,
                              training, buffers, padding)
        else:
            skip = block_in
        h = ad.relu(ad.add(h, skip))
        c_in = f
    return h


def encode_channels(x, mask, params, config, training=False, buffers=None,
                    prefix="enc."):
    """Encode a packed (N, rows, L) block into (N, K) channel embeddings."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    h = _trunk(x, mask, params, prefix, config, training, buffers)
    pooled = ad.global_average_pool(h, mask)
    return ad.dense(pooled, params[prefix + "proj.w"], params[prefix + "proj.b"])


def encode_channel(params, config, channel_array, mask, training=False,
                   buffers=None, prefix="enc."):
    """Embed one channel array of shape (rows, L) into R^K."""
    x = channel_array if isinstance(channel_array, Tensor) \
        else Tensor(np.asarray(channel_array, dtype=np.float64))
    if x.data.ndim != 2 or x.data.shape[0] != config.input_rows:
        raise ShapeError(f"expected ({config.input_rows}, L) channel array, "
                         f"got shape {x.data.shape}")
    return encode_channels(x, mask, params, config, training, buffers, prefix)


def aggregate(embeddings, aggregation="sum"):
    """Order-free reduction of channel embeddings (the A in F = C∘A∘E)."""
    if not embeddings:
        raise ValueError("cannot aggregate an empty channel set")
    total = embeddings[0]
    for emb in embeddings[1:]:
        total = ad.add(total, emb)
    if aggregation == "mean":
        total = ad.mul(total, 1.0 / len(embeddings))
    return total


def _pooled_embeddings(batch, params, config, training, buffers):
    if not config.independent_encoders:
        return encode_channels(batch.x, batch.mask, params, config, training, buffers)
    # disjoint-parameter ablation: route each channel to its own encoder
    out = None
    for d in np.unique(batch.channel_ids):
        idx = np.flatnonzero(batch.channel_ids == d)
        emb = encode_channels(batch.x[idx], batch.mask[idx], params, config,
                              training, buffers, prefix=f"enc{int(d)}.")
        placed = ad.segment_sum(emb, idx, batch.x.shape[0])
        out = placed if out is None else ad.add(out, placed)
    return out


def _aggregate_segments(embeddings, segments, num_instances, config):
    z = ad.segment_sum(embeddings, segments, num_instances)
    if config.aggregation == "mean":
        counts = np.bincount(segments, minlength=num_instances).astype(np.float64)
        z = ad.mul(z, (1.0 / counts)[:, None])
    return z


def penultimate(z, params, config, training=False, rng=None):
    """The dense stack's output, i.e. the features feeding the final layer."""
    clf = config.classifier
    h = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    for j in range(1, clf.num_dense_layers + 1):
        h = ad.relu(ad.dense(h, params[f"clf.d{j}.w"], params[f"clf.d{j}.b"]))
        if training and clf.dropout > 0.0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            keep = (rng.random(h.data.shape) >= clf.dropout).astype(np.float64)
            h = ad.scaled_mask_mul(h, keep, 1.0 / (1.0 - clf.dropout))
    return h


def classify(z, params, config, training=False, rng=None):
    """Dense head on (B, K) features or a single (K,) vector."""
    h = penultimate(z, params, config, training, rng)
    return ad.dense(h, params["clf.out.w"], params["clf.out.b"])


def penultimate_batch(batch, params, config, buffers=None):
    """Inference-mode penultimate features (B, width or K) for a PaddedBatch."""
    emb = _pooled_embeddings(batch, params, config, False, buffers)
    z = _aggregate_segments(emb, batch.segments, batch.num_instances, config)
    return penultimate(z, params, config)


def forward_batch(batch, params, config, training=False, buffers=None, rng=None):
    """Logits (B, head_size) for a PaddedBatch."""
    emb = _pooled_embeddings(batch, params, config, training, buffers)
    z = _aggregate_segments(emb, batch.segments, batch.num_instances, config)
    return classify(z, params, config, training, rng)


def forward(instance, params, config, training=False, buffers=None, rng=None):
    """Logit vector for one instance."""
    batch = assemble_batch([instance], config)
    logits = forward_batch(batch, params, config, training, buffers, rng)
    return ad.reshape(logits, (config.head_size,))


def forward_online(instance, params, config, buffers=None):
    """Per-time-step logits under the causal encoder.

    Global steps are the sorted distinct observation times of the instance.
    Each channel contributes its causally pooled embedding at the latest of
    its own observations not after the step, or nothing (a zero embedding)
    before its first observation.  Returns ``(step_times, logits)`` with
    logits of shape (num_steps, head_size); row t uses no observation made
    after ``step_times[t]``.
    """
    if not config.encoder.causal:
        raise ValueError("forward_online requires an encoder config with causal=True")
    channels = instance.sorted_channels()
    arrays = instance_arrays(instance, config)
    step_times = np.unique(np.concatenate([ch.times for ch in channels]))
    c_last = config.encoder.block_filters[-1]
    k_dim = config.encoder.embedding_dim
    total = None
    for (d, arr), ch in zip(arrays, channels):
        prefix = config.prefix_for(d)
        mask = np.ones(arr.shape[1])
        h = _trunk(Tensor(arr), mask, params, prefix, config, False, buffers)
        pooled = ad.causal_average_pool(h, mask)
        w_stepwise = ad.reshape(params[prefix + "proj.w"], (k_dim, c_last, 1))
        emb = ad.conv1d(pooled, w_stepwise, params[prefix + "proj.b"], "causal")
        gather = np.searchsorted(ch.times, step_times, side="right") - 1
        picked = ad.take_columns(emb, gather)
        total = picked if total is None else ad.add(total, picked)
    if config.aggregation == "mean":
        total = ad.mul(total, 1.0 / len(channels))
    logits = classify(ad.transpose2d(total), params, config)
    return step_times, logits


def loss_from_logits(labels, logits, config):
    """Mean cross-entropy matching the configured output head."""
    kind = config.resolved_loss
    if kind == "bce":
        per = ad.binary_cross_entropy(labels, ad.reshape(logits, (-1,)))
    elif kind == "softmax":
        per = ad.softmax_cross_entropy(labels, logits)
    else:
        per = ad.sigmoid_cross_entropy_multiclass(labels, logits)
    return ad.mean_all(per)


def loss(instances, params, config, training=False, buffers=None, rng=None):
    """Mean cross-entropy of a non-empty instance batch."""
    if not instances:
        raise ValueError("loss needs a non-empty batch")
    batch = assemble_batch(instances, config)
    labels = np.array([inst.label for inst in instances], dtype=np.intp)
    logits = forward_batch(batch, params, config, training, buffers, rng)
    return loss_from_logits(labels, logits, config)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict(logits, config):
    """Class decisions from raw logit rows."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if config.resolved_loss == "bce":
        return (z[:, 0] > 0).astype(np.intp)
    return z.argmax(axis=1)


def positive_scores(logits, config):
    """Probability of class 1 for ranking metrics on binary tasks."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if config.resolved_loss == "bce":
        return 1.0 / (1.0 + np.exp(-z[:, 0]))
    if config.resolved_loss == "softmax":
        return _softmax(z)[:, 1]
    return 1.0 / (1.0 + np.exp(-z[:, 1]))
