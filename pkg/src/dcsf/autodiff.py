"""Dense-tensor reverse-mode differentiation.

A ``Tensor`` wraps a float64 numpy array.  Every operation records its parent
tensors and a closure computing the parents' adjoints, so the op graph *is*
the tape: ``backward()`` on a scalar loss walks the recorded graph once in
reverse topological order.  Calling ``backward()`` again without
``zero_grad`` accumulates into the existing ``grad`` fields.

Only the primitives the set-function model needs are provided: masked 1-D
convolution (same / causal padding), ReLU, dense layers, global and causal
average pooling, segment sums for set aggregation, the cross-entropy losses,
and mask-aware batch normalization (ablation path).  Convolution dispatches
to the kernel backend in :mod:`dcsf.kernels`.
"""

import numpy as np

from .kernels import conv1d_backward, conv1d_forward


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class EmptyPoolError(ValueError):
    """Pooling was asked to average over zero valid positions."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class Tensor:
    """Array node in the recorded computation.

    ``requires_grad`` marks leaves whose gradient should be accumulated;
    results of operations inherit it from their parents.  ``grad`` stays
    ``None`` until a backward pass deposits something.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be a scalar produced by recorded operations.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward() called on a tensor outside any recorded computation")

        order = _topo_order(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    # not in-place: closures may hand the same buffer to
                    # several parents (e.g. add passing g straight through)
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = np.asarray(pg, dtype=np.float64)

    # small operator sugar, mainly for tests
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def relu(x):
    x = _as_tensor(x)
    keep = x.data > 0
    data = np.where(keep, x.data, 0.0)

    def backward(g):
        return (g * keep,)

    return _result(data, (x,), backward)


def sum_all(x):
    data = np.asarray(x.data.sum())

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _result(data, (x,), backward)


def mean_all(x):
    n = x.data.size
    data = np.asarray(x.data.mean())

    def backward(g):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _result(data, (x,), backward)


def dense(x, w, b):
    """Affine map ``x @ w.T + b`` for a (B, K_in) batch or a (K_in,) vector."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"dense: x {x.data.shape} incompatible with w {w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"dense: bias {b.data.shape} incompatible with w {w.data.shape}")
    data = x.data @ w.data.T + b.data

    def backward(g):
        if x.data.ndim == 1:
            return g @ w.data, np.outer(g, x.data), g.copy()
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return _result(data, (x, w, b), backward)


def _batched(data):
    """Promote (C, L) to (1, C, L); report whether promotion happened."""
    if data.ndim == 2:
        return data[None], True
    if data.ndim == 3:
        return data, False
    raise ShapeError(f"expected 2-D or 3-D activations, got shape {data.shape}")


def _batched_mask(mask, length, batch):
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 1:
        m = np.broadcast_to(m, (batch, m.shape[0]))
    if m.shape != (batch, length):
        raise ShapeError(f"mask shape {m.shape} does not match activations ({batch},{length})")
    return m


def conv1d(x, w, b, padding="same"):
    """1-D cross-correlation along the last axis, output length == input length.

    ``same`` pads floor(k/2) zeros left and k-1-floor(k/2) right; ``causal``
    pads k-1 zeros on the left only, so output t never sees inputs > t.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if w.data.ndim != 3:
        raise ShapeError(f"conv1d: weights must be (C_out, C_in, k), got {w.data.shape}")
    k = w.data.shape[2]
    if k < 1:
        raise ShapeError("conv1d: kernel length must be >= 1")
    if padding == "same":
        pad_left = k // 2
    elif padding == "causal":
        pad_left = k - 1
    else:
        raise ValueError(f"conv1d: unknown padding {padding!r}")

    xb, squeezed = _batched(x.data)
    if xb.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv1d: input channels {xb.shape[1]} != weight channels {w.data.shape[1]}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"conv1d: bias {b.data.shape} incompatible with weights {w.data.shape}")
    xb = np.ascontiguousarray(xb)
    wc = np.ascontiguousarray(w.data)
    out = conv1d_forward(xb, wc, np.ascontiguousarray(b.data), pad_left)

    def backward(g):
        gb3 = g[None] if squeezed else g
        gx, gw, gbias = conv1d_backward(xb, wc, np.ascontiguousarray(gb3), pad_left)
        return gx[0] if squeezed else gx, gw, gbias

    return _result(out[0] if squeezed else out, (x, w, b), backward)


def apply_mask(x, mask):
    """Zero out padded columns; gradients through them are exactly zero."""
    x = _as_tensor(x)
    xb, squeezed = _batched(x.data)
    m = _batched_mask(mask, xb.shape[2], xb.shape[0])[:, None, :]
    data = xb * m

    def backward(g):
        gb = g[None] if squeezed else g
        gx = gb * m
        return (gx[0] if squeezed else gx,)

    return _result(data[0] if squeezed else data, (x,), backward)


def global_average_pool(x, mask):
    """Per-channel mean over valid positions only: (B, C, L) -> (B, C).

    The sum runs left to right (a running sum's last element) so the result
    is bit-identical to the causal pool evaluated at the last valid position;
    numpy's pairwise ``sum`` would order the additions differently.
    """
    x = _as_tensor(x)
    xb, squeezed = _batched(x.data)
    m = _batched_mask(mask, xb.shape[2], xb.shape[0])
    counts = m.sum(axis=1)
    if np.any(counts == 0):
        raise EmptyPoolError("global_average_pool: an element has no valid positions")
    data = np.cumsum(xb * m[:, None, :], axis=2)[:, :, -1] / counts[:, None]

    def backward(g):
        gb = g[None] if squeezed else g
        gx = gb[:, :, None] * (m / counts[:, None])[:, None, :]
        return (gx[0] if squeezed else gx,)

    return _result(data[0] if squeezed else data, (x,), backward)


def causal_average_pool(x, mask):
    """Running mean over valid positions up to each step; masked columns are 0."""
    x = _as_tensor(x)
    xb, squeezed = _batched(x.data)
    m = _batched_mask(mask, xb.shape[2], xb.shape[0])
    m3 = m[:, None, :]
    counts = np.maximum(np.cumsum(m, axis=1), 1.0)[:, None, :]
    data = np.cumsum(xb * m3, axis=2) / counts * m3

    def backward(g):
        gb = g[None] if squeezed else g
        r = gb * m3 / counts
        rev = np.cumsum(r[:, :, ::-1], axis=2)[:, :, ::-1]
        gx = rev * m3
        return (gx[0] if squeezed else gx,)

    return _result(data[0] if squeezed else data, (x,), backward)


def segment_sum(x, segment_ids, num_segments):
    """Sum rows of (N, K) into (num_segments, K) buckets; the set aggregation."""
    x = _as_tensor(x)
    seg = np.asarray(segment_ids, dtype=np.intp)
    if x.data.ndim != 2 or seg.shape != (x.data.shape[0],):
        raise ShapeError("segment_sum: x must be (N, K) with one segment id per row")
    if x.data.shape[0] == 0:
        raise ValueError("segment_sum: empty input")
    data = np.zeros((num_segments, x.data.shape[1]))
    np.add.at(data, seg, x.data)

    def backward(g):
        return (g[seg],)

    return _result(data, (x,), backward)


def take_columns(x, indices):
    """Gather columns of (C, L) by index; index -1 yields a zero column."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    valid = idx >= 0
    data = x.data[:, np.where(valid, idx, 0)]
    data[:, ~valid] = 0.0

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx.T, idx[valid], g.T[valid])
        return (gx,)

    return _result(data, (x,), backward)


def reshape(x, shape):
    """View the same elements under a new shape."""
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _result(data, (x,), backward)


def transpose2d(x):
    """Swap the two axes of a matrix."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d: expected a matrix, got shape {x.data.shape}")

    def backward(g):
        return (g.T.copy(),)

    return _result(x.data.T.copy(), (x,), backward)


def scaled_mask_mul(x, keep_mask, scale):
    """Inverted-dropout multiply by a fixed 0/1 mask times ``scale``."""
    x = _as_tensor(x)
    factor = keep_mask * scale

    def backward(g):
        return (g * factor,)

    return _result(x.data * factor, (x,), backward)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite values")


def binary_cross_entropy(labels, logits):
    """Stable sigmoid cross-entropy; elementwise over logits.

    ``softplus(z) - y*z`` evaluated as ``max(z,0) - y*z + log1p(exp(-|z|))``.
    """
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64)
    z = logits.data
    _check_finite(z, "logits")
    data = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        sigma = 1.0 / (1.0 + np.exp(-z))
        return (g * (sigma - y),)

    return _result(data, (logits,), backward)


def softmax_cross_entropy(labels, logits):
    """Log-sum-exp cross-entropy for (B, L) logits and integer labels (B,)."""
    logits = _as_tensor(logits)
    z = logits.data
    if z.ndim == 1:
        z = z[None]
        squeezed = True
    else:
        squeezed = False
    _check_finite(z, "logits")
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if y.shape[0] != z.shape[0]:
        raise ShapeError("softmax_cross_entropy: one label per logit row required")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ValueError("softmax_cross_entropy: label out of range")
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    data = lse - z[np.arange(z.shape[0]), y]

    def backward(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(z.shape[0]), y] -= 1.0
        gb = np.atleast_1d(g)
        gz = p * gb[:, None]
        return (gz[0] if squeezed else gz,)

    return _result(data[0] if squeezed else data, (logits,), backward)


def sigmoid_cross_entropy_multiclass(labels, logits):
    """Per-class sigmoid cross-entropy against one-hot targets, summed
    over classes.  Kept as an alternative multi-class objective."""
    logits = _as_tensor(logits)
    z = np.atleast_2d(logits.data)
    _check_finite(z, "logits")
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    onehot = np.zeros_like(z)
    onehot[np.arange(z.shape[0]), y] = 1.0
    elem = np.maximum(z, 0.0) - onehot * z + np.log1p(np.exp(-np.abs(z)))
    data = elem.sum(axis=1)

    def backward(g):
        sigma = 1.0 / (1.0 + np.exp(-z))
        gz = (sigma - onehot) * np.atleast_1d(g)[:, None]
        return (gz.reshape(logits.data.shape),)

    return _result(data, (logits,), backward)


def masked_batch_norm(x, gamma, beta, mask, running_mean, running_var,
                      training, momentum=0.1, eps=1e-5):
    """Batch normalization over batch and *valid* time positions only.

    Padding must not pollute the statistics, so means and variances are
    taken over mask==1 positions across the whole batch; the output is
    re-masked.  ``running_mean``/``running_var`` are plain arrays mutated in
    place during training and used verbatim at inference.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xb, squeezed = _batched(x.data)
    m = _batched_mask(mask, xb.shape[2], xb.shape[0])
    m3 = m[:, None, :]
    n = m.sum()
    if n == 0:
        raise EmptyPoolError("masked_batch_norm: no valid positions in batch")

    if training:
        mean = (xb * m3).sum(axis=(0, 2)) / n
        centered = (xb - mean[None, :, None]) * m3
        var = (centered ** 2).sum(axis=(0, 2)) / n
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xb - mean[None, :, None]) * inv_std[None, :, None] * m3
    data = (gamma.data[None, :, None] * xhat + beta.data[None, :, None]) * m3

    def backward(g):
        gb = (g[None] if squeezed else g) * m3
        dgamma = (gb * xhat).sum(axis=(0, 2))
        dbeta = gb.sum(axis=(0, 2))
        dxhat = gb * gamma.data[None, :, None]
        if training:
            mean_dxhat = dxhat.sum(axis=(0, 2)) / n
            mean_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2)) / n
            gx = (inv_std[None, :, None]
                  * (dxhat - mean_dxhat[None, :, None]
                     - xhat * mean_dxhat_xhat[None, :, None]) * m3)
        else:
            gx = dxhat * inv_std[None, :, None] * m3
        return (gx[0] if squeezed else gx), dgamma, dbeta

    return _result(data[0] if squeezed else data, (x, gamma, beta), backward)
