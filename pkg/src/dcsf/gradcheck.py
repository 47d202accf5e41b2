"""Finite-difference verification of the recorded-graph adjoints.

Central differences with step 1e-3 in double precision.  Each checked entry
scores ``|analytic - numeric|`` relative to the larger magnitude, falling
back to the absolute difference when both are effectively zero, so exact
zero gradients (masked positions) pass without special cases.  ``suite``
runs every primitive plus full training objectives and reports the worst
entry per check; everything is driven by one seeded generator, so a seed
always checks the same entries.

A secant across a ReLU kink measures neither one-sided derivative, so a
fixed-step difference can disagree with a perfectly correct adjoint.
Standalone primitive checks keep their inputs clear of zero; the
full-objective checks cannot, so entries that fail at the pinned step are
re-measured at smaller steps: a genuine adjoint bug produces a
step-independent error, while a kink artifact shrinks with the interval.
The reported error is the best across attempted steps.
"""

import numpy as np

from . import autodiff as ad
from . import model
from .autodiff import Tensor
from .data import AsTSInstance, Channel, ChannelIndicatorScheme

STEP = 1e-3
TOLERANCE = 1e-4
ZERO_LEVEL = 1e-6


def entry_error(analytic, numeric):
    """Relative disagreement, or absolute when both are ~0."""
    scale = max(abs(analytic), abs(numeric))
    if scale < ZERO_LEVEL:
        return abs(analytic - numeric)
    return abs(analytic - numeric) / scale


REFINE_STEPS = (1e-5, 1e-6)


def check(fn, tensors, step=STEP, max_entries=None, rng=None,
          refine_steps=REFINE_STEPS):
    """Worst entry_error between ``fn``'s gradient and central differences.

    ``fn`` must rebuild its scalar output from the tensors' current data on
    every call.  Tensors larger than ``max_entries`` are subsampled with
    ``rng`` instead of swept exhaustively.  Entries whose error at ``step``
    exceeds the tolerance are re-measured at each of ``refine_steps`` and
    keep their best value (see the module docstring on kinks).
    """
    for t in tensors:
        t.zero_grad()
    fn().backward()
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for t, grad in zip(tensors, grads):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            picked = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            picked = np.arange(flat.size)
        for i in picked:
            kept = flat[i]

            def fd(h):
                flat[i] = kept + h
                hi = float(fn().data)
                flat[i] = kept - h
                lo = float(fn().data)
                flat[i] = kept
                return (hi - lo) / (2.0 * h)

            err = entry_error(gflat[i], fd(step))
            for h in refine_steps:
                if err < TOLERANCE:
                    break
                err = min(err, entry_error(gflat[i], fd(h)))
            worst = max(worst, err)
    return worst


def _away_from_zero(rng, shape, margin=0.25):
    x = rng.standard_normal(shape)
    return x + margin * np.sign(x)


def _fixture_instances(rng, num_classes, obs=3):
    """One instance per class, each with channels 1 and 2, ``obs`` points."""
    instances = []
    for label in range(num_classes):
        channels = [Channel(d, rng.standard_normal(obs), np.sort(rng.random(obs)))
                    for d in (1, 2)]
        instances.append(AsTSInstance(channels, label))
    return instances


def _objective_config(num_classes, causal=False, loss_kind="auto"):
    return model.ModelConfig(
        scheme=ChannelIndicatorScheme("onehot", 2),
        encoder=model.EncoderConfig(num_blocks=1, embedding_dim=10, causal=causal),
        classifier=model.ClassifierConfig(num_classes=num_classes,
                                          num_dense_layers=1, width=7),
        loss_kind=loss_kind)


def _check_objective(rng, causal=False, num_classes=2, loss_kind="auto"):
    config = _objective_config(num_classes, causal, loss_kind)
    params, _ = model.init_params(config, int(rng.integers(1 << 30)))
    instances = _fixture_instances(rng, num_classes)
    fn = lambda: model.loss(instances, params, config)
    return check(fn, list(params.values()), max_entries=12, rng=rng)


def suite(seed=0, step=STEP):
    """Max entry_error per primitive and per full objective, as a dict."""
    rng = np.random.default_rng(seed)
    results = {}

    x = Tensor(rng.standard_normal((2, 3, 7)), requires_grad=True)
    w = Tensor(0.5 * rng.standard_normal((4, 3, 5)), requires_grad=True)
    b = Tensor(0.1 * rng.standard_normal(4), requires_grad=True)
    for padding in ("same", "causal"):
        r = rng.standard_normal((2, 4, 7))
        fn = lambda: ad.sum_all(ad.mul(ad.conv1d(x, w, b, padding), r))
        results[f"conv1d_{padding}"] = check(fn, [x, w, b], step)

    xr = Tensor(_away_from_zero(rng, (4, 5)), requires_grad=True)
    r = rng.standard_normal((4, 5))
    results["relu"] = check(lambda: ad.sum_all(ad.mul(ad.relu(xr), r)), [xr], step)

    xd = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    wd = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    bd = Tensor(rng.standard_normal(2), requires_grad=True)
    r = rng.standard_normal((3, 2))
    results["dense"] = check(
        lambda: ad.sum_all(ad.mul(ad.dense(xd, wd, bd), r)), [xd, wd, bd], step)

    mask = np.ones((2, 7))
    mask[0, 5:] = 0.0
    mask[1, 3:] = 0.0
    xp = Tensor(rng.standard_normal((2, 3, 7)), requires_grad=True)
    r = rng.standard_normal((2, 3))
    results["global_average_pool"] = check(
        lambda: ad.sum_all(ad.mul(ad.global_average_pool(xp, mask), r)), [xp], step)
    r = rng.standard_normal((2, 3, 7))
    results["causal_average_pool"] = check(
        lambda: ad.sum_all(ad.mul(ad.causal_average_pool(xp, mask), r)), [xp], step)
    results["apply_mask"] = check(
        lambda: ad.sum_all(ad.mul(ad.apply_mask(xp, mask), r)), [xp], step)

    xs = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    seg = np.array([0, 1, 0, 2, 1])
    r = rng.standard_normal((3, 3))
    results["segment_sum"] = check(
        lambda: ad.sum_all(ad.mul(ad.segment_sum(xs, seg, 3), r)), [xs], step)

    xt = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    cols = np.array([0, 2, 2, -1, 5])
    r = rng.standard_normal((3, 5))
    results["take_columns"] = check(
        lambda: ad.sum_all(ad.mul(ad.take_columns(xt, cols), r)), [xt], step)

    xb = Tensor(rng.standard_normal((2, 4, 6)), requires_grad=True)
    gamma = Tensor(1.0 + 0.1 * rng.standard_normal(4), requires_grad=True)
    beta = Tensor(0.1 * rng.standard_normal(4), requires_grad=True)
    bn_mask = np.ones((2, 6))
    bn_mask[1, 4:] = 0.0
    r = rng.standard_normal((2, 4, 6))
    fn = lambda: ad.sum_all(ad.mul(
        ad.masked_batch_norm(xb, gamma, beta, bn_mask,
                             np.zeros(4), np.ones(4), training=True), r))
    results["masked_batch_norm"] = check(fn, [xb, gamma, beta], step)

    zb = Tensor(rng.standard_normal(6), requires_grad=True)
    yb = rng.integers(0, 2, size=6)
    results["binary_cross_entropy"] = check(
        lambda: ad.mean_all(ad.binary_cross_entropy(yb, zb)), [zb], step)

    zs = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    ys = rng.integers(0, 4, size=5)
    results["softmax_cross_entropy"] = check(
        lambda: ad.mean_all(ad.softmax_cross_entropy(ys, zs)), [zs], step)
    results["sigmoid_cross_entropy"] = check(
        lambda: ad.mean_all(ad.sigmoid_cross_entropy_multiclass(ys, zs)), [zs], step)

    results["objective"] = _check_objective(rng)
    results["objective_causal"] = _check_objective(rng, causal=True)
    results["objective_softmax"] = _check_objective(rng, num_classes=3,
                                                    loss_kind="softmax")
    return results


def passed(results, tolerance=TOLERANCE):
    return all(err < tolerance for err in results.values())
