"""Ablation drivers: model variants, single-channel runs, encoder ensembles.

Variants are named config edits on top of a base model config.  The
single-channel driver restricts every instance to one channel (instances
lacking it are skipped, with counts reported); the ensemble driver trains
one single-channel model per channel, averages their penultimate features,
and retrains the designated model's output layer on those averages.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import metrics as metrics_mod
from . import model, training
from .autodiff import Tensor
from .data import AsTSInstance, normalize_values
from .optim import Adam

VARIANTS = ("default", "no-time", "te-1", "te-2", "te-3", "te-4", "bn", "ie", "mean")


def variant_model_config(name, base):
    """The model config for a named ablation variant of ``base``."""
    enc = base.encoder
    if name == "default":
        return base
    if name == "no-time":
        return replace(base, encoder=replace(enc, include_time=False))
    if name == "te-1":
        return replace(base, encoder=replace(enc, include_time=True,
                                             time_embedding="absolute"))
    if name == "te-2":
        return replace(base, encoder=replace(enc, include_time=True,
                                             time_embedding="delta"))
    if name == "te-3":
        return replace(base, encoder=replace(enc, include_time=True,
                                             time_embedding="sinusoidal"))
    if name == "te-4":
        return replace(base, encoder=replace(enc, include_time=True,
                                             time_embedding="none"))
    if name == "bn":
        return replace(base, encoder=replace(enc, use_batch_norm=True))
    if name == "ie":
        return replace(base, independent_encoders=True)
    if name == "mean":
        return replace(base, aggregation="mean")
    raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")


def restrict_to_channel(dataset, d):
    """Strip every instance down to channel ``d``.

    Instances without that channel are dropped; returns the restricted
    dataset and the number of skipped instances.
    """
    kept, skipped = [], 0
    for inst in dataset.instances:
        chans = [ch for ch in inst.channels if ch.channel_id == d]
        if chans:
            kept.append(AsTSInstance([chans[0]], inst.label))
        else:
            skipped += 1
    if not kept:
        raise ValueError(f"no instance contains channel {d}")
    return dataset.replace_instances(kept), skipped


def run_variant_comparison(splits, base_model_config, train_config, variant):
    """Train the default and one variant on the same splits and seed.

    Returns {name: (model_config, TrainResult, test Metrics)}.
    """
    train_set, val_set, test_set = splits
    out = {}
    for name in dict.fromkeys(("default", variant)):
        mc = variant_model_config(name, base_model_config)
        result = training.train(mc, train_set, val_set, train_config)
        m = training.evaluate_model(test_set, result.params, mc,
                                    result.buffers, result.value_stats)
        out[name] = (mc, result, m)
    return out


@dataclass
class SingleChannelResult:
    channel: int
    model_config: object
    train_result: object
    metrics: object
    skipped: dict


def run_single_channel(splits, channel, model_config, train_config):
    """Train and evaluate on instances restricted to one channel."""
    train_set, skip_tr = restrict_to_channel(splits[0], channel)
    val_set, skip_va = restrict_to_channel(splits[1], channel)
    test_set, skip_te = restrict_to_channel(splits[2], channel)
    result = training.train(model_config, train_set, val_set, train_config)
    m = training.evaluate_model(test_set, result.params, model_config,
                                result.buffers, result.value_stats)
    return SingleChannelResult(channel=channel, model_config=model_config,
                               train_result=result, metrics=m,
                               skipped={"train": skip_tr, "val": skip_va,
                                        "test": skip_te})


def _penultimate_matrix(instances, params, config, buffers, chunk=256):
    cache = [model.instance_arrays(i, config) for i in instances]
    outs = []
    for i in range(0, len(cache), chunk):
        batch = model.assemble_arrays(cache[i:i + chunk], config)
        outs.append(model.penultimate_batch(batch, params, config, buffers).data)
    return np.concatenate(outs, axis=0)


def _averaged_features(dataset, members):
    """Mean penultimate features across members, per instance.

    A member only contributes to instances containing its channel; instances
    covered by no member are skipped.  Returns (features, labels, skipped).
    """
    n = len(dataset.instances)
    width = None
    sums = None
    counts = np.zeros(n)
    for member in members:
        idx = [i for i, inst in enumerate(dataset.instances)
               if any(ch.channel_id == member.channel for ch in inst.channels)]
        if not idx:
            continue
        restricted = [AsTSInstance(
            [ch for ch in dataset.instances[i].channels
             if ch.channel_id == member.channel],
            dataset.instances[i].label) for i in idx]
        stats = member.train_result.value_stats
        if stats is not None:
            restricted = normalize_values(dataset.replace_instances(restricted),
                                          stats).instances
        feats = _penultimate_matrix(restricted, member.train_result.params,
                                    member.model_config,
                                    member.train_result.buffers)
        if sums is None:
            width = feats.shape[1]
            sums = np.zeros((n, width))
        sums[idx] += feats
        counts[idx] += 1
    covered = counts > 0
    if not covered.any():
        raise ValueError("no instance is covered by any ensemble member")
    features = sums[covered] / counts[covered, None]
    labels = dataset.labels()[covered]
    return features, labels, int(n - covered.sum())


def _head_metrics(features, labels, w, b, config):
    logits = ad.dense(Tensor(features), w, b)
    acc = metrics_mod.evaluate_accuracy(labels, model.predict(logits.data, config))
    auroc = None
    if config.classifier.num_classes == 2 and np.unique(labels).size == 2:
        auroc = metrics_mod.evaluate_auroc(labels,
                                           model.positive_scores(logits.data, config))
    loss = model.loss_from_logits(labels, logits, config).item()
    return metrics_mod.Metrics(accuracy=acc, auroc=auroc, loss=loss)


def _retrain_head(train_feats, train_labels, val_feats, val_labels,
                  designated, config, steps, lr):
    w = Tensor(designated.train_result.params["clf.out.w"].data.copy(),
               requires_grad=True)
    b = Tensor(designated.train_result.params["clf.out.b"].data.copy(),
               requires_grad=True)
    if steps == 0:
        return w, b
    opt = Adam({"w": w, "b": b}, lr=lr)
    binary = config.classifier.num_classes == 2
    best = (-math.inf, w.data.copy(), b.data.copy())
    for step in range(1, steps + 1):
        loss = model.loss_from_logits(train_labels,
                                      ad.dense(Tensor(train_feats), w, b), config)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 10 == 0 or step == steps:
            m = _head_metrics(val_feats, val_labels, w, b, config)
            metric = m.auroc if binary and m.auroc is not None else m.accuracy
            if metric > best[0]:
                best = (metric, w.data.copy(), b.data.copy())
    w.data, b.data = best[1], best[2]
    w.grad = b.grad = None
    return w, b


@dataclass
class EnsembleResult:
    metrics: object
    members: list
    designated: int
    skipped: dict


def run_ensemble(splits, model_config, train_config,
                 designated=1, head_steps=300, head_lr=1e-2):
    """Single-channel model per channel, feature averaging, retrained head.

    Each member trains with its own spawned seed.  ``head_steps=0`` keeps
    the designated model's output layer as-is (no retraining).
    """
    D = model_config.scheme.D
    if not 1 <= designated <= D:
        raise ValueError(f"designated channel {designated} out of range 1..{D}")
    seeds = np.random.SeedSequence(train_config.seed).spawn(D)
    members = []
    for d in range(1, D + 1):
        tc = replace(train_config, seed=int(seeds[d - 1].generate_state(1)[0]))
        members.append(run_single_channel(splits, d, model_config, tc))

    feats_tr, labels_tr, skip_tr = _averaged_features(splits[0], members)
    feats_va, labels_va, skip_va = _averaged_features(splits[1], members)
    feats_te, labels_te, skip_te = _averaged_features(splits[2], members)

    head = members[designated - 1]
    w, b = _retrain_head(feats_tr, labels_tr, feats_va, labels_va,
                         head, model_config, head_steps, head_lr)
    m = _head_metrics(feats_te, labels_te, w, b, model_config)
    return EnsembleResult(metrics=m, members=members, designated=designated,
                          skipped={"train": skip_tr, "val": skip_va,
                                   "test": skip_te})
