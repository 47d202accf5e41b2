"""Training loop, batching, dataset splits, and random hyperparameter search.

The loop is Adam on the mean cross-entropy, with class-balanced batches for
binary tasks, an epoch-level validation metric (AUROC when binary, accuracy
otherwise), best-snapshot early stopping, and strict determinism: all
randomness (init, batch order, dropout) flows from seeds spawned off
``TrainConfig.seed``, so two runs with the same inputs produce bitwise
identical parameters and logs (wall-clock fields aside).
"""

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import metrics as metrics_mod
from . import model
from .autodiff import NumericError, Tensor
from .data import normalize_values, value_statistics
from .optim import Adam


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    balanced_batching: bool = True
    normalize_values: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or (self.balanced_batching and self.batch_size < 2):
            raise ValueError("batch size must be >= 2 when balanced, else >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def split_dataset(dataset, fractions=(0.64, 0.16, 0.20), seed=0):
    """Disjoint, exhaustive, label-stratified splits via a seeded shuffle.

    Within each class the split sizes follow the fractions with largest-
    remainder rounding, so per-class proportions hold within one instance.
    Instances keep their original dataset order inside each split.
    """
    f = np.asarray(fractions, dtype=np.float64)
    if f.size < 1 or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ValueError("split fractions must be non-negative and sum to 1")
    labels = dataset.labels()
    rng = np.random.default_rng(seed)
    parts = [[] for _ in f]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < f.size:
            raise ValueError(f"class {cls} has {idx.size} instances, "
                             f"fewer than the {f.size} splits")
        idx = rng.permutation(idx)
        counts = np.floor(f * idx.size).astype(int)
        leftovers = f * idx.size - counts
        for j in np.argsort(-leftovers, kind="stable")[:idx.size - counts.sum()]:
            counts[j] += 1
        start = 0
        for j, c in enumerate(counts):
            parts[j].extend(int(i) for i in idx[start:start + c])
            start += c
    return tuple(dataset.replace_instances([dataset.instances[i] for i in sorted(p)])
                 for p in parts)


def _epoch_sequence(idx, need, rng):
    """A shuffled pass over ``idx``, extended by resampling when short."""
    perm = rng.permutation(idx)
    if need <= perm.size:
        return perm[:need]
    return np.concatenate([perm, rng.choice(idx, size=need - perm.size, replace=True)])


def stratified_batches(labels, batch_size, rng):
    """Shuffled batches whose class mix tracks the dataset proportions."""
    y = np.asarray(labels)
    slots = []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        for i, inst in enumerate(idx):
            slots.append(((i + 0.5) / idx.size, int(inst)))
    slots.sort()
    seq = [inst for _, inst in slots]
    for b in range(0, len(seq), batch_size):
        yield np.asarray(seq[b:b + batch_size], dtype=np.intp)


def balanced_batches(labels, batch_size, rng):
    """One epoch of batches with ceil(B/2) positives and floor(B/2) negatives.

    The epoch covers the larger class once (shuffled, no repeats); the
    smaller class is resampled with replacement to fill its half.  Falls
    back to stratified batches with a warning on non-binary labels.
    """
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size != 2:
        warnings.warn("balanced batching needs binary labels; "
                      "falling back to stratified batches")
        yield from stratified_batches(labels, batch_size, rng)
        return
    pos = np.flatnonzero(y == classes[1])
    neg = np.flatnonzero(y == classes[0])
    half_pos = (batch_size + 1) // 2
    half_neg = batch_size // 2
    num_batches = max(math.ceil(pos.size / half_pos), math.ceil(neg.size / half_neg))
    pos_seq = _epoch_sequence(pos, num_batches * half_pos, rng)
    neg_seq = _epoch_sequence(neg, num_batches * half_neg, rng)
    for b in range(num_batches):
        yield np.concatenate([pos_seq[b * half_pos:(b + 1) * half_pos],
                              neg_seq[b * half_neg:(b + 1) * half_neg]])


def batched_logits(arrays_cache, params, config, buffers=None, chunk=256):
    """Inference logits for precomputed instance arrays, in chunks."""
    outs = []
    for i in range(0, len(arrays_cache), chunk):
        batch = model.assemble_arrays(arrays_cache[i:i + chunk], config)
        outs.append(model.forward_batch(batch, params, config,
                                        training=False, buffers=buffers).data)
    return np.concatenate(outs, axis=0)


def _validation_metric(cache, labels, params, config, buffers, binary):
    logits = batched_logits(cache, params, config, buffers)
    if binary:
        return metrics_mod.evaluate_auroc(labels, model.positive_scores(logits, config))
    return metrics_mod.evaluate_accuracy(labels, model.predict(logits, config))


@dataclass
class TrainResult:
    params: dict
    buffers: dict
    log: list
    best_epoch: int
    best_metric: float
    value_stats: dict
    seconds: float


def train(model_config, train_set, val_set, train_config):
    """Fit the model; returns the best-validation snapshot and the log.

    One log record per epoch: epoch, mean train loss, validation metric,
    seconds.  Training stops once the validation metric has not improved
    for ``patience`` consecutive epochs (ties do not count as improvement)
    and the returned parameters are the best epoch's snapshot, never a
    worse one.  Non-finite loss aborts with a NumericError diagnostic.
    """
    t_start = time.perf_counter()
    s_params, s_batch, s_dropout = np.random.SeedSequence(train_config.seed).spawn(3)
    value_stats = None
    if train_config.normalize_values:
        value_stats = value_statistics(train_set)
        train_set = normalize_values(train_set, value_stats)
        val_set = normalize_values(val_set, value_stats)

    params, buffers = model.init_params(model_config, s_params)
    opt = Adam(params, lr=train_config.learning_rate)
    batch_rng = np.random.default_rng(s_batch)
    dropout_rng = np.random.default_rng(s_dropout)

    cache_train = [model.instance_arrays(i, model_config) for i in train_set.instances]
    cache_val = [model.instance_arrays(i, model_config) for i in val_set.instances]
    labels_train = train_set.labels()
    labels_val = val_set.labels()

    binary = model_config.classifier.num_classes == 2
    balanced = train_config.balanced_batching and binary
    if train_config.balanced_batching and not binary:
        warnings.warn("balanced batching needs binary labels; "
                      "falling back to stratified batches")

    best = {"metric": -math.inf, "epoch": 0, "params": None, "buffers": None}
    stall = 0
    log = []
    for epoch in range(1, train_config.max_epochs + 1):
        t_epoch = time.perf_counter()
        batcher = (balanced_batches if balanced else stratified_batches)(
            labels_train, train_config.batch_size, batch_rng)
        losses = []
        for idx in batcher:
            batch = model.assemble_arrays([cache_train[i] for i in idx], model_config)
            logits = model.forward_batch(batch, params, model_config,
                                         training=True, buffers=buffers,
                                         rng=dropout_rng)
            batch_loss = model.loss_from_logits(labels_train[idx], logits, model_config)
            value = batch_loss.item()
            if not math.isfinite(value):
                raise NumericError(f"training diverged: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
            losses.append(value)
        val_metric = _validation_metric(cache_val, labels_val, params,
                                        model_config, buffers, binary)
        log.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                    "val_metric": float(val_metric),
                    "seconds": time.perf_counter() - t_epoch})
        if val_metric > best["metric"]:
            best = {"metric": float(val_metric), "epoch": epoch,
                    "params": {k: t.data.copy() for k, t in params.items()},
                    "buffers": {k: v.copy() for k, v in buffers.items()}}
            stall = 0
        else:
            stall += 1
            if stall >= train_config.patience:
                break

    for name, tensor in params.items():
        tensor.data = best["params"][name]
        tensor.grad = None
    return TrainResult(params=params, buffers=best["buffers"], log=log,
                       best_epoch=best["epoch"], best_metric=best["metric"],
                       value_stats=value_stats,
                       seconds=time.perf_counter() - t_start)


def evaluate_model(dataset, params, config, buffers=None, value_stats=None):
    """Accuracy, loss, and (for binary tasks) AUROC on a dataset."""
    t0 = time.perf_counter()
    if value_stats is not None:
        dataset = normalize_values(dataset, value_stats)
    cache = [model.instance_arrays(i, config) for i in dataset.instances]
    labels = dataset.labels()
    logits = batched_logits(cache, params, config, buffers)
    acc = metrics_mod.evaluate_accuracy(labels, model.predict(logits, config))
    auroc = None
    if config.classifier.num_classes == 2 and np.unique(labels).size == 2:
        auroc = metrics_mod.evaluate_auroc(labels, model.positive_scores(logits, config))
    loss_value = model.loss_from_logits(labels, Tensor(logits), config).item()
    return metrics_mod.Metrics(accuracy=acc, auroc=auroc, loss=loss_value,
                               seconds=time.perf_counter() - t0)


@dataclass(frozen=True)
class SearchSpace:
    """Random-search grid for the architecture and optimizer."""

    num_blocks: tuple = (1, 2, 3, 4)
    dense_layers: tuple = (0, 1, 2, 3, 4, 5)
    widths: tuple = (32, 64, 128, 256, 512)
    dropouts: tuple = (0.0, 0.1, 0.2, 0.3)
    batch_sizes: tuple = (32, 64, 128)
    lr_range: tuple = (1e-5, 1e-3)
    num_trials: int = 10
    repeats: int = 5

    def __post_init__(self):
        if self.num_trials < 1 or self.repeats < 1:
            raise ValueError("num_trials and repeats must be >= 1")
        if not 0 < self.lr_range[0] <= self.lr_range[1]:
            raise ValueError("lr_range must be positive and ordered")


def sample_trial(space, base_model_config, base_train_config, rng):
    """Draw one in-grid configuration pair (log-uniform learning rate)."""
    enc = replace(base_model_config.encoder,
                  num_blocks=int(rng.choice(space.num_blocks)))
    clf = replace(base_model_config.classifier,
                  num_dense_layers=int(rng.choice(space.dense_layers)),
                  width=int(rng.choice(space.widths)),
                  dropout=float(rng.choice(space.dropouts)))
    lr = math.exp(rng.uniform(math.log(space.lr_range[0]),
                              math.log(space.lr_range[1])))
    model_config = replace(base_model_config, encoder=enc, classifier=clf)
    train_config = replace(base_train_config, learning_rate=lr,
                           batch_size=int(rng.choice(space.batch_sizes)))
    return model_config, train_config


def describe_trial(model_config, train_config):
    return {"num_blocks": model_config.encoder.num_blocks,
            "dense_layers": model_config.classifier.num_dense_layers,
            "width": model_config.classifier.width,
            "dropout": model_config.classifier.dropout,
            "learning_rate": train_config.learning_rate,
            "batch_size": train_config.batch_size,
            "seed": train_config.seed}


def _run_trial(args):
    model_config, train_config, train_set, val_set = args
    result = train(model_config, train_set, val_set, train_config)
    return result.best_metric


@dataclass
class SearchResult:
    trials: list
    best_index: int
    best_model_config: object
    best_train_config: object
    repeat_metrics: list
    mean_accuracy: float
    std_accuracy: float
    mean_auroc: float
    std_auroc: float


def random_search(space, base_model_config, base_train_config,
                  train_set, val_set, test_set, seed, jobs=1):
    """Sample ``num_trials`` configs, train each, rerun the best ``repeats``
    times with fresh seeds, and report test mean and std.

    Trials are independent (spawned seeds) so ``jobs > 1`` may run them in
    worker processes without changing any result.
    """
    seeds = np.random.SeedSequence(seed).spawn(space.num_trials + space.repeats + 1)
    sampler = np.random.default_rng(seeds[0])
    work = []
    for t in range(space.num_trials):
        mc, tc = sample_trial(space, base_model_config, base_train_config, sampler)
        tc = replace(tc, seed=int(seeds[t + 1].generate_state(1)[0]))
        work.append((mc, tc, train_set, val_set))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_run_trial, work))
    else:
        scores = [_run_trial(args) for args in work]

    trials = [dict(describe_trial(mc, tc), val_metric=score)
              for (mc, tc, _, _), score in zip(work, scores)]
    best_index = int(np.argmax(scores))
    best_mc, best_tc = work[best_index][0], work[best_index][1]

    repeat_metrics = []
    for r in range(space.repeats):
        tc = replace(best_tc, seed=int(seeds[space.num_trials + 1 + r].generate_state(1)[0]))
        result = train(best_mc, train_set, val_set, tc)
        repeat_metrics.append(evaluate_model(test_set, result.params, best_mc,
                                             result.buffers, result.value_stats))

    accs = np.array([m.accuracy for m in repeat_metrics])
    aurocs = [m.auroc for m in repeat_metrics]
    has_auroc = all(a is not None for a in aurocs)
    return SearchResult(
        trials=trials, best_index=best_index,
        best_model_config=best_mc, best_train_config=best_tc,
        repeat_metrics=repeat_metrics,
        mean_accuracy=float(accs.mean()), std_accuracy=float(accs.std()),
        mean_auroc=float(np.mean(aurocs)) if has_auroc else None,
        std_auroc=float(np.std(aurocs)) if has_auroc else None)
