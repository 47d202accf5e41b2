"""Deep convolutional set functions for asynchronous time series.

Classifies multivariate series whose channels are observed independently at
unaligned times.  Each instance is a set of channels; a shared convolutional
encoder embeds every channel, the embeddings are summed, and a dense head
classifies the sum.  A causal variant produces a prediction at every time
step from past observations only.

Subpackages: :mod:`dcsf.kernels` (convolution backends), :mod:`dcsf.autodiff`
(reverse-mode tape), :mod:`dcsf.model`, :mod:`dcsf.data`, :mod:`dcsf.datagen`,
:mod:`dcsf.training`, :mod:`dcsf.metrics`, :mod:`dcsf.ablation`,
:mod:`dcsf.cli`.
"""

__version__ = "0.1.0"

from .data import (AsTSInstance, Channel, ChannelIndicatorScheme, Dataset,
                   DatasetFormatError, ValidationError, load_dataset,
                   normalize_times, normalize_values, save_dataset, validate,
                   value_statistics)
from .metrics import Metrics
from .model import ClassifierConfig, EncoderConfig, ModelConfig
from .training import (SearchSpace, TrainConfig, TrainResult, evaluate_model,
                       random_search, split_dataset, train)
from .datagen import (RegularSeries, ToyConfig, asynchronize, induce_missing,
                      load_regular_table, make_toy_dataset, save_regular_table)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AsTSInstance", "Channel", "ChannelIndicatorScheme", "ClassifierConfig",
    "Dataset", "DatasetFormatError", "EncoderConfig", "Metrics", "ModelConfig",
    "RegularSeries", "SearchSpace", "ToyConfig", "TrainConfig", "TrainResult",
    "ValidationError", "asynchronize", "evaluate_model", "induce_missing",
    "load_checkpoint", "load_dataset", "load_regular_table",
    "make_toy_dataset", "normalize_times", "normalize_values", "random_search",
    "save_checkpoint", "save_dataset", "save_regular_table", "split_dataset",
    "train", "validate", "value_statistics", "__version__",
]
