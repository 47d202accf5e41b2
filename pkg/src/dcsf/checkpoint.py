"""Versioned model checkpoints: configs, parameters, normalization state.

Arrays are serialized losslessly (little-endian float64 bytes, base64) so a
save/load round trip is bitwise exact.  The file is a single JSON document;
version bumps are loud failures, never silent reinterpretation.
"""

import base64
import json
from dataclasses import asdict

import numpy as np

from .autodiff import Tensor
from .data import ChannelIndicatorScheme
from .model import ClassifierConfig, EncoderConfig, ModelConfig

FORMAT_NAME = "dcsf-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The checkpoint file is malformed, truncated, or of a foreign version."""


def _encode_array(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.astype("<f8", copy=False).tobytes()).decode("ascii")}


def _decode_array(entry):
    try:
        raw = base64.b64decode(entry["data"], validate=True)
        shape = tuple(int(s) for s in entry["shape"])
        a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad array entry: {exc}") from None
    if a.size != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"array data does not match shape {shape}")
    return a.reshape(shape).copy()


def model_config_to_dict(config):
    return {"scheme": {"kind": config.scheme.kind, "D": config.scheme.D},
            "encoder": asdict(config.encoder),
            "classifier": asdict(config.classifier),
            "aggregation": config.aggregation,
            "independent_encoders": config.independent_encoders,
            "loss_kind": config.loss_kind}


def model_config_from_dict(d):
    try:
        scheme = ChannelIndicatorScheme(d["scheme"]["kind"], d["scheme"]["D"])
        encoder = EncoderConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                                   for k, v in d["encoder"].items()})
        classifier = ClassifierConfig(**d["classifier"])
        return ModelConfig(scheme=scheme, encoder=encoder, classifier=classifier,
                           aggregation=d["aggregation"],
                           independent_encoders=d["independent_encoders"],
                           loss_kind=d["loss_kind"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad model config: {exc}") from None


def save_checkpoint(path, params, buffers, model_config,
                    time_range=None, value_stats=None, extra=None):
    """Write params/buffers plus everything needed to reuse them.

    ``time_range`` and ``value_stats`` are the normalization statistics the
    model was trained under; evaluation must reapply them to new data.
    ``extra`` is an arbitrary JSON-compatible dict (training config, split
    sizes, provenance) stored verbatim.
    """
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "model": model_config_to_dict(model_config),
        "params": {k: _encode_array(t.data if isinstance(t, Tensor) else t)
                   for k, t in sorted(params.items())},
        "buffers": {k: _encode_array(v) for k, v in sorted((buffers or {}).items())},
        "normalization": {
            "time_range": list(time_range) if time_range is not None else None,
            "value_stats": ({str(k): [float(m), float(s)]
                             for k, (m, s) in sorted(value_stats.items())}
                            if value_stats is not None else None),
        },
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint; returns a dict with live Tensors under 'params'."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a checkpoint file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise CheckpointError("not a checkpoint file (missing format marker)")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}, "
                              f"expected {FORMAT_VERSION}")
    norm = doc.get("normalization", {})
    time_range = norm.get("time_range")
    value_stats = norm.get("value_stats")
    return {
        "model_config": model_config_from_dict(doc["model"]),
        "params": {k: Tensor(_decode_array(v), requires_grad=True)
                   for k, v in doc["params"].items()},
        "buffers": {k: _decode_array(v) for k, v in doc.get("buffers", {}).items()},
        "time_range": tuple(time_range) if time_range else None,
        "value_stats": ({int(k): (v[0], v[1]) for k, v in value_stats.items()}
                        if value_stats else None),
        "extra": doc.get("extra", {}),
    }
