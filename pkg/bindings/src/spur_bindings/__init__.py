"""In-memory numeric interface to the spur front end.

Training stacks call py_extract / py_encode with plain arrays instead of
going through files; every numeric path dispatches into the spur package,
nothing is reimplemented here. Outputs are C-contiguous float32 arrays that
match the CLI's container payloads bit for bit.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

import spur
from spur import FoaClip, SscvTensor, ValidationError
from spur.config import PipelineConfig, pipeline_config_from_mapping
from spur.encoder import encode, load_weights

__version__ = spur.__version__

__all__ = ["py_extract", "py_encode", "ValidationError", "__version__"]


def _config(mapping: Mapping | None) -> PipelineConfig:
    if mapping is None:
        return PipelineConfig()
    return pipeline_config_from_mapping(dict(mapping), source="config mapping")


def py_extract(samples, sample_rate: int, config: Mapping | None = None) -> np.ndarray:
    """Feature tensor (T, B, 16) for a canonical (4, n_samples) signal.

    `config` takes the same keys as the CLI config file (unknown keys are
    rejected). The result equals the payload `spur extract` would write.
    """
    cfg = _config(config)
    clip = FoaClip(np.asarray(samples, dtype=np.float64), sample_rate)
    features = spur.extract_features(clip, cfg.extraction())
    return np.ascontiguousarray(features.values, dtype=np.float32)


def py_encode(sscv, weights_path, config: Mapping | None = None) -> np.ndarray:
    """Token tensor (P, adapter_out_dim) for a (T, B, 16) feature tensor.

    Weights come from a spur weights file; the result equals the payload
    `spur encode` would write for the same features and weights.
    """
    cfg = _config(config)
    values = np.asarray(sscv, dtype=np.float64)
    features = SscvTensor(values, epsilon=cfg.epsilon)
    weights = load_weights(weights_path)
    tokens = encode(features, weights, cfg.encoder)
    return np.ascontiguousarray(tokens.tokens, dtype=np.float32)
