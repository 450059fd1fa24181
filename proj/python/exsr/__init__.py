"""Exemplar-guided face super-resolution.

Images are float arrays shaped (N, 3, H, W) in [-1, 1] for the model and in
[0, 1] for the metrics. Exemplar sets are (N, K, 3, H, W).
"""

import json

from ._exsr import (
    ConfigError,
    DataError,
    DependencyError,
    Error,
    IoError,
    NotFoundError,
    ShapeError,
    ValidationError,
    downsample,
    fuse,
    normalize_weights,
    psnr,
    resize_bicubic,
    ssim,
    upsample_bicubic,
    version,
)
from ._exsr import Model as _Model
from ._exsr import preset_config as _preset_config

__all__ = [
    "ConfigError",
    "DataError",
    "DependencyError",
    "Error",
    "IoError",
    "Model",
    "NotFoundError",
    "ShapeError",
    "ValidationError",
    "downsample",
    "fuse",
    "normalize_weights",
    "preset_config",
    "psnr",
    "resize_bicubic",
    "ssim",
    "upsample_bicubic",
    "version",
]


def preset_config(dataset="celeba", scale=8):
    """Preset model config as a dict ("celeba" or "webface")."""
    return json.loads(_preset_config(dataset, scale))


class Model:
    """A generator. Build from a config dict or load a checkpoint."""

    def __init__(self, handle):
        self._handle = handle

    @classmethod
    def build(cls, config, seed=0):
        return cls(_Model.build(json.dumps(config), seed))

    @classmethod
    def load(cls, path, config=None):
        return cls(_Model.load(str(path), None if config is None else json.dumps(config)))

    def super_resolve(self, lr, exemplars):
        """Returns a dict with "sr", "lr_2x", "weights_lr" and "weights_2x" arrays."""
        return self._handle.super_resolve(lr, exemplars)

    def save(self, path):
        self._handle.save(str(path))

    @property
    def config(self):
        return json.loads(self._handle.config_json)

    @property
    def digest(self):
        return self._handle.digest

    @property
    def parameter_count(self):
        return self._handle.parameter_count
