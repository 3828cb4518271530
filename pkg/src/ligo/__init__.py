"""Learned linear growth operators for transformers, with classical growth baselines."""

__version__ = "0.1.0"

from .errors import LigoError  # noqa: E402
from .model import ModelConfig, ParamSet  # noqa: E402
from .growth import GrowthSpec, grow  # noqa: E402
from .ligo_operator import LigoParams, ligo_expand, ligo_init, ligo_learn  # noqa: E402

__all__ = ["LigoError", "ModelConfig", "ParamSet", "GrowthSpec", "grow",
           "LigoParams", "ligo_expand", "ligo_init", "ligo_learn", "__version__"]
