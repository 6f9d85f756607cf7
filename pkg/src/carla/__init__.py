"""Contrastive self-supervised anomaly detection for (multivariate) time series.

Stage one trains a residual 1-D conv encoder with a triplet loss over
(window, earlier window, anomaly-injected window) and mines nearest and
furthest neighbours in its representation space. Stage two fine-tunes the
encoder as a C-way classifier so neighbours agree and far windows disagree;
windows outside the majority class are anomalous.
"""

from carla._backend import BACKEND as KERNEL_BACKEND
from carla.config import RunConfig
from carla.dataset import BenchmarkEntity, LabeledSeries, NormStats, TimeSeries
from carla.encoder import EncoderConfig
from carla.errors import CarlaError, DataError, NumericError, UsageError
from carla.pretext import PretextConfig
from carla.selfsup import SelfSupConfig

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "BenchmarkEntity",
    "CarlaError",
    "DataError",
    "EncoderConfig",
    "LabeledSeries",
    "NormStats",
    "NumericError",
    "PretextConfig",
    "RunConfig",
    "SelfSupConfig",
    "TimeSeries",
    "UsageError",
]
