"""Trajectory forecasting workbench: attention and recurrent forecasters over
quantized, Gaussian, and regressive motion formulations, with a numpy-only
autodiff core."""

from .autodiff import Tensor, softmax, log_softmax
from .codebook import MotionCodebook, fit_codebook, kmeans_fit
from .data import (
    FRAME_PERIOD,
    Fold,
    NormStats,
    RawWindow,
    TrackWindow,
    Trajectory,
    augment_scale,
    canonicalize,
    decode_future,
    extract_windows,
    fit_normalization,
    loo_splits,
    normalize_window,
    parse_dataset,
    to_representation,
    window_all,
)
from .errors import (
    ConfigError,
    DataError,
    FitError,
    MaskError,
    ModelError,
    ParseError,
    SamplingError,
    ShapeError,
    TrainingError,
    TrajlabError,
)
from .evaluation import (
    Forecaster,
    ForecastResult,
    MetricsReport,
    MetricsRow,
    best_of_n,
    constant_velocity_forecast,
    evaluate_best_of_n,
    evaluate_mad_fad,
    horizon_sweep,
    mad_fad,
)
from .checkpoint import load_checkpoint, load_codebook, save_checkpoint, save_codebook
from .models import (
    ModelConfig,
    build_model,
    config_hash,
    count_parameters,
    full_scale_bert_config,
    full_scale_tf_config,
    parameter_shapes,
    scale_report,
)
from .multimodal import (
    MotionCluster,
    cluster_motion_types,
    endpoint_sweep,
    nearest_to_medoid,
)
from .training import TrainReport, TrainSettings, train

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
