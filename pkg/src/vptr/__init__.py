"""Video future-frame prediction with factorized spatiotemporal transformers.

The package implements a windowed-spatial / temporal attention block, three
predictor variants built from it (fully, partially, and non-autoregressive),
the full training loss stack, both recurrent inference modes, a dense
attention oracle, an analytic FLOPs model, a synthetic moving-shapes dataset,
and PSNR/SSIM metric tooling.
"""

from .config import ModelConfig, RunConfig, desk_model_config, paper_model_config
from .core import FeatureSeq, ValueRange, VideoBatch, window_merge, window_partition
from .tensorfile import load_tensor, save_tensor

__version__ = "0.1.0"

__all__ = [
    "FeatureSeq",
    "ModelConfig",
    "RunConfig",
    "ValueRange",
    "VideoBatch",
    "desk_model_config",
    "load_tensor",
    "paper_model_config",
    "save_tensor",
    "window_merge",
    "window_partition",
    "__version__",
]
