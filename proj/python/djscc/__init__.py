"""Multi-user D-JSCC simulator: Python front end to the C++ core."""

from ._djscc import (
    ConfigError,
    IoError,
    Model,
    NumericError,
    ShapeError,
    awgn,
    build_encoder,
    build_user_decoder,
    compare,
    default_config,
    evaluate,
    forgetting,
    load_checkpoint,
    ms_ssim,
    normalize_config,
    power_normalize,
    psnr,
    snr_to_sigma,
    synth_dataset,
    train,
)

__all__ = [
    "ConfigError",
    "IoError",
    "Model",
    "NumericError",
    "ShapeError",
    "awgn",
    "build_encoder",
    "build_user_decoder",
    "compare",
    "default_config",
    "evaluate",
    "forgetting",
    "load_checkpoint",
    "ms_ssim",
    "normalize_config",
    "power_normalize",
    "psnr",
    "snr_to_sigma",
    "synth_dataset",
    "train",
]
