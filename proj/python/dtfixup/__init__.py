"""DT-Fixup initialization, stability probes and depth-sweep harness."""

from ._core import (
    ConfigError,
    DimensionError,
    Encoder,
    EncoderConfig,
    ExperimentConfig,
    InitScheme,
    NumericError,
    SchemeKind,
    UsageError,
    __version__,
    config_hash,
    diagnostics_csv,
    dtfixup_scale,
    estimate_mu,
    initialize,
    make_scheme,
    oracle_gradients,
    parse_config,
    run_depth_sweep,
    run_training,
    serialize_config,
    tfixup_scale,
    verify,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Encoder",
    "EncoderConfig",
    "ExperimentConfig",
    "InitScheme",
    "NumericError",
    "SchemeKind",
    "UsageError",
    "__version__",
    "config_hash",
    "diagnostics_csv",
    "dtfixup_scale",
    "estimate_mu",
    "initialize",
    "make_scheme",
    "oracle_gradients",
    "parse_config",
    "run_depth_sweep",
    "run_training",
    "serialize_config",
    "tfixup_scale",
    "verify",
]
