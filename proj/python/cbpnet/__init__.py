"""Python bindings for the cbpnet continual-learning library."""

from ._cbpnet import (
    ConfigError,
    CorruptionError,
    DataError,
    Error,
    FormatError,
    IndexError,
    IoError,
    NumericDomainError,
    ShapeError,
    StateError,
    avg_accuracy,
    count_trainable,
    default_config,
    forgetting,
    gelu,
    gelu_derivative,
    generate_synthetic,
    load_container,
    matching_loss,
    matrix_csv,
    parse_matrix_csv,
    run_sequence,
    save_container,
    select_eprompt,
    softmax,
)

__all__ = [
    "ConfigError",
    "CorruptionError",
    "DataError",
    "Error",
    "FormatError",
    "IndexError",
    "IoError",
    "NumericDomainError",
    "ShapeError",
    "StateError",
    "avg_accuracy",
    "count_trainable",
    "default_config",
    "forgetting",
    "gelu",
    "gelu_derivative",
    "generate_synthetic",
    "load_container",
    "matching_loss",
    "matrix_csv",
    "parse_matrix_csv",
    "run_sequence",
    "save_container",
    "select_eprompt",
    "softmax",
]
