"""Contrastive learning on long-tailed data with sampled out-of-distribution examples."""

from colt.errors import (
    ColtError,
    ContractError,
    DegenerateInputError,
    ParameterError,
    ParseError,
    PoolExhaustedError,
)

__version__ = "0.1.0"

__all__ = [
    "ColtError",
    "ContractError",
    "DegenerateInputError",
    "ParameterError",
    "ParseError",
    "PoolExhaustedError",
]
