"""Partially observed linear-quadratic leader-follower game: offline equations,
closed-loop Monte Carlo and verification checks."""

from .model import (ADVERTISING_DEFAULTS, BlockCoefficients, CoefficientFn, ModelSpec,
                    TimeGrid, assemble_blocks, from_advertising, validate)

__all__ = ["ADVERTISING_DEFAULTS", "BlockCoefficients", "CoefficientFn", "ModelSpec",
           "TimeGrid", "assemble_blocks", "from_advertising", "validate"]
