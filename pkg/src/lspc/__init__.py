"""Safe offline RL at desk scale: IQL critics, a cost-advantage-weighted CVAE
policy with latent restriction, toy constrained-MDP environments, binary
dataset/checkpoint formats, and a numerical verifier for the divergence-based
performance and violation bounds."""

__version__ = "0.1.0"

from .errors import (FormatError, InfeasibleError, LspcError, NumericError,
                     UsageError)

__all__ = [
    "FormatError",
    "InfeasibleError",
    "LspcError",
    "NumericError",
    "UsageError",
    "__version__",
]
