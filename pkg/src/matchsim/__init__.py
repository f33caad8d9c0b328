"""K-class instantaneous matching queues: exact chains, limit diffusions, generator checks."""

__version__ = "0.1.0"

from .errors import ConfigError, MatchsimError
from .model import PreLimitRates, QueueState, SystemParams, derive_prelimit_rates, scale_state

__all__ = [
    "__version__", "ConfigError", "MatchsimError", "PreLimitRates", "QueueState",
    "SystemParams", "derive_prelimit_rates", "scale_state",
]
