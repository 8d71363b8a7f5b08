"""Self-supervised assisted cold-start active learning for binary segmentation."""

__version__ = "0.1.0"

from .errors import BudgetError, ConfigError, DataError, SSALError  # noqa: E402

__all__ = ["BudgetError", "ConfigError", "DataError", "SSALError", "__version__"]
