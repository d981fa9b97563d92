"""Post-hoc confidence calibration from pre-computed logits.

SMART fits a tiny per-sample temperature regressor on the logit gap using a
soft-binned ECE objective; global temperature scaling is provided as the
baseline.
"""

from smartcal.errors import DataError, NumericError, SmartcalError
from smartcal.dataio import LogitSet, SplitSpec, load_logits, save_logits, split

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "LogitSet",
    "NumericError",
    "SmartcalError",
    "SplitSpec",
    "load_logits",
    "save_logits",
    "split",
]
