"""bagwise: weakly supervised bag classification with extent-interval labels.

Nine classifiers behind one train/predict interface, a 3-D filter-bank
feature pipeline, agreement/ranking statistics and a synthetic generator
with known instance labels.
"""

from .bagcore import (
    Bag,
    BagDataset,
    BagwiseError,
    ExtentInterval,
    Instance,
    RaterAssessment,
    SplitPlan,
    combine_raters,
    split_dataset,
    theta_max,
    theta_mean,
)
from .weak import METHODS, TrainedBagModel, WeakClassifierSpec, train

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "BagDataset",
    "BagwiseError",
    "ExtentInterval",
    "Instance",
    "METHODS",
    "RaterAssessment",
    "SplitPlan",
    "TrainedBagModel",
    "WeakClassifierSpec",
    "combine_raters",
    "split_dataset",
    "theta_max",
    "theta_mean",
    "train",
    "__version__",
]
