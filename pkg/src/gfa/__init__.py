"""Group factor analysis with a low-rank prior on group-factor activity."""
from .model import (
    DatasetError,
    FittedModel,
    FullRankAlpha,
    GroupedDataset,
    Hyperparameters,
    InnerOptSettings,
    LowRankAlpha,
    NumericalError,
    PosteriorState,
    build_dataset,
    center_columns,
    default_hyperparameters,
)
from .vb import fit, lower_bound

__version__ = "0.1.0"
