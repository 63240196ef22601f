"""Non-GAN fills used as baselines and as MI-GAN2 starting points."""

import numpy as np

from .errors import DataError
from .patterns import IncompleteMatrix


def colmean_impute(data: IncompleteMatrix) -> np.ndarray:
    """Fill every missing cell with the mean of its column's observed entries."""
    counts = data.mask.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"columns with no observed entries: {empty.tolist()}")
    filled = data.filled(0.0)
    means = filled.sum(axis=0) / counts
    return np.where(data.mask, data.values, means)
