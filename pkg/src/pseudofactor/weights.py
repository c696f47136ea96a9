"""Construction and adjustment of measure-specific sample weights.

The canonical pipeline rescales every indicator's weights to mean one over
its observed subjects and then multiplies by 0.99.  Keeping each indicator's
mean weight strictly below one is what keeps the residual variances away
from zero.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import InvalidInputError
from .model import IndicatorPanel, WeightMatrix, check_aligned

#: Scaling applied after mean normalization in the default pipeline.
DEFAULT_SCALE = 0.99


def _observed_mask(w: np.ndarray, observed):
    if observed is None:
        return np.ones(w.shape, dtype=bool)
    observed = np.asarray(observed, dtype=bool)
    if observed.shape != w.shape:
        raise InvalidInputError("observed mask does not match weight shape")
    return observed


def normalize_by_indicator_mean(raw: WeightMatrix, observed=None) -> WeightMatrix:
    """Rescale each row so that its mean over observed entries is one.

    ``observed`` defaults to every entry; pass ``panel.observed`` to take
    means over observed subjects only.  Zeros stay zero.
    """
    w = raw.weights
    obs = _observed_mask(w, observed)
    out = np.zeros_like(w)
    for j in range(w.shape[0]):
        vals = w[j][obs[j]]
        if vals.size == 0:
            raise InvalidInputError(f"indicator row {j} has no observed entries")
        mean = math.fsum(vals) / vals.size
        if not mean > 0:
            raise InvalidInputError(f"indicator row {j} has all-zero weights")
        out[j] = w[j] / mean
    return WeightMatrix(out)


def scale_weights(w: WeightMatrix, c: float) -> WeightMatrix:
    """Multiply every weight by ``c > 0``."""
    if not c > 0:
        raise InvalidInputError("scale factor must be positive")
    return WeightMatrix(w.weights * c)


def log_transform_volumes(volumes, observed=None, scale: float = DEFAULT_SCALE) -> WeightMatrix:
    """Weights from the log of raw volumes, mean-normalized and scaled by ``scale``.

    Volumes must be at least 1 wherever observed; missing entries become 0.
    """
    v = np.array(volumes, dtype=float)
    if v.ndim != 2:
        raise InvalidInputError("volumes must be a 2-D (m x H) array")
    obs = _observed_mask(v, observed)
    vals = v[obs]
    if not np.all(np.isfinite(vals)) or np.any(vals < 1):
        raise InvalidInputError("observed volumes must be finite and at least 1")
    logs = np.zeros_like(v)
    logs[obs] = np.log(vals)
    return scale_weights(normalize_by_indicator_mean(WeightMatrix(logs), obs), scale)


def zero_missing(panel: IndicatorPanel, w: WeightMatrix) -> WeightMatrix:
    """Set weights to zero wherever the panel is unobserved."""
    if w.shape != panel.scores.shape:
        raise InvalidInputError("weight shape does not match panel shape")
    return WeightMatrix(np.where(panel.observed, w.weights, 0.0))


def standard_weights(panel: IndicatorPanel, raw: WeightMatrix, scale: float = DEFAULT_SCALE) -> WeightMatrix:
    """Default pipeline: zero missing entries, normalize to mean one, scale."""
    w = zero_missing(panel, raw)
    w = scale_weights(normalize_by_indicator_mean(w, panel.observed), scale)
    check_aligned(panel, w)
    return w
