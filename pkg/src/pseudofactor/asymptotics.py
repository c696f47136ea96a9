"""Large-sample limits of the marginal (pseudo) log-likelihood, and an MVN oracle.

With unit weights the single-factor model is the multivariate normal
``N(mu, gamma gamma' + diag(sigma2))``; :func:`mvn_nll_oracle` evaluates that
likelihood by a Cholesky factorization and shares no code with the closed
form in :mod:`pseudofactor.model`.

For constant weights ``w_j`` and data drawn from the rescaled model
``Y_j | alpha ~ N(mu_j + gamma_j alpha, sigma2_j / w_j)`` the mean per-subject
-2 log pseudo-likelihood tends to::

    m + log[(1 + sum w gamma^2 / sigma2) prod sigma2 / w]
      + sum (w - 1) log sigma2 + sum log w + sum w log(2 pi)

The last term is the one that makes unit weights reduce to the unweighted
limit; the variant ``sum (w - 1) log(2 pi)`` is available through
``log2pi_term="shifted"`` and differs by the constant ``m log(2 pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import InvalidInputError, InvalidParamsError
from .model import (
    LOG_2PI,
    IndicatorPanel,
    ModelParams,
    WeightMatrix,
    subject_neg2_pll,
)


def _log_det_factor(gamma, sigma2, w):
    # log[(1 + sum w gamma^2 / sigma2) prod sigma2 / w]
    return math.log1p(float(np.sum(w * gamma**2 / sigma2))) + float(np.sum(np.log(sigma2 / w)))


def enmll_limit(params: ModelParams, m: int | None = None) -> float:
    """Almost-sure limit of the mean per-subject negative marginal log-likelihood."""
    if m is not None and m != params.m:
        raise InvalidParamsError(f"m={m} does not match params with {params.m} indicators")
    m = params.m
    # same evaluation order as enwmll_limit so that unit weights agree bit for bit
    return 0.5 * (m + _log_det_factor(params.gamma, params.sigma2, np.ones(m)) + m * LOG_2PI)


def enwmll_limit(params: ModelParams, w, log2pi_term: str = "weighted") -> float:
    """Limit of the mean per-subject negative marginal pseudo log-likelihood.

    Parameters
    ----------
    params : ModelParams
    w : sequence of float
        One positive constant weight per indicator.
    log2pi_term : {"weighted", "shifted"}
        ``"weighted"`` adds ``sum w log 2pi`` (consistent with
        :func:`enmll_limit` at ``w = 1``); ``"shifted"`` adds
        ``sum (w - 1) log 2pi``.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (params.m,) or np.any(~(w > 0)):
        raise InvalidInputError("need one positive weight per indicator")
    if log2pi_term == "weighted":
        const = float(np.sum(w)) * LOG_2PI
    elif log2pi_term == "shifted":
        const = float(np.sum(w - 1.0)) * LOG_2PI
    else:
        raise ValueError("log2pi_term must be 'weighted' or 'shifted'")
    s2 = params.sigma2
    twice = (
        params.m
        + _log_det_factor(params.gamma, s2, w)
        + float(np.sum((w - 1.0) * np.log(s2)))
        + float(np.sum(np.log(w)))
        + const
    )
    return 0.5 * twice


def mvn_nll_oracle(panel: IndicatorPanel, params: ModelParams) -> float:
    """Negative log-likelihood of the columns of ``panel`` under N(mu, gamma gamma' + diag sigma2)."""
    if not panel.observed.all():
        raise InvalidInputError("the MVN oracle needs a fully observed panel")
    if params.m != panel.m:
        raise InvalidParamsError("params do not match the panel")
    cov = np.outer(params.gamma, params.gamma) + np.diag(params.sigma2)
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidParamsError("implied covariance is numerically singular") from exc
    if np.min(np.diag(chol)) <= 1e-150:
        raise InvalidParamsError("implied covariance is numerically singular")
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    resid = panel.scores - params.mu[:, None]
    sol = linalg.solve_triangular(chol, resid, lower=True)
    quad = math.fsum(np.sum(sol * sol, axis=0))
    return 0.5 * panel.H * (panel.m * LOG_2PI + logdet) + 0.5 * quad


@dataclass(frozen=True)
class LimitReport:
    sample_mean: float
    limit: float
    sd: float
    z_score: float
    H: int


def simulate_model(params: ModelParams, w, H: int, rng: np.random.Generator) -> IndicatorPanel:
    """Draw H subjects from the factor model with residual variances ``sigma2 / w``."""
    w = np.asarray(w, dtype=float)
    alpha = rng.standard_normal(H)
    eps = rng.standard_normal((params.m, H)) * np.sqrt(params.sigma2 / w)[:, None]
    return IndicatorPanel(params.mu[:, None] + params.gamma[:, None] * alpha + eps)


def check_limit_convergence(
    params: ModelParams,
    weights_constant=None,
    H: int = 10_000,
    rng: np.random.Generator | int | None = None,
) -> LimitReport:
    """Compare the simulated mean per-subject criterion with its closed-form limit.

    ``weights_constant=None`` checks the unweighted limit; otherwise the data
    are drawn from the rescaled model and compared with :func:`enwmll_limit`.
    The z-score is ``sqrt(H) (mean - limit) / sd``.
    """
    if H < 1000:
        raise ValueError("H must be at least 1000")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if weights_constant is None:
        w = np.ones(params.m)
        limit = enmll_limit(params)
    else:
        w = np.asarray(weights_constant, dtype=float)
        limit = enwmll_limit(params, w)
    panel = simulate_model(params, w, H, rng)
    W = WeightMatrix(np.repeat(w[:, None], H, axis=1))
    nmll = 0.5 * subject_neg2_pll(panel, W, params)
    mean = math.fsum(nmll) / H
    sd = float(np.std(nmll, ddof=1))
    return LimitReport(mean, limit, sd, math.sqrt(H) * (mean - limit) / sd, H)
