"""Monte-Carlo studies of the weighted single-factor model.

Every replication draws its data from private random streams derived from
``(seed, replication, stream)``, so results do not depend on how many
replications run or in which order workers finish them.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Callable, Sequence, Union

import numpy as np

from .em import fit_em
from .exceptions import InvalidInputError, PseudoFactorError
from .marginal import fit_marginal
from .model import FitResult, IndicatorPanel, WeightMatrix
from .weights import normalize_by_indicator_mean, scale_weights

Fitter = Union[str, Callable[[IndicatorPanel, WeightMatrix], FitResult]]

FITTERS = {"em": fit_em, "marginal": fit_marginal}

#: Weight coefficients compared in the extreme study.
EXTREME_COEFFS = (1.0, 0.99, 0.9, 0.8, 0.7)
EXTREME_H = (300, 500, 1000, 2000, 3000, 4000, 5000)


@dataclass(frozen=True)
class SimScenario:
    """One simulation setting.

    ``weight_dist`` is ``"gamma"`` (row ``j`` drawn from
    Gamma(``gamma_shapes[j]``, ``gamma_scales[j]``)) or ``"uniform"`` (all ones).
    Drawn weights are normalized to mean one per indicator and then multiplied
    by ``weight_coeff``.
    """

    m: int = 3
    H: int = 1000
    rho: float = 0.5
    gamma_shapes: tuple = (1.5, 3.0, 3.0)
    gamma_scales: tuple = (0.5, 1 / 3, 1 / 3)
    weight_coeff: float = 1.0
    reps: int = 100
    seed: int = 20190401
    weight_dist: str = "gamma"

    def __post_init__(self):
        object.__setattr__(self, "gamma_shapes", tuple(float(s) for s in self.gamma_shapes))
        object.__setattr__(self, "gamma_scales", tuple(float(s) for s in self.gamma_scales))
        if self.m < 1 or self.H < 2:
            raise ValueError("need m >= 1 and H >= 2")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.weight_coeff > 0:
            raise ValueError("weight_coeff must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.weight_dist not in ("gamma", "uniform"):
            raise ValueError("weight_dist must be 'gamma' or 'uniform'")
        if self.weight_dist == "gamma":
            if len(self.gamma_shapes) != self.m or len(self.gamma_scales) != self.m:
                raise ValueError("need one Gamma shape and scale per indicator")
            if min(self.gamma_shapes + self.gamma_scales) <= 0:
                raise ValueError("Gamma shapes and scales must be positive")


@dataclass
class SimSummary:
    """Replication averages; failed replications are excluded and counted."""

    scenario: SimScenario
    mean_gamma: np.ndarray
    mean_sigma: np.ndarray
    mean_alpha_sd: float
    per_rep_records: list
    n_failed: int = 0

    def to_dict(self) -> dict:
        return {
            "scenario": asdict(self.scenario),
            "mean_gamma": self.mean_gamma.tolist(),
            "mean_sigma": self.mean_sigma.tolist(),
            "mean_alpha_sd": self.mean_alpha_sd,
            "n_reps": len(self.per_rep_records),
            "n_failed": self.n_failed,
        }


def regular_scenario(weighted: bool = True, **overrides) -> SimScenario:
    """The moderately skewed setting: Gamma(3/2, 1/2), Gamma(3, 1/3), Gamma(3, 1/3)."""
    base = SimScenario() if weighted else SimScenario(weight_dist="uniform")
    return replace(base, **overrides)


def extreme_scenario(weight_coeff: float = 1.0, H: int = 5000, **overrides) -> SimScenario:
    """The heavily skewed setting: Gamma(1/2, 2), Gamma(1, 2), Gamma(1, 2)."""
    base = SimScenario(
        H=H,
        gamma_shapes=(0.5, 1.0, 1.0),
        gamma_scales=(2.0, 2.0, 2.0),
        weight_coeff=weight_coeff,
    )
    return replace(base, **overrides)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for the substream ``key`` of ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def gen_equicorrelated_panel(m: int, H: int, rho: float, rng: np.random.Generator) -> IndicatorPanel:
    """H draws of m unit-variance normals with common pairwise correlation ``rho``."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    alpha = rng.standard_normal(H)
    eps = rng.standard_normal((m, H))
    return IndicatorPanel(math.sqrt(rho) * alpha + math.sqrt(1.0 - rho) * eps)


def gen_gamma_weights(shape: float, scale: float, H: int, rng: np.random.Generator) -> np.ndarray:
    """H independent Gamma(shape, scale) draws (mean ``shape * scale``)."""
    if not (shape > 0 and scale > 0):
        raise ValueError("shape and scale must be positive")
    return rng.gamma(shape, scale, H)


def gen_degenerate_panel(
    kind: str, H: int, rng: np.random.Generator, corr: Sequence[float] = (0.8, 0.8, 0.5)
) -> IndicatorPanel:
    """Three unit-variance indicators whose fit degenerates under unit weights.

    ``"identical-pair"`` duplicates indicator 1 as indicator 2 (the other pair
    correlations are 0.5).  ``"corr-product"`` uses correlations
    ``corr = (r12, r13, r23)``; with ``r12 * r13 > r23`` the first residual
    variance is driven to zero.
    """
    if kind == "identical-pair":
        Y = gen_equicorrelated_panel(2, H, 0.5, rng).scores
        return IndicatorPanel(np.vstack([Y[0], Y[0], Y[1]]))
    if kind != "corr-product":
        raise ValueError(f"unknown degenerate panel kind {kind!r}")
    r12, r13, r23 = corr
    R = np.array([[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]])
    vals, vecs = np.linalg.eigh(R)
    if vals.min() < -1e-12:
        raise InvalidInputError("requested correlation matrix is not positive semi-definite")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return IndicatorPanel(root @ rng.standard_normal((3, H)))


def draw_replication(scenario: SimScenario, rep: int):
    """Panel and (normalized, scaled) weights of replication ``rep``."""
    panel = gen_equicorrelated_panel(scenario.m, scenario.H, scenario.rho, stream(scenario.seed, rep, 0))
    if scenario.weight_dist == "uniform":
        raw = np.ones((scenario.m, scenario.H))
    else:
        raw = np.vstack(
            [
                gen_gamma_weights(k, s, scenario.H, stream(scenario.seed, rep, 1 + j))
                for j, (k, s) in enumerate(zip(scenario.gamma_shapes, scenario.gamma_scales))
            ]
        )
    w = normalize_by_indicator_mean(WeightMatrix(raw))
    if scenario.weight_coeff != 1.0:
        w = scale_weights(w, scenario.weight_coeff)
    return panel, w


def _resolve(fitter: Fitter):
    if isinstance(fitter, str):
        try:
            return FITTERS[fitter]
        except KeyError:
            raise ValueError(f"unknown fitter {fitter!r}; choose from {sorted(FITTERS)}") from None
    return fitter


def run_replication(scenario: SimScenario, rep: int, fitter: Fitter = "marginal") -> dict:
    """Fit one replication and return a flat record of the estimates."""
    panel, w = draw_replication(scenario, rep)
    record = {"rep": rep, "ok": False, "converged": False}
    try:
        fit = _resolve(fitter)(panel, w)
    except PseudoFactorError as exc:
        record["error"] = str(exc)
        return record
    p = fit.params
    record.update(
        ok=bool(fit.converged),
        converged=bool(fit.converged),
        iterations=fit.iterations,
        objective=fit.objective,
        alpha_sd=float(np.std(fit.alpha, ddof=1)),
    )
    for j in range(scenario.m):
        record[f"mu{j + 1}"] = float(p.mu[j])
        record[f"gamma{j + 1}"] = float(abs(p.gamma[j]))
        record[f"sigma{j + 1}"] = float(p.sigma[j])
        record[f"boundary{j + 1}"] = bool(fit.boundary_flags[j])
    return record


def _map(func, items, workers):
    if workers is None or workers <= 1:
        return [func(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def summarize(scenario: SimScenario, records: list) -> SimSummary:
    records = sorted(records, key=lambda r: r["rep"])
    ok = [r for r in records if r["ok"]]
    m = scenario.m
    if ok:
        mean_gamma = np.array([math.fsum(r[f"gamma{j + 1}"] for r in ok) / len(ok) for j in range(m)])
        mean_sigma = np.array([math.fsum(r[f"sigma{j + 1}"] for r in ok) / len(ok) for j in range(m)])
        mean_alpha_sd = math.fsum(r["alpha_sd"] for r in ok) / len(ok)
    else:
        mean_gamma = np.full(m, np.nan)
        mean_sigma = np.full(m, np.nan)
        mean_alpha_sd = float("nan")
    return SimSummary(
        scenario=scenario,
        mean_gamma=mean_gamma,
        mean_sigma=mean_sigma,
        mean_alpha_sd=mean_alpha_sd,
        per_rep_records=records,
        n_failed=len(records) - len(ok),
    )


def run_regular_study(
    scenario: SimScenario | None = None, fitter: Fitter = "marginal", workers: int | None = 1
) -> SimSummary:
    """Replicate ``scenario`` ``reps`` times and average |gamma| and sigma."""
    scenario = scenario or regular_scenario()
    records = _map(partial(run_replication, scenario, fitter=fitter), range(scenario.reps), workers)
    return summarize(scenario, records)


@dataclass
class ExtremeStudy:
    """Mean fitted sigma_1 (ARMSE1) for every (weight coefficient, H) cell."""

    rows: list = field(default_factory=list)
    summaries: dict = field(default_factory=dict)

    def mean_sigma1(self, coeff: float, H: int) -> float:
        return self.summaries[(coeff, H)].mean_sigma[0]


def run_extreme_study(
    coeffs: Sequence[float] = EXTREME_COEFFS,
    H_list: Sequence[int] = EXTREME_H,
    reps: int = 100,
    seed: int = 20190402,
    fitter: Fitter = "marginal",
    workers: int | None = 1,
    **overrides,
) -> ExtremeStudy:
    """Average fitted sigma_1 across replications for each coefficient and sample size.

    All coefficients share the same seed, so within a sample size they are
    compared on identical panels and raw weights.
    """
    study = ExtremeStudy()
    for H in H_list:
        for c in coeffs:
            sc = extreme_scenario(weight_coeff=c, H=H, reps=reps, seed=seed, **overrides)
            summary = run_regular_study(sc, fitter=fitter, workers=workers)
            study.summaries[(c, H)] = summary
            study.rows.append(
                {
                    "coeff": c,
                    "H": H,
                    "armse1": float(summary.mean_sigma[0]),
                    "mean_alpha_sd": float(summary.mean_alpha_sd),
                    "n_ok": reps - summary.n_failed,
                    "n_failed": summary.n_failed,
                }
            )
    return study
