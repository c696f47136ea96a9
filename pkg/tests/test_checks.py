import numpy as np

from pseudofactor import ModelParams, WeightMatrix, subject_neg2_pll
from pseudofactor.checks import CheckOutcome, quadrature_subject_neg2_pll, random_case, run_checks


def test_run_checks_pass():
    outcomes = run_checks(seed=1, cases=5)
    assert [o.name for o in outcomes] == ["mvn-oracle", "quadrature", "gradient"]
    assert all(o.passed for o in outcomes)


def test_quadrature_handles_concentrated_posterior(rng):
    panel, w, p = random_case(rng, 2, 3)
    sharp = ModelParams(p.mu, [5.0, -4.0], [1e-3, 2e-3])
    ours = subject_neg2_pll(panel, WeightMatrix(w.weights * 10), sharp)
    quad = quadrature_subject_neg2_pll(panel, WeightMatrix(w.weights * 10), sharp)
    assert np.max(np.abs(np.expm1(-(ours - quad) / 2))) < 1e-8


def test_outcome_line():
    assert CheckOutcome("x", False, 0.5, 0.1, 3).line().startswith("FAIL x:")
