"""Bandwidth rules: plug-in formulas, candidate search, CV scoring."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sisimex.bandwidth import (
    BandwidthSet,
    cv_bandwidth,
    cv_bandwidth_set,
    cv_scores,
    default_candidates,
    rule_of_thumb,
    select_candidate,
)
from sisimex.data import Dataset, MeasurementErrorSpec
from sisimex.errors import ConfigError, DegenerateIndex, EstimationError
from sisimex.simex import SimexConfig, default_lambda_grid
from sisimex.sphere import UnitIndex


def _data(n=40, seed=1):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, 2))
    beta = np.array([0.6, 0.8])
    y = (w @ beta) ** 2 + 0.1 * rng.normal(size=n)
    return Dataset(y=y, w=w), UnitIndex(beta=beta, anchor=1)


def test_bandwidth_set_validation():
    with pytest.raises(ConfigError):
        BandwidthSet(h=0.0, h1=1.0, h2=1.0)
    with pytest.raises(ConfigError):
        BandwidthSet(h=1.0, h1=1.0, h2=1.0, method="plugin")
    bw = BandwidthSet(h=1.0, h1=2.0, h2=3.0, method="manual")
    assert (bw.h, bw.h1, bw.h2, bw.method) == (1.0, 2.0, 3.0, "manual")


def test_rule_of_thumb_formulas():
    data, index = _data(n=80)
    bw = rule_of_thumb(data, index)
    c = float(np.std(data.w @ index.beta, ddof=1))
    n = data.n
    assert_allclose(bw.h, c * n ** -0.25 / np.sqrt(np.log(n)), rtol=1e-12)
    assert bw.h1 == bw.h
    assert_allclose(bw.h2, c * n ** -0.2, rtol=1e-12)
    assert bw.method == "rt"


def test_rule_of_thumb_scale_equivariance():
    data, index = _data(n=60)
    bw = rule_of_thumb(data, index)
    scaled = Dataset(y=data.y, w=3.5 * data.w)
    bw_scaled = rule_of_thumb(scaled, index)
    assert_allclose(bw_scaled.h, 3.5 * bw.h, rtol=1e-12)
    assert_allclose(bw_scaled.h2, 3.5 * bw.h2, rtol=1e-12)


def test_rule_of_thumb_degenerate():
    w = np.tile([1.0, 2.0], (10, 1))
    data = Dataset(y=np.arange(10.0), w=w)
    with pytest.raises(DegenerateIndex):
        rule_of_thumb(data, UnitIndex(beta=np.array([0.6, 0.8]), anchor=1))


def test_cv_bandwidth_set_formulas():
    n = 150
    h_opt = 0.42
    bw = cv_bandwidth_set(h_opt, n)
    assert_allclose(bw.h, h_opt * n ** -0.05 / np.sqrt(np.log(n)), rtol=1e-12)
    assert bw.h1 == bw.h
    assert bw.h2 == h_opt
    assert bw.method == "cv"


def test_default_candidates_span():
    data, index = _data()
    center = rule_of_thumb(data, index).h2
    cand = default_candidates(data, index, count=10)
    assert cand.shape == (10,)
    assert_allclose(cand[0], 0.3 * center, rtol=1e-12)
    assert_allclose(cand[-1], 3.0 * center, rtol=1e-12)
    ratios = cand[1:] / cand[:-1]
    assert_allclose(ratios, ratios[0], rtol=1e-10)
    with pytest.raises(ConfigError):
        default_candidates(data, index, count=0)


def test_select_candidate():
    cand = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    scores = np.array([4.0, 1.0, 0.0, 1.0, 4.0])
    assert select_candidate(cand, scores) == 2
    # ties resolve to the smallest bandwidth regardless of position
    cand = np.array([3.0, 1.0, 2.0])
    scores = np.array([0.0, 0.0, 5.0])
    assert select_candidate(cand, scores) == 1
    with pytest.raises(EstimationError):
        select_candidate(cand, np.full(3, np.inf))
    with pytest.raises(ConfigError):
        select_candidate(cand, scores[:2])


def test_cv_scores_and_selection():
    data, index = _data(n=36, seed=7)
    me = MeasurementErrorSpec.from_covariance(np.diag([0.09, 0.0]))
    cfg = SimexConfig(
        bandwidths=rule_of_thumb(data, index),
        seed=3,
        lambda_grid=default_lambda_grid(1.0, 3),
        b_reps=2,
    )
    center = rule_of_thumb(data, index).h2
    cand = np.array([center, 1.5 * center])
    scores = cv_scores(data, me, cfg, cand, folds=2)
    assert scores.shape == (2,)
    assert np.isfinite(scores).any()
    # a bandwidth far too small fails every fold and is disqualified
    tiny = cv_scores(data, me, cfg, np.array([1e-8]), folds=2)
    assert np.isinf(tiny[0])
    with pytest.raises(ConfigError):
        cv_scores(data, me, cfg, np.array([-1.0]), folds=2)
    with pytest.raises(ConfigError):
        cv_scores(data, me, cfg, cand, folds=1)


def test_cv_bandwidth_end_to_end():
    data, index = _data(n=36, seed=7)
    me = MeasurementErrorSpec.from_covariance(np.diag([0.09, 0.0]))
    cfg = SimexConfig(
        bandwidths=rule_of_thumb(data, index),
        seed=3,
        lambda_grid=default_lambda_grid(1.0, 3),
        b_reps=2,
    )
    center = rule_of_thumb(data, index).h2
    cand = np.array([center, 1.4 * center])
    h_opt, bw = cv_bandwidth(data, me, cfg, candidates=cand, folds=2)
    assert h_opt in cand
    assert bw.method == "cv"
    assert bw.h2 == h_opt
