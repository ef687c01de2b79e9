"""Monte Carlo harness: data generation, seeding, study summaries."""

import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sisimex.errors import ConfigError
from sisimex.mc import (
    DgpSpec,
    angle_grid_search,
    generate,
    quadratic_link,
    replication_seed,
    resolve_workers,
    rmse,
    run_study,
)
from sisimex.solver import SolverConfig, initial_beta, solve
from sisimex.sphere import align_sign


def test_quadratic_link_values():
    assert quadratic_link(1.0) == 1.0
    assert quadratic_link(0.0) == -1.0
    assert_allclose(quadratic_link(np.array([1.0, 2.0])), [1.0, -1.0])


def test_dgp_spec_validation():
    with pytest.raises(ConfigError):
        DgpSpec(n=50, beta=np.array([1.0, 1.0]))  # not unit norm
    with pytest.raises(ConfigError):
        DgpSpec(n=3)  # below p + 2
    with pytest.raises(ConfigError):
        DgpSpec(n=50, sigma_u=-0.1)
    with pytest.raises(ConfigError):
        DgpSpec(n=50, link="cubic")
    spec = DgpSpec(n=50, sigma_u=0.4)
    me = spec.error_spec()
    assert_allclose(me.covariance, np.diag([0.16, 0.0]), rtol=0, atol=1e-15)
    assert DgpSpec(n=50, sigma_u=0.0).error_spec().is_zero


def test_generate_moments():
    # one large sample; tolerances are ~4 standard errors
    spec = DgpSpec(n=100_000, sigma_u=0.4)
    data, x = generate(spec, 12)
    assert data.w.shape == x.shape == (spec.n, 2)
    assert abs(x.mean()) <= 4.0 / np.sqrt(2 * spec.n)
    assert abs(x.std() - 1.0) <= 4.0 / np.sqrt(2 * spec.n)
    noise = data.w - x
    assert abs(noise[:, 0].std() - 0.4) <= 4 * 0.4 / np.sqrt(2 * spec.n)
    assert np.array_equal(noise[:, 1], np.zeros(spec.n))
    resid = data.y - quadratic_link(x @ spec.beta)
    assert abs(resid.std() - 0.2) <= 4 * 0.2 / np.sqrt(2 * spec.n)
    assert abs(resid.mean()) <= 4 * 0.2 / np.sqrt(spec.n)


def test_generate_deterministic_streams():
    spec = DgpSpec(n=30, sigma_u=0.2)
    a, xa = generate(spec, 99)
    b, xb = generate(spec, 99)
    c, _ = generate(spec, 100)
    assert np.array_equal(a.w, b.w) and np.array_equal(a.y, b.y)
    assert np.array_equal(xa, xb)
    assert not np.array_equal(a.w, c.w)
    seq = replication_seed(5, 30, 0.2, rep=0)
    d, _ = generate(spec, seq)
    e, _ = generate(spec, replication_seed(5, 30, 0.2, rep=0))
    assert np.array_equal(d.w, e.w)


def test_replication_seed_distinct():
    states = {
        tuple(replication_seed(1, n, s, r).generate_state(2))
        for n in (100, 150)
        for s in (0.2, 0.4)
        for r in (0, 1, 2)
    }
    assert len(states) == 12


def test_rmse():
    assert_allclose(rmse([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]),
                    np.sqrt(14.0 / 3.0), rtol=1e-12)
    est = np.array([1.0, np.nan, 3.0])
    truth = np.array([0.0, 5.0, 0.0])
    assert_allclose(rmse(est, truth), np.sqrt(5.0), rtol=1e-12)
    assert np.isnan(rmse(np.full(3, np.nan), truth))


def test_angle_grid_search_agrees_with_solver():
    spec = DgpSpec(n=200, sigma_u=0.0)
    data, _ = generate(spec, 4000)
    from sisimex.bandwidth import rule_of_thumb

    start = initial_beta(data)
    bw = rule_of_thumb(data, start)
    cfg = SolverConfig(h=bw.h, h1=bw.h1)
    result = solve(data, cfg, start)
    grid = angle_grid_search(data, cfg, 10_000)
    est = align_sign(result.beta.beta, grid.beta)
    angle = float(np.arccos(np.clip(est @ grid.beta, -1.0, 1.0)))
    assert angle <= 2e-3
    with pytest.raises(ConfigError):
        angle_grid_search(data, cfg, grid_size=1)


def test_run_study_deterministic_and_consistent():
    cells = [(40, 0.3)]
    kwargs = dict(reps=3, seed=77, b_reps=2,
                  lambda_grid=np.array([0.0, 0.5, 1.0]))
    first = run_study(cells, **kwargs)
    second = run_study(cells, **kwargs)
    cell = first.cells[0]
    assert np.array_equal(cell.simex.bias, second.cells[0].simex.bias)
    assert np.array_equal(cell.naive.sd, second.cells[0].naive.sd)
    assert cell.reps == 3 and cell.failed_reps == 0
    # spread is the population standard deviation of the estimates
    est = cell.simex.estimates
    assert est.shape == (3, 2)
    sd = np.sqrt(np.mean((est - est.mean(axis=0)) ** 2, axis=0))
    assert_allclose(cell.simex.sd, sd, rtol=0, atol=1e-12)
    assert_allclose(cell.simex.mc_se, sd / np.sqrt(3), rtol=0, atol=1e-12)
    # bias is the mean estimate minus the true index
    spec = DgpSpec(n=40, sigma_u=0.3)
    assert_allclose(cell.simex.bias, est.mean(axis=0) - spec.beta,
                    rtol=0, atol=1e-12)
    assert "runtime_seconds" not in first.settings
    assert first.settings["bandwidth_method"] == "rt"


def test_run_study_worker_invariance():
    cells = [(40, 0.3)]
    kwargs = dict(reps=2, seed=11, b_reps=2,
                  lambda_grid=np.array([0.0, 0.5, 1.0]))
    serial = run_study(cells, workers=1, **kwargs)
    pooled = run_study(cells, workers=2, **kwargs)
    assert np.array_equal(serial.cells[0].simex.bias,
                          pooled.cells[0].simex.bias)
    assert np.array_equal(serial.cells[0].naive.bias,
                          pooled.cells[0].naive.bias)


def test_run_study_with_link_summaries():
    report = run_study([(40, 0.3)], reps=2, seed=5, b_reps=2,
                       lambda_grid=np.array([0.0, 0.5, 1.0]),
                       with_link=True, n_grid=7)
    cell = report.cells[0]
    assert cell.link_simex is not None
    assert cell.link_simex.grid.shape == (7,)
    assert cell.link_simex.rmse_values.shape == (2,)
    assert np.isfinite(cell.link_simex.rmse_mean)
    assert cell.link_naive.truth.shape == (7,)
    # the truth grid holds the true link on the pooled index range
    assert_allclose(cell.link_simex.truth,
                    quadratic_link(cell.link_simex.grid), rtol=0, atol=1e-12)


def test_run_study_validation():
    with pytest.raises(ConfigError):
        run_study([], reps=2, seed=1)
    with pytest.raises(ConfigError):
        run_study([(40, 0.3)], reps=0, seed=1)


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("SISIMEX_WORKERS", raising=False)
    assert resolve_workers() == 1
    assert resolve_workers(5) == min(5, os.cpu_count())
    monkeypatch.setenv("SISIMEX_WORKERS", "3")
    assert resolve_workers() == min(3, os.cpu_count())
    monkeypatch.setenv("SISIMEX_WORKERS", "zebra")
    with pytest.raises(ConfigError):
        resolve_workers()
