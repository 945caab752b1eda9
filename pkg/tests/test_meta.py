"""Piecewise-exponential hierarchical model: binning, density, sampler, functionals."""

import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from kmgpt.errors import GridTooShort
from kmgpt.meta import (
    IntervalGrid,
    MetaParams,
    MetaPosterior,
    PriorConfig,
    SamplerConfig,
    StudySufficientStats,
    bin_ipd,
    estimate_pooled_median,
    log_posterior,
    pooled_survival,
    rmst,
    sample_posterior,
    survival_draws,
)
from kmgpt.survival import IPDRecord


def test_bin_ipd_worked_example():
    grid = IntervalGrid((0.0, 1.0, 2.0))
    stats = bin_ipd({"s": [IPDRecord(1.5, 1)]}, grid)
    assert np.allclose(stats.E, [[1.0, 0.5]])
    assert np.allclose(stats.d, [[0.0, 1.0]])


def test_bin_ipd_censored_at_zero():
    grid = IntervalGrid((0.0, 1.0, 2.0))
    stats = bin_ipd({"s": [IPDRecord(0.0, 0)]}, grid)
    assert np.all(stats.E == 0) and np.all(stats.d == 0)


def test_bin_ipd_matches_subject_loop_oracle():
    rng = np.random.default_rng(8)
    cuts = (0.0, 2.0, 5.0, 9.0, 15.0)
    grid = IntervalGrid(cuts)
    records = [
        IPDRecord(float(rng.uniform(0, 15)), int(rng.integers(0, 2))) for _ in range(50)
    ]
    stats = bin_ipd({"s": records}, grid)
    d = np.zeros(4)
    E = np.zeros(4)
    for rec in records:
        for j in range(4):
            lo, hi = cuts[j], cuts[j + 1]
            E[j] += max(0.0, min(rec.time, hi) - lo)
            if rec.status == 1 and lo < rec.time <= hi:
                d[j] += 1
    assert np.allclose(stats.E, E[None, :])
    assert np.allclose(stats.d, d[None, :])


def test_bin_ipd_grid_too_short():
    grid = IntervalGrid((0.0, 1.0))
    with pytest.raises(GridTooShort):
        bin_ipd({"s": [IPDRecord(2.0, 1)]}, grid)


def test_interval_grid_auto_covers_max():
    records = {"s": [IPDRecord(float(t), 1) for t in (1, 2, 3, 5, 8, 13, 21)]}
    grid = IntervalGrid.auto(records, J=4)
    assert grid.cuts[0] == 0.0
    assert grid.cuts[-1] == 21.0
    bin_ipd(records, grid)  # no GridTooShort


def params_for(stats, alpha=None, a=None, mu=None, sigma_j=0.2, sigma_a=0.2, tau=1.0, psi=0.0):
    S, J = stats.S, stats.J
    return MetaParams(
        alpha=np.full((S, J), -2.0) if alpha is None else np.asarray(alpha, dtype=float),
        a=np.full(J, -2.0) if a is None else np.asarray(a, dtype=float),
        mu=np.full(J, -2.0) if mu is None else np.asarray(mu, dtype=float),
        sigma_j=np.full(J, sigma_j),
        sigma_a=sigma_a,
        tau_ar=tau,
        psi=psi,
    )


def reference_log_posterior(params, stats, priors):
    """Independent reimplementation with scipy densities."""
    from scipy.stats import halfnorm, norm

    alpha, a, mu = params.alpha, params.a, params.mu
    phi = math.tanh(params.psi)
    lp = float(np.sum(stats.d * alpha - np.exp(alpha) * stats.E))
    lp += float(np.sum(norm.logpdf(alpha, loc=a[None, :], scale=params.sigma_j[None, :])))
    lp += float(np.sum(norm.logpdf(a, loc=mu, scale=params.sigma_a)))
    lp += float(norm.logpdf(mu[0], 0.0, params.tau_ar / math.sqrt(1 - phi**2)))
    lp += float(np.sum(norm.logpdf(mu[1:], phi * mu[:-1], params.tau_ar)))
    lp += float(np.sum(halfnorm.logpdf(params.sigma_j, scale=priors.sigma_scale)))
    lp += float(halfnorm.logpdf(params.sigma_a, scale=priors.sigma_a_scale))
    lp += float(halfnorm.logpdf(params.tau_ar, scale=priors.tau_scale))
    lp += float(norm.logpdf(params.psi, 0.0, priors.psi_scale))
    return lp


def test_log_posterior_matches_scipy_reference():
    rng = np.random.default_rng(13)
    stats = StudySufficientStats(
        labels=("a", "b"), d=rng.integers(0, 10, (2, 4)), E=rng.uniform(1, 30, (2, 4))
    )
    priors = PriorConfig()
    for _ in range(10):
        params = MetaParams(
            alpha=rng.normal(-2, 0.5, (2, 4)),
            a=rng.normal(-2, 0.5, 4),
            mu=rng.normal(-2, 0.5, 4),
            sigma_j=rng.uniform(0.05, 0.5, 4),
            sigma_a=float(rng.uniform(0.05, 0.5)),
            tau_ar=float(rng.uniform(0.2, 2.0)),
            psi=float(rng.normal(0, 0.75)),
        )
        got = log_posterior(params, stats, IntervalGrid((0.0, 1.0, 2.0, 3.0, 4.0)), priors)
        want = reference_log_posterior(params, stats, priors)
        assert got == pytest.approx(want, rel=1e-12)


def test_log_posterior_zero_data_is_prior_only():
    stats = StudySufficientStats(labels=("s",), d=[[0.0]], E=[[0.0]])
    grid = IntervalGrid((0.0, 1.0))
    params = params_for(stats)
    priors = PriorConfig()
    got = log_posterior(params, stats, grid, priors)
    want = reference_log_posterior(params, stats, priors)  # likelihood term is zero
    assert got == pytest.approx(want, rel=1e-12)


def test_log_posterior_flat_prior_maximum_at_log_rate():
    # d*alpha - e^alpha E is maximized at alpha = ln(d/E).
    stats = StudySufficientStats(labels=("s",), d=[[3.0]], E=[[10.0]])
    grid = IntervalGrid((0.0, 1.0))
    priors = PriorConfig(sigma_scale=1e3, sigma_a_scale=1e3, tau_scale=1e3)
    alpha_star = math.log(3.0 / 10.0)

    def lp(alpha):
        return log_posterior(
            params_for(stats, alpha=[[alpha]], a=[alpha], mu=[alpha],
                       sigma_j=1e3, sigma_a=1e3, tau=1e3),
            stats, grid, priors,
        )

    assert lp(alpha_star) > lp(alpha_star + 0.05)
    assert lp(alpha_star) > lp(alpha_star - 0.05)


def test_psi_zero_gives_phi_zero():
    stats = StudySufficientStats(labels=("s",), d=[[0.0]], E=[[0.0]])
    params = params_for(stats, psi=0.0)
    assert params.phi == 0.0


def test_log_posterior_rejects_non_finite():
    stats = StudySufficientStats(labels=("s",), d=[[1.0]], E=[[2.0]])
    grid = IntervalGrid((0.0, 1.0))
    params = params_for(stats)
    params.alpha = np.array([[math.nan]])
    with pytest.raises(ValueError):
        log_posterior(params, stats, grid)


def test_sampler_conjugate_check():
    d, E = 7.0, 25.0
    grid = IntervalGrid((0.0, 10.0))
    stats = StudySufficientStats(labels=("s",), d=[[d]], E=[[E]])
    config = SamplerConfig(
        chains=2, warmup=800, draws=2000, seed=5,
        priors=PriorConfig(sigma_scale=50.0, sigma_a_scale=50.0, tau_scale=50.0),
    )
    post = sample_posterior(stats, grid, config)
    rates = np.exp(post.alpha[:, 0, 0])
    ess = min(v["ess"] for v in post.diagnostics.values())
    mcse = rates.std() / math.sqrt(max(ess, 1.0))
    assert abs(rates.mean() - d / E) <= 3 * mcse
    assert np.var(rates) == pytest.approx(d / E**2, rel=0.25)


def test_sampler_zero_data_recovers_phi_prior():
    stats = StudySufficientStats(labels=("s",), d=np.zeros((1, 3)), E=np.zeros((1, 3)))
    grid = IntervalGrid((0.0, 1.0, 2.0, 3.0))
    post = sample_posterior(stats, grid, SamplerConfig(chains=2, warmup=1000, draws=4000, seed=3))
    rng = np.random.default_rng(0)
    prior = np.tanh(rng.normal(0, 0.75, size=post.phi.size))
    stat = ks_2samp(post.phi, prior).statistic
    assert stat <= 0.05
    assert np.all(np.abs(post.phi) < 1)


def test_sampler_deterministic_given_seed():
    stats = StudySufficientStats(labels=("s",), d=[[4.0, 2.0]], E=[[9.0, 7.0]])
    grid = IntervalGrid((0.0, 1.0, 2.0))
    cfg = SamplerConfig(chains=2, warmup=100, draws=100, seed=21)
    a = sample_posterior(stats, grid, cfg)
    b = sample_posterior(stats, grid, cfg)
    assert np.array_equal(a.a, b.a)
    assert np.array_equal(a.psi, b.psi)


def posterior_from_draws(a_draws, labels=("s",)):
    a_draws = np.asarray(a_draws, dtype=float)
    n, J = a_draws.shape
    return MetaPosterior(
        alpha=np.repeat(a_draws[:, None, :], len(labels), axis=1),
        a=a_draws,
        mu=a_draws.copy(),
        sigma_j=np.full((n, J), 0.1),
        sigma_a=np.full(n, 0.1),
        tau_ar=np.ones(n),
        psi=np.zeros(n),
        labels=tuple(labels),
        diagnostics={},
        config=SamplerConfig(),
    )


def test_pooled_survival_zero_hazard_is_one():
    post = posterior_from_draws(np.full((10, 2), -1e9))
    grid = IntervalGrid((0.0, 5.0, 10.0))
    out = pooled_survival(post, grid, [0.0, 3.0, 9.9])
    assert np.allclose(out["pooled"]["median"], 1.0)


def test_pooled_survival_constant_hazard_closed_form():
    lam = 0.13
    post = posterior_from_draws(np.full((5, 1), math.log(lam)))
    grid = IntervalGrid((0.0, 20.0))
    times = [0.5, 3.0, 11.0, 19.5]
    out = pooled_survival(post, grid, times)
    assert np.allclose(out["pooled"]["median"], np.exp(-lam * np.asarray(times)), rtol=1e-12)


def test_pooled_survival_two_interval_hand_value():
    lam1, lam2 = 0.2, 0.05
    post = posterior_from_draws(np.log([[lam1, lam2]]))
    grid = IntervalGrid((0.0, 4.0, 12.0))
    t = 7.0
    expected = math.exp(-(lam1 * 4.0 + lam2 * (t - 4.0)))
    out = pooled_survival(post, grid, [t])
    assert out["pooled"]["median"][0] == pytest.approx(expected, rel=1e-12)


def test_pooled_survival_monotone_every_draw():
    rng = np.random.default_rng(30)
    post = posterior_from_draws(rng.normal(-2.5, 0.4, size=(50, 4)))
    grid = IntervalGrid((0.0, 2.0, 5.0, 9.0, 14.0))
    times = np.linspace(0, 14, 57)
    draws = survival_draws(post, grid, times)
    assert np.allclose(draws[:, 0], np.exp(-np.exp(post.a[:, 0]) * 0.0))
    assert np.all(draws[:, :-1] - draws[:, 1:] >= -1e-12)


def test_pooled_survival_beyond_grid():
    post = posterior_from_draws(np.full((3, 1), -2.0))
    grid = IntervalGrid((0.0, 5.0))
    with pytest.raises(GridTooShort):
        pooled_survival(post, grid, [6.0])


def test_rmst_zero_hazard_equals_horizon():
    post = posterior_from_draws(np.full((4, 2), -1e9))
    grid = IntervalGrid((0.0, 6.0, 12.0))
    out = rmst(post, grid, 10.0)
    assert out["mean"] == pytest.approx(10.0)


def test_rmst_constant_hazard_closed_form():
    lam = 0.21
    post = posterior_from_draws(np.full((3, 1), math.log(lam)))
    grid = IntervalGrid((0.0, 30.0))
    H = 18.0
    out = rmst(post, grid, H)
    assert out["mean"] == pytest.approx((1 - math.exp(-lam * H)) / lam, rel=1e-12)


def test_rmst_piecewise_matches_quadrature():
    lam1, lam2 = 0.3, 0.08
    post = posterior_from_draws(np.log([[lam1, lam2]]))
    grid = IntervalGrid((0.0, 5.0, 25.0))
    H = 19.0
    out = rmst(post, grid, H)
    ts = np.linspace(0, H, 1_000_001)
    surv = np.where(ts <= 5.0, np.exp(-lam1 * ts), np.exp(-(lam1 * 5.0 + lam2 * (ts - 5.0))))
    numeric = np.trapezoid(surv, ts)
    assert out["mean"] == pytest.approx(numeric, abs=1e-6)


def test_rmst_monotone_in_horizon_and_capped():
    rng = np.random.default_rng(31)
    post = posterior_from_draws(rng.normal(-2.0, 0.3, size=(20, 3)))
    grid = IntervalGrid((0.0, 4.0, 8.0, 12.0))
    values = [rmst(post, grid, h)["draws"] for h in (3.0, 6.0, 12.0)]
    assert np.all(values[0] <= values[1] + 1e-12)
    assert np.all(values[1] <= values[2] + 1e-12)
    assert np.all(values[2] <= 12.0 + 1e-12)


def test_rmst_beyond_grid():
    post = posterior_from_draws(np.full((3, 1), -2.0))
    with pytest.raises(GridTooShort):
        rmst(post, IntervalGrid((0.0, 5.0)), 6.0)


def test_pooled_median_constant_hazard_exact():
    lam = 0.07
    post = posterior_from_draws(np.full((6, 1), math.log(lam)))
    grid = IntervalGrid((0.0, 50.0))
    out = estimate_pooled_median(post, grid)
    assert out["median"] == pytest.approx(math.log(2) / lam, rel=1e-12)
    assert out["n_not_reached"] == 0


def test_pooled_median_not_reached():
    post = posterior_from_draws(np.full((6, 2), -12.0))
    grid = IntervalGrid((0.0, 5.0, 10.0))
    out = estimate_pooled_median(post, grid)
    assert out["n_not_reached"] == 6
    assert math.isinf(out["median"])


def test_pooled_median_matches_bisection_oracle():
    rng = np.random.default_rng(14)
    a_draws = rng.normal(-2.2, 0.3, size=(40, 3))
    grid = IntervalGrid((0.0, 6.0, 14.0, 40.0))
    post = posterior_from_draws(a_draws)
    out = estimate_pooled_median(post, grid)

    def surv(t, rates):
        cuts = np.asarray(grid.cuts)
        total = 0.0
        for j in range(3):
            lo, hi = cuts[j], min(cuts[j + 1], t)
            if hi <= lo:
                break
            total += rates[j] * (hi - lo)
        return math.exp(-total)

    medians = []
    for rates in np.exp(a_draws):
        if surv(grid.cuts[-1], rates) > 0.5:
            continue
        lo, hi = 0.0, grid.cuts[-1]
        for _ in range(80):
            mid = (lo + hi) / 2
            if surv(mid, rates) <= 0.5:
                hi = mid
            else:
                lo = mid
        medians.append(hi)
    assert out["median"] == pytest.approx(float(np.median(medians)), abs=1e-9)


def test_diagnostics_iid_rhat_near_one():
    from kmgpt.meta import _ess, _split_rhat

    rng = np.random.default_rng(15)
    chains = rng.normal(size=(4, 2000))
    assert abs(_split_rhat(chains) - 1.0) < 0.01
    assert _ess(chains) > 2000
