"""Hierarchical piecewise-exponential Bayesian meta-analysis of pooled IPD.

The hazard is constant within each time interval. Study log-hazards vary
around pooled interval effects, the pooled effects vary around a latent
mean that follows a stationary AR(1) across intervals, and scale
parameters carry weakly informative half-normal priors. Sampling is
Metropolis-within-Gibbs on unconstrained parameters with exact conjugate
Gibbs draws for the two Gaussian layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GridTooShort, SamplerFailure
from .survival import IPDRecord

LOG2 = math.log(2.0)
HALF_NORMAL_MEDIAN = math.sqrt(2.0) * 0.476936276204470  # scale multiplier: sqrt(2)*erfinv(0.5)
TARGET_ACCEPT = 0.3
ADAPT_BATCH = 50


@dataclass(frozen=True)
class IntervalGrid:
    """Cut points t_0 = 0 < t_1 < ... < t_J; interval j is (t_{j-1}, t_j]."""

    cuts: tuple[float, ...]

    def __post_init__(self):
        if len(self.cuts) < 2 or self.cuts[0] != 0.0:
            raise ValueError("grid needs cut points starting at 0")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ValueError("cut points must be strictly increasing")

    @property
    def J(self) -> int:
        return len(self.cuts) - 1

    @property
    def widths(self) -> np.ndarray:
        c = np.asarray(self.cuts)
        return np.diff(c)

    def interval_index(self, t: float) -> int:
        """1-based j with t in (t_{j-1}, t_j]; t=0 maps to interval 1."""
        if t > self.cuts[-1]:
            raise GridTooShort(f"time {t} beyond last cut {self.cuts[-1]}")
        if t <= self.cuts[1]:
            return 1
        return int(np.searchsorted(np.asarray(self.cuts), t, side="left"))

    @classmethod
    def from_cuts(cls, interior: Sequence[float], t_max: float) -> "IntervalGrid":
        cuts = [0.0] + sorted(set(float(c) for c in interior if 0.0 < c < t_max)) + [float(t_max)]
        return cls(tuple(cuts))

    @classmethod
    def auto(cls, records_by_study: dict[str, list[IPDRecord]], J: int = 8) -> "IntervalGrid":
        """Cuts at pooled event-time quantiles (equal expected events per interval)."""
        all_times = [r.time for recs in records_by_study.values() for r in recs]
        event_times = [r.time for recs in records_by_study.values() for r in recs if r.status == 1]
        t_max = max(all_times)
        if not event_times:
            interior = np.linspace(0, t_max, J + 1)[1:-1]
        else:
            interior = np.quantile(np.asarray(event_times), np.arange(1, J) / J)
        return cls.from_cuts(list(interior), t_max)


@dataclass(frozen=True)
class StudySufficientStats:
    """Events and exposure per study and interval."""

    labels: tuple[str, ...]
    d: np.ndarray  # (S, J) event counts
    E: np.ndarray  # (S, J) exposure time

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))
        object.__setattr__(self, "E", np.asarray(self.E, dtype=float))
        if self.d.shape != self.E.shape:
            raise ValueError("d and E must have matching shapes")
        if (self.d < 0).any() or (self.E < 0).any():
            raise ValueError("d and E must be non-negative")
        if ((self.E == 0) & (self.d > 0)).any():
            raise ValueError("events recorded in an interval with zero exposure")

    @property
    def S(self) -> int:
        return self.d.shape[0]

    @property
    def J(self) -> int:
        return self.d.shape[1]


def bin_ipd(records_by_study: dict[str, list[IPDRecord]], grid: IntervalGrid) -> StudySufficientStats:
    """Accumulate events and exposure per interval; records must fit the grid."""
    labels = tuple(records_by_study)
    cuts = np.asarray(grid.cuts)
    J = grid.J
    d = np.zeros((len(labels), J))
    E = np.zeros((len(labels), J))
    for si, label in enumerate(labels):
        for rec in records_by_study[label]:
            if rec.time > cuts[-1]:
                raise GridTooShort(
                    f"record at t={rec.time} in study {label!r} beyond last cut {cuts[-1]}"
                )
            overlap = np.clip(np.minimum(rec.time, cuts[1:]) - cuts[:-1], 0.0, None)
            E[si] += overlap
            if rec.status == 1 and rec.time > 0:
                j = grid.interval_index(rec.time)
                d[si, j - 1] += 1
    return StudySufficientStats(labels=labels, d=d, E=E)


@dataclass(frozen=True)
class PriorConfig:
    """Scales of the half-normal / normal priors; defaults are the model's."""

    sigma_scale: float = 0.2  # between-study SD per interval
    sigma_a_scale: float = 0.2  # pooled-deviation SD
    tau_scale: float = 1.0  # AR innovation SD
    psi_scale: float = 0.75  # unconstrained AR parameter


@dataclass
class MetaParams:
    """One state of the model; phi = tanh(psi) keeps |phi| < 1."""

    alpha: np.ndarray  # (S, J) study log-hazards
    a: np.ndarray  # (J,) pooled log-hazards
    mu: np.ndarray  # (J,) latent AR means
    sigma_j: np.ndarray  # (J,) between-study SDs
    sigma_a: float
    tau_ar: float
    psi: float

    @property
    def phi(self) -> float:
        return math.tanh(self.psi)

    def validate(self) -> None:
        arrays = [self.alpha, self.a, self.mu, self.sigma_j,
                  np.array([self.sigma_a, self.tau_ar, self.psi])]
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite parameter value")
        if (np.asarray(self.sigma_j) <= 0).any() or self.sigma_a <= 0 or self.tau_ar <= 0:
            raise ValueError("scale parameters must be positive")


def _norm_logpdf(x, mean, sd):
    return -0.5 * math.log(2 * math.pi) - np.log(sd) - 0.5 * ((x - mean) / sd) ** 2


def _half_normal_logpdf(x, scale):
    return math.log(2.0) - 0.5 * math.log(2 * math.pi) - np.log(scale) - 0.5 * (x / scale) ** 2


def log_posterior(
    params: MetaParams,
    stats: StudySufficientStats,
    grid: IntervalGrid,
    priors: PriorConfig | None = None,
) -> float:
    """Unnormalized log posterior density over the constrained parameters."""
    priors = priors or PriorConfig()
    params.validate()
    alpha, a, mu = params.alpha, params.a, params.mu
    sigma_j, sigma_a, tau, psi = params.sigma_j, params.sigma_a, params.tau_ar, params.psi
    phi = params.phi

    ll = float(np.sum(stats.d * alpha - np.exp(alpha) * stats.E))
    lp_alpha = float(np.sum(_norm_logpdf(alpha, a[None, :], sigma_j[None, :])))
    lp_a = float(np.sum(_norm_logpdf(a, mu, sigma_a)))
    var1 = tau**2 / (1.0 - phi**2)
    lp_mu = float(_norm_logpdf(mu[0], 0.0, math.sqrt(var1)))
    if grid.J > 1:
        lp_mu += float(np.sum(_norm_logpdf(mu[1:], phi * mu[:-1], tau)))
    lp_prior = float(np.sum(_half_normal_logpdf(sigma_j, priors.sigma_scale)))
    lp_prior += float(_half_normal_logpdf(sigma_a, priors.sigma_a_scale))
    lp_prior += float(_half_normal_logpdf(tau, priors.tau_scale))
    lp_prior += float(_norm_logpdf(psi, 0.0, priors.psi_scale))
    return ll + lp_alpha + lp_a + lp_mu + lp_prior


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 2000
    draws: int = 5000
    seed: int = 0
    priors: PriorConfig = field(default_factory=PriorConfig)


@dataclass(frozen=True)
class MetaPosterior:
    """Stacked post-warmup draws across chains, plus diagnostics."""

    alpha: np.ndarray  # (N, S, J)
    a: np.ndarray  # (N, J)
    mu: np.ndarray  # (N, J)
    sigma_j: np.ndarray  # (N, J)
    sigma_a: np.ndarray  # (N,)
    tau_ar: np.ndarray  # (N,)
    psi: np.ndarray  # (N,)
    labels: tuple[str, ...]
    diagnostics: dict
    config: SamplerConfig

    @property
    def n_draws(self) -> int:
        return self.a.shape[0]

    @property
    def phi(self) -> np.ndarray:
        return np.tanh(self.psi)

    def params(self, i: int) -> MetaParams:
        return MetaParams(
            alpha=self.alpha[i],
            a=self.a[i],
            mu=self.mu[i],
            sigma_j=self.sigma_j[i],
            sigma_a=float(self.sigma_a[i]),
            tau_ar=float(self.tau_ar[i]),
            psi=float(self.psi[i]),
        )


class _Chain:
    """One chain's state and per-block adaptive step sizes."""

    def __init__(self, stats: StudySufficientStats, priors: PriorConfig, rng: np.random.Generator):
        self.rng = rng
        self.stats = stats
        self.priors = priors
        S, J = stats.S, stats.J
        self.alpha = np.log((stats.d + 0.5) / (stats.E + 1.0))
        self.a = self.alpha.mean(axis=0)
        self.mu = self.a.copy()
        self.log_sigma_j = np.full(J, math.log(priors.sigma_scale * HALF_NORMAL_MEDIAN))
        self.log_sigma_a = math.log(priors.sigma_a_scale * HALF_NORMAL_MEDIAN)
        self.log_tau = math.log(priors.tau_scale * HALF_NORMAL_MEDIAN)
        self.psi = 0.0
        self.step_alpha = np.full((S, J), 0.5)
        self.step_sigma_j = np.full(J, 0.5)
        self.step_scalar = {"sigma_a": 0.5, "tau": 0.5, "psi": 0.5}
        self.accept_counts = {"alpha": np.zeros((S, J)), "sigma_j": np.zeros(J),
                              "sigma_a": 0.0, "tau": 0.0, "psi": 0.0}
        self.batch = 0

    # --- conditional log densities ---------------------------------------

    def _alpha_cond(self, alpha: np.ndarray) -> np.ndarray:
        sigma = np.exp(self.log_sigma_j)[None, :]
        with np.errstate(over="ignore"):
            return (
                self.stats.d * alpha
                - np.exp(alpha) * self.stats.E
                + _norm_logpdf(alpha, self.a[None, :], sigma)
            )

    def _sigma_j_cond(self, log_sigma: np.ndarray) -> np.ndarray:
        sigma = np.exp(log_sigma)
        lp = np.sum(_norm_logpdf(self.alpha, self.a[None, :], sigma[None, :]), axis=0)
        lp += _half_normal_logpdf(sigma, self.priors.sigma_scale)
        return lp + log_sigma  # change-of-variable term for log-SD walk

    def _sigma_a_cond(self, log_sigma_a: float) -> float:
        sigma = math.exp(log_sigma_a)
        lp = float(np.sum(_norm_logpdf(self.a, self.mu, sigma)))
        lp += float(_half_normal_logpdf(sigma, self.priors.sigma_a_scale))
        return lp + log_sigma_a

    def _ar_logdensity(self, log_tau: float, psi: float) -> float:
        tau = math.exp(log_tau)
        phi = math.tanh(psi)
        var1 = tau**2 / (1.0 - phi**2)
        lp = float(_norm_logpdf(self.mu[0], 0.0, math.sqrt(var1)))
        if self.mu.size > 1:
            lp += float(np.sum(_norm_logpdf(self.mu[1:], phi * self.mu[:-1], tau)))
        return lp

    def _tau_cond(self, log_tau: float) -> float:
        tau = math.exp(log_tau)
        return self._ar_logdensity(log_tau, self.psi) + float(
            _half_normal_logpdf(tau, self.priors.tau_scale)
        ) + log_tau

    def _psi_cond(self, psi: float) -> float:
        return self._ar_logdensity(self.log_tau, psi) + float(
            _norm_logpdf(psi, 0.0, self.priors.psi_scale)
        )

    # --- updates -----------------------------------------------------------

    def _mh_vector(self, value, cond, step, accept_key):
        prop = value + step * self.rng.standard_normal(value.shape)
        delta = cond(prop) - cond(value)
        accept = np.log(self.rng.uniform(size=value.shape)) < delta
        self.accept_counts[accept_key] += accept
        return np.where(accept, prop, value)

    def _mh_scalar(self, value, cond, key):
        prop = value + self.step_scalar[key] * self.rng.standard_normal()
        if math.log(self.rng.uniform()) < cond(prop) - cond(value):
            self.accept_counts[key] += 1.0
            return prop
        return value

    def _gibbs_a(self):
        sigma_j2 = np.exp(2 * self.log_sigma_j)
        sigma_a2 = math.exp(2 * self.log_sigma_a)
        prec = self.stats.S / sigma_j2 + 1.0 / sigma_a2
        mean = (self.alpha.sum(axis=0) / sigma_j2 + self.mu / sigma_a2) / prec
        self.a = mean + self.rng.standard_normal(self.a.shape) / np.sqrt(prec)

    def _gibbs_mu(self):
        tau2 = math.exp(2 * self.log_tau)
        phi = math.tanh(self.psi)
        sigma_a2 = math.exp(2 * self.log_sigma_a)
        J = self.mu.size
        for j in range(J):
            prec = 1.0 / sigma_a2
            num = self.a[j] / sigma_a2
            if j == 0:
                prec += (1.0 - phi**2) / tau2
            else:
                prec += 1.0 / tau2
                num += phi * self.mu[j - 1] / tau2
            if j < J - 1:
                prec += phi**2 / tau2
                num += phi * self.mu[j + 1] / tau2
            self.mu[j] = num / prec + self.rng.standard_normal() / math.sqrt(prec)

    def step(self, adapt: bool):
        self.alpha = self._mh_vector(self.alpha, self._alpha_cond, self.step_alpha, "alpha")
        self._gibbs_a()
        self._gibbs_mu()
        self.log_sigma_j = self._mh_vector(
            self.log_sigma_j, self._sigma_j_cond, self.step_sigma_j, "sigma_j"
        )
        self.log_sigma_a = self._mh_scalar(self.log_sigma_a, self._sigma_a_cond, "sigma_a")
        self.log_tau = self._mh_scalar(self.log_tau, self._tau_cond, "tau")
        self.psi = self._mh_scalar(self.psi, self._psi_cond, "psi")

        self.batch += 1
        if adapt and self.batch % ADAPT_BATCH == 0:
            gamma = min(0.5, 5.0 / math.sqrt(self.batch))
            self.step_alpha *= np.exp(gamma * (self.accept_counts["alpha"] / ADAPT_BATCH - TARGET_ACCEPT))
            self.step_sigma_j *= np.exp(gamma * (self.accept_counts["sigma_j"] / ADAPT_BATCH - TARGET_ACCEPT))
            for key in ("sigma_a", "tau", "psi"):
                self.step_scalar[key] *= math.exp(
                    gamma * (self.accept_counts[key] / ADAPT_BATCH - TARGET_ACCEPT)
                )
            self.accept_counts = {
                "alpha": np.zeros_like(self.step_alpha),
                "sigma_j": np.zeros_like(self.step_sigma_j),
                "sigma_a": 0.0, "tau": 0.0, "psi": 0.0,
            }

    def state_finite(self) -> bool:
        vals = [self.alpha, self.a, self.mu, self.log_sigma_j,
                np.array([self.log_sigma_a, self.log_tau, self.psi])]
        return all(np.all(np.isfinite(v)) for v in vals)


def sample_posterior(
    stats: StudySufficientStats,
    grid: IntervalGrid,
    config: SamplerConfig | None = None,
) -> MetaPosterior:
    """Run the chains and collect post-warmup draws plus R-hat/ESS diagnostics."""
    config = config or SamplerConfig()
    if stats.J != grid.J:
        raise ValueError("stats and grid disagree on the interval count")
    S, J = stats.S, stats.J
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)

    per_chain = {name: [] for name in ("alpha", "a", "mu", "sigma_j", "sigma_a", "tau_ar", "psi")}
    for ci in range(config.chains):
        chain = _Chain(stats, config.priors, np.random.default_rng(seeds[ci]))
        draws = {name: [] for name in per_chain}
        for it in range(config.warmup + config.draws):
            chain.step(adapt=it < config.warmup)
            if not chain.state_finite():
                raise SamplerFailure(
                    f"chain {ci} diverged to a non-finite state at iteration {it}",
                    trace={"iteration": it, "chain": ci},
                )
            if it >= config.warmup:
                draws["alpha"].append(chain.alpha.copy())
                draws["a"].append(chain.a.copy())
                draws["mu"].append(chain.mu.copy())
                draws["sigma_j"].append(np.exp(chain.log_sigma_j))
                draws["sigma_a"].append(math.exp(chain.log_sigma_a))
                draws["tau_ar"].append(math.exp(chain.log_tau))
                draws["psi"].append(chain.psi)
        for name in per_chain:
            per_chain[name].append(np.asarray(draws[name]))

    stacked = {name: np.concatenate(chains, axis=0) for name, chains in per_chain.items()}
    diagnostics = _diagnostics(per_chain, S, J)
    return MetaPosterior(
        alpha=stacked["alpha"],
        a=stacked["a"],
        mu=stacked["mu"],
        sigma_j=stacked["sigma_j"],
        sigma_a=stacked["sigma_a"],
        tau_ar=stacked["tau_ar"],
        psi=stacked["psi"],
        labels=stats.labels,
        diagnostics=diagnostics,
        config=config,
    )


def _split_rhat(chains: np.ndarray) -> float:
    """Split R-hat over (chains, draws)."""
    m, n = chains.shape
    half = n // 2
    if half < 2:
        return float("nan")
    splits = chains[:, :2 * half].reshape(2 * m, half)
    means = splits.mean(axis=1)
    variances = splits.var(axis=1, ddof=1)
    W = variances.mean()
    B = half * means.var(ddof=1)
    if W <= 0:
        return 1.0
    var_plus = (half - 1) / half * W + B / half
    return float(math.sqrt(var_plus / W))


def _ess(chains: np.ndarray) -> float:
    """Effective sample size via Geyer's initial positive sequence."""
    m, n = chains.shape
    if n < 4:
        return float(m * n)
    acov = np.zeros(n)
    for row in chains:
        x = row - row.mean()
        f = np.fft.rfft(x, 2 * n)
        acf = np.fft.irfft(f * np.conj(f))[:n] / n
        acov += acf
    acov /= m
    if acov[0] <= 0:
        return float(m * n)
    rho = acov / acov[0]
    # Sum paired autocorrelations while positive.
    tau = 1.0
    k = 1
    while k + 1 < n:
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2 * pair
        k += 2
    return float(m * n / max(tau, 1.0))


def _diagnostics(per_chain: dict, S: int, J: int) -> dict:
    out = {}

    def add(name: str, chains_list: list[np.ndarray]):
        arr = np.stack(chains_list)  # (chains, draws, ...)
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        for idx in range(flat.shape[2]):
            label = name if flat.shape[2] == 1 else f"{name}[{idx}]"
            out[label] = {
                "rhat": _split_rhat(flat[:, :, idx]),
                "ess": _ess(flat[:, :, idx]),
            }

    for name in ("alpha", "a", "mu", "sigma_j", "sigma_a", "tau_ar", "psi"):
        add(name, per_chain[name])
    return out


# --- posterior functionals ----------------------------------------------------


def _cumulative_hazard(rates: np.ndarray, grid: IntervalGrid) -> np.ndarray:
    """(N, J+1) cumulative hazard at each cut for per-draw rates (N, J)."""
    widths = grid.widths[None, :]
    cum = np.cumsum(rates * widths, axis=1)
    return np.concatenate([np.zeros((rates.shape[0], 1)), cum], axis=1)


def _survival_at(times: Sequence[float], rates: np.ndarray, grid: IntervalGrid) -> np.ndarray:
    """(N, T) survival draws at the given times."""
    cuts = np.asarray(grid.cuts)
    cum = _cumulative_hazard(rates, grid)
    out = np.empty((rates.shape[0], len(times)))
    for ti, t in enumerate(times):
        if t <= 0:
            out[:, ti] = 1.0
            continue
        j = grid.interval_index(float(t))
        partial = cum[:, j - 1] + rates[:, j - 1] * (t - cuts[j - 1])
        out[:, ti] = np.exp(-partial)
    return out


def pooled_survival(
    posterior: MetaPosterior,
    grid: IntervalGrid,
    times: Sequence[float],
) -> dict:
    """Pointwise posterior {median, 2.5%, 97.5%} of pooled and per-study survival."""
    if posterior.n_draws == 0:
        raise ValueError("posterior has no draws")
    times = [float(t) for t in times]

    def summarize(draws: np.ndarray) -> dict:
        lo, med, hi = np.percentile(draws, [2.5, 50.0, 97.5], axis=0)
        return {"times": times, "median": med.tolist(), "lo": lo.tolist(), "hi": hi.tolist()}

    pooled = summarize(_survival_at(times, np.exp(posterior.a), grid))
    per_study = {
        label: summarize(_survival_at(times, np.exp(posterior.alpha[:, si, :]), grid))
        for si, label in enumerate(posterior.labels)
    }
    return {"pooled": pooled, "per_study": per_study}


def survival_draws(posterior: MetaPosterior, grid: IntervalGrid, times: Sequence[float]) -> np.ndarray:
    """(N, T) pooled survival draws; exposed for coverage checks."""
    return _survival_at([float(t) for t in times], np.exp(posterior.a), grid)


def rmst(posterior: MetaPosterior, grid: IntervalGrid, horizon: float) -> dict:
    """Restricted mean survival time to the horizon, in closed form per draw."""
    cuts = np.asarray(grid.cuts)
    if horizon > cuts[-1]:
        raise GridTooShort(f"horizon {horizon} beyond last cut {cuts[-1]}")
    rates = np.exp(posterior.a)
    cum = _cumulative_hazard(rates, grid)
    total = np.zeros(rates.shape[0])
    for j in range(grid.J):
        lo, hi = cuts[j], min(cuts[j + 1], horizon)
        if hi <= lo:
            break
        delta = hi - lo
        s_start = np.exp(-cum[:, j])
        lam = rates[:, j]
        seg = np.where(lam > 0, s_start * (1.0 - np.exp(-lam * delta)) / np.where(lam > 0, lam, 1.0),
                       s_start * delta)
        total += seg
    lo_q, med, hi_q = np.percentile(total, [2.5, 50.0, 97.5])
    return {
        "horizon": horizon,
        "mean": float(total.mean()),
        "median": float(med),
        "ci": (float(lo_q), float(hi_q)),
        "draws": total,
    }


def estimate_pooled_median(posterior: MetaPosterior, grid: IntervalGrid) -> dict:
    """Per-draw closed-form crossing of S_pool = 0.5, summarized over draws."""
    cuts = np.asarray(grid.cuts)
    rates = np.exp(posterior.a)
    cum = _cumulative_hazard(rates, grid)
    n = rates.shape[0]
    medians = np.full(n, np.inf)
    for j in range(grid.J):
        crossed = (cum[:, j] < LOG2) & (cum[:, j + 1] >= LOG2) & np.isinf(medians)
        if crossed.any():
            lam = rates[crossed, j]
            medians[crossed] = cuts[j] + (LOG2 - cum[crossed, j]) / lam
    reached = np.isfinite(medians)
    summary = {
        "n_draws": n,
        "n_not_reached": int((~reached).sum()),
    }
    if reached.any():
        vals = medians[reached]
        lo, med, hi = np.percentile(vals, [2.5, 50.0, 97.5])
        summary.update(median=float(med), ci=(float(lo), float(hi)))
    else:
        summary.update(median=math.inf, ci=(math.inf, math.inf))
    return summary
