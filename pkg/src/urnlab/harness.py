"""Replica ensembles and the limit-theorem experiments."""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .errors import (ConfigError, EnsembleAbortedError, ExplosionError,
                     HypothesisViolatedError, InconclusiveError, StatisticalError,
                     TooFewSamplesError)
from .limit import grid_function, hitting_time_limit, solve_rho, theta_squared
from .model import discretize
from .moments import integrate_moments, mean_path
from .simulator import RateTables, run_trajectory

Z99 = 2.5758293035489004  # two-sided 99% normal quantile
KS_CRITICAL_01 = 1.628  # asymptotic Kolmogorov critical value at alpha = 0.01
MIN_KS_SAMPLES = 50
MAX_EXPLODED_FRACTION = 0.01
MAX_NOT_HIT_FRACTION = 0.05
ZERO_COV_RTOL = 1e-10


@dataclass
class EnsembleSummary:
    replica_count: int
    sample_mean: float
    sample_variance: float
    standard_error: float
    ci99: tuple
    samples: np.ndarray = field(repr=False)

    @classmethod
    def from_samples(cls, samples):
        x = np.asarray(samples, dtype=float)
        R = len(x)
        mean = float(np.mean(x)) if R else math.nan
        var = float(np.var(x, ddof=1)) if R > 1 else 0.0
        se = math.sqrt(var / R) if R else math.nan
        return cls(R, mean, var, se, (mean - Z99 * se, mean + Z99 * se), x)

    def to_dict(self):
        return {"replica_count": self.replica_count, "sample_mean": self.sample_mean,
                "sample_variance": self.sample_variance,
                "standard_error": self.standard_error, "ci99": list(self.ci99)}


@dataclass
class EnsembleResult:
    """Per-replica observables, rows ordered by replica index."""

    record_times: np.ndarray
    replicas: np.ndarray
    mu: dict
    v: dict
    hitting: dict
    exploded: list

    def summary(self, name, kind="mu", time_index=-1):
        table = self.mu if kind == "mu" else self.v
        return EnsembleSummary.from_samples(table[name][:, time_index])

    def summaries(self):
        out = {}
        for kind, table in (("mu", self.mu), ("v", self.v)):
            for name, values in table.items():
                for col, t in enumerate(self.record_times):
                    out[f"{kind}[{name}]@t={t:g}"] = EnsembleSummary.from_samples(values[:, col])
        return out


_TABLE_CACHE = {}


def _tables_for(spec):
    key = repr(sorted(spec.to_dict().items()))
    tables = _TABLE_CACHE.get(key)
    if tables is None:
        _TABLE_CACHE.clear()
        tables = _TABLE_CACHE[key] = RateTables(spec)
    return tables


def _run_replicas(job):
    spec, f_list, targets, master_seed, keys, kwargs = job
    tables = _tables_for(spec)
    out = []
    for replica, key in keys:
        try:
            obs = run_trajectory(spec, f_list, targets, seed=master_seed, tables=tables,
                                 replica=key, **kwargs)
        except ExplosionError as exc:
            out.append((replica, None, (exc.time, exc.particles)))
            continue
        out.append((replica, {"mu": obs.mu, "v": obs.v, "hitting": obs.hitting}, None))
    return out


class _Tabulated:
    """A test function frozen to its values at the urn points (picklable)."""

    def __init__(self, values):
        self.values = values

    def __call__(self, u):
        return self.values


def _tabulate(f_list, N):
    pts = np.arange(1, N + 1) / N
    return {name: _Tabulated(np.broadcast_to(np.asarray(f(pts), dtype=float), (N,)).copy())
            for name, f in f_list.items()}


def resolve_workers(worker_count=None):
    if worker_count is None:
        worker_count = int(os.environ.get("URNLAB_WORKERS", "1"))
    if worker_count < 1:
        raise ConfigError(f"worker count must be >= 1, got {worker_count}")
    return worker_count


def run_ensemble(spec, f_list, targets, R, master_seed, worker_count=1, *,
                 replica_keys=None, **trajectory_kwargs):
    """Run R replicas; replica r uses random stream key (master_seed, r).

    ``replica_keys`` overrides the per-replica stream keys (for tests). Output
    does not depend on ``worker_count``. Exploded replicas are dropped and
    listed; more than 1% of them aborts the ensemble.
    """
    if R < 2:
        raise ConfigError("an ensemble needs R >= 2 replicas")
    workers = resolve_workers(worker_count)
    keys = list(range(R)) if replica_keys is None else [int(k) for k in replica_keys]
    if len(keys) != R:
        raise ConfigError("replica_keys must have R entries")
    indexed = list(enumerate(keys))
    targets = [(str(n), float(r)) for n, r in targets]
    f_list = _tabulate(dict(f_list), spec.n_urns)
    if workers == 1:
        rows = _run_replicas((spec, f_list, targets, master_seed, indexed, trajectory_kwargs))
    else:
        chunks = [indexed[w::workers] for w in range(workers)]
        jobs = [(spec, f_list, targets, master_seed, c, trajectory_kwargs) for c in chunks if c]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [row for part in pool.map(_run_replicas, jobs) for row in part]
    rows.sort(key=lambda row: row[0])
    exploded = [(r, info) for r, _, info in rows if info is not None]
    if len(exploded) > MAX_EXPLODED_FRACTION * R:
        first = exploded[0]
        raise EnsembleAbortedError(
            f"{len(exploded)} of {R} replicas exceeded the particle cap "
            f"(first: replica {first[0]} at t={first[1][0]:.6g})")
    good = [(r, obs) for r, obs, info in rows if info is None]
    record_times = trajectory_kwargs.get("record_times")
    if record_times is None:
        record_times = [trajectory_kwargs.get("horizon", spec.horizon)]
    names = list(f_list)
    ncol = len(record_times)

    def stack(kind, name):
        return np.array([obs[kind][name] for _, obs in good], dtype=float).reshape(
            len(good), ncol)

    mu = {n: stack("mu", n) for n in names}
    v = {}
    if good and good[0][1]["v"]:
        v = {n: stack("v", n) for n in names}
    hitting = {}
    for target in targets:
        times = [obs["hitting"][target] for _, obs in good]
        hitting[target] = np.array([math.nan if t is None else t for t in times])
    return EnsembleResult(np.asarray(sorted(record_times), dtype=float),
                          np.array([r for r, _ in good], dtype=np.int64), mu, v, hitting,
                          [r for r, _ in exploded])


@dataclass
class NormalityResult:
    ks_statistic: float
    threshold: float
    passed: bool
    target_mean: float
    target_variance: float
    sample_size: int

    def to_dict(self):
        return asdict(self)


def normal_cdf(x):
    """Standard normal CDF via scipy's ndtr (erfc-based, absolute error < 1e-15)."""
    return special.ndtr(x)


def ks_normal_test(samples, target_mean, target_variance):
    """One-sample Kolmogorov-Smirnov test against N(mean, variance) at alpha = 0.01."""
    x = np.sort(np.asarray(samples, dtype=float))
    R = len(x)
    if R < MIN_KS_SAMPLES:
        raise TooFewSamplesError(f"KS test needs at least {MIN_KS_SAMPLES} samples, got {R}")
    if not target_variance > 0:
        raise StatisticalError(f"target variance must be > 0, got {target_variance}")
    cdf = normal_cdf((x - target_mean) / math.sqrt(target_variance))
    i = np.arange(1, R + 1)
    stat = float(max(np.max(i / R - cdf), np.max(cdf - (i - 1) / R)))
    threshold = KS_CRITICAL_01 / math.sqrt(R)
    return NormalityResult(stat, threshold, stat < threshold, float(target_mean),
                           float(target_variance), R)


def _fvalues(f, M):
    return grid_function(f, M)


@dataclass
class LlnLevel:
    n_urns: int
    summary: EnsembleSummary
    rms_gap: float
    rms_ci99: tuple
    mean_within_3se: bool

    def to_dict(self):
        return {"N": self.n_urns, "summary": self.summary.to_dict(), "rms_gap": self.rms_gap,
                "rms_ci99": list(self.rms_ci99), "mean_within_3se": self.mean_within_3se}


@dataclass
class LlnResult:
    target: float
    levels: list
    shrinks: bool

    @property
    def passed(self):
        return self.levels[-1].mean_within_3se and self.shrinks

    def to_dict(self):
        return {"target": self.target, "levels": [lv.to_dict() for lv in self.levels],
                "rms_gap_shrinks": self.shrinks, "pass": self.passed}


def lln_experiment(spec, f, t, N_list, R, master_seed, *, step=1e-3, grid_size=64,
                   worker_count=1):
    """mu_t^N(f) ensembles over N against the limit mu_t(f).

    Per N: whether the sample mean lies within 3 standard errors of the limit,
    and the root-mean-square distance to the limit with a 99% interval (delta
    method on the mean squared deviation). ``shrinks`` is True when the RMS
    interval at the largest N lies strictly below the one at the smallest N.
    """
    kernel = discretize(spec, grid_size)
    target = float(solve_rho(kernel, t, step).mu(_fvalues(f, grid_size))[-1])
    levels = []
    for N in sorted(N_list):
        res = run_ensemble(spec.with_urns(N), {"f": f}, [], R, master_seed, worker_count,
                           record_times=[t], horizon=t)
        s = res.summary("f")
        sq = (s.samples - target) ** 2
        mse = float(sq.mean())
        mse_se = float(sq.std(ddof=1) / math.sqrt(len(sq)))
        ci = (math.sqrt(max(mse - Z99 * mse_se, 0.0)), math.sqrt(mse + Z99 * mse_se))
        levels.append(LlnLevel(N, s, math.sqrt(mse), ci,
                               abs(s.sample_mean - target) <= 3 * s.standard_error))
    shrinks = levels[-1].rms_ci99[1] < levels[0].rms_ci99[0]
    return LlnResult(target, levels, shrinks)


@dataclass
class CltResult:
    n_urns: int
    t: float
    theta2: float
    summary: EnsembleSummary
    normality: NormalityResult
    variance_rel_error: float
    variance_tolerance: float

    @property
    def passed(self):
        return self.normality.passed and self.variance_rel_error <= self.variance_tolerance

    def to_dict(self):
        return {"N": self.n_urns, "t": self.t, "theta2": self.theta2,
                "summary": self.summary.to_dict(), "ks": self.normality.to_dict(),
                "variance_rel_error": self.variance_rel_error,
                "variance_tolerance": self.variance_tolerance, "pass": self.passed}


def clt_experiment(spec, f, t, N, R, master_seed, *, step=1e-3, grid_size=64,
                   worker_count=1, variance_tolerance=0.10):
    """V_t^N(f), centred with the exact finite-N means, against N(0, theta_t^2(f))."""
    spec_n = spec.with_urns(N)
    means = mean_path(spec_n, [t], step)
    kernel = discretize(spec, grid_size)
    theta2 = theta_squared(_fvalues(f, grid_size), kernel, t, step).total
    res = run_ensemble(spec_n, {"f": f}, [], R, master_seed, worker_count,
                       record_times=[t], horizon=t, means=means)
    s = res.summary("f", kind="v")
    ks = ks_normal_test(s.samples, 0.0, theta2)
    rel = abs(s.sample_variance - theta2) / theta2
    return CltResult(N, float(t), theta2, s, ks, rel, variance_tolerance)


@dataclass
class HittingResult:
    n_urns: int
    r: float
    tau: float
    slope: float
    theta2_tau: float
    target_variance: float
    hitting_times: np.ndarray = field(repr=False)
    scaled: EnsembleSummary = None
    normality: NormalityResult = None
    not_hit: int = 0
    far_fraction: float = 0.0
    small_tau: bool = False

    @property
    def passed(self):
        return self.normality is not None and self.normality.passed

    def to_dict(self):
        return {"N": self.n_urns, "r": self.r, "tau": self.tau, "slope": self.slope,
                "theta2_tau": self.theta2_tau, "target_variance": self.target_variance,
                "scaled": self.scaled.to_dict(), "ks": self.normality.to_dict(),
                "not_hit": self.not_hit, "far_fraction": self.far_fraction,
                "small_tau": self.small_tau, "pass": self.passed}


def hitting_experiment(spec, f, r, N, R, master_seed, *, step=1e-3, grid_size=64,
                       worker_count=1, horizon=None, far=0.1):
    """sqrt(N)(tau^N - tau) against N(0, theta_tau^2(f) / mu_tau(P1 f)^2).

    ``far_fraction`` counts replicas with |tau^N - tau| > ``far`` (unhit
    replicas included).
    """
    kernel = discretize(spec, grid_size)
    fgrid = _fvalues(f, grid_size)
    limit = hitting_time_limit(fgrid, r, kernel, step)
    if not limit.applicable:
        raise HypothesisViolatedError(
            f"slope mu_tau(P1 f) = {limit.slope:.6g} <= 0 at tau = {limit.tau:.6g}")
    theta2 = theta_squared(fgrid, kernel, limit.tau, step).total
    target_var = theta2 / limit.slope ** 2
    if horizon is None:
        horizon = 2.0 * limit.tau + 1.0
    res = run_ensemble(spec.with_urns(N), {"f": f}, [("f", r)], R, master_seed, worker_count,
                       record_times=[], horizon=horizon, stop_when_hit=True)
    times = res.hitting[("f", float(r))]
    hit = np.isfinite(times)
    not_hit = int((~hit).sum())
    if not_hit > MAX_NOT_HIT_FRACTION * len(times):
        raise InconclusiveError(f"{not_hit} of {len(times)} replicas did not hit r={r}")
    scaled = math.sqrt(N) * (times[hit] - limit.tau)
    far_fraction = float(np.mean(~hit | (np.abs(times - limit.tau) > far)))
    small_tau = limit.tau < 3.0 * math.sqrt(target_var / N)
    return HittingResult(
        N, float(r), limit.tau, limit.slope, theta2, target_var, times,
        EnsembleSummary.from_samples(scaled), ks_normal_test(scaled, 0.0, target_var),
        not_hit, far_fraction, small_tau)


@dataclass
class CovDecayResult:
    t: float
    n_list: list
    max_cov: list
    slope: float
    identically_zero: bool

    def to_dict(self):
        return asdict(self)


def covariance_decay_experiment(spec, t, N_list, step=1e-3):
    """Least-squares slope of log max_{i != j} |Cov(X_t(i), X_t(j))| against log N.

    Covariances below ZERO_COV_RTOL times the largest second moment count as
    zero; if all are zero the result is flagged ``identically_zero``.
    """
    values, zero = [], []
    for N in N_list:
        state = integrate_moments(spec.with_urns(N), t, step)
        c = state.max_offdiag_cov()
        values.append(c)
        zero.append(c <= ZERO_COV_RTOL * max(float(np.abs(state.second).max()), 1e-300))
    if all(zero):
        return CovDecayResult(float(t), list(N_list), values, math.nan, True)
    slope = float(np.polyfit(np.log(N_list), np.log(values), 1)[0])
    return CovDecayResult(float(t), list(N_list), values, slope, False)
