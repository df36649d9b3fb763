import math

import numpy as np
import pytest

from urnlab.errors import ConfigError
from urnlab.harness import run_ensemble
from urnlab.limit import solve_rho
from urnlab.model import ModelSpec, discretize, model_a, model_b, model_c, model_nonuniform
from urnlab.moments import (UrnCoefficients, initial_moments, integrate_moments,
                            mean_ode_rhs, mean_path, mean_vs_limit_gap, moment_path,
                            mu_moments, second_moment_ode_rhs)

from conftest import small_cross_model


def generator_moment_drift(spec, m, S):
    """d/dt of E X(a) and E X(a) X(b) by enumerating every event of the chain.

    An event fired by one particle in urn l at rate r changes the state by
    delta; its contribution to the drift of x_a x_b is
    r * E[x_l (delta_a x_b + delta_b x_a + delta_a delta_b)].
    """
    N = spec.n_urns
    dm = np.zeros(N)
    dS = np.zeros((N, N))
    for l in range(N):
        u = (l + 1) / N
        events = []
        for k in range(spec.k_max + 1):
            for j in range(N):
                if j != l:
                    rate = float(spec.lam[k](u, (j + 1) / N)) / N
                    delta = np.zeros(N)
                    delta[l] -= 1
                    delta[j] += k
                    events.append((rate, delta))
            delta = np.zeros(N)
            delta[l] += k - 1
            events.append((float(spec.psi[k](u)), delta))
        for rate, delta in events:
            if rate == 0:
                continue
            for a in range(N):
                dm[a] += rate * delta[a] * m[l]
                for b in range(N):
                    dS[a, b] += rate * (delta[a] * S[l, b] + delta[b] * S[l, a]
                                        + delta[a] * delta[b] * m[l])
    return dm, dS


@pytest.mark.parametrize("make", [model_a, model_b, model_c, model_nonuniform,
                                  small_cross_model])
def test_moment_system_matches_generator(make):
    spec = make(4) if make is small_cross_model else make(n_urns=4)
    coef = UrnCoefficients(spec)
    rng = np.random.default_rng(0)
    m = rng.uniform(0.5, 2, size=4)
    X = rng.normal(size=(4, 4))
    S = X @ X.T + np.outer(m, m)
    dm, dS = second_moment_ode_rhs(m, S, coef)
    ref_m, ref_S = generator_moment_drift(spec, m, S)
    np.testing.assert_allclose(dm, ref_m, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dS, ref_S, rtol=1e-12, atol=1e-12)


def test_mean_rhs_examples():
    N = 10
    np.testing.assert_allclose(mean_ode_rhs(np.ones(N), UrnCoefficients(model_b(N))), -1.0)
    np.testing.assert_allclose(mean_ode_rhs(np.ones(N), UrnCoefficients(model_a(N))), 1.0,
                               atol=1e-14)
    m = np.random.default_rng(1).uniform(size=N)
    assert mean_ode_rhs(m, UrnCoefficients(model_c(N))).sum() == pytest.approx(0, abs=1e-14)


def test_pure_death_initial_cross_second_moment():
    coef = UrnCoefficients(model_b(6))
    m, S = initial_moments(coef)
    _, dS = second_moment_ode_rhs(m, S, coef)
    off = ~np.eye(6, dtype=bool)
    np.testing.assert_allclose(dS[off], -2 * S[off])


@pytest.mark.parametrize("make", [model_a, model_nonuniform, small_cross_model])
def test_initial_covariance_derivative_vanishes(make):
    """Poisson thinning: jumped and unjumped particle counts are independent,
    so off-diagonal covariances start at second order in t."""
    spec = make(12) if make is small_cross_model else make(n_urns=12)
    coef = UrnCoefficients(spec)
    m, S = initial_moments(coef)
    dm, dS = second_moment_ode_rhs(m, S, coef)
    dcov = dS - np.outer(dm, m) - np.outer(m, dm)
    off = ~np.eye(12, dtype=bool)
    assert np.abs(dcov[off]).max() <= 1e-13 * np.abs(dS).max()


def test_small_time_covariance_scales_like_one_over_n():
    vals = [integrate_moments(small_cross_model(N), 0.1, 1e-3).max_offdiag_cov()
            for N in (4, 8, 16)]
    assert vals[0] / vals[1] == pytest.approx(2, rel=0.3)
    assert vals[1] / vals[2] == pytest.approx(2, rel=0.3)


def test_conservative_total_second_moment_constant():
    coef = UrnCoefficients(model_c(8))
    rng = np.random.default_rng(2)
    m = rng.uniform(size=8)
    X = rng.normal(size=(8, 8))
    _, dS = second_moment_ode_rhs(m, X @ X.T, coef)
    assert dS.sum() == pytest.approx(0, abs=1e-12)


def test_initial_fluctuation_variance():
    spec = small_cross_model(12)
    state = integrate_moments(spec, 0.0, 1e-3)
    f = np.cos(2 * np.pi * np.arange(1, 13) / 12)
    phi = spec.phi(np.arange(1, 13) / 12)
    assert state.var_fluctuation(f) == pytest.approx(float(np.sum(phi * f * f)) / 12, rel=1e-12)


def test_pure_death_poisson_thinning():
    state = integrate_moments(model_b(8), 1.0, 1e-3)
    np.testing.assert_allclose(state.mean, math.exp(-1), atol=1e-12)
    np.testing.assert_allclose(np.diag(state.cov), math.exp(-1), atol=1e-12)
    assert state.max_offdiag_cov() < 1e-12 * np.abs(state.second).max()


def test_covariance_bound_from_smaller_n():
    c25 = integrate_moments(model_a(25), 1.0, 1e-3).max_offdiag_cov()
    c50 = integrate_moments(model_a(50), 1.0, 1e-3).max_offdiag_cov()
    assert c50 <= (c25 * 25) / 50 * 1.05


def test_symmetry_and_nonnegative_diagonal():
    for st in moment_path(small_cross_model(10), [0.5, 1.0, 2.0], 1e-2):
        assert np.max(np.abs(st.second - st.second.T)) <= 1e-12 * np.abs(st.second).max()
        assert np.all(np.diag(st.cov) >= 0)


def test_conservative_fluctuation_variance_constant():
    states = moment_path(model_c(20), np.linspace(0, 2, 9), 1e-3)
    values = [st.var_fluctuation(np.ones(20)) for st in states]
    np.testing.assert_allclose(values, values[0], atol=1e-9)


def test_pure_death_mean_equals_limit():
    for N in (5, 17, 40):
        assert mean_vs_limit_gap(model_b(N), 1.0) <= 1e-8


def test_gap_zero_at_time_zero():
    assert mean_vs_limit_gap(small_cross_model(10), 0.0) == 0.0


def test_gap_halves_per_doubling():
    spec = ModelSpec.from_strings(10, lam=["0.5", "0", "1 + 0.5*cos(2*pi*(u-v))"],
                                  phi="1 + 0.5*sin(2*pi*u)")
    gaps = [mean_vs_limit_gap(spec.with_urns(N), 1.0) for N in (25, 50, 100)]
    for coarse, fine in zip(gaps, gaps[1:]):
        assert coarse / fine == pytest.approx(2.0, rel=0.3)


def test_mean_path_matches_full_system():
    spec = small_cross_model(7)
    mp = mean_path(spec, [0.3, 1.0], 1e-3)
    full = moment_path(spec, [0.3, 1.0], 1e-3)
    np.testing.assert_allclose(mp, [s.mean for s in full], rtol=1e-13)


def test_cap_enforced():
    with pytest.raises(ConfigError):
        integrate_moments(model_a(30), 1.0, 1e-2, max_urns=20)


def test_simulation_agrees_with_exact_moments():
    spec = model_nonuniform(n_urns=20)
    f = lambda u: 1 + np.cos(2 * np.pi * u)  # noqa: E731
    states = moment_path(spec, [0.5, 1.0], 1e-3)
    fv = f(np.arange(1, 21) / 20)
    res = run_ensemble(spec, {"f": f}, [], 5000, 31, record_times=[0.5, 1.0], horizon=1.0)
    for col, st in enumerate(states):
        mean, var = mu_moments(st, fv)
        x = res.mu["f"][:, col]
        se_mean = x.std(ddof=1) / math.sqrt(len(x))
        m4 = np.mean((x - x.mean()) ** 4)
        se_var = math.sqrt((m4 - x.var() ** 2) / len(x))
        assert abs(x.mean() - mean) <= 4 * se_mean
        assert abs(x.var(ddof=1) - var) <= 4 * se_var
