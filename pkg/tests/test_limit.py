import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from urnlab.errors import ConfigError, GridMismatchError, NotHitError
from urnlab.limit import (apply_P1, apply_P2, apply_P3, density_dependent_forms,
                          grid_function, hitting_time_limit, noise_rate_direct, pairing,
                          propagate_P1, solve_rho, theta_squared, time_mesh)
from urnlab.model import ModelSpec, discretize, model_a, model_b, model_c, model_nonuniform

from conftest import small_cross_model

E = math.e
ONE16 = np.ones(16)


@pytest.fixture(scope="module")
def kernels():
    return {name: discretize(make(), 16) for name, make in
            [("a", model_a), ("b", model_b), ("c", model_c), ("d", model_nonuniform),
             ("x", small_cross_model)]}


@pytest.mark.parametrize("name, p1, p2, p3", [("a", 1, 1, 1), ("b", -1, -1, 1), ("c", 0, 0, 0)])
def test_operators_on_constants(kernels, name, p1, p2, p3):
    k = kernels[name]
    np.testing.assert_allclose(apply_P1(ONE16, k), p1, atol=1e-14)
    np.testing.assert_allclose(apply_P2(ONE16, k), p2, atol=1e-14)
    np.testing.assert_allclose(apply_P3(ONE16, k), p3, atol=1e-14)


def literal_P1(f, k):
    """Double loop over grid points, k by k."""
    M = k.grid_size
    out = np.zeros(M)
    for u in range(M):
        s = 0.0
        for kk in range(k.k_max + 1):
            for v in range(M):
                s += k.lambda_table[kk, u, v] * (kk * f[v] - f[u]) / M
            s += k.psi_table[kk, u] * (kk - 1) * f[u]
        out[u] = s
    return out


def literal_P3(f, k):
    M = k.grid_size
    out = np.zeros(M)
    for u in range(M):
        s = 0.0
        for kk in range(k.k_max + 1):
            for v in range(M):
                s += k.lambda_table[kk, u, v] * (kk * f[v] - f[u]) ** 2 / M
            s += k.psi_table[kk, u] * (kk - 1) ** 2 * f[u] ** 2
        out[u] = s
    return out


def test_P1_and_P3_match_literal_sums(kernels):
    rng = np.random.default_rng(5)
    for k in kernels.values():
        f = rng.normal(size=16)
        np.testing.assert_allclose(apply_P1(f, k), literal_P1(f, k), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(apply_P3(f, k), literal_P3(f, k), rtol=1e-12, atol=1e-12)


def test_adjointness_against_direct_double_sum(kernels):
    k = kernels["c"]
    rng = np.random.default_rng(11)
    g = rng.normal(size=16)
    for _ in range(100):
        f = rng.normal(size=16)
        lhs = pairing(apply_P2(g, k), f)
        rhs = pairing(g, literal_P1(f, k))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-13)


grid_vectors = arrays(np.float64, 16, elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(grid_vectors, grid_vectors)
def test_adjointness_property(f, g):
    k = discretize(small_cross_model(), 16)
    lhs = pairing(apply_P2(g, k), f)
    rhs = pairing(g, apply_P1(f, k))
    scale = np.abs(f).sum() * np.abs(g).sum() / 16 + 1e-300
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(grid_vectors)
def test_P3_nonnegative(f):
    out = apply_P3(f, discretize(small_cross_model(), 16))
    assert np.all(out >= 0)


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        apply_P1(np.ones(8), discretize(model_a(), 16))


def test_time_mesh_lands_on_end():
    mesh = time_mesh(1.0, 0.3)
    assert mesh[0] == 0.0 and mesh[-1] == 1.0 and len(mesh) == 5
    assert time_mesh(0.0, 0.1).tolist() == [0.0]
    with pytest.raises(ConfigError, match="step"):
        time_mesh(1.0, 0.0)


def test_pure_death_limit():
    k = discretize(model_b(), 16)
    np.testing.assert_allclose(solve_rho(k, 1.0, 1e-3).final, math.exp(-1), atol=1e-8)


def test_supercritical_uniform_limit():
    k = discretize(model_a(), 16)
    np.testing.assert_allclose(solve_rho(k, 1.0, 1e-3).final, E, atol=1e-6)


@pytest.mark.parametrize("t", [0.3, 1.0, 2.5])
def test_conservative_kernel_keeps_mass(t):
    spec = ModelSpec.from_strings(4, lam=["0", "1 + 0.5*cos(2*pi*(u-v))"],
                                  phi="1 + 0.5*sin(2*pi*u)")
    k = discretize(spec, 32)
    mass = solve_rho(k, t, 1e-2).mu(np.ones(32))
    np.testing.assert_allclose(mass, mass[0], atol=1e-10)


def test_propagate_P1_examples():
    ka, kc = discretize(model_a(), 16), discretize(model_c(), 16)
    _, hs = propagate_P1(ONE16, ka, 1.0, 1e-3)
    np.testing.assert_allclose(hs[-1], E, atol=1e-6)
    _, hs = propagate_P1(ONE16, kc, 1.0, 1e-3)
    np.testing.assert_allclose(hs[-1], 1.0, atol=1e-12)
    f = np.linspace(-1, 1, 16)
    times, hs = propagate_P1(f, ka, 0.0, 1e-3)
    np.testing.assert_array_equal(hs[0], f)


def test_growth_identity():
    k = discretize(small_cross_model(), 32)
    f = grid_function(lambda u: np.cos(2 * np.pi * u) + 2, 32)
    step = 1e-3
    sol = solve_rho(k, 0.5, step)
    mu = sol.mu(f)
    fd = (mu[2:] - mu[:-2]) / (2 * step)
    exact = np.array([pairing(r, apply_P1(f, k)) for r in sol.rho[1:-1]])
    assert np.max(np.abs(fd - exact)) < 10 * step ** 2 * np.max(np.abs(exact))


def test_grid_convergence_second_order():
    spec = small_cross_model()
    diffs = []
    for M in (8, 16, 32):
        coarse = solve_rho(discretize(spec, M), 0.5, 1e-2).final
        fine = solve_rho(discretize(spec, 2 * M), 0.5, 1e-2).final[1::2]
        diffs.append(np.max(np.abs(coarse - fine)))
    for M, d in zip((8, 16, 32), diffs):
        assert d <= 50.0 / M ** 2
    assert diffs[-1] < diffs[0]


def test_theta_squared_supercritical_closed_form():
    th = theta_squared(ONE16, discretize(model_a(), 16), 1.0, 1e-3)
    assert th.total == pytest.approx(2 * E * E - E, abs=1e-4)


def test_theta_squared_pure_death():
    th = theta_squared(ONE16, discretize(model_b(), 16), 1.0, 1e-3)
    # Poisson thinning gives e^{-1}; the gap is the O(step^2) quadrature error
    assert th.total == pytest.approx(math.exp(-1), abs=1e-6)


@pytest.mark.parametrize("t", [0.0, 0.7, 2.0])
def test_theta_squared_conservative_is_initial_variance(t):
    th = theta_squared(ONE16, discretize(model_c(), 16), t, 1e-3)
    assert th.total == pytest.approx(1.0, abs=1e-12)


def test_theta_squared_at_zero_is_initial_pairing():
    k = discretize(small_cross_model(), 16)
    f = grid_function(lambda u: np.sin(2 * np.pi * u) + 0.3, 16)
    th = theta_squared(f, k, 0.0, 1e-3)
    assert th.total == pytest.approx(float(np.mean(k.phi_table * f * f)), rel=1e-15)
    assert th.noise_part == 0.0


def test_theta_decomposition_and_monotone_noise():
    k = discretize(small_cross_model(), 16)
    f = grid_function(lambda u: np.cos(2 * np.pi * u), 16)
    prev = -1.0
    for t in np.linspace(0, 1.5, 7):
        th = theta_squared(f, k, t, 1e-2)
        assert th.total == th.initial_part + th.noise_part
        assert th.total >= 0
        assert th.noise_part >= prev - 1e-15
        prev = th.noise_part


def test_noise_rate_identity():
    k = discretize(small_cross_model(), 16)
    rng = np.random.default_rng(3)
    rho = rng.uniform(0.1, 2, size=16)
    f = rng.normal(size=16)
    a_part, u_parts = noise_rate_direct(f, rho, k)
    assert a_part + sum(u_parts) == pytest.approx(pairing(rho, apply_P3(f, k)), rel=1e-12)


def test_noise_rate_without_death_term_misses_pure_death_noise():
    k = discretize(model_b(), 16)
    a_with, _ = noise_rate_direct(ONE16, ONE16, k, include_k0=True)
    a_without, _ = noise_rate_direct(ONE16, ONE16, k, include_k0=False)
    assert a_with == pytest.approx(1.0)
    assert a_without == 0.0


def test_hitting_time_supercritical():
    res = hitting_time_limit(ONE16, E, discretize(model_a(), 16), 1e-3)
    assert res.tau == pytest.approx(1.0, abs=1e-8)
    assert res.slope == pytest.approx(E, rel=1e-6)
    assert res.applicable


def test_hitting_time_near_start():
    res = hitting_time_limit(ONE16, 1 + 1e-12, discretize(model_a(), 16), 1e-3)
    assert 0 < res.tau < 1e-10
    assert res.slope == pytest.approx(1.0, rel=1e-6)


def test_hitting_time_never_reached():
    with pytest.raises(NotHitError):
        hitting_time_limit(ONE16, 2.0 - 1e-12, discretize(model_b(), 16), 1e-2)


def test_hitting_level_must_exceed_start():
    with pytest.raises(ConfigError):
        hitting_time_limit(ONE16, 0.5, discretize(model_a(), 16), 1e-3)


def test_density_dependent_forms_binary_split():
    res = density_dependent_forms([0, 0, 1], 1.0, 1.0)
    assert res.n_t == pytest.approx(E)
    assert res.var_alpha_t == pytest.approx(2 * E * E - E)


@pytest.mark.parametrize("t", [0.0, 0.4, 3.0])
def test_density_dependent_forms_critical(t):
    res = density_dependent_forms([0, 5], 1.7, t)
    assert res.n_t == 1.7 and res.var_alpha_t == pytest.approx(1.7)


def test_density_dependent_forms_at_zero_time():
    res = density_dependent_forms([0.3, 0.1, 0.7], 2.5, 0.0)
    assert res.n_t == 2.5 and res.var_alpha_t == 2.5


@pytest.mark.parametrize("phi, q", [("2", [0, 0, 1]), ("3", [0.5, 0, 1]), ("0.5", [1, 0, 0, 1]),
                                    ("2", [1, 0, 1])])
def test_density_dependent_forms_match_theta(phi, q):
    """Constant rates with n_0 != 1 against the grid computation."""
    spec = ModelSpec.from_strings(4, lam=["0", "1"], psi=[str(x) for x in q], phi=phi)
    k = discretize(spec, 8)
    th = theta_squared(np.ones(8), k, 1.0, 1e-3)
    closed = density_dependent_forms(q, float(phi), 1.0)
    assert th.total == pytest.approx(closed.var_alpha_t, rel=1e-6)
    assert solve_rho(k, 1.0, 1e-3).mu(np.ones(8))[-1] == pytest.approx(closed.n_t, rel=1e-10)
