"""Deterministic limit objects on the torus grid.

Grid functions are plain 1-d numpy arrays holding values at u = a/M,
a = 1..M; torus integrals use the rectangle rule ``values.mean()``.
All time integration is fixed-step classical RK4.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ConfigError, GridMismatchError, NotHitError


def grid_function(expr, grid_size):
    """Sample a univariate expression (or callable) at the points a/M."""
    pts = np.arange(1, grid_size + 1) / grid_size
    return np.asarray(np.broadcast_to(expr(pts), pts.shape), dtype=float)


def integral(values):
    return float(np.mean(values))


def pairing(rho, f):
    """mu(f) = (1/M) sum rho(u) f(u)."""
    return float(np.dot(rho, f)) / len(f)


def _check_grid(f, kernel):
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.grid_size,):
        raise GridMismatchError(
            f"grid function of shape {f.shape} does not match grid size {kernel.grid_size}")
    return f


def apply_P1(f, kernel):
    """(P1 f)(u) = (1/M) sum_v [c(u,v) f(v) - a(u,v) f(u)] + b1(u) f(u)."""
    f = _check_grid(f, kernel)
    M = kernel.grid_size
    return (kernel.c @ f) / M - f * (kernel.a.sum(axis=1) / M) + f * kernel.b1


def apply_P2(g, kernel):
    """(P2 g)(u) = b1(u) g(u) + (1/M) sum_v c(v,u) g(v) - g(u) (1/M) sum_v a(u,v)."""
    g = _check_grid(g, kernel)
    M = kernel.grid_size
    return g * kernel.b1 + (g @ kernel.c) / M - g * (kernel.a.sum(axis=1) / M)


def apply_P3(f, kernel):
    """Jump second moment: (1/M) sum_{k,v} lambda_k (k f(v) - f(u))^2 + b2 f^2."""
    f = _check_grid(f, kernel)
    M = kernel.grid_size
    out = kernel.b2 * f * f
    for k in range(kernel.k_max + 1):
        lam = kernel.lambda_table[k]
        if not lam.any():
            continue
        jump = k * f[None, :] - f[:, None]
        out = out + (lam * jump * jump).sum(axis=1) / M
    return out


def time_mesh(t_end, step):
    """0 = t_0 < ... < t_L = t_end with fixed ``step``; the last step may be shorter."""
    if not step > 0:
        raise ConfigError(f"step must be > 0, got {step!r}")
    if not t_end >= 0:
        raise ConfigError(f"t_end must be >= 0, got {t_end!r}")
    n = int(math.ceil(t_end / step - 1e-9))
    times = np.arange(n + 1) * step
    if n > 0:
        times[-1] = t_end
    return times


def rk4_step(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_iter(rhs, y0, times):
    """Yield (t, y) at each mesh time, starting with (times[0], y0)."""
    y = np.array(y0, dtype=float)
    yield times[0], y
    for l in range(1, len(times)):
        with np.errstate(over="ignore", invalid="ignore"):
            y = rk4_step(rhs, y, times[l] - times[l - 1])
        if not np.isfinite(y).all():
            raise BlowUpError(times[l])
        yield times[l], y


def rk4_solve(rhs, y0, times):
    return np.array([y for _, y in rk4_iter(rhs, y0, times)])


@dataclass
class LimitSolution:
    time_mesh: np.ndarray
    rho: np.ndarray  # (L + 1, M)
    step_size: float

    def mu(self, f):
        """mu_t(f) at every mesh time."""
        return self.rho @ np.asarray(f, dtype=float) / self.rho.shape[1]

    @property
    def final(self):
        return self.rho[-1]


def solve_rho(kernel, t_end, step):
    """Hydrodynamic density: d rho/dt = P2 rho, rho_0 = phi."""
    times = time_mesh(t_end, step)
    rho = rk4_solve(lambda g: apply_P2(g, kernel), kernel.phi_table, times)
    return LimitSolution(times, rho, float(step))


def propagate_P1(f, kernel, t_end, step):
    """h_tau = exp(tau P1) f on the mesh; returns (times, array of shape (L + 1, M))."""
    f = _check_grid(f, kernel)
    times = time_mesh(t_end, step)
    return times, rk4_solve(lambda h: apply_P1(h, kernel), f, times)


@dataclass
class FluctuationVariance:
    total: float
    initial_part: float
    noise_part: float


def _uniform_mesh(t, step):
    if not step > 0:
        raise ConfigError(f"step must be > 0, got {step!r}")
    if not t >= 0:
        raise ConfigError(f"t must be >= 0, got {t!r}")
    n = int(math.ceil(t / step - 1e-9))
    return np.linspace(0.0, t, n + 1) if n > 0 else np.array([0.0])


def theta_squared(f, kernel, t, step):
    """Limiting variance of the fluctuation field paired with ``f`` at time ``t``.

    initial part: (1/M) sum phi h_t^2 with h_tau = exp(tau P1) f;
    noise part: trapezoid rule over s of mu_s(P3 h_{t-s}).

    The mesh is uniform with t / ceil(t / step) spacing so that t - s_l is
    again a mesh point.
    """
    f = _check_grid(f, kernel)
    times = _uniform_mesh(t, step)
    rho = rk4_solve(lambda g: apply_P2(g, kernel), kernel.phi_table, times)
    hs = rk4_solve(lambda h: apply_P1(h, kernel), f, times)
    initial = float(np.mean(kernel.phi_table * hs[-1] ** 2))
    n = len(times) - 1
    if n == 0:
        return FluctuationVariance(initial, initial, 0.0)
    integrand = np.array([pairing(rho[l], apply_P3(hs[n - l], kernel)) for l in range(n + 1)])
    noise = float(np.trapezoid(integrand, times))
    return FluctuationVariance(initial + noise, initial, noise)


def noise_rate_direct(f, rho_s, kernel, include_k0=True):
    """||A_s f||^2 and the list of ||U_s^k f||^2 by direct double sums.

    Cross-check for ``pairing(rho_s, apply_P3(f, kernel))``. ``include_k0``
    controls whether the death-without-offspring term (k = 0) enters A_s.
    """
    f = _check_grid(f, kernel)
    M = kernel.grid_size
    ks = range(0 if include_k0 else 1, kernel.k_max + 1)
    b2 = sum(((k - 1) ** 2) * kernel.psi_table[k] for k in ks) + np.zeros(M)
    a_part = float(np.mean((np.sqrt(b2) * np.sqrt(rho_s) * f) ** 2))
    u_parts = []
    for k in range(kernel.k_max + 1):
        u = np.sqrt(kernel.lambda_table[k]) * np.sqrt(rho_s)[:, None] * (
            k * f[None, :] - f[:, None])
        u_parts.append(float(np.sum(u * u)) / (M * M))
    return a_part, u_parts


@dataclass
class HittingLimit:
    tau: float
    slope: float

    @property
    def applicable(self):
        """The hitting-time CLT needs a strictly positive slope at tau."""
        return self.slope > 0


def hitting_time_limit(f, r, kernel, step, max_horizon=20.0):
    """First time mu_t(f) reaches ``r`` and the slope mu_tau(P1 f) there."""
    f = _check_grid(f, kernel)
    rhs = lambda g: apply_P2(g, kernel)  # noqa: E731
    mu0 = pairing(kernel.phi_table, f)
    if not r > mu0:
        raise ConfigError(f"level r={r} must exceed the initial value mu_0(f)={mu0}")
    times = time_mesh(max_horizon, step)
    prev_t, prev_rho = None, None
    for t, rho in rk4_iter(rhs, kernel.phi_table, times):
        if pairing(rho, f) >= r:
            break
        prev_t, prev_rho = t, rho
    else:
        raise NotHitError(f"mu_t(f) does not reach {r} before t={max_horizon}")
    lo, hi = 0.0, t - prev_t
    for _ in range(200):
        if hi - lo <= 1e-10 * min(1.0, prev_t + hi):
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if pairing(rk4_step(rhs, prev_rho, mid), f) >= r:
            hi = mid
        else:
            lo = mid
    delta = 0.5 * (lo + hi)
    rho_tau = rk4_step(rhs, prev_rho, delta)
    slope = pairing(rho_tau, apply_P1(f, kernel))
    return HittingLimit(float(prev_t + delta), float(slope))


@dataclass
class DensityDependentForms:
    n_t: float
    var_alpha_t: float


def density_dependent_forms(q, phi_integral, t):
    """Total-mass mean and fluctuation variance when the total count is Markov.

    Applies when lambda_k = 0 for k != 1 and psi_k = q_k are constants:
    n_t = n_0 exp(c t) with c = sum (k-1) q_k and n_0 = phi_integral, and
    Var(alpha_t) = exp(2ct) n_0 + b n_0 exp(2ct) (1 - exp(-ct)) / c with
    b = sum (k-1)^2 q_k (the limit c -> 0 gives b n_0 t).
    """
    q = np.asarray(q, dtype=float)
    if not (np.isfinite(q).all() and math.isfinite(phi_integral) and math.isfinite(t)):
        raise ConfigError("density_dependent_forms needs finite inputs")
    k = np.arange(len(q))
    c = float(np.dot(k - 1, q))
    b = float(np.dot((k - 1) ** 2, q))
    n0 = float(phi_integral)
    n_t = n0 * math.exp(c * t)
    growth = math.exp(2 * c * t)
    integral_term = t if c == 0 else -math.expm1(-c * t) / c
    return DensityDependentForms(n_t, growth * n0 + b * n0 * growth * integral_term)
