"""Exact first and second moments of the finite-N process.

The process is a linear jump system, so the mean m(i) = E X(i) and the
second moments S(i, j) = E X(i) X(j) solve a closed linear ODE system:

    dm/dt = G m
    dS/dt = G S + S G^T + Q(m)

with G(i, j) = C(j, i) for j != i, G(i, i) = b1(i) - a(i), and Q(m) the
expected jump second-moment matrix

    Q(i, i) = a(i) m(i) + sum_l D(l, i) m(l) + b2(i) m(i)
    Q(i, j) = -C(i, j) m(i) - C(j, i) m(j)             (i != j)

where A, C, D hold sum_k lambda_k, sum_k k lambda_k, sum_k k^2 lambda_k
between distinct urns divided by N, and a(i) is the row sum of A.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .limit import pairing, rk4_iter, solve_rho, time_mesh
from .model import discretize

MAX_URNS = 512


class UrnCoefficients:
    """Cross and in-place rate sums at the urn points i/N."""

    def __init__(self, spec):
        N = spec.n_urns
        pts = np.arange(1, N + 1) / N
        uu, vv = np.meshgrid(pts, pts, indexing="ij")
        off = ~np.eye(N, dtype=bool)
        A = np.zeros((N, N))
        C = np.zeros((N, N))
        D = np.zeros((N, N))
        for k, ex in enumerate(spec.lam):
            lam = np.broadcast_to(ex(uu, vv), (N, N)) * off
            A += lam
            C += k * lam
            D += (k * k) * lam
        self.n_urns = N
        self.A, self.C, self.D = A / N, C / N, D / N
        self.a = self.A.sum(axis=1)
        self.b1 = np.zeros(N)
        self.b2 = np.zeros(N)
        for k, ex in enumerate(spec.psi):
            psi = np.broadcast_to(ex(pts), (N,))
            self.b1 += (k - 1) * psi
            self.b2 += ((k - 1) ** 2) * psi
        self.phi = np.broadcast_to(np.asarray(spec.phi(pts), dtype=float), (N,)).copy()
        self.G = self.C.T + np.diag(self.b1 - self.a)


def mean_ode_rhs(m, coef):
    """dm(i)/dt = -a(i) m(i) + sum_{j != i} C(j, i) m(j) + b1(i) m(i)."""
    return coef.G @ m


def noise_matrix(m, coef):
    Cm = m[:, None] * coef.C
    Q = -(Cm + Cm.T)
    Q[np.diag_indices_from(Q)] = coef.a * m + coef.D.T @ m + coef.b2 * m
    return Q


def second_moment_ode_rhs(mean, second, coef):
    """Time derivative of (mean, second) under the exact moment system."""
    GS = coef.G @ second
    dS = GS + GS.T + noise_matrix(mean, coef)
    return coef.G @ mean, dS


@dataclass
class MomentState:
    n_urns: int
    time: float
    mean: np.ndarray
    second: np.ndarray

    @property
    def cov(self):
        return self.second - np.outer(self.mean, self.mean)

    def var_fluctuation(self, f_values):
        """Var V_t^N(f) = (1/N) sum_{i,j} f(i/N) f(j/N) Cov(i, j)."""
        f = np.asarray(f_values, dtype=float)
        return float(f @ self.cov @ f) / self.n_urns

    def max_offdiag_cov(self):
        cov = self.cov
        if self.n_urns < 2:
            return 0.0
        off = ~np.eye(self.n_urns, dtype=bool)
        return float(np.abs(cov[off]).max())


def initial_moments(coef):
    """Independent Poisson(phi(i/N)): S = m m^T + diag(m)."""
    m = coef.phi.copy()
    return m, np.outer(m, m) + np.diag(m)


def _check_cap(spec, max_urns):
    if spec.n_urns > max_urns:
        raise ConfigError(f"exact moments are capped at N={max_urns}, got N={spec.n_urns}")


def integrate_moments(spec, t_end, step, max_urns=MAX_URNS):
    """Exact (m, S) at ``t_end`` from the Poisson initial law, RK4 with fixed step."""
    _check_cap(spec, max_urns)
    coef = UrnCoefficients(spec)
    N = coef.n_urns
    m0, S0 = initial_moments(coef)

    def rhs(y):
        dm, dS = second_moment_ode_rhs(y[0], y[1:], coef)
        return np.vstack([dm[None, :], dS])

    y = np.vstack([m0[None, :], S0])
    for t, y in rk4_iter(rhs, y, time_mesh(t_end, step)):
        pass
    return MomentState(N, float(t_end), y[0].copy(), y[1:].copy())


def moment_path(spec, times, step, max_urns=MAX_URNS):
    """MomentState at each of the increasing ``times`` (integrating segment by segment)."""
    _check_cap(spec, max_urns)
    coef = UrnCoefficients(spec)
    m0, S0 = initial_moments(coef)

    def rhs(y):
        dm, dS = second_moment_ode_rhs(y[0], y[1:], coef)
        return np.vstack([dm[None, :], dS])

    return [MomentState(coef.n_urns, t, y[0].copy(), y[1:].copy())
            for t, y in _segments(rhs, np.vstack([m0[None, :], S0]), times, step)]


def _segments(rhs, y0, times, step):
    t_prev, y = 0.0, y0
    for t in times:
        if t < t_prev:
            raise ConfigError("times must be increasing and >= 0")
        if t > t_prev:
            for _, y in rk4_iter(rhs, y, t_prev + time_mesh(t - t_prev, step)):
                pass
        yield t, y
        t_prev = t


def mean_path(spec, times, step):
    """E X_t(i) at each time in ``times``; array of shape (len(times), N)."""
    coef = UrnCoefficients(spec)
    return np.array([y for _, y in _segments(lambda m: coef.G @ m, coef.phi, times, step)])


def mean_vs_limit_gap(spec, t, step=1e-3):
    """sup_i |E X_t(i) - rho_t(i/N)| with the limit solved on the urn grid M = N."""
    N = spec.n_urns
    m = mean_path(spec, [t], step)[0]
    rho = solve_rho(discretize(spec, N), t, step).final
    return float(np.abs(m - rho).max())


def mu_moments(state, f_values):
    """Exact mean and variance of mu_t^N(f) from a MomentState."""
    f = np.asarray(f_values, dtype=float)
    return pairing(state.mean, f), float(f @ state.cov @ f) / state.n_urns ** 2
