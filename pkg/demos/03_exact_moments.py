"""Exact first and second moments of the finite system.

Integrates the closed moment equations, shows how urn covariances shrink as
the number of urns grows, and compares N times the variance of mu_t^N(1)
with the limiting theta_t^2.
"""

import numpy as np

from urnlab.harness import covariance_decay_experiment
from urnlab.limit import theta_squared
from urnlab.model import ModelSpec, discretize, model_a
from urnlab.moments import integrate_moments, mean_vs_limit_gap, mu_moments

res = covariance_decay_experiment(model_a(), 1.0, [25, 50, 100, 200])
for N, c in zip(res.n_list, res.max_cov):
    print(f"N={N:4d}  max |Cov(X(i), X(j))| = {c:.3e}   N * max = {N * c:.4f}")
print(f"log-log slope {res.slope:.4f}")

# Cross-urn branching (two offspring sent to another urn) makes the finite-N
# mean and variance differ from the limit at order 1/N.
spec = ModelSpec.from_strings(10, lam=["0.5", "0", "1 + 0.5*cos(2*pi*(u-v))"],
                              phi="1 + 0.5*sin(2*pi*u)")
theta2 = theta_squared(np.ones(64), discretize(spec, 64), 1.0, 1e-3).total
print(f"\ntheta_1^2(1) = {theta2:.6f}")
for N in (25, 50, 100):
    state = integrate_moments(spec.with_urns(N), 1.0, 1e-3)
    _, var = mu_moments(state, np.ones(N))
    gap = mean_vs_limit_gap(spec.with_urns(N), 1.0)
    print(f"N={N:4d}  N*Var = {N * var:.6f}  sup_i |E X(i) - rho(i/N)| = {gap:.4e}")
