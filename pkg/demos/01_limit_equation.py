"""Deterministic limit of a branching urn model.

Solves the density equation on a 64-point torus grid, tracks the total mass,
and evaluates the limiting fluctuation variance theta_t^2(f) with its split
into initial and accumulated-noise parts. A constant-rate model has a scalar
closed form to compare against.
"""

import math

import numpy as np

from urnlab.limit import (density_dependent_forms, grid_function, hitting_time_limit,
                          solve_rho, theta_squared)
from urnlab.model import discretize, model_a, model_nonuniform

M, STEP = 64, 1e-3

# Constant migration and binary splitting: the mass grows like e^t.
kernel = discretize(model_a(), M)
one = np.ones(M)
sol = solve_rho(kernel, 1.0, STEP)
print(f"mu_1(1) = {sol.mu(one)[-1]:.10f}   (e = {math.e:.10f})")

th = theta_squared(one, kernel, 1.0, STEP)
closed = density_dependent_forms([0, 0, 1], 1.0, 1.0)
print(f"theta_1^2(1) = {th.total:.8f} = {th.initial_part:.6f} initial + {th.noise_part:.6f} noise")
print(f"closed form  = {closed.var_alpha_t:.8f}")

hit = hitting_time_limit(one, math.e, kernel, STEP)
print(f"first time the mass reaches e: tau = {hit.tau:.10f}, slope = {hit.slope:.6f}")

# A spatially varying migration kernel keeps the profile non-uniform in time.
wave_kernel = discretize(model_nonuniform(), M)
f = grid_function(lambda u: np.cos(2 * np.pi * u), M)
print("\n t     mu_t(cos)    theta_t^2(cos)")
for t in (0.0, 0.5, 1.0, 1.5):
    mu = solve_rho(wave_kernel, t, STEP).mu(f)[-1]
    print(f"{t:4.1f}  {mu: .6e}  {theta_squared(f, wave_kernel, t, STEP).total:.6f}")
