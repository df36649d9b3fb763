"""Exact event-by-event simulation of the finite urn system.

Runs single trajectories, shows the event stream for a tiny instance, checks
that pure migration conserves the particle total, and compares a small
ensemble of mu_t^N(1) with its limit value.
"""

import math

import numpy as np

from urnlab.expr import parse_expression
from urnlab.harness import run_ensemble
from urnlab.model import model_a, model_c
from urnlab.simulator import run_trajectory

one = parse_expression("1", univariate=True)

log = []
obs = run_trajectory(model_a(n_urns=4), {"one": one}, seed=1, horizon=0.3, event_log=log)
print("first events of a 4-urn trajectory:")
for ev in log[:8]:
    print("  ", ev)
print(f"{obs.n_events} events up to t=0.3, final counts {obs.final_counts}")

spec = model_c(n_urns=50)
obs = run_trajectory(spec, {"one": one}, seed=2, horizon=20.0, record_times=np.linspace(0, 20, 5))
print(f"\nmigration only: mu^N(1) over time {obs.mu['one']}, {obs.n_events} events")

res = run_ensemble(model_a(n_urns=100), {"one": one}, [], 200, 3, record_times=[0.5, 1.0])
for col, t in enumerate(res.record_times):
    s = res.summary("one", time_index=col)
    print(f"t={t}: mean mu^N(1) = {s.sample_mean:.4f} +- {s.standard_error:.4f}"
          f"   limit e^t = {math.exp(t):.4f}")
