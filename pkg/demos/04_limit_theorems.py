"""Monte Carlo checks of the three limit theorems at reduced size.

The full-size runs live in tests/test_acceptance.py; here the replica counts
are cut so the script finishes in well under a minute.
"""

import math

from urnlab.expr import parse_expression
from urnlab.harness import clt_experiment, hitting_experiment, lln_experiment
from urnlab.model import model_a

one = parse_expression("1", univariate=True)
spec = model_a()

lln = lln_experiment(spec, one, 1.0, [25, 100], 200, 11)
for lv in lln.levels:
    print(f"LLN  N={lv.n_urns:4d} mean={lv.summary.sample_mean:.4f} rms gap={lv.rms_gap:.4f}")

clt = clt_experiment(spec, one, 1.0, 200, 400, 12)
print(f"CLT  sample var {clt.summary.sample_variance:.3f} vs theta^2 {clt.theta2:.3f};"
      f" KS {clt.normality.ks_statistic:.4f} (threshold {clt.normality.threshold:.4f})")

hit = hitting_experiment(spec, one, math.e, 200, 400, 13)
print(f"HIT  tau={hit.tau:.6f}; scaled var {hit.scaled.sample_variance:.3f} vs"
      f" {hit.target_variance:.3f}; far fraction {hit.far_fraction:.3f}")
