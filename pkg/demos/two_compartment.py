"""Stability-only versus L2-gain synthesis on a two-compartment model.

Run: python demos/two_compartment.py [gamma]
"""

import sys

import numpy as np

from ratsyn.experiments import example2_run
from ratsyn.synth import SynthesisOptions

gamma = float(sys.argv[1]) if len(sys.argv) > 1 else 4000.0
r = example2_run(seed=0, gamma=gamma, opts=SynthesisOptions(time_limit=10))
print(f"gamma = {gamma:g}")
print(f"performance synthesis: {r.perf.status} ({r.perf.wall_time:.1f} s)")
print(f"stability synthesis:   {r.stab.status} ({r.stab.wall_time:.1f} s)")
if r.final_norms:
    print(f"5x5 grid, |x(20)| max = {max(r.final_norms):.2e}")
if np.isfinite(r.ratio):
    print(f"L2 norm of x under a fixed disturbance: performance {r.l2_perf:.4f}, stability {r.l2_stab:.4f}, ratio {r.ratio:.3f}")
