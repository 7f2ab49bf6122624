"""Robust stabilization of an open-loop unstable rational system from noisy data.

Run: python demos/rational_benchmark.py
"""

import numpy as np

from ratsyn.data import assemble_consistency, generate_data, membership_test, pointwise_bound
from ratsyn.experiments import example1_closed_loop
from ratsyn.synth import SynthesisOptions, synthesize_stabilizing
from ratsyn.systems import example1, example1_config, example1_form

plant, form = example1(), example1_form()
print("cleared denominator p(x) =", form.p)
print("Z(x) exponents:", list(form.basis.Z))

# 200 short experiments of 5 samples each, pointwise noise |w| <= 1e-3
ds = generate_data(plant, example1_config(d=200, N_d=5, wbar=1e-3), seed=7, form=form)
nb = pointwise_bound(1e-3, ds.N, form.n)
cq = assemble_consistency(ds, form.basis, nb)
print(f"{ds.N} samples; true parameters consistent with the data:", membership_test(form.A, form.B, form.P, cq)["member"])

res = synthesize_stabilizing(cq, form.basis, SynthesisOptions(time_limit=60))
print(f"synthesis: {res.status} in {res.wall_time:.1f} s")
if res.controller is not None:
    ctrl = res.controller
    print("Ycal =\n", np.array2string(ctrl.Ycal, precision=3))
    rep = example1_closed_loop(ctrl, n_x0=5, seed=0)
    for f, m in zip(rep.final_norm, rep.monotone):
        print(f"  |x(10)| = {f:.3g}, V non-increasing: {m}")
