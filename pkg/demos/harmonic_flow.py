"""Harmonic map heat flow relaxing a perturbed identity on the flat torus.

Run with ``python3 demos/harmonic_flow.py``.
"""

import numpy as np

from bundletc import manifolds as mf
from bundletc import variational as var

T2 = mf.flat_torus2()
k = 17
dom = var.Rectangle((0, 0), (1, 1), (k, k))
X = dom.points()
bump = (np.sin(np.pi * X[..., 0]) * np.sin(np.pi * X[..., 1]))[..., None]
p = var.EnergyProblem(dom, T2, T2, var.kinetic(T2, T2))
phi0 = var.FieldConfiguration(dom, X + 0.1 * bump * [1.0, 0.5])

h = 1.0 / (k - 1)
res = var.gradient_flow_harmonic(p, phi0, 5000, 0.1 * h * h, tol=5e-7, record_every=250)
for step, tau in zip(range(0, res.steps + 1, 250), res.tension_history):
    print(f"step {step:5d}  sup |τ| = {tau:.3e}")
print("stopped after", res.steps, "steps")
print("energy before", var.energy(p, phi0), "after", var.energy(p, res.config))
print("distance to the identity:", np.max(np.abs(res.config.values - X)))
