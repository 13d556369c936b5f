"""Geodesics on the sphere and the hyperbolic half-plane.

Run with ``python3 demos/geodesics.py``.
"""

import numpy as np

from bundletc import manifolds as mf
from bundletc import variational as var

S2, H2, E1 = mf.sphere2(), mf.half_plane(), mf.euclidean(1)

# a meridian from the equator: θ grows at unit speed, φ stays put
T = np.pi / 2 - 0.2
end = mf.exp_map(S2, [np.pi / 2, 0.0], [1.0, 0.0], T, h=1e-3)
print("meridian endpoint", end, "expected", [np.pi - 0.2, 0.0])

# horizontal launch in the half-plane traces the unit semicircle
_, xs, _ = mf.integrate_geodesic(H2, [0.0, 1.0], [1.0, 0.0], 3.0, 1e-3)
print("max | |x| - 1 | on the semicircle:", np.max(np.abs(np.hypot(xs[:, 0], xs[:, 1]) - 1)))

# the Hamiltonian of the kinetic Lagrangian is conserved along a geodesic
g = var.solve_geodesic(S2, [1.2, 0.1], [0.4, 0.9], np.pi, h=1e-3)
H = var.hamiltonian(var.EnergyProblem(g.domain, E1, S2, var.kinetic(E1, S2)), g)
print("relative Hamiltonian drift:", np.ptp(H) / abs(H[0]))

# boundary-value version: shoot between two points
x0, x1 = np.array([1.0, 0.2]), np.array([1.8, 1.3])
path = var.shoot_geodesic(S2, x0, x1, 1.0, 41)
print("shooting hits the target:", np.allclose(path.values[-1], x1, atol=1e-8))
