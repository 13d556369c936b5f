"""First and second variation of the curve energy on the sphere.

Run with ``python3 demos/variations.py``.
"""

import numpy as np
from scipy import optimize

from bundletc import manifolds as mf
from bundletc import variational as var

S2, H2, E1 = mf.sphere2(), mf.half_plane(), mf.euclidean(1)

# a bent curve in the half-plane is not critical, and the formula tracks finite differences
dom = var.Interval(0.0, 1.0, 801)
p = var.EnergyProblem(dom, E1, H2, var.kinetic(E1, H2))
bent = mf.SmoothMap("bent", E1, H2, lambda t: np.stack(
    [0.3 * t[..., 0] + 0.2 * np.sin(2 * t[..., 0]), 1.0 + 0.5 * t[..., 0] + 0.3 * t[..., 0] ** 2], -1))
phi = var.FieldConfiguration.from_map(dom, bent)
A = var.VariationField.from_fn(dom, lambda t: np.sin(np.pi * t[..., 0])[..., None] * [0.4, -0.7])
formula, fd = var.first_variation(p, phi, A)
print(f"bent curve: formula {formula:.8f}  finite difference {fd:.8f}")

# along the equator the index form of sin(πt/ℓ)·∂θ is π²/(2ℓ) - ℓ/2
for ell in (np.pi / 2, np.pi, 1.5 * np.pi):
    p, geo = var.equator_geodesic(ell)
    N = var.VariationField.from_fn(p.domain, var.normal_sine(ell, 1))
    f, _ = var.second_variation(p, geo, N, N)
    print(f"ℓ = {ell:.4f}: second variation {f:+.6f}  closed form {np.pi**2 / (2 * ell) - ell / 2:+.6f}")


# the smallest eigenvalue of the index form changes sign at the conjugate point ℓ = π
def smallest(ell):
    p, geo = var.equator_geodesic(ell)
    return var.index_form_spectrum(p, geo, 3)[0]


print("first conjugate length:", optimize.brentq(smallest, 2.8, 3.5, xtol=1e-10))
