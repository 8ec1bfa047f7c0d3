"""Charged particles in a constant abelian field move on circles.

A Kaluza-Klein geodesic on R^2 x U(1) projects to a Larmor circle whose
radius is |u| / |kappa B|.  We integrate two charges, check that each orbit
closes after one period and that energy and charge stay put.
"""
import numpy as np

from kkgeom import models
from kkgeom.wong import WongState, charges, energy_drift, integrate, projected_curvature

B = 1.5
model = models.larmor(B)

for q in (1.0, -0.5):
    # the conserved charge is kappa = -v, so the orbit period is 2 pi / |q B|
    state = WongState(0.0, [0.0, 0.0], [1.0, 0.0], [q])
    period = 2 * np.pi / abs(q * B)
    traj = integrate(model, state, period, h=1e-3)
    closure = np.linalg.norm(traj.x[-1] - traj.x[0])
    curv = projected_curvature(model, traj)
    print(f"v={q:+.1f}: radius {1 / abs(q * B):.4f}, curvature {np.median(np.abs(curv)):.6f}, "
          f"closure {closure:.1e}, energy drift {energy_drift(model, traj):.1e}, "
          f"charge drift {charges(model, traj).drift:.1e}")
