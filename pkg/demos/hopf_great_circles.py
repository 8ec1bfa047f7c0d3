"""Great circles of S^3 seen from the base S^2.

A great circle upstairs is a geodesic of the round metric, so its shadow on
S^2 = S^3 / U(1) solves the Wong equations of the Hopf connection.  The
integrator runs in stereographic charts and hops to the other chart near
a pole.  Here we compare the two pictures.
"""
import numpy as np

from kkgeom.hopf import HopfBundle, great_circle, integrate_geodesic

bundle = HopfBundle("complex")
rng = np.random.default_rng(1)
# from 1 towards j: the shadow is a meridian through both poles of S^2
p0, w = np.eye(4)[0], np.eye(4)[2]

traj = integrate_geodesic(bundle, p0, w, 2 * np.pi, h=1e-3, record_every=10)
exact = bundle.project(great_circle(p0, w, traj.t))
print(f"chart swaps at t = {np.round(traj.swaps, 3).tolist()}")
print(f"sup distance between projected great circle and Wong shadow: "
      f"{np.abs(traj.points - exact).max():.2e}")
print(f"lifted curve stays on the great circle to {np.abs(traj.ambient - great_circle(p0, w, traj.t)).max():.2e}")

# the curvature of the connection: F(E1, E2) on random points of S^3
p = rng.normal(size=(5, 4))
p /= np.linalg.norm(p, axis=-1, keepdims=True)
print("F(H1, H2) components:", np.round(bundle.curvature_frame(p)[:, 0, 0, 1], 12))
