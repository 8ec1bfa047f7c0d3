"""Twisted Clifford tori: harmonic for every angle, Lorentz-free only at pi/4.

Phi_a(th1, th2) = cos(a) e^{i th1} + sin(a) e^{i th2} j has zero tension in
S^3 for every a.  Seen as a map into the bundle S^3 -> S^2, its vertical
and horizontal parts interact through the curvature, and the resulting
Lorentz strength vanishes only for the standard torus.
"""
import numpy as np

from kkgeom.hopf import TwistedMap, charge_profile, charge_signed, twisted_tension

for a in (0.3, np.pi / 4, 1.1):
    rep = twisted_tension(TwistedMap(a), resolution=32)
    print(f"alpha={a:.4f}: sup |tension| {max(rep.horizontal_sup, rep.vertical_sup):.1e}, "
          f"signed charge {charge_signed(TwistedMap(a)):+.4f}")

alphas = np.arange(0.05, 1.53, 0.01)
prof = charge_profile("complex", alphas, resolution=16)
print(f"zeros of the charge norm on [0.05, 1.52]: {np.round(prof.zeros, 10).tolist()} "
      f"(pi/4 = {np.pi / 4:.10f})")
