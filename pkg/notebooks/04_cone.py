"""
The cone over an exact torus structure
======================================

Flat torus, constant cubic torsion with |B|^2 = 8, so uR = -2. On the cone
the metric g = e^(2t) (dt^2 - h) is Lorentzian, f = 3 dt^2 + 3 h is the
Hessian of F = -3t, and the Einstein tensor of g is that of dust.
"""

# %%
import numpy as np

from artifact.ah import exact_torus
from artifact.cone import ConeBase, ConeGrid, cone_report, monge_ampere_potential
from artifact.grids import LatticeTorus

base = ConeBase.from_structure(exact_torus(LatticeTorus(nx=32, ny=32)))
points = np.random.default_rng(0).uniform(0, 2 * np.pi, (3, 2))
cone = ConeGrid(base, points, np.linspace(-0.5, 0.5, 5))

# %%
for k, v in cone_report(cone).items():
    print(f"{k:24s} {v}")

# %% Monge-Ampere potential for C = 2
ma = monge_ampere_potential(2.0, np.linspace(-0.2, 0.2, 9))
print("Psi:", np.round(ma["Psi"], 6))
print("determinant defect:", ma["det_defect"], " identity defect:", ma["identity_defect"])
