"""
Orbits of the Killing field as magnetic geodesics
=================================================

On the sphere family the circles rho = const are orbits of gamma-sharp.
With the magnetic force -(1/4) f J they are solutions of the magnetic
geodesic equation; the equator, where f vanishes, is an honest geodesic.
"""

# %%
import numpy as np

from artifact.families import SphereFamily, magnetic_geodesic

geom = SphereFamily(3.0).geometry()

# %% equator
eq = magnetic_geodesic(geom, start=(1.0, 0.0), T=2 * np.pi, steps=10000)
print("radial drift:", np.max(np.abs(np.hypot(*eq.points.T) - 1)))
print("max |geodesic curvature|:", np.nanmax(np.abs(eq.kappa_geo)))

# %% a circle off the equator
c = magnetic_geodesic(geom, start=(0.5, 0.0), T=2 * np.pi, steps=10000)
ok = np.isfinite(c.kappa_geo)
print("radial drift:", np.max(np.abs(np.hypot(*c.points.T) - 0.5)))
print("geodesic curvature:", np.nanmean(c.kappa_geo), " expected", c.kappa_expected[0])
print("energy drift:", c.energy_drift)

# %% switching the magnetic term off: the curve leaves the circle
g = magnetic_geodesic(geom, start=(0.5, 0.0), T=2 * np.pi, steps=10000, scale=0.0)
r = np.hypot(*g.points.T)
print("plain geodesic, rho range:", r.min(), r.max())
