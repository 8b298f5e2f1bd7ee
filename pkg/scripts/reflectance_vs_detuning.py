"""Reflectance and recoil per photon of a square array across detuning.

Usage: python3 scripts/reflectance_vs_detuning.py NSIDE SPACING [--rabi 0.01]

Prints one line per detuning together with the detuning of peak total
scattering, to show how the mirror response depends on where the drive sits
relative to the collective resonance.
"""
import argparse

import numpy as np

from arrayrecoil.evolution import DriveSpec
from arrayrecoil.geometry import build_planar_array
from arrayrecoil.observables import peak_detuning, photon_flux, reflectance
from arrayrecoil.recoil import SteadyStateEvaluator, recoil_map
from arrayrecoil.units import GAMMA

p = argparse.ArgumentParser()
p.add_argument("n", type=int)
p.add_argument("spacing", type=float)
p.add_argument("--rabi", type=float, default=0.01)
p.add_argument("--start", type=float, default=-0.3)
p.add_argument("--stop", type=float, default=0.4)
p.add_argument("--num", type=int, default=15)
args = p.parse_args()

a = build_planar_array(args.n, args.n, args.spacing)
flux = photon_flux(args.spacing, args.rabi)
print(f"peak scattering at detuning {peak_detuning(a, args.rabi):+.4f}")
print("detuning  R_mean  R_inner  dK/photon  [min, max]")
for det in np.linspace(args.start, args.stop, args.num):
    r = recoil_map(SteadyStateEvaluator(a, DriveSpec(args.rabi, det, "cw")))
    refl = reflectance(r, flux)
    k = r.total_energy / (flux * GAMMA)
    print(f"{det:+.3f}  {refl.average:.3f}  {refl.inner_average:.3f}  {k.mean():.2f}  [{k.min():.2f}, {k.max():.2f}]")
