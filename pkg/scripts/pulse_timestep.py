"""Pulse-driven 11 x 11 array: corner-to-maximum dK_z and correlation versus time step.

Usage: python3 scripts/pulse_timestep.py [dt ...]
"""
import sys

import numpy as np

from arrayrecoil.evolution import DriveSpec, ShiftedConfiguration, StopCondition, ground_state, propagate
from arrayrecoil.geometry import build_planar_array
from arrayrecoil.observables import excitation_integral
from arrayrecoil.recoil import PropagationEvaluator, recoil_map

n, d = 11, 0.68
a = build_planar_array(n, n, d)
drive = DriveSpec(0.02, 0.0, "gaussian", 16.0)
for dt in [float(x) for x in sys.argv[1:]] or [0.1, 0.05]:
    stop = StopCondition("decay", t_max=400.0)
    r = recoil_map(PropagationEvaluator(a, ground_state(len(a), "pure"), drive, dt, stop, fast=True))
    traj = propagate(ground_state(len(a), "pure"), drive, ShiftedConfiguration(a), dt,
                     StopCondition("decay", t_max=400.0, tail=False), sample_every=5).trajectory
    exc = excitation_integral(traj)
    kz = r.energy[:, 2].reshape(n, n)
    print(f"dt={dt}: corner/max dK_z {kz[0, 0] / kz.max():.3f}, "
          f"correlation {np.corrcoef(r.total_energy, exc)[0, 1]:.4f}", flush=True)
