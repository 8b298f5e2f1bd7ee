"""Internal unit conventions.

Lengths are measured in resonant wavelengths (lambda = 1, so k = 2*pi),
rates in single-atom decay rates (Gamma = 1), time in 1/Gamma, momenta in
hbar*k and energies in recoil energies E_r = hbar^2 k^2 / (2 m).  Nothing
downstream carries hbar, m or c explicitly.
"""

from dataclasses import dataclass

import numpy as np

WAVELENGTH = 1.0
K = 2.0 * np.pi / WAVELENGTH
GAMMA = 1.0


@dataclass(frozen=True)
class UnitSystem:
    wavelength: float = WAVELENGTH
    gamma: float = GAMMA

    @property
    def k(self) -> float:
        return 2.0 * np.pi / self.wavelength


UNITS = UnitSystem()
