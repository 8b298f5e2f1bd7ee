"""Summary observables: photon flux, reflectance, finesse, excitation integrals and trap quanta."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import constants

from .analytic import scattering_rate, steady_coefficients
from .eigenmodes import decompose, mode_contribution, most_subradiant
from .errors import InvalidArgument, PeakNotFound
from .evolution import DriveSpec, ShiftedConfiguration, Trajectory
from .geometry import AtomArray, CavitySpec, build_cavity
from .greens import assemble_greens
from .recoil import RecoilResult
from .units import GAMMA, WAVELENGTH

log = logging.getLogger(__name__)


def photon_flux(d: float, rabi: float, gamma: float = GAMMA) -> float:
    """Photons incident on one lattice cell (area d^2) per single-atom lifetime."""
    if d <= 0 or rabi < 0:
        raise InvalidArgument("spacing must be positive and Rabi frequency non-negative")
    return 2.0 * np.pi / 3.0 * (d / WAVELENGTH) ** 2 * (rabi / gamma) ** 2


def rabi_for_flux(d: float, flux: float, gamma: float = GAMMA) -> float:
    """Inverse of :func:`photon_flux`."""
    if d <= 0 or flux < 0:
        raise InvalidArgument("spacing must be positive and flux non-negative")
    return gamma * np.sqrt(flux / (2.0 * np.pi / 3.0)) * WAVELENGTH / d


def pulse_photons(d: float, drive: DriveSpec, gamma: float = GAMMA) -> float:
    """Photons per lattice cell in a whole gaussian pulse: flux integrated over time.

    For W(t) = W0 exp(-t^2/tw^2), int W^2 dt = W0^2 tw sqrt(pi/2).
    """
    if drive.profile != "gaussian":
        raise InvalidArgument("pulse photon number needs a gaussian drive")
    return photon_flux(d, drive.rabi, gamma) * gamma * drive.width * np.sqrt(np.pi / 2.0)


def edge_mask(lattice: np.ndarray, rings: int = 1) -> np.ndarray:
    """True for atoms at least ``rings`` sites away from the lattice boundary."""
    lat = np.asarray(lattice)[:, -2:]
    lo, hi = lat.min(axis=0), lat.max(axis=0)
    return np.all((lat >= lo + rings) & (lat <= hi - rings), axis=1)


@dataclass
class Reflectance:
    per_atom: np.ndarray
    average: float
    inner_average: Optional[float]
    flux: float


def reflectance(result: RecoilResult, flux: float, edge_exclude: int = 1, gamma: float = GAMMA) -> Reflectance:
    """Momentum-based reflectance dp_z/dt / (2 hbar k * flux * Gamma) per atom and averaged.

    ``edge_exclude`` rings of atoms are dropped for ``inner_average`` (0 disables it).
    """
    if result.mode != "rate":
        raise InvalidArgument("reflectance needs steady-state recoil rates")
    if not flux > 0:
        raise InvalidArgument("photon flux must be positive")
    per_atom = result.momentum[:, 2] / (2.0 * flux * gamma)
    inner = None
    if edge_exclude:
        mask = edge_mask(result.lattice, edge_exclude)
        inner = float(per_atom[mask].mean()) if mask.any() else None
    return Reflectance(per_atom, float(per_atom.mean()), inner, flux)


def total_scattering(array: AtomArray, rabi: float, detuning: float) -> float:
    cfg = ShiftedConfiguration(array)
    sol = steady_coefficients(cfg, DriveSpec(rabi, detuning, "cw"), "solve")
    return scattering_rate(sol, cfg)


def peak_detuning(array: AtomArray, rabi: float = 1e-2, span: float = 2.0, coarse: int = 81,
                  levels: int = 3, refine: int = 21) -> float:
    """Detuning of maximal total scattering, by a coarse scan then successive zooms."""
    grid = np.linspace(-span, span, coarse)
    best = None
    for _ in range(levels + 1):
        rates = np.array([total_scattering(array, rabi, d) for d in grid])
        k = int(np.argmax(rates))
        best = grid[k]
        step = grid[1] - grid[0]
        grid = np.linspace(best - step, best + step, refine)
    return float(best)


# ---------------------------------------------------------------------------
# finesse


MIN_FWHM_STEPS = 8


@dataclass
class FinesseSweep:
    detuning: float
    separations: np.ndarray
    intensity: np.ndarray
    peak: float
    fwhm: float
    finesse: float


def cavity_intensity(spec: CavitySpec, detuning: float, rabi: float = 1e-3) -> float:
    """Total steady excited population under a weak uniform axial drive."""
    array = build_cavity(spec)
    sol = steady_coefficients(ShiftedConfiguration(array), DriveSpec(rabi, detuning, "cw"), "solve")
    return float(sol.populations.real.sum())


def fixed_curvature(spec: CavitySpec) -> CavitySpec:
    """Pin a confocal default radius so the mirrors keep their shape while L is scanned."""
    if spec.profile.kind == "spherical" and spec.profile.radius is None:
        return replace(spec, profile=replace(spec.profile, radius=float(spec.separation)))
    return spec


def subradiant_detuning(spec: CavitySpec) -> float:
    """Shift of the most subradiant mode of the template cavity (the drive detuning for finesse scans)."""
    a = build_cavity(fixed_curvature(spec))
    modes = decompose(assemble_greens(a.positions, a.positions, a.orientations))
    return float(modes.shift[most_subradiant(modes)])


def fwhm(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(peak position, full width at half maximum) with linear interpolation of the crossings."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3 or not np.all(np.diff(x) > 0):
        raise InvalidArgument("need at least three increasing grid points")
    k = int(np.argmax(y))
    if k == 0 or k == len(x) - 1:
        raise PeakNotFound("intensity maximum sits at the edge of the scanned grid")
    half = 0.5 * y[k]
    left = np.flatnonzero(y[:k] < half)
    right = np.flatnonzero(y[k + 1:] < half)
    if len(left) == 0 or len(right) == 0:
        raise PeakNotFound("half-maximum is not bracketed by the scanned grid")
    i = left[-1]
    j = k + 1 + right[0]
    xl = x[i] + (half - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i])
    xr = x[j - 1] + (half - y[j - 1]) * (x[j] - x[j - 1]) / (y[j] - y[j - 1])
    return float(x[k]), float(xr - xl)


def finesse(spec: CavitySpec, detuning: float, separations: Sequence[float], rabi: float = 1e-3) -> FinesseSweep:
    """Scan the mirror separation at fixed detuning; finesse = (lambda/2) / FWHM."""
    spec = fixed_curvature(spec)
    L = np.asarray(separations, dtype=float)
    intensity = np.array([cavity_intensity(replace(spec, separation=s), detuning, rabi) for s in L])
    if not np.any(intensity > 0):
        raise PeakNotFound("no response in the scanned range")
    peak, width = fwhm(L, intensity)
    return FinesseSweep(detuning, L, intensity, peak, width, 0.5 * WAVELENGTH / width)


def adaptive_finesse(spec: CavitySpec, detuning: Optional[float] = None, half_span: float = 0.25,
                     points: int = 41, max_rounds: int = 8, rabi: float = 1e-3) -> FinesseSweep:
    """Finesse with a grid that zooms in on the resonance until the FWHM spans many points.

    The first grid covers ``half_span`` around the template separation; each
    round re-centres on the peak with a span of three current FWHMs (or a
    quarter of the span if the width is not yet resolved).  It stops once the
    FWHM covers at least ``MIN_FWHM_STEPS`` grid steps.
    """
    spec = fixed_curvature(spec)
    if detuning is None:
        detuning = subradiant_detuning(spec)
    centre, span = spec.separation, half_span
    sweep = None
    for _ in range(max_rounds):
        grid = np.linspace(centre - span, centre + span, points)
        try:
            sweep = finesse(spec, detuning, grid, rabi)
        except PeakNotFound:
            if sweep is None:
                intensity = [cavity_intensity(replace(spec, separation=s), detuning, rabi) for s in grid]
                centre = float(grid[int(np.argmax(intensity))])
                span *= 0.5
                continue
            raise
        step = grid[1] - grid[0]
        if sweep.fwhm >= MIN_FWHM_STEPS * step:
            return sweep
        centre = sweep.peak
        span = 1.5 * sweep.fwhm if sweep.fwhm > 2 * step else span / 4.0
    if sweep is None:
        raise PeakNotFound("no resolvable resonance near the template separation")
    return sweep


# ---------------------------------------------------------------------------


def excitation_integral(trajectory: Optional[Trajectory]) -> np.ndarray:
    """Time integral of each atom's excitation probability (trapezoid rule).

    Uses the last axis of ``trajectory.populations`` as the atom index and the
    first as time; any batch axes in between are kept.
    """
    if trajectory is None or len(trajectory.t) < 2:
        raise InvalidArgument("trajectory has no samples; propagate with sample_every set")
    return np.trapezoid(np.real(trajectory.populations), trajectory.t, axis=0)


def mode_weight_peaks(modes, drive_vector, detunings) -> np.ndarray:
    """Detuning at which each mode's steady-state weight is largest on the given grid."""
    w = mode_contribution(modes, drive_vector, detunings)
    return np.asarray(detunings)[np.argmax(w, axis=0)]


@dataclass(frozen=True)
class Species:
    name: str
    mass: float        # kg
    wavelength: float  # m

    @property
    def recoil_energy(self) -> float:
        """E_r = h^2 / (2 m lambda^2) in joules."""
        return constants.h**2 / (2.0 * self.mass * self.wavelength**2)

    @property
    def recoil_frequency(self) -> float:
        return self.recoil_energy / constants.h


SPECIES = {
    "Rb87": Species("Rb87", 86.909180527 * constants.atomic_mass, 780.241e-9),
    "Cs133": Species("Cs133", 132.905451961 * constants.atomic_mass, 852.347e-9),
    "Sr88": Species("Sr88", 87.9056125 * constants.atomic_mass, 689.449e-9),
}


def vibrational_quantum(dK, trap_frequency: float, species="Rb87"):
    """Mean vibrational number <n> = dK / (h f_trap) for an energy dK in recoil units.

    ``trap_frequency`` is an ordinary frequency in Hz.
    """
    if not trap_frequency > 0:
        raise InvalidArgument("trap frequency must be positive")
    if isinstance(species, str):
        if species not in SPECIES:
            raise InvalidArgument(f"no data for species {species!r}; known: {sorted(SPECIES)}")
        species = SPECIES[species]
    out = np.asarray(dK, dtype=float) * species.recoil_frequency / trap_frequency
    return float(out) if out.ndim == 0 else out
