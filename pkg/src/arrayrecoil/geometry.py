"""Atom-array construction: planar lattices, curved mirrors, two-mirror
cavities and arrays with missing sites.

All lengths are in units of the resonant wavelength.  Lattice sites are
labelled ``(row, col)`` with ``(0, 0)`` at the corner with the most negative
x and y; ``col`` runs along x and ``row`` along y.  Cavity sites carry a
leading mirror index, ``(mirror, row, col)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import GeometryOutOfRange, InvalidArgument, InvalidGeometry

SIGMA_PLUS = -np.array([1.0, 1.0j, 0.0]) / np.sqrt(2.0)

_UNIT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AtomArray:
    """Positions and dipole orientations of a collection of two-level atoms.

    Attributes
    ----------
    positions : (N, 3) float array
    orientations : (N, 3) complex array of unit dipole vectors
    spacing : lattice constant d
    lattice : (N, k) integer site labels, k = 2 (planar) or 3 (cavity)
    provenance : free-form description of how the array was built
    """

    positions: np.ndarray
    orientations: np.ndarray
    spacing: float
    lattice: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        q = np.asarray(self.orientations, dtype=complex).reshape(-1, 3)
        lat = np.asarray(self.lattice, dtype=int)
        if len(pos) == 0:
            raise InvalidArgument("an atom array needs at least one atom")
        if q.shape != pos.shape or len(lat) != len(pos):
            raise InvalidArgument("positions, orientations and lattice labels differ in length")
        norms = np.einsum("ij,ij->i", q, q.conj()).real
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise InvalidArgument("dipole orientations must be unit vectors")
        if len(pos) > 1 and pdist(pos).min() <= 0.0:
            raise InvalidGeometry("coincident atoms")
        for name, value in (("positions", pos), ("orientations", q), ("lattice", lat)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def __len__(self):
        return len(self.positions)

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    def index_of(self, site) -> int:
        site = tuple(int(s) for s in site)
        hits = np.flatnonzero(np.all(self.lattice == np.asarray(site), axis=1))
        if len(hits) == 0:
            raise InvalidArgument(f"no atom at lattice site {site}")
        return int(hits[0])

    def grid_shape(self) -> tuple[int, int]:
        """(rows, cols) of the enclosing lattice, for heatmaps."""
        return int(self.lattice[:, -2].max()) + 1, int(self.lattice[:, -1].max()) + 1


@dataclass(frozen=True)
class CurvatureProfile:
    """Paraxial mirror shape; ``orientation`` is +1 when the rim bows to +z."""

    kind: str = "flat"
    radius: Optional[float] = None
    focus: Optional[float] = None
    orientation: int = 1

    def __post_init__(self):
        if self.kind not in ("flat", "spherical", "parabolic"):
            raise InvalidArgument(f"unknown curvature kind {self.kind!r}")
        # a spherical radius may be left unset; build_cavity then uses R = L
        if self.kind == "spherical" and self.radius is not None and self.radius <= 0:
            raise InvalidArgument("spherical profile needs a positive radius")
        if self.kind == "parabolic" and (self.focus is None or self.focus <= 0):
            raise InvalidArgument("parabolic profile needs a positive focal length")
        if self.orientation not in (1, -1):
            raise InvalidArgument("orientation must be +1 or -1")

    def sagitta(self, rho2: np.ndarray) -> np.ndarray:
        rho2 = np.asarray(rho2, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(rho2)
        if self.kind == "parabolic":
            return rho2 / (4.0 * self.focus)
        if self.radius is None:
            raise InvalidArgument("spherical profile has no radius")
        if np.any(rho2 >= self.radius**2):
            raise GeometryOutOfRange("array extends beyond the spherical mirror radius")
        return self.radius - np.sqrt(self.radius**2 - rho2)


@dataclass(frozen=True)
class CavitySpec:
    nx: int
    ny: int
    spacing: float
    separation: float
    profile: CurvatureProfile = CurvatureProfile()
    polarization: np.ndarray = field(default_factory=lambda: SIGMA_PLUS.copy())


def build_planar_array(nx: int, ny: int, d: float, polarization=None) -> AtomArray:
    """Centred ``nx`` x ``ny`` square lattice in the z = 0 plane."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgument("lattice dimensions must be positive integers")
    if not d > 0:
        raise InvalidArgument("lattice spacing must be positive")
    q = _unit_polarization(polarization)
    rows, cols = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    x = (cols - (nx - 1) / 2.0) * d
    y = (rows - (ny - 1) / 2.0) * d
    pos = np.column_stack([x, y, np.zeros_like(x)])
    return AtomArray(
        positions=pos,
        orientations=np.tile(q, (len(pos), 1)),
        spacing=float(d),
        lattice=np.column_stack([rows, cols]),
        provenance={"kind": "planar", "nx": int(nx), "ny": int(ny), "d": float(d), "removed": []},
    )


def apply_curvature(array: AtomArray, profile: CurvatureProfile) -> AtomArray:
    """Displace z by the mirror sagitta; x and y are left untouched."""
    if profile.kind == "spherical" and profile.radius is not None:
        half_diag = np.sqrt((array.positions[:, :2] ** 2).sum(axis=1)).max()
        if profile.radius <= half_diag:
            raise GeometryOutOfRange("spherical radius must exceed the half-diagonal of the array")
    pos = array.positions.copy()
    pos[:, 2] += profile.orientation * profile.sagitta((pos[:, :2] ** 2).sum(axis=1))
    prov = dict(array.provenance, curvature=_profile_dict(profile))
    return replace(array, positions=pos, provenance=prov)


def build_cavity(spec: CavitySpec) -> AtomArray:
    """Two facing mirrors: vertex of mirror 0 at z = 0, of mirror 1 at z = L.

    A spherical profile without an explicit radius is taken confocal (R = L).
    """
    profile = spec.profile
    if profile.kind == "spherical" and profile.radius is None:
        profile = replace(profile, radius=float(spec.separation))
    if not spec.separation > 0:
        raise InvalidArgument("mirror separation must be positive")
    plane = build_planar_array(spec.nx, spec.ny, spec.spacing, spec.polarization)
    front = apply_curvature(plane, replace(profile, orientation=1))
    back = apply_curvature(plane, replace(profile, orientation=-1))
    max_sag = front.positions[:, 2].max()
    if max_sag >= spec.separation / 2.0:
        raise InvalidGeometry("mirror sagitta reaches the cavity midplane")
    back_pos = back.positions + np.array([0.0, 0.0, spec.separation])
    n = len(plane)
    lattice = np.vstack([
        np.column_stack([np.zeros(n, int), plane.lattice]),
        np.column_stack([np.ones(n, int), plane.lattice]),
    ])
    return AtomArray(
        positions=np.vstack([front.positions, back_pos]),
        orientations=np.vstack([front.orientations, back.orientations]),
        spacing=float(spec.spacing),
        lattice=lattice,
        provenance={
            "kind": "cavity",
            "nx": int(spec.nx),
            "ny": int(spec.ny),
            "d": float(spec.spacing),
            "L": float(spec.separation),
            "curvature": _profile_dict(profile),
            "removed": [],
        },
    )


def remove_atoms(array: AtomArray, sites: Sequence[Sequence[int]]) -> AtomArray:
    sites = [tuple(int(s) for s in site) for site in sites]
    if len(set(sites)) != len(sites):
        raise InvalidArgument("duplicate sites in removal list")
    if not sites:
        return array
    drop = [array.index_of(site) for site in sites]
    keep = np.setdiff1d(np.arange(len(array)), drop)
    if len(keep) == 0:
        raise InvalidArgument("removing every atom leaves an empty array")
    prov = dict(array.provenance)
    prov["removed"] = list(prov.get("removed", [])) + [list(s) for s in sites]
    return AtomArray(
        positions=array.positions[keep],
        orientations=array.orientations[keep],
        spacing=array.spacing,
        lattice=array.lattice[keep],
        provenance=prov,
    )


def nearest_neighbour_distance(array: AtomArray) -> float:
    return float(pdist(array.positions).min())


def _unit_polarization(polarization) -> np.ndarray:
    if polarization is None:
        return SIGMA_PLUS.copy()
    q = np.asarray(polarization, dtype=complex).reshape(3)
    norm = np.sqrt(np.vdot(q, q).real)
    if norm == 0:
        raise InvalidArgument("polarization vector must be non-zero")
    return q / norm


def _profile_dict(profile: CurvatureProfile) -> dict:
    return {"kind": profile.kind, "radius": profile.radius, "focus": profile.focus}
