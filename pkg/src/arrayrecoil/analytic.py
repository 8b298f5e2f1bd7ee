"""Closed-form ground-state coefficients.

Two situations have exact solutions in the mode bases V (of G) and U (of G''):

* free decay of an initial excitation, where rho_gg(inf) is a double sum over
  mode pairs with denominators G_a + conj(G''_b);
* continuous weak drive, where the coherences and excited block are
  stationary and only rho_gg grows linearly in time.

Both can also be obtained from linear solves (Sylvester / plain solve), which
the evaluators use as an independent route.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve, solve_sylvester

from .eigenmodes import EigenmodeSet, decompose
from .errors import InvalidArgument, SingularityError
from .evolution import DriveSpec, ShiftedConfiguration, _dense_matrices
from .units import GAMMA

POLE_TOL = 1e-12


@dataclass
class EigenDecaySolution:
    modes: EigenmodeSet
    primed_modes: EigenmodeSet
    C: np.ndarray
    rho_gg_inf: np.ndarray


@dataclass
class SteadyStateSolution:
    w: np.ndarray
    wt: np.ndarray
    rho: np.ndarray
    rho_gg: float
    w_modes: Optional[np.ndarray] = None
    wt_modes: Optional[np.ndarray] = None
    rho_modes: Optional[np.ndarray] = None

    @property
    def populations(self) -> np.ndarray:
        return np.diagonal(self.rho).copy()


def eigenstate_rho0(modes: EigenmodeSet, beta: int) -> np.ndarray:
    v = modes.vectors[:, beta]
    return np.outer(v, v.conj()) / np.vdot(v, v).real


def eigen_decay_solution(config: ShiftedConfiguration, rho0, modes: Optional[EigenmodeSet] = None,
                         gamma: float = GAMMA) -> EigenDecaySolution:
    """rho_gg(inf) = sum_ab (V^T R U*)_ab C_ab / (G_a + conj(G''_b)), C = V^T rho0 U*.

    ``rho0`` is (N, N) or a stack (K, N, N) of initial excited blocks.
    ``modes`` may be passed to reuse the decomposition of the unprimed G.
    """
    G, Gpp, Gmix = _dense_matrices(config, gamma)
    if modes is None:
        modes = decompose(G)
    umodes = modes if config.is_coincident else decompose(Gpp)
    V, U = modes.vectors, umodes.vectors
    R = 2.0 * Gmix.real
    M = V.T @ R @ U.conj()
    C = V.T @ np.asarray(rho0, dtype=complex) @ U.conj()
    denom = modes.values[:, None] + np.conj(umodes.values)[None, :]
    val = (M * C / denom).sum(axis=(-2, -1))
    return EigenDecaySolution(modes, umodes, C, val)


def eigen_decay_rho_gg_inf(config: ShiftedConfiguration, rho0, method: str = "eigen",
                           modes: Optional[EigenmodeSet] = None, gamma: float = GAMMA):
    """Final ground-state coefficient after free decay from ``rho0``."""
    if method == "eigen":
        return eigen_decay_solution(config, rho0, modes, gamma).rho_gg_inf
    if method == "sylvester":
        G, Gpp, Gmix = _dense_matrices(config, gamma)
        R = 2.0 * Gmix.real
        rho0 = np.asarray(rho0, dtype=complex)
        stack = rho0.reshape(-1, *rho0.shape[-2:])
        out = np.array([(R * solve_sylvester(G, np.conj(Gpp), r)).sum() for r in stack])
        return out.reshape(rho0.shape[:-2]) if rho0.ndim > 2 else out[0]
    raise InvalidArgument(f"unknown method {method!r}")


def dominant_term_rho_gg_inf(config: ShiftedConfiguration, beta: int, modes: Optional[EigenmodeSet] = None,
                             gamma: float = GAMMA) -> complex:
    """Eigenstate-start rho_gg(inf) keeping only the a = b = beta term.

    The primed mode paired with beta is the one with the largest bilinear
    overlap with V_beta.
    """
    G, Gpp, Gmix = _dense_matrices(config, gamma)
    if modes is None:
        modes = decompose(G)
    umodes = modes if config.is_coincident else decompose(Gpp)
    v = modes.vectors[:, beta]
    b = int(np.argmax(np.abs(v @ umodes.vectors)))
    u = umodes.vectors[:, b]
    norm = 1.0 / np.vdot(v, v).real
    c = norm * (v.conj() @ u.conj())
    m = v @ (2.0 * Gmix.real) @ u.conj()
    return complex(m * c / (modes.values[beta] + np.conj(umodes.values[b])))


def kz_closed_form(gamma_alpha, gamma: float = GAMMA):
    """Out-of-plane recoil energy (in E_r) after decay of an eigenmode: (2/5) Gamma / gamma_a."""
    g = np.asarray(gamma_alpha, dtype=float)
    if np.any(g <= 0):
        raise InvalidArgument("decay rate must be positive")
    out = 0.4 * gamma / g
    return float(out) if out.ndim == 0 else out


def steady_coefficients(config: ShiftedConfiguration, drive: DriveSpec, method: str = "eigen",
                        rho_gg="unit", modes: Optional[EigenmodeSet] = None,
                        gamma: float = GAMMA) -> SteadyStateSolution:
    """Stationary coherences and excited block under continuous weak drive.

    ``rho_gg`` is "unit" (low-intensity value 1), "trace" (fixed by
    rho_gg + sum_i rho_ii = 1 at coincidence) or a number.
    """
    if drive.profile != "cw":
        raise InvalidArgument("steady state needs a continuous-wave drive")
    G, Gpp, _ = _dense_matrices(config, gamma)
    om = drive.rabi * drive.spatial(config.positions)
    omp = drive.rabi * drive.spatial(config.primed)
    d = drive.detuning
    if method == "eigen":
        if modes is None:
            modes = decompose(G)
        umodes = modes if config.is_coincident else decompose(Gpp)
        V, U = modes.vectors, umodes.vectors
        den_w = modes.values - 1j * d
        den_wt = np.conj(umodes.values) + 1j * d
        if min(np.abs(den_w).min(), np.abs(den_wt).min()) < POLE_TOL:
            raise SingularityError("drive detuning sits on an undamped mode")
        a = (om @ V) / den_w
        b = (np.conj(omp) @ U.conj()) / den_wt
        rgg = resolve_rho_gg(rho_gg, 0.25 * np.abs(V @ a) ** 2)
        w_m = -0.5j * rgg * a
        wt_m = 0.5j * rgg * b
        rho_m = 0.25 * rgg * np.outer(a, b)
        w = V @ w_m
        wt = U.conj() @ wt_m
        rho = V @ rho_m @ U.conj().T
        return SteadyStateSolution(w, wt, rho, rgg, w_m, wt_m, rho_m)
    if method == "solve":
        n = len(G)
        eye = np.eye(n)
        try:
            a = solve(G - 1j * d * eye, om)
            b = solve(np.conj(Gpp) + 1j * d * eye, np.conj(omp))
        except np.linalg.LinAlgError as exc:
            raise SingularityError(str(exc)) from exc
        rgg = resolve_rho_gg(rho_gg, 0.25 * np.abs(a) ** 2)
        w = -0.5j * rgg * a
        wt = 0.5j * rgg * b
        return SteadyStateSolution(w, wt, np.outer(w, wt) / rgg, rgg)
    raise InvalidArgument(f"unknown method {method!r}")


def resolve_rho_gg(rule, unit_populations):
    if rule == "unit":
        return 1.0
    if rule == "trace":
        return 1.0 / (1.0 + unit_populations.sum())
    return float(rule)


def steady_rho_gg_dot(solution: SteadyStateSolution, config: ShiftedConfiguration, drive: DriveSpec,
                      Gmix=None, gamma: float = GAMMA) -> complex:
    """d rho_gg / dt in the stationary state (zero at coincidence by trace conservation)."""
    if Gmix is None:
        Gmix = _dense_matrices(config, gamma)[2]
    R = 2.0 * np.asarray(Gmix).real
    om = drive.rabi * drive.spatial(config.positions)
    omp = drive.rabi * drive.spatial(config.primed)
    return complex((R * solution.rho).sum()
                   - 0.5j * (np.conj(om) * solution.w).sum()
                   + 0.5j * (omp * solution.wt).sum())


def scattering_rate(solution: SteadyStateSolution, config: ShiftedConfiguration, gamma: float = GAMMA) -> float:
    """Photon emission rate sum_ij 2 Re G_ij rho_ij of an unshifted steady state."""
    G = _dense_matrices(config, gamma)[0]
    return float(((2.0 * G.real) * solution.rho).sum().real)
