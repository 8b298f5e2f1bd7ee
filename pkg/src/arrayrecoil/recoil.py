"""Recoil momentum and kinetic energy from derivatives of rho_gg.

Only the primed (bra-side) coordinate of one atom is displaced.  With
F(s) the ground-state coefficient for primed offset s along an axis,

    dp = Re{ i (F(+s) - F(-s)) / (2 s) } / k            [hbar k]
    dK = Re{ -(F(+s) - 2 F(0) + F(-s)) / s^2 } / k^2    [E_r]

The factor i (rather than 1/i) is the sign of a bra-side derivative: with
this convention a photon absorbed from a +z beam gives positive dp_z.  When F
is a steady-state rate d rho_gg/dt the same stencils give momentum and
energy deposition rates.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve

from .analytic import resolve_rho_gg, eigen_decay_rho_gg_inf, steady_coefficients, steady_rho_gg_dot
from .eigenmodes import decompose
from .errors import RecoilConsistencyError, SingularityError
from .evolution import (
    DEFAULT_DT, CoefficientState, DriveSpec, ShiftedConfiguration, SingleShiftCouplings, StopCondition,
    propagate, single_atom_shifts,
)
from .geometry import AtomArray
from .units import GAMMA, K

log = logging.getLogger(__name__)

DEFAULT_DR = 1e-3
AXES = {"x": 0, "y": 1, "z": 2}
IMAG_TOL = 1e-6
# allowance for the O((k dr)^2) truncation residue in Im(dp), in units of the map scale
STENCIL_RESIDUE = 10.0


class RhoGGEvaluator:
    """Maps shifted configurations of one base array to rho_gg values.

    ``kind`` is "final" (rho_gg after complete decay) or "rate" (steady
    d rho_gg/dt).  ``evaluate`` returns an array with the configurations on
    the first axis; further axes (e.g. several initial states) are allowed.
    """

    kind = "final"

    def __init__(self, array: AtomArray, threads: int = 1):
        self.array = array
        self.threads = max(1, int(threads))

    def evaluate(self, configs: Sequence[ShiftedConfiguration]) -> np.ndarray:
        if self.threads == 1:
            return np.array([self.evaluate_one(c) for c in configs])
        with ThreadPoolExecutor(self.threads) as pool:
            return np.array(list(pool.map(self.evaluate_one, configs)))

    def evaluate_one(self, config: ShiftedConfiguration):
        return self.evaluate([config])[0]

    def __call__(self, config: ShiftedConfiguration):
        return self.evaluate_one(config)


class PropagationEvaluator(RhoGGEvaluator):
    """rho_gg(inf) (or a steady rate) from time propagation of the whole batch at once.

    For rates rho_gg is held fixed while the coherences relax (see
    :class:`StopCondition`) unless ``hold_ground`` is False.
    """

    def __init__(self, array: AtomArray, initial: CoefficientState, drive: DriveSpec = DriveSpec(),
                 dt: float = DEFAULT_DT, stop: StopCondition = StopCondition(), fast: bool = False,
                 chunk: Optional[int] = None, kind: Optional[str] = None, hold_ground: bool = True,
                 threads: int = 1):
        super().__init__(array, threads)
        self.initial = initial.as_pure() if fast else initial.as_full()
        self.drive = drive
        self.dt = dt
        self.stop = stop
        self.chunk = chunk
        if kind is None:
            kind = "rate" if stop.kind == "steady" else "final"
        self.kind = kind
        if kind == "rate" and hold_ground and not stop.hold_ground:
            self.stop = replace(stop, hold_ground=True)
        self.last_results = []

    def evaluate(self, configs):
        configs = list(configs)
        size = self.chunk or len(configs)
        out, self.last_results = [], []
        for start in range(0, len(configs), size):
            res = propagate(self.initial, self.drive, configs[start:start + size], self.dt, self.stop)
            self.last_results.append(res)
            out.append(res.rho_gg_rate if self.kind == "rate" else res.rho_gg_final)
        return np.concatenate(out)


class EigenDecayEvaluator(RhoGGEvaluator):
    """Closed-form rho_gg(inf) after free decay from one or several initial excited blocks."""

    def __init__(self, array: AtomArray, rho0, method: str = "eigen", threads: int = 1):
        super().__init__(array, threads)
        self.rho0 = np.asarray(rho0, dtype=complex)
        self.method = method
        self.modes = decompose(np.asarray(_base_G(array))) if method == "eigen" else None

    def evaluate_one(self, config):
        return eigen_decay_rho_gg_inf(config, self.rho0, self.method, self.modes)


class SteadyStateEvaluator(RhoGGEvaluator):
    """Closed-form stationary d rho_gg/dt under continuous drive."""

    kind = "rate"

    def __init__(self, array: AtomArray, drive: DriveSpec, method: str = "solve", rho_gg="unit",
                 threads: int = 1):
        super().__init__(array, threads)
        self.drive = drive
        self.method = method
        self.rho_gg = rho_gg
        self.modes = decompose(np.asarray(_base_G(array))) if method == "eigen" else None

    def evaluate_one(self, config):
        sol = steady_coefficients(config, self.drive, self.method, self.rho_gg, self.modes)
        return steady_rho_gg_dot(sol, config, self.drive)

    def evaluate(self, configs):
        configs = list(configs)
        shifts = single_atom_shifts(configs) if self.method == "solve" and len(configs) > 1 else None
        if shifts is None:
            return super().evaluate(configs)
        return self._evaluate_single_shifts(*shifts)

    def _evaluate_single_shifts(self, atoms, offsets):
        # w only sees unprimed positions, so it is shared; G''* differs from
        # conj(G) by one row and one column, handled with a rank-2 Woodbury update.
        cp = SingleShiftCouplings(self.array, atoms, offsets, self.drive)
        d, rabi = self.drive.detuning, self.drive.rabi
        n, B = cp.n, len(atoms)
        try:
            a = solve(cp.G - 1j * d * np.eye(n), rabi * cp.omega)
            A0inv = np.linalg.inv(cp.Gc + 1j * d * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise SingularityError(str(exc)) from exc
        rgg = resolve_rho_gg(self.rho_gg, 0.25 * np.abs(a) ** 2)
        w = -0.5j * rgg * a
        rows = np.arange(B)
        x0 = np.conj(rabi * cp.omega_primed) @ A0inv.T
        z0 = cp.dcol_conj @ A0inv.T                     # A0^-1 dcol
        z1 = A0inv[:, atoms].T                          # A0^-1 e_j
        cap = np.empty((B, 2, 2), dtype=complex)
        cap[:, 0, 0] = 1.0 + z0[rows, atoms]
        cap[:, 0, 1] = z1[rows, atoms]
        cap[:, 1, 0] = (cp.drow_conj * z0).sum(axis=1)
        cap[:, 1, 1] = 1.0 + (cp.drow_conj * z1).sum(axis=1)
        rhs = np.stack([x0[rows, atoms], (cp.drow_conj * x0).sum(axis=1)], axis=1)
        coef = np.linalg.solve(cap, rhs[..., None])[..., 0]
        b = x0 - coef[:, :1] * z0 - coef[:, 1:] * z1
        wt = 0.5j * rgg * b
        wb = np.broadcast_to(w, (B, n))
        om = rabi * cp.omega
        omp = rabi * cp.omega_primed
        return (cp.R_form(wb, wt) / rgg
                - 0.5j * (np.conj(om) * w).sum()
                + 0.5j * (omp * wt).sum(axis=1))


def _base_G(array):
    from .greens import assemble_greens
    return assemble_greens(array.positions, array.positions, array.orientations)


# ---------------------------------------------------------------------------


@dataclass
class RecoilResult:
    """Per-atom recoil; arrays have shape (N, 3, *value_shape).

    ``momentum`` is in hbar k and ``energy`` in E_r, or per 1/Gamma when
    ``mode`` is "rate".
    """

    momentum: np.ndarray
    energy: np.ndarray
    mode: str
    dr: float
    atoms: np.ndarray
    lattice: np.ndarray
    baseline: np.ndarray
    imag_momentum: float = 0.0
    imag_energy: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def total_energy(self) -> np.ndarray:
        return self.energy.sum(axis=1)

    def grid(self, values: np.ndarray, shape=None, fill=np.nan) -> np.ndarray:
        """Place per-atom values on the (row, col) lattice for heatmaps."""
        lat = self.lattice[:, -2:]
        if shape is None:
            shape = (lat[:, 0].max() + 1, lat[:, 1].max() + 1)
        out = np.full(tuple(shape) + values.shape[1:], fill, dtype=float)
        out[lat[:, 0], lat[:, 1]] = values
        return out


def stencil_configs(array: AtomArray, atoms, axes, dr: float):
    """Baseline followed by (+dr, -dr) shifts for every atom and axis, in that order."""
    configs = [ShiftedConfiguration(array)]
    for j in atoms:
        for ax in axes:
            e = np.zeros(3)
            e[ax] = dr
            configs.append(ShiftedConfiguration.single(array, j, e))
            configs.append(ShiftedConfiguration.single(array, j, -e))
    return configs


def _stencil(F0, Fp, Fm, dr, k=K):
    dp = 1j * (Fp - Fm) / (2.0 * dr * k)
    dK = -(Fp - 2.0 * F0 + Fm) / (k * dr) ** 2
    return dp, dK


def _axis(axis) -> int:
    return AXES[axis] if isinstance(axis, str) else int(axis)


def momentum_kick(ev: RhoGGEvaluator, atom: int, axis, dr: float = DEFAULT_DR):
    ax = _axis(axis)
    vals = ev.evaluate(stencil_configs(ev.array, [atom], [ax], dr))
    return np.real(_stencil(vals[0], vals[1], vals[2], dr)[0])


def kinetic_kick(ev: RhoGGEvaluator, atom: int, axis, dr: float = DEFAULT_DR):
    ax = _axis(axis)
    vals = ev.evaluate(stencil_configs(ev.array, [atom], [ax], dr))
    return np.real(_stencil(vals[0], vals[1], vals[2], dr)[1])


def recoil_map(ev: RhoGGEvaluator, array: Optional[AtomArray] = None, dr: float = DEFAULT_DR,
               mode: Optional[str] = None, atoms=None, imag_tol: Optional[float] = IMAG_TOL) -> RecoilResult:
    """Momentum and energy for every (or the listed) atom along x, y and z.

    Uses 6N + 1 evaluations: the baseline is shared by all 3-point stencils.
    """
    array = ev.array if array is None else array
    if mode is None:
        mode = "rate" if ev.kind == "rate" else "total"
    atoms = np.arange(len(array)) if atoms is None else np.asarray(atoms, dtype=int)
    vals = ev.evaluate(stencil_configs(array, atoms, range(3), dr))
    F0 = vals[0]
    rest = vals[1:].reshape((len(atoms), 3, 2) + vals.shape[1:])
    dp, dK = _stencil(F0, rest[:, :, 0], rest[:, :, 1], dr)
    scale_p = max(np.abs(dp.real).max(), 1e-300)
    scale_k = max(np.abs(dK.real).max(), 1e-300)
    im_p = float(np.abs(dp.imag).max() / scale_p)
    im_k = float(np.abs(dK.imag).max() / scale_k)
    # Im(dp) is the gradient of the diagonal of F, which vanishes identically
    # (trace conservation), so it is a genuine consistency check.  Im(dK) is
    # not: it equals k^-1 times the derivative of dp with respect to the atom's
    # actual position, and is only reported.  The stencil itself leaves an
    # O((k dr)^2) imaginary residue in dp, which the bound allows for.
    allowance = imag_tol + STENCIL_RESIDUE * (K * dr) ** 2 if imag_tol is not None else np.inf
    bound = allowance * max(scale_p, scale_k)
    if np.abs(dp.imag).max() > bound:
        raise RecoilConsistencyError(f"imaginary momentum component too large ({im_p:.2e} of map scale)")
    return RecoilResult(
        momentum=dp.real, energy=dK.real, mode=mode, dr=dr, atoms=atoms,
        lattice=array.lattice[atoms], baseline=F0, imag_momentum=im_p, imag_energy=im_k,
        meta={"evaluations": len(vals), "kind": ev.kind},
    )


@dataclass
class RichardsonReport:
    values: np.ndarray
    steps: np.ndarray
    extrapolated: float
    error_estimate: float
    observed_order: float
    flagged: bool


def richardson_check(ev: RhoGGEvaluator, atom: int, axis, dr: float = DEFAULT_DR,
                     quantity: str = "energy", rtol: float = 1e-3) -> RichardsonReport:
    """Repeat a kick at dr, dr/2 and dr/4 and extrapolate the O(dr^2) stencil error away.

    The report is flagged when the dr and dr/2 values differ by more than
    ``rtol`` relative, or the observed convergence order is far from 2.
    """
    ax = _axis(axis)
    steps = np.array([dr, dr / 2.0, dr / 4.0])
    configs = [ShiftedConfiguration(ev.array)]
    for h in steps:
        e = np.zeros(3)
        e[ax] = h
        configs += [ShiftedConfiguration.single(ev.array, atom, e), ShiftedConfiguration.single(ev.array, atom, -e)]
    vals = ev.evaluate(configs)
    pick = 0 if quantity == "momentum" else 1
    est = np.array([np.real(_stencil(vals[0], vals[1 + 2 * i], vals[2 + 2 * i], h)[pick])
                    for i, h in enumerate(steps)], dtype=float).reshape(3, -1)[:, 0]
    extrap = (4.0 * est[1] - est[0]) / 3.0
    d1, d2 = est[0] - est[1], est[1] - est[2]
    order = float(np.log2(abs(d1) / abs(d2))) if d1 != 0 and d2 != 0 else np.inf
    flagged = bool(abs(d1) > rtol * max(abs(est[1]), 1e-300) or (np.isfinite(order) and abs(order - 2.0) > 0.5))
    return RichardsonReport(est, steps, float(extrap), float(abs(d1) / 3.0), order, flagged)
