"""Single-excitation density-matrix coefficient dynamics.

The density matrix is stored as four blocks: rho_gg, w_j = rho_{e_j g},
wt_j = rho_{g e_j} and rho_ij = rho_{e_i e_j}.  Left (ket) indices use the
unprimed positions r_j, right (bra) indices the primed positions r'_j, so a
state is a function of both coordinate sets.  Equations of motion:

    dw_j/dt   = -i W(r_j)/2 rho_gg + i d w_j - sum_k G_jk w_k
    dwt_j/dt  = +i W*(r'_j)/2 rho_gg - i d wt_j - sum_k G''*_jk wt_k
    drho_ij/dt = -i W(r_i)/2 wt_j + i W*(r'_j)/2 w_i
                 - sum_k G_ik rho_kj - sum_k G''*_kj rho_ik
    drho_gg/dt = sum_ij 2 Re G'_ij rho_ij - i sum_j W*(r_j)/2 w_j + i sum_j W(r'_j)/2 wt_j

with W the Rabi frequency and d the detuning.  All arrays may carry leading
batch axes, one entry per shifted configuration, so a whole finite-difference
stencil is integrated in one pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_sylvester

from .errors import InstabilityError, InvalidArgument, UnsupportedStateError
from .geometry import AtomArray
from .greens import greens
from .units import GAMMA, K

log = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_EPS_DECAY = 1e-8
MAX_OFFSET = 0.05
PULSE_START = 5.0  # in pulse widths before the peak


@dataclass(frozen=True)
class DriveSpec:
    """Plane-wave drive W(r, t) = rabi * f(t) * s(r) * exp(i k z).

    ``profile`` is "off", "cw" or "gaussian" (f = exp(-t^2 / width^2)).
    ``envelope`` maps an (..., N, 3) position array to the transverse profile
    s with |s| <= 1; ``None`` means uniform illumination.
    """

    rabi: float = 0.0
    detuning: float = 0.0
    profile: str = "off"
    width: Optional[float] = None
    envelope: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.rabi < 0:
            raise InvalidArgument("Rabi frequency must be non-negative")
        if self.profile not in ("off", "cw", "gaussian"):
            raise InvalidArgument(f"unknown drive profile {self.profile!r}")
        if self.profile == "gaussian" and not (self.width and self.width > 0):
            raise InvalidArgument("gaussian pulse needs a positive width")

    @property
    def is_off(self) -> bool:
        return self.profile == "off" or self.rabi == 0.0

    def temporal(self, t: float) -> float:
        if self.is_off:
            return 0.0
        if self.profile == "cw":
            return self.rabi
        return self.rabi * np.exp(-((t / self.width) ** 2))

    def spatial(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=float)
        phase = np.exp(1j * K * positions[..., 2])
        if self.envelope is None:
            return phase
        s = np.asarray(self.envelope(positions))
        if np.any(np.abs(s) > 1.0 + 1e-12):
            raise InvalidArgument("transverse envelope must satisfy |s| <= 1")
        return s * phase

    def start_time(self) -> float:
        return -PULSE_START * self.width if self.profile == "gaussian" else 0.0

    def end_time(self) -> float:
        """Time after which the drive is negligible (infinite for cw)."""
        if self.is_off:
            return -np.inf
        if self.profile == "gaussian":
            return PULSE_START * self.width
        return np.inf


@dataclass(frozen=True, eq=False)
class ShiftedConfiguration:
    """An atom array whose primed (bra-side) positions are displaced by ``offsets``."""

    base: AtomArray
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.base)
        off = np.zeros((n, 3)) if self.offsets is None else np.asarray(self.offsets, dtype=float).reshape(n, 3)
        if not np.all(np.isfinite(off)):
            raise InvalidArgument("offsets must be finite")
        if np.any(np.linalg.norm(off, axis=1) > MAX_OFFSET):
            raise InvalidArgument(f"primed offsets are limited to {MAX_OFFSET} wavelengths")
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)

    @classmethod
    def single(cls, base: AtomArray, atom: int, offset) -> "ShiftedConfiguration":
        off = np.zeros((len(base), 3))
        off[atom] = offset
        return cls(base, off)

    @property
    def positions(self) -> np.ndarray:
        return self.base.positions

    @property
    def primed(self) -> np.ndarray:
        return self.base.positions + self.offsets

    @property
    def is_coincident(self) -> bool:
        return not np.any(self.offsets)


# ---------------------------------------------------------------------------
# coupling operators


class DenseCouplings:
    """Coupling operators from explicit (batched) matrices.

    ``G``, ``Gpp`` and ``Gmix`` have shape (..., N, N); the batch axes must
    broadcast.  ``omega`` and ``omega_primed`` are the spatial drive factors
    s(r) exp(i k z) at the unprimed and primed positions.
    """

    def __init__(self, G, Gpp, Gmix, omega, omega_primed):
        self.G = np.asarray(G, dtype=complex)
        self.Gpp_conj = np.conj(np.asarray(Gpp, dtype=complex))
        self.R = 2.0 * np.asarray(Gmix, dtype=complex).real
        self.omega = np.asarray(omega, dtype=complex)
        self.omega_primed = np.asarray(omega_primed, dtype=complex)
        self.n = self.G.shape[-1]
        self.batch_shape = np.broadcast_shapes(
            self.G.shape[:-2], self.Gpp_conj.shape[:-2], self.R.shape[:-2],
            self.omega.shape[:-1], self.omega_primed.shape[:-1],
        )

    def G_vec(self, x):
        return np.einsum("...ij,...j->...i", self.G, x)

    def Gpp_conj_vec(self, x):
        return np.einsum("...ij,...j->...i", self.Gpp_conj, x)

    def G_left(self, rho):
        return self.G @ rho

    def Gpp_conj_right(self, rho):
        return rho @ self.Gpp_conj

    def R_form(self, x, y):
        return np.einsum("...i,...ij,...j->...", x, self.R, y)

    def R_trace(self, rho):
        return (self.R * rho).sum(axis=(-2, -1))

    def dense(self, index):
        pick = lambda a, nd: a[index] if a.ndim > nd else a  # noqa: E731
        return pick(self.G, 2), np.conj(pick(self.Gpp_conj, 2)), pick(self.R, 2)


class SingleShiftCouplings:
    """Couplings for a batch where entry b shifts only atom ``atoms[b]``.

    G'' differs from G only in row and column atoms[b], and G' only in that
    column, so every product is the shared unshifted product plus an O(N)
    correction.  Memory and work scale as B*N instead of B*N^2.
    """

    def __init__(self, array: AtomArray, atoms, offsets, drive: DriveSpec, gamma: float = GAMMA):
        pos = array.positions
        q = array.orientations
        atoms = np.asarray(atoms, dtype=int)
        offsets = np.asarray(offsets, dtype=float).reshape(len(atoms), 3)
        self.n = len(pos)
        self.batch_shape = (len(atoms),)
        self.atoms = atoms
        self.G = greens(pos[:, None], pos[None, :], q[:, None], q[None, :], gamma)
        self.Gc = np.conj(self.G)
        self.R0 = 2.0 * self.G.real
        moved = pos[atoms] + offsets                      # (B, 3)
        primed = np.broadcast_to(pos, (len(atoms),) + pos.shape).copy()
        primed[np.arange(len(atoms)), atoms] = moved
        qj = q[atoms][:, None, :]
        # column j of G'': g(r'_i - r'_j); row j: g(r'_j - r'_i)
        col = greens(primed, moved[:, None, :], q[None], qj, gamma)
        row = greens(moved[:, None, :], primed, qj, q[None], gamma)
        self.dcol_conj = np.conj(col - self.G[:, atoms].T)
        self.drow_conj = np.conj(row - self.G[atoms, :])
        rcol = 2.0 * greens(pos[None], moved[:, None, :], q[None], qj, gamma).real
        self.dR = rcol - self.R0[:, atoms].T
        spatial = drive.spatial(pos)
        self.omega = spatial
        self.omega_primed = drive.spatial(primed)
        self._rows = np.arange(len(atoms))

    def _xj(self, x):
        return x[self._rows, self.atoms]

    def G_vec(self, x):
        return x @ self.G.T

    def Gpp_conj_vec(self, x):
        out = x @ self.Gc.T
        out += self.dcol_conj * self._xj(x)[:, None]
        out[self._rows, self.atoms] += (self.drow_conj * x).sum(axis=1)
        return out

    def G_left(self, rho):
        return self.G @ rho

    def Gpp_conj_right(self, rho):
        out = rho @ self.Gc
        out[self._rows, :, self.atoms] += np.einsum("bim,bm->bi", rho, self.dcol_conj)
        out += rho[self._rows, :, self.atoms][:, :, None] * self.drow_conj[:, None, :]
        return out

    def R_form(self, x, y):
        return np.einsum("bi,bi->b", x, y @ self.R0.T) + (x * self.dR).sum(axis=1) * self._xj(y)

    def R_trace(self, rho):
        base = (rho * self.R0).sum(axis=(-2, -1))
        return base + np.einsum("bi,bi->b", rho[self._rows, :, self.atoms], self.dR)

    def dense(self, index):
        j = self.atoms[index]
        Gpp_c = self.Gc.copy()
        Gpp_c[:, j] += self.dcol_conj[index]
        Gpp_c[j, :] += self.drow_conj[index]
        R = self.R0.copy()
        R[:, j] += self.dR[index]
        return self.G, np.conj(Gpp_c), R


def single_atom_shifts(configs: Sequence[ShiftedConfiguration]):
    """(atoms, offsets) if every config shares one base and moves at most one atom."""
    base = configs[0].base
    atoms, offsets = [], []
    for cfg in configs:
        if cfg.base is not base:
            return None
        moved = np.flatnonzero(np.any(cfg.offsets != 0, axis=1))
        if len(moved) > 1:
            return None
        j = int(moved[0]) if len(moved) else 0
        atoms.append(j)
        offsets.append(cfg.offsets[j])
    return np.array(atoms), np.array(offsets)


def couplings_for(configs, drive: DriveSpec, gamma: float = GAMMA, structured: bool = True):
    """Coupling operators for one configuration or a list of them (batched)."""
    single = isinstance(configs, ShiftedConfiguration)
    cfgs = [configs] if single else list(configs)
    shifts = single_atom_shifts(cfgs) if (structured and not single) else None
    if shifts is not None:
        return SingleShiftCouplings(cfgs[0].base, shifts[0], shifts[1], drive, gamma)
    mats = [_dense_matrices(c, gamma) for c in cfgs]
    G, Gpp, Gmix = (np.stack(m) for m in zip(*mats))
    omega = np.stack([drive.spatial(c.positions) for c in cfgs])
    omega_p = np.stack([drive.spatial(c.primed) for c in cfgs])
    if single:
        G, Gpp, Gmix, omega, omega_p = G[0], Gpp[0], Gmix[0], omega[0], omega_p[0]
    return DenseCouplings(G, Gpp, Gmix, omega, omega_p)


def _dense_matrices(cfg: ShiftedConfiguration, gamma):
    pos, pri, q = cfg.positions, cfg.primed, cfg.base.orientations
    g = lambda a, b: greens(a[:, None], b[None, :], q[:, None], q[None, :], gamma)  # noqa: E731
    return g(pos, pos), g(pri, pri), g(pos, pri)


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class CoefficientState:
    """Coefficient blocks of the single-excitation density matrix.

    In "full" mode ``rho`` holds rho_{e_i e_j}.  In "pure" mode the excited
    block is kept factorised as rho = x y^T + w wt^T / rho_gg, which is exact
    for an undriven pure excitation and for a weakly driven ground state.
    """

    rho_gg: np.ndarray
    w: np.ndarray
    wt: np.ndarray
    rho: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    t: float = 0.0

    @property
    def mode(self) -> str:
        return "full" if self.rho is not None else "pure"

    @property
    def n(self) -> int:
        return self.w.shape[-1]

    @property
    def batch_shape(self):
        return np.shape(self.rho_gg)

    @property
    def rho_tilde(self) -> np.ndarray:
        if self.rho is not None:
            return self.rho
        out = self.x[..., :, None] * self.y[..., None, :]
        return out + _ratio_outer(self.w, self.wt, self.rho_gg)

    @property
    def populations(self) -> np.ndarray:
        """Diagonal rho_ii (complex away from coincidence)."""
        if self.rho is not None:
            return np.diagonal(self.rho, axis1=-2, axis2=-1).copy()
        return self.x * self.y + _ratio_diag(self.w, self.wt, self.rho_gg)

    @property
    def excited_population(self) -> np.ndarray:
        return self.populations.sum(axis=-1)

    def trace(self) -> np.ndarray:
        return self.rho_gg + self.excited_population

    def broadcast(self, batch_shape) -> "CoefficientState":
        batch_shape = tuple(batch_shape)
        b = lambda a, extra: None if a is None else np.broadcast_to(  # noqa: E731
            a, batch_shape + a.shape[a.ndim - extra:]).astype(complex, copy=True)
        return replace(self, rho_gg=b(np.asarray(self.rho_gg), 0), w=b(self.w, 1), wt=b(self.wt, 1),
                       rho=b(self.rho, 2), x=b(self.x, 1), y=b(self.y, 1))

    def as_full(self) -> "CoefficientState":
        if self.rho is not None:
            return self
        return replace(self, rho=self.rho_tilde, x=None, y=None)

    def as_pure(self, tol: float = 1e-10) -> "CoefficientState":
        """Factorised form; only ground states and pure single excitations qualify."""
        if self.rho is None:
            return self
        if self.batch_shape:
            raise UnsupportedStateError("convert unbatched states to pure form")
        rho = np.asarray(self.rho)
        scale = max(np.abs(rho).max(), np.abs(self.w).max(), np.abs(self.wt).max(), 1e-300)
        zero = np.zeros(self.n, dtype=complex)
        if np.abs(rho).max() <= tol and np.abs(self.w).max() <= tol and np.abs(self.wt).max() <= tol:
            return replace(self, rho=None, x=zero, y=zero.copy())
        if np.abs(self.w).max() > tol * scale or np.abs(self.wt).max() > tol * scale:
            raise UnsupportedStateError("coherences present: not a ground or pure excited state")
        u, s, vh = np.linalg.svd(rho)
        if len(s) > 1 and s[1] > tol * s[0]:
            raise UnsupportedStateError("mixed excited state cannot be factorised")
        return replace(self, rho=None, x=u[:, 0] * np.sqrt(s[0]), y=vh[0] * np.sqrt(s[0]))


def _ratio_outer(w, wt, rho_gg):
    rgg = np.asarray(rho_gg)
    safe = np.where(rgg == 0, 1.0, rgg)
    out = w[..., :, None] * wt[..., None, :] / safe[..., None, None]
    return np.where((rgg == 0)[..., None, None], 0.0, out)


def _ratio_diag(w, wt, rho_gg):
    rgg = np.asarray(rho_gg)
    safe = np.where(rgg == 0, 1.0, rgg)
    return np.where((rgg == 0)[..., None], 0.0, w * wt / safe[..., None])


def ground_state(n: int, mode: str = "full") -> CoefficientState:
    zero = np.zeros(n, dtype=complex)
    if mode == "full":
        return CoefficientState(np.complex128(1.0), zero, zero.copy(), rho=np.zeros((n, n), complex))
    return CoefficientState(np.complex128(1.0), zero, zero.copy(), x=zero.copy(), y=zero.copy())


def pure_excitation(amplitudes, mode: str = "full") -> CoefficientState:
    """rho = c c^dagger for a normalised single-excitation amplitude vector c."""
    c = np.asarray(amplitudes, dtype=complex)
    c = c / np.linalg.norm(c)
    zero = np.zeros(len(c), dtype=complex)
    if mode == "full":
        return CoefficientState(np.complex128(0.0), zero, zero.copy(), rho=np.outer(c, c.conj()))
    return CoefficientState(np.complex128(0.0), zero, zero.copy(), x=c, y=c.conj())


def init_eigenstate(modes, beta: int, mode: str = "full") -> CoefficientState:
    """rho = N_b V_b V_b^dagger with N_b = 1 / sum_i |V_ib|^2 (unit excitation)."""
    if not 0 <= beta < len(modes):
        raise IndexError(f"mode index {beta} out of range for {len(modes)} modes")
    return pure_excitation(modes.vectors[:, beta], mode)


# ---------------------------------------------------------------------------
# right-hand sides


def _drive_terms(cp, drive: DriveSpec, t):
    amp = drive.temporal(t)
    return amp * cp.omega, amp * cp.omega_primed


def _rhs_full(t, y, cp, drive):
    rgg, w, wt, rho = y
    om, omp = _drive_terms(cp, drive, t)
    d = drive.detuning
    rgg_ = rgg[..., None]
    dw = -0.5j * om * rgg_ + 1j * d * w - cp.G_vec(w)
    dwt = 0.5j * np.conj(omp) * rgg_ - 1j * d * wt - cp.Gpp_conj_vec(wt)
    drho = (-0.5j * om[..., :, None] * wt[..., None, :]
            + 0.5j * w[..., :, None] * np.conj(omp)[..., None, :]
            - cp.G_left(rho) - cp.Gpp_conj_right(rho))
    drgg = (cp.R_trace(rho)
            - 0.5j * (np.conj(om) * w).sum(axis=-1)
            + 0.5j * (omp * wt).sum(axis=-1))
    return drgg, dw, dwt, drho


def _rhs_pure(t, y, cp, drive):
    rgg, w, wt, x, yy = y
    om, omp = _drive_terms(cp, drive, t)
    d = drive.detuning
    rgg_ = rgg[..., None]
    dw = -0.5j * om * rgg_ + 1j * d * w - cp.G_vec(w)
    dwt = 0.5j * np.conj(omp) * rgg_ - 1j * d * wt - cp.Gpp_conj_vec(wt)
    dx = -cp.G_vec(x)
    dy = -cp.Gpp_conj_vec(yy)
    safe = np.where(rgg == 0, 1.0, rgg)
    coh = np.where(rgg == 0, 0.0, cp.R_form(w, wt) / safe)
    drgg = (cp.R_form(x, yy) + coh
            - 0.5j * (np.conj(om) * w).sum(axis=-1)
            + 0.5j * (omp * wt).sum(axis=-1))
    return drgg, dw, dwt, dx, dy


def coefficient_rhs(state: CoefficientState, t: float, drive: DriveSpec, couplings) -> CoefficientState:
    """Time derivative of every coefficient block (same layout as ``state``)."""
    if state.n != couplings.n:
        raise ValueError(f"state has {state.n} atoms but couplings have {couplings.n}")
    if state.mode == "full":
        d = _rhs_full(t, _pack(state), couplings, drive)
        return CoefficientState(d[0], d[1], d[2], rho=d[3], t=t)
    d = _rhs_pure(t, _pack(state), couplings, drive)
    return CoefficientState(d[0], d[1], d[2], x=d[3], y=d[4], t=t)


def _pack(state):
    if state.mode == "full":
        return (np.asarray(state.rho_gg, complex), state.w, state.wt, state.rho)
    return (np.asarray(state.rho_gg, complex), state.w, state.wt, state.x, state.y)


def _unpack(y, t, mode):
    if mode == "full":
        return CoefficientState(y[0], y[1], y[2], rho=y[3], t=t)
    return CoefficientState(y[0], y[1], y[2], x=y[3], y=y[4], t=t)


# ---------------------------------------------------------------------------
# propagation


@dataclass(frozen=True)
class StopCondition:
    """When to end a propagation.

    kind "decay": after the drive has ended, stop once the excited population
    falls below ``eps`` or ``t_max`` is reached; with ``tail`` the remaining
    emission is added in closed form.  kind "steady": stop once the relative
    rate of change of the coherences drops below ``steady_tol`` (or at
    ``t_max``).  kind "horizon": stop at ``t_max``.

    With ``hold_ground`` rho_gg is kept at its initial value while the other
    blocks relax, and d rho_gg/dt is only read out.  Away from coincidence a
    free-running rho_gg picks up a phase at a rate proportional to the shift,
    and the lag of the coherences behind it contaminates second differences
    at O(shift^2), i.e. at the same order as the kinetic-energy signal.
    """

    kind: str = "decay"
    t_max: float = 200.0
    eps: float = DEFAULT_EPS_DECAY
    steady_tol: float = 1e-9
    tail: bool = True
    check_every: int = 50
    hold_ground: bool = False

    def __post_init__(self):
        if self.kind not in ("decay", "steady", "horizon"):
            raise InvalidArgument(f"unknown stop condition {self.kind!r}")


@dataclass
class Trajectory:
    t: np.ndarray
    rho_gg: np.ndarray
    populations: np.ndarray


@dataclass
class PropagationResult:
    state: CoefficientState
    rho_gg_final: np.ndarray
    tail: np.ndarray
    steps: int
    trajectory: Optional[Trajectory] = None
    rho_gg_rate: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)


def rk2_step(rhs, t, y, dt):
    """Explicit midpoint rule on a tuple of arrays."""
    k1 = rhs(t, y)
    mid = tuple(a + 0.5 * dt * b for a, b in zip(y, k1))
    k2 = rhs(t + 0.5 * dt, mid)
    return tuple(a + dt * b for a, b in zip(y, k2))


def propagate(state0: CoefficientState, drive: DriveSpec, configs, dt: float = DEFAULT_DT,
              stop: StopCondition = StopCondition(), sample_every: Optional[int] = None,
              t0: Optional[float] = None, couplings=None) -> PropagationResult:
    """Integrate the coefficient equations with fixed-step midpoint RK2.

    ``configs`` is one :class:`ShiftedConfiguration` or a sequence of them; the
    initial state is broadcast over the batch.  The integration starts at the
    drive's natural origin (-5 widths for a pulse, 0 otherwise) unless ``t0``
    is given.
    """
    if not dt > 0:
        raise InvalidArgument("time step must be positive")
    cp = couplings if couplings is not None else couplings_for(configs, drive)
    state = state0.broadcast(cp.batch_shape)
    mode = state.mode
    rhs_fn = _rhs_full if mode == "full" else _rhs_pure
    rhs = lambda t, y: rhs_fn(t, y, cp, drive)  # noqa: E731
    step_rhs = rhs
    if stop.hold_ground:
        def step_rhs(t, y):
            d = rhs(t, y)
            return (np.zeros_like(d[0]),) + d[1:]
    t = t_start = drive.start_time() if t0 is None else float(t0)
    t_off = drive.end_time()
    y = _pack(state)
    samples_t, samples_g, samples_p = [], [], []

    def sample(t, y):
        st = _unpack(y, t, mode)
        samples_t.append(t)
        samples_g.append(np.array(st.rho_gg))
        samples_p.append(st.populations)

    steps = 0
    n_max = int(np.ceil((stop.t_max - t) / dt - 1e-9))
    if sample_every:
        sample(t, y)
    # overflow is reported as InstabilityError by the finiteness checks
    with np.errstate(over="ignore", invalid="ignore"):
        while steps < n_max:
            y = rk2_step(step_rhs, t, y, dt)
            steps += 1
            t = t_start + steps * dt
            if sample_every and steps % sample_every == 0:
                sample(t, y)
            if steps % stop.check_every == 0 or steps == n_max:
                if not all(np.all(np.isfinite(a)) for a in y):
                    raise InstabilityError(f"non-finite coefficients at t={t:.6g} with dt={dt:g}", t=t, dt=dt)
                if stop.kind == "decay" and t >= t_off:
                    if np.abs(_unpack(y, t, mode).excited_population).max() < stop.eps:
                        break
                elif stop.kind == "steady":
                    # away from coincidence a free rho_gg keeps growing linearly and
                    # the coherences follow it, so test them relative to rho_gg
                    # (with a held ground state step_rhs has d rho_gg = 0)
                    d = step_rhs(t, y)
                    g = y[0][..., None]
                    drift_w = np.abs(d[1] - y[1] * d[0][..., None] / g).max()
                    drift_wt = np.abs(d[2] - y[2] * d[0][..., None] / g).max()
                    scale = max(np.abs(y[1]).max(), np.abs(y[2]).max(), 1e-300)
                    if max(drift_w, drift_wt) < stop.steady_tol * scale:
                        break
    final = _unpack(y, t, mode)
    if not all(np.all(np.isfinite(a)) for a in y):
        raise InstabilityError(f"non-finite coefficients at t={t:.6g} with dt={dt:g}", t=t, dt=dt)
    tail = np.zeros(cp.batch_shape, dtype=complex)
    if stop.kind == "decay" and stop.tail and t >= t_off:
        tail = emission_tail(final, cp)
    traj = None
    if sample_every:
        traj = Trajectory(np.array(samples_t), np.array(samples_g), np.array(samples_p))
    rate = rhs(t, y)[0]
    return PropagationResult(final, np.asarray(final.rho_gg) + tail, tail, steps, traj, rate,
                             {"t_final": t, "dt": dt, "mode": mode})


def emission_tail(state: CoefficientState, cp) -> np.ndarray:
    """Ground-state population still to arrive once the drive is off.

    With no drive the excited block obeys d rho/dt = -G rho - rho G''*, so
    int_T^inf rho dt = X with G X + X G''* = rho(T), and the tail is
    sum_ij 2 Re G'_ij X_ij.
    """
    rho = state.rho_tilde
    batch = np.shape(state.rho_gg)
    out = np.zeros(batch, dtype=complex)
    for idx in np.ndindex(*batch) if batch else [()]:
        G, Gpp, R = cp.dense(idx)
        r = rho[idx]
        if not np.any(r):
            continue
        X = solve_sylvester(G, np.conj(Gpp), r)
        out[idx] = (R * X).sum()
    return out


def pure_state_fast_path(state0: CoefficientState, drive: DriveSpec, configs, dt: float = DEFAULT_DT,
                         stop: StopCondition = StopCondition(), sample_every: Optional[int] = None,
                         t0: Optional[float] = None) -> PropagationResult:
    """Propagate with the excited block kept factorised (O(N^2) per step)."""
    if drive.rabi > 0.05 * GAMMA and not drive.is_off:
        log.warning("fast path is accurate only for weak drive; rabi=%g", drive.rabi)
    return propagate(state0.as_pure(), drive, configs, dt, stop, sample_every, t0)
