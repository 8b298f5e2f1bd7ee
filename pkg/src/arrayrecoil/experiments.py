"""Experiment runners behind the command line.

Each runner takes a :class:`RunConfig` and an :class:`Output` sink, writes its
tables and heatmaps, and returns a JSON-able summary for the manifest.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import replace
from typing import Callable, Optional

import numpy as np

from .analytic import eigenstate_rho0, kz_closed_form
from .config import RunConfig
from .eigenmodes import decompose, drive_overlap, mode_contribution, most_subradiant
from .errors import InvalidArgument
from .evolution import DriveSpec, ShiftedConfiguration, ground_state, init_eigenstate, propagate, pure_excitation
from .geometry import AtomArray
from .greens import assemble_greens
from .observables import (
    adaptive_finesse, cavity_intensity, edge_mask, excitation_integral, fwhm, peak_detuning, photon_flux,
    pulse_photons, reflectance, total_scattering,
)
from .recoil import (
    EigenDecayEvaluator, PropagationEvaluator, RecoilResult, SteadyStateEvaluator, recoil_map, richardson_check,
)

log = logging.getLogger(__name__)

FLOAT_FMT = "{:.10e}"


class Output:
    """Writes files into one run directory and remembers what it wrote."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def _record(self, name):
        if name not in self.files:
            self.files.append(name)

    def csv(self, name: str, header, rows, append: bool = False):
        p = self.path(name)
        new = not (append and os.path.exists(p))
        with open(p, "w" if new else "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self._record(name)

    def json(self, name: str, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")
        self._record(name)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def heatmap(array: AtomArray, values: np.ndarray, quantity: str, mirror: Optional[int] = None) -> dict:
    """Per-atom values placed on the (row, col) lattice; missing sites are null."""
    lat = array.lattice
    sel = np.ones(len(array), bool) if mirror is None else lat[:, 0] == mirror
    rows, cols = lat[sel, -2], lat[sel, -1]
    shape = (int(lat[:, -2].max()) + 1, int(lat[:, -1].max()) + 1)
    grid: list[list] = [[None] * shape[1] for _ in range(shape[0])]
    for r, c, v in zip(rows, cols, np.asarray(values)[sel]):
        grid[int(r)][int(c)] = float(v)
    out = {"quantity": quantity, "shape": list(shape), "values": grid}
    if mirror is not None:
        out["mirror"] = int(mirror)
    return out


def write_recoil(out: Output, array: AtomArray, result: RecoilResult, scale: float = 1.0, name: str = "recoil"):
    """Per-atom CSV (index, lattice, dp, dK) and one heatmap per axis; values divided by ``scale``."""
    dp = result.momentum / scale
    dK = result.energy / scale
    lat_cols = ["mirror", "row", "col"][-array.lattice.shape[1]:]
    header = ["atom"] + lat_cols + ["dp_x", "dp_y", "dp_z", "dK_x", "dK_y", "dK_z", "dK_total"]
    rows = []
    for a, lat, p, k in zip(result.atoms, result.lattice, dp, dK):
        rows.append([int(a)] + [int(x) for x in lat] + list(p) + list(k) + [k.sum()])
    out.csv(f"{name}.csv", header, rows)
    mirrors = [None] if array.lattice.shape[1] == 2 else sorted(set(array.lattice[:, 0].tolist()))
    maps = []
    sub = _subset(array, result.atoms)
    for m in mirrors:
        for i, ax in enumerate("xyz"):
            maps.append(heatmap(sub, dK[:, i], f"dK_{ax}", m))
            maps.append(heatmap(sub, dp[:, i], f"dp_{ax}", m))
        maps.append(heatmap(sub, dK.sum(axis=1), "dK_total", m))
    out.json(f"{name}_heatmaps.json", {"mode": result.mode, "dr": result.dr, "scale": scale, "maps": maps})


def _subset(array, atoms):
    if len(atoms) == len(array):
        return array
    return replace(array, positions=array.positions[atoms], orientations=array.orientations[atoms],
                   lattice=array.lattice[atoms])


def _center_atom(array: AtomArray) -> int:
    r = np.linalg.norm(array.positions[:, :2], axis=1) + 1e-9 * array.positions[:, 2]
    return int(np.argmin(r))


def _richardson(cfg: RunConfig, ev, atom: int) -> dict:
    if not cfg.numerics.richardson:
        return {}
    rep = richardson_check(ev, atom, "z", cfg.numerics.dr)
    if rep.flagged:
        log.warning("finite-difference step not converged: %s", rep)
    return {"richardson": {"atom": atom, "axis": "z", "values": rep.values.tolist(),
                           "extrapolated": rep.extrapolated, "order": rep.observed_order, "flagged": rep.flagged}}


def _modes(array):
    return decompose(assemble_greens(array.positions, array.positions, array.orientations))


def _fit_line(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(intercept)


# ---------------------------------------------------------------------------


def run_eigenmodes(cfg: RunConfig, out: Output) -> dict:
    array = cfg.geometry.build()
    modes = _modes(array)
    n = len(array)
    overlap = np.abs(drive_overlap(modes, np.ones(n))) ** 2 / n
    ev = EigenDecayEvaluator(array, np.array([eigenstate_rho0(modes, b) for b in range(n)]),
                             threads=cfg.numerics.threads)
    rec = recoil_map(ev, dr=cfg.numerics.dr)
    totals = rec.energy.sum(axis=0).real          # (3, n_modes)
    rows = []
    for b in range(n):
        rows.append([b, modes.gamma[b], modes.shift[b], kz_closed_form(modes.gamma[b]),
                     totals[0, b], totals[1, b], totals[2, b], totals[:, b].sum(), overlap[b]])
    out.csv("modes.csv", ["mode", "gamma", "shift", "dK_z_closed_form", "dK_x", "dK_y", "dK_z", "dK_total",
                          "uniform_overlap"], rows)
    maps = [heatmap(array, modes.excitation_weights(b), f"mode_{b}_weight") for b in range(min(n, 16))]
    out.json("mode_patterns.json", {"maps": maps})
    slope, intercept = _fit_line(1.0 / modes.gamma, totals[2])
    return {"n_modes": n, "slope_dKz_vs_inverse_gamma": slope, "intercept": intercept,
            "most_subradiant_gamma": float(modes.gamma.min())}


def _initial(cfg: RunConfig, array: AtomArray, modes=None):
    """(description, density block or None, state) for the decay experiment."""
    ini = cfg.initial
    n = len(array)
    if ini.kind == "ground":
        return "ground", np.zeros((n, n), complex), ground_state(n)
    if ini.kind == "atom":
        if not 0 <= ini.atom < n:
            raise InvalidArgument(f"atom index {ini.atom} out of range")
        c = np.zeros(n, complex)
        c[ini.atom] = 1.0
        return f"atom {ini.atom}", np.outer(c, c), pure_excitation(c)
    modes = modes if modes is not None else _modes(array)
    b = most_subradiant(modes) if ini.mode == "most_subradiant" else int(ini.mode)
    if not 0 <= b < n:
        raise InvalidArgument(f"mode index {b} out of range")
    return f"mode {b}", eigenstate_rho0(modes, b), init_eigenstate(modes, b)


def run_decay(cfg: RunConfig, out: Output) -> dict:
    array = cfg.geometry.build()
    modes = _modes(array) if cfg.initial.kind == "eigenstate" else None
    label, rho0, state0 = _initial(cfg, array, modes)
    num = cfg.numerics
    if num.evaluator == "analytic":
        ev = EigenDecayEvaluator(array, rho0, threads=num.threads)
    else:
        drive = cfg.drive.build()
        ev = PropagationEvaluator(array, state0, drive, num.dt, num.stop("decay"), fast=num.fast)
    rec = recoil_map(ev, dr=num.dr)
    write_recoil(out, array, rec)
    summary = {"initial": label, "total_energy": float(rec.energy.sum()),
               "total_momentum": rec.momentum.sum(axis=0).tolist()}
    if modes is not None:
        b = int(label.split()[1])
        summary.update(gamma=float(modes.gamma[b]), shift=float(modes.shift[b]),
                       dK_z_closed_form=kz_closed_form(modes.gamma[b]))
    c = _center_atom(array)
    summary["center_atom"] = {"index": c, "dK": rec.energy[list(rec.atoms).index(c)].tolist()}
    summary.update(_richardson(cfg, ev, c))
    return summary


def run_pulse(cfg: RunConfig, out: Output) -> dict:
    array = cfg.geometry.build()
    drive = cfg.drive.build()
    if drive.profile != "gaussian":
        raise InvalidArgument("pulse experiment needs a gaussian drive")
    num = cfg.numerics
    n = len(array)
    mode = "pure" if num.fast else "full"
    base = propagate(ground_state(n, mode), drive, ShiftedConfiguration(array), num.dt,
                     num.stop("decay", tail=False), sample_every=num.sample_every)
    exc = excitation_integral(base.trajectory)
    out.json("excitation.json", heatmap(array, exc, "excitation_integral"))
    ev = PropagationEvaluator(array, ground_state(n, mode), drive, num.dt, num.stop("decay"), fast=num.fast)
    rec = recoil_map(ev, dr=num.dr)
    photons = pulse_photons(array.spacing, drive)
    write_recoil(out, array, rec, scale=photons, name="recoil_per_photon")
    kz = rec.energy[:, 2] / photons
    corners = _corner_atoms(array)
    return {"photons_per_atom": photons, "max_dK_z_per_photon": float(kz.max()),
            "corner_to_max_dK_z": float(kz[corners].mean() / kz.max()),
            "recoil_excitation_correlation": float(np.corrcoef(rec.energy.sum(axis=1), exc)[0, 1])}


def _corner_atoms(array):
    lat = array.lattice[:, -2:]
    lo, hi = lat.min(axis=0), lat.max(axis=0)
    at_r = (lat[:, 0] == lo[0]) | (lat[:, 0] == hi[0])
    at_c = (lat[:, 1] == lo[1]) | (lat[:, 1] == hi[1])
    return np.flatnonzero(at_r & at_c)


def run_steady(cfg: RunConfig, out: Output) -> dict:
    array = cfg.geometry.build()
    num = cfg.numerics
    det = cfg.drive.detuning
    if det == "peak":
        det = peak_detuning(array, cfg.drive.rabi or 1e-2)
    drive = cfg.drive.build(detuning=det)
    if drive.profile != "cw":
        raise InvalidArgument("steady experiment needs a cw drive")
    if num.evaluator == "analytic":
        ev = SteadyStateEvaluator(array, drive, threads=num.threads)
    else:
        ev = PropagationEvaluator(array, ground_state(len(array), "pure" if num.fast else "full"), drive, num.dt,
                                  num.stop("steady"), kind="rate")
    rec = recoil_map(ev, dr=num.dr)
    flux = photon_flux(array.spacing, drive.rabi)
    write_recoil(out, array, rec, scale=flux, name="recoil_per_photon")
    refl = reflectance(rec, flux)
    out.csv("reflectance.csv", ["atom", "row", "col", "reflectance"],
            [[int(a), int(l[-2]), int(l[-1]), r] for a, l, r in zip(rec.atoms, rec.lattice, refl.per_atom)])
    per_photon = rec.energy.sum(axis=1) / flux
    return {"detuning": float(det), "flux": flux, "reflectance": refl.average,
            "reflectance_inner": refl.inner_average,
            "energy_per_photon": {"mean": float(per_photon.mean()), "min": float(per_photon.min()),
                                  "max": float(per_photon.max())},
            "momentum_z_per_photon": float(rec.momentum[:, 2].mean() / flux)}


def run_cavity(cfg: RunConfig, out: Output) -> dict:
    g = cfg.geometry
    if g.kind != "cavity":
        raise InvalidArgument("cavity experiment needs geometry kind 'cavity'")
    spec = g.cavity_spec()
    array = g.build()
    modes = _modes(array)
    b = most_subradiant(modes)
    sweep = adaptive_finesse(spec, float(modes.shift[b]), rabi=cfg.drive.rabi or 1e-3)
    out.csv("finesse.csv", ["separation", "intensity"], zip(sweep.separations, sweep.intensity))
    ev = EigenDecayEvaluator(array, eigenstate_rho0(modes, b), threads=cfg.numerics.threads)
    rec = recoil_map(ev, dr=cfg.numerics.dr)
    write_recoil(out, array, rec)
    c = _center_atom(array)
    corners = _corner_atoms(array)
    return {"most_subradiant": {"index": b, "gamma": float(modes.gamma[b]), "shift": float(modes.shift[b])},
            "finesse": sweep.finesse, "fwhm": sweep.fwhm, "peak_separation": sweep.peak,
            "center_atom_dK": rec.energy[c].tolist(), "corner_atom_dK_total": float(rec.energy[corners].sum(1).mean()),
            "total_energy": float(rec.energy.sum())}


# ---------------------------------------------------------------------------
# sweeps


def _apply_point(cfg: RunConfig, names, values) -> RunConfig:
    geo, drv = cfg.geometry, cfg.drive
    for name, v in zip(names, values):
        if name == "detuning":
            drv = replace(drv, detuning=v)
        elif name == "rabi":
            drv = replace(drv, rabi=v)
        elif name == "spacing":
            geo = replace(geo, spacing=v)
        elif name == "separation":
            if geo.kind != "cavity":
                raise InvalidArgument("separation sweeps need a cavity geometry")
            geo = replace(geo, cavity=dict(geo.cavity, separation=v))
    return replace(cfg, geometry=geo, drive=drv)


def _sweep_point(cfg: RunConfig, quantity: str, context: dict) -> list[tuple[int, float]]:
    if quantity == "mode_contribution":
        modes = context["modes"]
        w = mode_contribution(modes, context["drive_vector"], float(cfg.drive.detuning))
        return [(int(b), float(w[b])) for b in context["selected"]]
    if quantity == "cavity_intensity":
        spec = cfg.geometry.cavity_spec()
        det = context.get("cavity_detuning") if cfg.drive.detuning == "peak" else float(cfg.drive.detuning)
        return [(-1, cavity_intensity(spec, det, cfg.drive.rabi or 1e-3))]
    array = cfg.geometry.build()
    rabi = cfg.drive.rabi or 1e-2
    if quantity == "scattering":
        return [(-1, total_scattering(array, rabi, float(cfg.drive.detuning)))]
    drive = replace(cfg.drive, rabi=rabi, profile="cw").build()
    rec = recoil_map(SteadyStateEvaluator(array, drive), dr=cfg.numerics.dr)
    refl = reflectance(rec, photon_flux(array.spacing, rabi))
    return [(0, refl.average), (1, refl.inner_average if refl.inner_average is not None else np.nan)]


def run_sweep(cfg: RunConfig, out: Output, completed: set, checkpoint: Callable[[int], None]) -> dict:
    sw = cfg.sweep
    if sw is None:
        raise InvalidArgument("sweep experiment needs a 'sweep' block")
    names = [a.name for a in sw.axes]
    points = sw.points()
    context: dict = {}
    if sw.quantity == "mode_contribution":
        if names != ["detuning"]:
            raise InvalidArgument("mode contributions are swept over detuning only")
        array = cfg.geometry.build()
        modes = _modes(array)
        vec = DriveSpec(1.0, 0.0, "cw").spatial(array.positions)
        peak = np.abs(drive_overlap(modes, vec)) ** 2 / np.abs(modes.values.real) ** 2
        selected = np.sort(np.argsort(peak)[::-1][:sw.modes])
        context.update(modes=modes, drive_vector=vec, selected=selected)
        out.csv("modes.csv", ["mode", "gamma", "shift"],
                [[int(b), modes.gamma[b], modes.shift[b]] for b in selected])
    if sw.quantity == "cavity_intensity" and cfg.drive.detuning == "peak":
        from .observables import subradiant_detuning
        context["cavity_detuning"] = subradiant_detuning(cfg.geometry.cavity_spec())
    header = ["point"] + names + ["quantity", "index", "value"]
    for i, vals in enumerate(points):
        if i in completed:
            continue
        point_cfg = _apply_point(cfg, names, vals)
        rows = [[i, *vals, sw.quantity, idx, v] for idx, v in _sweep_point(point_cfg, sw.quantity, context)]
        out.csv("sweep.csv", header, rows, append=True)
        checkpoint(i)
    summary: dict = {"points": len(points), "axes": names, "quantity": sw.quantity}
    if sw.quantity == "cavity_intensity" and names == ["separation"]:
        data = _read_sweep(out.path("sweep.csv"))
        L = np.array([d[0] for d in data])
        order = np.argsort(L)
        peak, width = fwhm(L[order], np.array([d[1] for d in data])[order])
        summary.update(peak_separation=peak, fwhm=width, finesse=0.5 / width)
    if sw.quantity == "mode_contribution":
        data = np.array(_read_rows(out.path("sweep.csv")), dtype=float)
        peaks = {}
        for b in context["selected"]:
            sel = data[data[:, 2] == b]
            peaks[int(b)] = {"peak_detuning": float(sel[np.argmax(sel[:, 3]), 1]),
                             "shift": float(context["modes"].shift[b])}
        summary["mode_peaks"] = peaks
    return summary


def _read_rows(path):
    with open(path) as fh:
        r = csv.reader(fh)
        next(r)
        return [[row[0], row[1], row[-2], row[-1]] for row in r]


def _read_sweep(path):
    return [(float(r[1]), float(r[3])) for r in _read_rows(path)]


RUNNERS = {
    "eigenmodes": run_eigenmodes,
    "decay": run_decay,
    "pulse": run_pulse,
    "steady": run_steady,
    "cavity": run_cavity,
}
