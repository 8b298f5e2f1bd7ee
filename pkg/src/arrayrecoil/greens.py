"""Free-space dipole-dipole coupling g(r) and coupling matrices.

g(r_ij) = (Gamma/2) [ (3 (r.q_i)(r.q_j*) - q_i.q_j*)/2 h2(k r) + q_i.q_j* h0(k r) ]

with outgoing spherical Hankel functions h_l = j_l + i y_l.  At coincidence
only the real part is defined and the matrix element is (Gamma/2) q_i.q_j*.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .units import GAMMA, K

COINCIDENCE_TOL = 1e-9

_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 14


def spherical_hankel(order: int, x):
    """Outgoing spherical Hankel function h_order^(1)(x) for order 0 or 2."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("spherical Hankel function needs x > 0")
    return spherical_jn(order, x) + 1j * spherical_yn(order, x)


def spherical_jn(order: int, x):
    x = np.asarray(x, dtype=float)
    if order == 0:
        return np.sinc(x / np.pi)
    if order != 2:
        raise ValueError("only orders 0 and 2 are needed")
    small = x < _SERIES_CUTOFF
    out = np.empty_like(x)
    xs = x[small]
    out[small] = _j2_series(xs)
    xl = x[~small]
    out[~small] = (3.0 / xl**3 - 1.0 / xl) * np.sin(xl) - 3.0 * np.cos(xl) / xl**2
    return out


def spherical_yn(order: int, x):
    x = np.asarray(x, dtype=float)
    if order == 0:
        return -np.cos(x) / x
    if order != 2:
        raise ValueError("only orders 0 and 2 are needed")
    return -(3.0 / x**3 - 1.0 / x) * np.cos(x) - 3.0 * np.sin(x) / x**2


def _j2_series(x):
    # j_2(x) = x^2 sum_n (-x^2/2)^n / (n! (2n+5)!!); the closed form cancels badly for small x
    term = x**2 / 15.0
    total = term.copy()
    u = -(x**2) / 2.0
    for n in range(1, _SERIES_TERMS):
        term = term * u / (n * (2 * n + 5))
        total += term
    return total


def greens(r_a, r_b, q_a, q_b, gamma: float = GAMMA, k: float = K):
    """Vectorised g between points ``r_a`` and ``r_b`` (broadcast over leading axes)."""
    r_a = np.asarray(r_a, dtype=float)
    r_b = np.asarray(r_b, dtype=float)
    q_a = np.asarray(q_a, dtype=complex)
    q_b = np.asarray(q_b, dtype=complex)
    sep = r_a - r_b
    dist = np.sqrt((sep**2).sum(axis=-1))
    qq = (q_a * q_b.conj()).sum(axis=-1)
    coincident = dist < COINCIDENCE_TOL
    safe = np.where(coincident, 1.0, dist)
    rhat = sep / safe[..., None]
    aa = (rhat * q_a).sum(axis=-1) * (rhat * q_b.conj()).sum(axis=-1)
    x = k * safe
    g = 0.5 * gamma * (0.5 * (3.0 * aa - qq) * spherical_hankel(2, x) + qq * spherical_hankel(0, x))
    g = np.where(coincident, 0.5 * gamma * qq.real, g)
    return g if g.ndim else complex(g)


def greens_scalar(r_a, r_b, q_a, q_b, gamma: float = GAMMA) -> complex:
    return complex(greens(r_a, r_b, q_a, q_b, gamma))


@dataclass(frozen=True, eq=False)
class GreensMatrix:
    """N x N coupling matrix tagged with which coordinate sets built it.

    ``flavor`` is "unprimed" (g(r_i - r_j)), "primed" (g(r'_i - r'_j)) or
    "mixed" (g(r_i - r'_j)).
    """

    entries: np.ndarray
    flavor: str
    left: np.ndarray
    right: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def shape(self):
        return self.entries.shape

    def __len__(self):
        return len(self.entries)


def assemble_greens(coords_left, coords_right, orientations, orientations_right=None,
                    flavor: str | None = None, gamma: float = GAMMA) -> GreensMatrix:
    """Matrix of g(left_i - right_j) over all pairs."""
    left = np.asarray(coords_left, dtype=float).reshape(-1, 3)
    right = np.asarray(coords_right, dtype=float).reshape(-1, 3)
    q = np.asarray(orientations, dtype=complex).reshape(-1, 3)
    qr = q if orientations_right is None else np.asarray(orientations_right, dtype=complex).reshape(-1, 3)
    if not (len(left) == len(right) == len(q) == len(qr)):
        raise ValueError("coordinate sets and orientations must all have length N")
    entries = greens(left[:, None, :], right[None, :, :], q[:, None, :], qr[None, :, :], gamma)
    if flavor is None:
        flavor = "unprimed" if np.array_equal(left, right) else "mixed"
    if flavor not in ("unprimed", "primed", "mixed"):
        raise ValueError(f"unknown flavor {flavor!r}")
    return GreensMatrix(np.asarray(entries, dtype=complex), flavor, left, right)


def coupling_matrices(positions, primed_positions, orientations, gamma: float = GAMMA):
    """(G, G'', G') for unprimed/unprimed, primed/primed and unprimed/primed pairs."""
    G = assemble_greens(positions, positions, orientations, flavor="unprimed", gamma=gamma)
    Gpp = assemble_greens(primed_positions, primed_positions, orientations, flavor="primed", gamma=gamma)
    Gmix = assemble_greens(positions, primed_positions, orientations, flavor="mixed", gamma=gamma)
    return G, Gpp, Gmix
