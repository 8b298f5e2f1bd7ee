"""Eigenmodes of complex-symmetric coupling matrices.

Eigenvalues are written gamma/2 + i*Delta.  Eigenvectors are normalised with
the unconjugated bilinear form, V_a^T V_b = delta_ab, which is the
orthogonality that holds for complex-symmetric (non-Hermitian) matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DefectiveModeError, NumericalFailure

DEGENERACY_TOL = 1e-8
SELF_ORTHOGONAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EigenmodeSet:
    values: np.ndarray
    vectors: np.ndarray
    flavor: str = "unprimed"
    normalized: bool = False

    def __len__(self):
        return len(self.values)

    @property
    def gamma(self) -> np.ndarray:
        """Decay rates gamma_a = 2 Re(eigenvalue)."""
        return 2.0 * self.values.real

    @property
    def shift(self) -> np.ndarray:
        return self.values.imag

    def bilinear_gram(self) -> np.ndarray:
        return self.vectors.T @ self.vectors

    def excitation_weights(self, alpha: int) -> np.ndarray:
        """|V_ia|^2 normalised to unit sum (excitation probability per atom)."""
        p = np.abs(self.vectors[:, alpha]) ** 2
        return p / p.sum()


def decompose(G, normalize: bool = True, degeneracy_tol: float = DEGENERACY_TOL) -> EigenmodeSet:
    """Dense eigendecomposition sorted by increasing decay rate."""
    flavor = getattr(G, "flavor", "unprimed")
    A = np.asarray(G, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("coupling matrix must be square")
    if not np.all(np.isfinite(A)):
        raise NumericalFailure(f"non-finite entries in {flavor} coupling matrix")
    try:
        vals, vecs = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed on {flavor} matrix of size {len(A)}: {exc}") from exc
    order = np.lexsort((np.abs(vals.imag), vals.real))
    modes = EigenmodeSet(vals[order], vecs[:, order], flavor, False)
    if normalize:
        modes = normalize_bilinear(modes, degeneracy_tol * np.linalg.norm(A, 2))
    return modes


def degenerate_clusters(values: np.ndarray, tol: float) -> list[list[int]]:
    """Group indices whose eigenvalues lie within ``tol`` of each other (single linkage)."""
    n = len(values)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    order = np.argsort(values.real)
    for a_pos, a in enumerate(order):
        for b in order[a_pos + 1:]:
            if values[b].real - values[a].real > tol:
                break
            if abs(values[b] - values[a]) < tol:
                parent[find(b)] = find(a)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def normalize_bilinear(modes: EigenmodeSet, tol: float | None = None) -> EigenmodeSet:
    """Scale eigenvectors so V^T V = 1, orthogonalising degenerate clusters.

    Within a cluster a pivoted Gram-Schmidt under the bilinear form is used;
    a vector with v^T v ~ 0 cannot be normalised and raises
    :class:`DefectiveModeError`.
    """
    if tol is None:
        tol = DEGENERACY_TOL * max(np.abs(modes.values).max(), 1.0)
    V = np.array(modes.vectors, dtype=complex)
    for cluster in degenerate_clusters(modes.values, tol):
        V[:, cluster] = _bilinear_gram_schmidt(V[:, cluster], cluster)
    return replace(modes, vectors=V, normalized=True)


def _bilinear_gram_schmidt(block: np.ndarray, cluster) -> np.ndarray:
    remaining = [block[:, i].copy() for i in range(block.shape[1])]
    slots = list(range(block.shape[1]))
    out = np.empty_like(block)
    done = []
    while remaining:
        scores = [abs(v @ v) / max(np.vdot(v, v).real, 1e-300) for v in remaining]
        best = int(np.argmax(scores))
        if scores[best] < SELF_ORTHOGONAL_TOL:
            raise DefectiveModeError(
                f"self-orthogonal eigenvector in degenerate cluster {list(cluster)}", cluster=list(cluster)
            )
        v = remaining.pop(best)
        slot = slots.pop(best)
        u = v / np.sqrt(v @ v)
        out[:, slot] = u
        done.append(u)
        remaining = [r - (u @ r) * u for r in remaining]
    return out


def most_subradiant(modes: EigenmodeSet) -> int:
    """Index of the smallest decay rate, ties broken by smaller |shift|."""
    if len(modes) == 0:
        raise ValueError("empty mode set")
    g = modes.gamma
    candidates = np.flatnonzero(np.isclose(g, g.min(), rtol=0.0, atol=1e-14))
    return int(candidates[np.argmin(np.abs(modes.shift[candidates]))])


def mode_contribution(modes: EigenmodeSet, drive, detuning) -> np.ndarray:
    """Steady-state weight |sum_i Omega_i V_ia / (G_a - i delta)|^2 of each mode.

    ``detuning`` may be a scalar or an array; the result has shape
    ``detuning.shape + (n_modes,)``.
    """
    overlap = np.asarray(drive, dtype=complex) @ modes.vectors
    delta = np.asarray(detuning, dtype=float)
    denom = modes.values - 1j * delta[..., None]
    return np.abs(overlap / denom) ** 2


def drive_overlap(modes: EigenmodeSet, drive) -> np.ndarray:
    return np.asarray(drive, dtype=complex) @ modes.vectors
