import numpy as np
import pytest
from hypothesis import given, strategies as st

from arrayrecoil.eigenmodes import (
    decompose, degenerate_clusters, drive_overlap, mode_contribution, most_subradiant, normalize_bilinear,
)
from arrayrecoil.errors import DefectiveModeError, NumericalFailure
from arrayrecoil.geometry import SIGMA_PLUS, build_planar_array
from arrayrecoil.greens import assemble_greens
from arrayrecoil.units import GAMMA

from oracles import two_atom_modes

lattices = st.tuples(st.integers(1, 5), st.integers(1, 5), st.floats(0.2, 1.2))


def _G(nx, ny, d):
    a = build_planar_array(nx, ny, d)
    return np.asarray(assemble_greens(a.positions, a.positions, a.orientations))


@given(lattices)
def test_bilinear_orthonormality_and_reconstruction(dims):
    G = _G(*dims)
    m = decompose(G)
    n = len(G)
    np.testing.assert_allclose(m.bilinear_gram(), np.eye(n), atol=1e-8)
    np.testing.assert_allclose(m.vectors @ np.diag(m.values) @ m.vectors.T, G, atol=1e-9)


@given(lattices)
def test_rate_and_shift_sum_rules(dims):
    m = decompose(_G(*dims))
    n = len(m)
    assert m.gamma.sum() == pytest.approx(n * GAMMA, rel=1e-10)
    assert abs(m.shift.sum()) < 1e-9 * n
    assert np.all(m.gamma > -1e-10)
    assert np.all(np.diff(m.gamma) >= -1e-12)


@given(st.floats(0.1, 2.0))
def test_dimer_against_closed_form(d):
    a = build_planar_array(2, 1, d)
    m = decompose(assemble_greens(a.positions, a.positions, a.orientations))
    np.testing.assert_allclose(np.sort_complex(m.values), two_atom_modes(d, SIGMA_PLUS), atol=1e-12)


def test_defective_matrix_is_reported():
    # [[1, i], [i, -1]] is nilpotent: a single eigenvector with v^T v = 0
    with pytest.raises(DefectiveModeError) as info:
        decompose(np.array([[1.0, 1j], [1j, -1.0]]))
    assert info.value.cluster == [0, 1]


def test_non_finite_matrix_is_rejected():
    with pytest.raises(NumericalFailure):
        decompose(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        decompose(np.ones((2, 3)))


def test_degenerate_cluster_is_orthogonalised():
    # two copies of the same block give exactly degenerate pairs
    G = _G(2, 2, 0.4)
    big = np.block([[G, np.zeros_like(G)], [np.zeros_like(G), G]])
    m = decompose(big)
    assert any(len(c) == 2 for c in degenerate_clusters(m.values, 1e-10))
    np.testing.assert_allclose(m.bilinear_gram(), np.eye(8), atol=1e-10)
    np.testing.assert_allclose(m.vectors @ np.diag(m.values) @ m.vectors.T, big, atol=1e-10)


def test_normalize_is_idempotent():
    m = decompose(_G(3, 3, 0.5))
    again = normalize_bilinear(m)
    np.testing.assert_allclose(np.abs(again.vectors), np.abs(m.vectors), atol=1e-12)


def test_most_subradiant_and_weights():
    m = decompose(_G(4, 4, 0.3))
    b = most_subradiant(m)
    assert m.gamma[b] == m.gamma.min()
    assert m.gamma[b] < 0.1
    w = m.excitation_weights(b)
    assert w.sum() == pytest.approx(1.0)
    grid = w.reshape(4, 4)
    np.testing.assert_allclose(grid, np.rot90(grid), atol=1e-8)


@given(st.floats(-2.0, 2.0))
def test_mode_contribution_is_a_lorentzian_peaked_at_the_shift(delta):
    m = decompose(_G(3, 3, 0.4))
    drive = np.ones(9)
    w = mode_contribution(m, drive, delta)
    ov = np.abs(drive_overlap(m, drive)) ** 2
    expected = ov / ((m.gamma / 2) ** 2 + (m.shift - delta) ** 2)
    np.testing.assert_allclose(w, expected, rtol=1e-10, atol=1e-14)
    peaks = mode_contribution(m, drive, m.shift)            # each mode at its own shift
    np.testing.assert_allclose(np.diagonal(peaks), ov / (m.gamma / 2) ** 2, rtol=1e-10)
