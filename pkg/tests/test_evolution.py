import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arrayrecoil.errors import InstabilityError, InvalidArgument, UnsupportedStateError
from arrayrecoil.evolution import (
    CoefficientState, DenseCouplings, DriveSpec, ShiftedConfiguration, SingleShiftCouplings, StopCondition,
    coefficient_rhs, couplings_for, emission_tail, ground_state, pure_excitation, pure_state_fast_path, propagate,
)
from arrayrecoil.geometry import AtomArray, build_planar_array

from oracles import dense_ode, kron_rho_gg_inf, oracle_matrices

RNG = np.random.default_rng(20240611)


def _random_amplitudes(n, rng=RNG):
    c = rng.normal(size=n) + 1j * rng.normal(size=n)
    return c / np.linalg.norm(c)


def _random_offsets(n, scale, rng=RNG):
    return rng.uniform(-scale, scale, size=(n, 3))


def test_drive_spec_validation():
    with pytest.raises(InvalidArgument):
        DriveSpec(-1.0)
    with pytest.raises(InvalidArgument):
        DriveSpec(0.1, 0.0, "square")
    with pytest.raises(InvalidArgument):
        DriveSpec(0.1, 0.0, "gaussian")
    d = DriveSpec(0.1, 0.0, "gaussian", 2.0)
    assert d.temporal(0.0) == 0.1 and d.temporal(2.0) == pytest.approx(0.1 / np.e)
    assert d.start_time() == -10.0 and d.end_time() == 10.0
    assert DriveSpec().is_off and DriveSpec().end_time() == -np.inf
    bad = DriveSpec(0.1, 0.0, "cw", envelope=lambda p: 2.0 * np.ones(len(p)))
    with pytest.raises(InvalidArgument):
        bad.spatial(np.zeros((2, 3)))


def test_shifted_configuration_limits():
    a = build_planar_array(2, 2, 0.5)
    with pytest.raises(InvalidArgument):
        ShiftedConfiguration.single(a, 0, [0.1, 0.0, 0.0])
    with pytest.raises(InvalidArgument):
        ShiftedConfiguration(a, np.full((4, 3), np.nan))
    c = ShiftedConfiguration.single(a, 1, [0.0, 0.0, 1e-3])
    assert not c.is_coincident and ShiftedConfiguration(a).is_coincident
    assert c.primed[1, 2] == 1e-3


@given(st.integers(2, 6), st.floats(0.2, 1.0), st.integers(1, 6), st.integers(0, 2**31))
def test_single_shift_couplings_equal_dense(n_side, d, batch, seed):
    rng = np.random.default_rng(seed)
    a = build_planar_array(n_side, 2, d)
    n = len(a)
    drive = DriveSpec(0.05, 0.1, "cw")
    cfgs = [ShiftedConfiguration.single(a, int(j), rng.uniform(-0.01, 0.01, 3)) for j in rng.integers(0, n, batch)]
    fast = couplings_for(cfgs, drive)
    dense = couplings_for(cfgs, drive, structured=False)
    assert isinstance(fast, SingleShiftCouplings) and isinstance(dense, DenseCouplings)
    x = rng.normal(size=(batch, n)) + 1j * rng.normal(size=(batch, n))
    y = rng.normal(size=(batch, n)) + 1j * rng.normal(size=(batch, n))
    rho = rng.normal(size=(batch, n, n)) + 1j * rng.normal(size=(batch, n, n))
    for name in ("G_vec", "Gpp_conj_vec"):
        np.testing.assert_allclose(getattr(fast, name)(x), getattr(dense, name)(x), atol=1e-12)
    np.testing.assert_allclose(fast.G_left(rho), dense.G_left(rho), atol=1e-12)
    np.testing.assert_allclose(fast.Gpp_conj_right(rho), dense.Gpp_conj_right(rho), atol=1e-12)
    np.testing.assert_allclose(fast.R_form(x, y), dense.R_form(x, y), atol=1e-12)
    np.testing.assert_allclose(fast.R_trace(rho), dense.R_trace(rho), atol=1e-12)
    np.testing.assert_allclose(fast.omega_primed, dense.omega_primed, atol=1e-14)
    for b in range(batch):
        for p, q in zip(fast.dense((b,)), dense.dense((b,))):
            np.testing.assert_allclose(p, q, atol=1e-12)


def test_couplings_match_oracle_matrices():
    a = build_planar_array(3, 2, 0.45)
    off = _random_offsets(len(a), 0.01)
    cfg = ShiftedConfiguration(a, off)
    cp = couplings_for(cfg, DriveSpec())
    G, Gpp, R = oracle_matrices(a.positions, a.positions + off, a.orientations)
    np.testing.assert_allclose(cp.G, G, atol=1e-11)
    np.testing.assert_allclose(np.conj(cp.Gpp_conj), Gpp, atol=1e-11)
    np.testing.assert_allclose(cp.R, R, atol=1e-12)


def test_decay_propagation_matches_adaptive_oracle():
    a = build_planar_array(3, 2, 0.45)
    n = len(a)
    c = _random_amplitudes(n)
    off = _random_offsets(n, 0.01)
    sol, unpack = dense_ode(a.positions, a.positions + off, a.orientations, np.outer(c, c.conj()),
                            t_span=(0.0, 4.0))
    res = propagate(pure_excitation(c), DriveSpec(), ShiftedConfiguration(a, off), dt=2e-3,
                    stop=StopCondition("horizon", t_max=4.0))
    g, w, wt, rho = unpack(sol.y[:, -1])
    assert abs(res.state.rho_gg - g) < 1e-6
    np.testing.assert_allclose(res.state.rho, rho, atol=1e-6)


def test_driven_propagation_matches_adaptive_oracle():
    a = build_planar_array(2, 2, 0.6)
    n = len(a)
    off = _random_offsets(n, 0.01)
    sol, unpack = dense_ode(a.positions, a.positions + off, a.orientations, np.zeros((n, n)), rabi=0.3,
                            detuning=0.2, t_span=(0.0, 6.0), rho_gg0=1.0)
    res = propagate(ground_state(n), DriveSpec(0.3, 0.2, "cw"), ShiftedConfiguration(a, off), dt=2e-3,
                    stop=StopCondition("horizon", t_max=6.0))
    g, w, wt, rho = unpack(sol.y[:, -1])
    assert abs(res.state.rho_gg - g) < 1e-6
    np.testing.assert_allclose(res.state.w, w, atol=1e-6)
    np.testing.assert_allclose(res.state.wt, wt, atol=1e-6)
    np.testing.assert_allclose(res.state.rho, rho, atol=1e-6)


def test_pulse_propagation_matches_adaptive_oracle():
    a = build_planar_array(2, 1, 0.5)
    drive = DriveSpec(0.2, 0.0, "gaussian", 2.0)
    off = _random_offsets(2, 0.01)
    sol, unpack = dense_ode(a.positions, a.positions + off, a.orientations, np.zeros((2, 2)), rabi=0.2,
                            width=2.0, t_span=(-10.0, 10.0), rho_gg0=1.0)
    res = propagate(ground_state(2), drive, ShiftedConfiguration(a, off), dt=2e-3,
                    stop=StopCondition("horizon", t_max=10.0))
    assert abs(res.state.rho_gg - unpack(sol.y[:, -1])[0]) < 1e-7


@settings(max_examples=10)
@given(st.integers(1, 3), st.floats(0.3, 1.0), st.floats(0.0, 0.3), st.floats(-1.0, 1.0), st.integers(0, 2**31))
def test_trace_is_conserved_at_coincidence(side, d, rabi, det, seed):
    rng = np.random.default_rng(seed)
    a = build_planar_array(side, 2, d)
    n = len(a)
    state = pure_excitation(_random_amplitudes(n, rng))
    state = CoefficientState(np.complex128(0.3), 0.1 * _random_amplitudes(n, rng), np.zeros(n, complex),
                             rho=0.7 * state.rho)
    state = CoefficientState(state.rho_gg, state.w, state.w.conj(), rho=state.rho)
    res = propagate(state, DriveSpec(rabi, det, "cw"), ShiftedConfiguration(a), dt=0.02,
                    stop=StopCondition("horizon", t_max=3.0))
    assert abs(res.state.trace() - state.trace()) < 1e-12


def test_rk2_is_second_order():
    a = build_planar_array(2, 2, 0.4)
    off = _random_offsets(4, 0.01)
    cfg = ShiftedConfiguration(a, off)
    sol, unpack = dense_ode(a.positions, a.positions + off, a.orientations, np.zeros((4, 4)), rabi=0.5,
                            detuning=0.3, t_span=(0.0, 2.0), rho_gg0=1.0, rtol=1e-12, atol=1e-14)
    exact = unpack(sol.y[:, -1])[0]
    errs = []
    for dt in (0.04, 0.02, 0.01):
        r = propagate(ground_state(4), DriveSpec(0.5, 0.3, "cw"), cfg, dt, StopCondition("horizon", t_max=2.0))
        errs.append(abs(r.state.rho_gg - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(orders, 2.0, atol=0.15)


def test_fast_path_agrees_with_full_to_second_order():
    # stepping the factors x, y is not the same map as stepping x y^T, so the
    # two paths differ at O(dt^2) and converge to each other
    a = build_planar_array(3, 3, 0.5)
    c = _random_amplitudes(9)
    cfgs = [ShiftedConfiguration.single(a, j, _random_offsets(1, 0.005)[0]) for j in (0, 4, 8)]
    stop = StopCondition("horizon", t_max=5.0)
    gaps = []
    for dt in (0.02, 0.01):
        full = propagate(pure_excitation(c), DriveSpec(), cfgs, dt, stop)
        fast = pure_state_fast_path(pure_excitation(c, "pure"), DriveSpec(), cfgs, dt, stop)
        gaps.append(np.abs(fast.state.rho_gg - full.state.rho_gg).max())
        assert fast.state.mode == "pure"
    assert gaps[1] < 1e-5
    assert np.log2(gaps[0] / gaps[1]) == pytest.approx(2.0, abs=0.2)


def test_tail_completes_the_decay():
    a = build_planar_array(2, 2, 0.35)
    c = _random_amplitudes(4)
    off = _random_offsets(4, 0.01)
    cfg = ShiftedConfiguration(a, off)
    G, Gpp, R = oracle_matrices(a.positions, a.positions + off, a.orientations)
    exact = kron_rho_gg_inf(G, Gpp, R, np.outer(c, c.conj()))
    short = propagate(pure_excitation(c), DriveSpec(), cfg, 1e-3, StopCondition("decay", t_max=2.0))
    assert abs(short.tail) > 1e-3
    assert abs(short.rho_gg_final - exact) < 1e-6
    cp = couplings_for(cfg, DriveSpec())
    assert abs(emission_tail(ground_state(4), cp)) == 0.0


def test_decay_stops_on_threshold():
    a = build_planar_array(1, 1, 1.0)
    res = propagate(pure_excitation([1.0]), DriveSpec(), ShiftedConfiguration(a), 0.01,
                    StopCondition("decay", t_max=100.0, eps=1e-6, tail=False))
    assert res.info["t_final"] < 15.0
    assert abs(res.rho_gg_final - 1.0) < 2e-6


def test_shift_conjugation_symmetry():
    # rho(r, r') = rho(r', r)^*: swapping ket and bra coordinates conjugates rho_gg
    a = build_planar_array(3, 2, 0.5)
    n = len(a)
    c = _random_amplitudes(n)
    off = _random_offsets(n, 0.008)
    moved = AtomArray(a.positions + off, a.orientations, a.spacing, a.lattice)
    drive = DriveSpec(0.2, 0.1, "gaussian", 1.5)
    stop = StopCondition("horizon", t_max=6.0)
    for state in (pure_excitation(c), ground_state(n)):
        f1 = propagate(state, drive, ShiftedConfiguration(a, off), 0.01, stop).state.rho_gg
        f2 = propagate(state, drive, ShiftedConfiguration(moved, -off), 0.01, stop).state.rho_gg
        assert abs(f1 - np.conj(f2)) < 1e-12


def test_hold_ground_and_steady_stop():
    a = build_planar_array(2, 2, 0.6)
    drive = DriveSpec(0.05, 0.0, "cw")
    cfg = ShiftedConfiguration.single(a, 1, [0.0, 0.0, 1e-3])
    res = propagate(ground_state(4), drive, cfg, 0.05, StopCondition("steady", t_max=500.0, steady_tol=1e-9,
                                                                     hold_ground=True))
    assert res.state.rho_gg == 1.0
    assert res.info["t_final"] < 500.0
    d = coefficient_rhs(res.state, 0.0, drive, couplings_for(cfg, drive))
    assert np.abs(d.w).max() < 1e-8 * np.abs(res.state.w).max()
    assert res.rho_gg_rate == d.rho_gg


def test_instability_is_detected():
    a = build_planar_array(3, 3, 0.1)
    with pytest.raises(InstabilityError) as info:
        propagate(pure_excitation(np.ones(9)), DriveSpec(), ShiftedConfiguration(a), dt=5.0,
                  stop=StopCondition("horizon", t_max=5000.0))
    assert info.value.dt == 5.0


def test_state_conversions():
    n = 3
    g = ground_state(n)
    assert g.as_pure().mode == "pure"
    p = pure_excitation([1.0, 1j, 0.0])
    np.testing.assert_allclose(p.as_pure().rho_tilde, p.rho, atol=1e-14)
    mixed = CoefficientState(np.complex128(0.0), np.zeros(n, complex), np.zeros(n, complex), rho=np.eye(n) / n)
    with pytest.raises(UnsupportedStateError):
        mixed.as_pure()
    coherent = CoefficientState(np.complex128(1.0), np.ones(n, complex), np.ones(n, complex),
                                rho=np.zeros((n, n), complex))
    with pytest.raises(UnsupportedStateError):
        coherent.as_pure()
    with pytest.raises(UnsupportedStateError):
        p.broadcast((2,)).as_pure()
    assert g.broadcast((4,)).batch_shape == (4,)


def test_trajectory_sampling():
    a = build_planar_array(2, 1, 0.5)
    res = propagate(pure_excitation([1.0, 0.0]), DriveSpec(), ShiftedConfiguration(a), 0.01,
                    StopCondition("horizon", t_max=1.0), sample_every=10)
    tr = res.trajectory
    assert len(tr.t) == 11 and tr.populations.shape == (11, 2)
    assert tr.t[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(tr.rho_gg.real + tr.populations.real.sum(axis=1), 1.0, atol=1e-12)


def test_invalid_arguments():
    a = build_planar_array(2, 1, 0.5)
    with pytest.raises(InvalidArgument):
        propagate(ground_state(2), DriveSpec(), ShiftedConfiguration(a), dt=0.0)
    with pytest.raises(InvalidArgument):
        StopCondition("forever")
    with pytest.raises(ValueError):
        coefficient_rhs(ground_state(3), 0.0, DriveSpec(), couplings_for(ShiftedConfiguration(a), DriveSpec()))
