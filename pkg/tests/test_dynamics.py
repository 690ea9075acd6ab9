import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermigate.analytic import analytic_trajectory
from fermigate.dynamics import (GATE_PAIRS, STATE_PAIRS, GateSimulator, LeakageError, ManyBodyState, Model,
                                PulseSchedule, basis_labels, computational_state, evaluate_gate_cost,
                                evaluate_state_cost, propagate_nonadiabatic, sector_of, step_propagator,
                                superposition)
from fermigate.hubbard import hopping_from_bands
from fermigate.lattice import DepthPoint

BOUNDS = {"V_s": (0.1, 45.0), "V_l": (7.0, 35.0)}


@pytest.fixture(scope="module")
def four_band(config):
    return GateSimulator(config, "multiband-4", leakage_threshold=None)


@pytest.fixture(scope="module")
def two_band(config):
    return GateSimulator(config, "two-band")


def ramp(duration=0.1, dt=0.005, a=0.0):
    return PulseSchedule.linear_ramp(duration, dt, BOUNDS["V_s"], 30.0, a, BOUNDS)


# -- pulses and models --

def test_pulse_validation():
    with pytest.raises(ValueError):
        PulseSchedule(0.1, [1, 2], [3])
    with pytest.raises(ValueError):
        PulseSchedule(0.1, [], [])
    with pytest.raises(ValueError):
        PulseSchedule(0.1, [50.0], [30.0], bounds=BOUNDS)
    with pytest.raises(ValueError):
        PulseSchedule(0.1, [np.nan], [30.0])
    p = PulseSchedule(0.1, np.full(20, 10.0), np.full(20, 30.0))
    assert p.n_steps == 20 and p.dt == pytest.approx(0.005)
    assert p.times.size == 21


def test_linear_ramp_shape():
    p = ramp(0.1)
    assert p.n_steps == 20
    assert p.V_s[0] == p.V_s[-1] == 45.0
    assert p.V_s.min() < 5
    np.testing.assert_allclose(p.V_s, p.V_s[::-1])
    with pytest.raises(ValueError):
        PulseSchedule.linear_ramp(0.1, 0.03, (2, 30), 30)


def test_scaled_pulse():
    p = ramp(0.05).scaled(0.01, -0.02)
    np.testing.assert_allclose(p.V_s, ramp(0.05).V_s * 1.01)
    assert p.bounds == {}


@pytest.mark.parametrize("tag,kind,bands", [("two-band", "two-band", 2), ("multiband-4", "multiband", 4),
                                            ("six-band", "multiband", 6), ("3d", "3d", 4), ("4", "multiband", 4)])
def test_model_parse(tag, kind, bands):
    m = Model.parse(tag)
    assert (m.kind, m.n_bands) == (kind, bands)
    with pytest.raises(ValueError):
        Model.parse("seven")


def test_states():
    assert sector_of("ud") == (1, 1) and sector_of("Du") == (2, 1) and sector_of("u0") == (1, 0)
    s = computational_state("ud", "multiband-4")
    assert s.vector.size == 16 and s.norm == pytest.approx(1)
    assert computational_state("ud", "3d").vector.size == 256
    sup = superposition({"ud": 1, "du": 1j}, "two-band")
    assert sup.norm == pytest.approx(1)
    with pytest.raises(ValueError):
        superposition({"ud": 1, "uu": 1}, "two-band")
    with pytest.raises(ValueError):
        computational_state("xy", "two-band")


# -- propagators --

def test_step_propagator_identity():
    np.testing.assert_allclose(step_propagator(np.zeros((5, 5)), 0.3), np.eye(5))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 40), dt=st.floats(1e-4, 1.0))
def test_step_propagator_unitary(seed, dim, dt):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    H = 50 * (A + A.conj().T)
    U = step_propagator(H, dt)
    assert np.max(np.abs(U.conj().T @ U - np.eye(dim))) < 1e-12


def test_two_band_constant_hopping_matches_closed_form(config, two_band):
    n, dt = 12, 0.005
    pulse = PulseSchedule(n * dt, np.full(n, 6.0), np.full(n, 30.0))
    A = hopping_from_bands(config, DepthPoint(6.0, 30.0))
    traj = propagate_nonadiabatic(config, pulse, "two-band", "ud", two_band)
    x1, x2, x3 = analytic_trajectory(A, traj.times)
    psi = traj.states
    np.testing.assert_allclose(psi[:, 1], x1, atol=1e-10)
    np.testing.assert_allclose(psi[:, 2], x2, atol=1e-10)
    np.testing.assert_allclose((psi[:, 0] + psi[:, 3]) / np.sqrt(2), x3, atol=1e-10)


def test_constant_depths_reduce_to_plain_propagation(config, four_band):
    n, dt = 10, 0.004
    pulse = PulseSchedule(n * dt, np.full(n, 8.0), np.full(n, 32.0), a=1200.0)
    ops = four_band.operators(pulse, (1, 1))
    for P in ops.P[1:]:
        np.testing.assert_allclose(P, np.eye(16), atol=1e-12)
    H = ops.hamiltonians(pulse.a)[0]
    psi0 = computational_state("ud", "multiband-4").vector
    expected = step_propagator(H, n * dt) @ psi0
    got = four_band.propagate_states(pulse, psi0, sector=(1, 1))
    np.testing.assert_allclose(got, expected, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_norm_conserved_in_fixed_basis(seed):
    from fermigate.lattice import LatticeConfig

    rng = np.random.default_rng(seed)
    sim = GateSimulator(LatticeConfig(), "two-band")
    pulse = PulseSchedule(0.05, rng.uniform(2, 30, 10), rng.uniform(20, 30, 10), a=rng.uniform(0, 3000))
    psi = sim.propagate_states(pulse, computational_state("ud", "two-band").vector, sector=(1, 1))
    assert abs(np.linalg.norm(psi) - 1) < 1e-10


def test_projection_loses_norm_only(config, four_band):
    traj = propagate_nonadiabatic(config, ramp(0.1), "multiband-4", "ud", four_band)
    norms = np.sum(traj.populations(), axis=1)
    assert np.all(norms <= 1 + 1e-10)
    assert np.all(np.diff(norms) <= 1e-12)
    assert traj.final.leakage > 0
    assert len(traj.states) == 21


def test_leakage_threshold(config):
    sim = GateSimulator(config, "multiband-4", leakage_threshold=1e-3)
    with pytest.raises(LeakageError) as err:
        propagate_nonadiabatic(config, ramp(0.05), "multiband-4", "ud", sim)
    assert err.value.leakage > 1e-3 and err.value.step >= 1


def test_refining_time_step_is_exact_for_piecewise_pulses(config, four_band):
    p = ramp(0.1, a=800.0)
    fine = PulseSchedule(p.duration, np.repeat(p.V_s, 2), np.repeat(p.V_l, 2), p.a, p.bounds)
    c1 = evaluate_gate_cost(p, STATE_PAIRS["swap"], simulator=four_band)
    c2 = evaluate_gate_cost(fine, STATE_PAIRS["swap"], simulator=four_band)
    assert abs(c1 - c2) < 1e-4


def test_mirror_property(config, four_band, rng):
    n = 16
    vs = np.r_[45, rng.uniform(2, 40, n - 2), 45]
    vl = rng.uniform(20, 35, n)
    pulse = PulseSchedule(0.08, vs, vl, a=900.0, bounds=BOUNDS)
    c_ud = evaluate_gate_cost(pulse, [("ud", "du")], simulator=four_band)
    c_du = evaluate_gate_cost(pulse, [("du", "ud")], simulator=four_band)
    assert c_ud == pytest.approx(c_du, abs=1e-12)


# -- costs --

def test_state_cost_examples():
    t = np.array([1, 0, 0], complex)
    o = np.array([0, 1, 0], complex)
    assert evaluate_state_cost(t, t) == pytest.approx(0)
    assert evaluate_state_cost(o, t) == pytest.approx(1)
    assert evaluate_state_cost((t + o) / np.sqrt(2), t) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        evaluate_state_cost(t, np.ones(4))


def test_gate_cost_two_pairs_equals_state_cost(config, two_band):
    pulse = PulseSchedule(0.05, np.linspace(30, 2, 10), np.full(10, 30.0), a=500.0)
    c1 = evaluate_gate_cost(pulse, STATE_PAIRS["swap"], simulator=two_band)
    c2 = evaluate_gate_cost(pulse, [("ud", "du"), ("du", "ud")], simulator=two_band)
    assert c1 == pytest.approx(c2, abs=1e-10)
    with pytest.raises(ValueError):
        evaluate_gate_cost(pulse, [], simulator=two_band)


def test_identity_pulse_gate_cost(config, four_band):
    pulse = PulseSchedule(0.05, np.full(10, 45.0), np.full(10, 35.0))
    pairs = [("ud", "ud"), ("du", "du"), ("uu", "uu"), ("dd", "dd")]
    assert evaluate_gate_cost(pulse, pairs, simulator=four_band) < 1e-3


@pytest.mark.slow
def test_stretched_states_raise_full_gate_cost(config, four_band, swap_010):
    pulse = swap_010.pulse
    two = evaluate_gate_cost(pulse, GATE_PAIRS["swap"][:2], simulator=four_band)
    four = evaluate_gate_cost(pulse, GATE_PAIRS["swap"], simulator=four_band)
    assert four > two


def test_three_d_runs(config):
    sim = GateSimulator(config, "3d", leakage_threshold=None)
    pulse = PulseSchedule(0.02, [45.0, 20.0, 45.0, 45.0], [30.0] * 4, a=1000.0)
    traj = propagate_nonadiabatic(config, pulse, "3d", "ud", sim)
    assert traj.states.shape == (5, 256)
    assert len(traj.labels) == 256


# -- export --

def test_trajectory_export(config, two_band, tmp_path):
    pulse = PulseSchedule(0.02, [20.0] * 4, [30.0] * 4)
    traj = propagate_nonadiabatic(config, pulse, "two-band", "ud", two_band, target="du")
    path = tmp_path / "traj.csv"
    traj.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t_ms,basis_label,re,im,prob"
    assert len(lines) == 1 + 5 * 4
    side = json.loads(path.with_suffix(".json").read_text())
    assert side["model"] == "two-band" and "state" in side["costs"] and side["steps"] == 4
    assert basis_labels(Model.parse("two-band"), (1, 1))[1] == "01|10"
