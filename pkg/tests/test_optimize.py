import json
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

from fermigate.dynamics import STATE_PAIRS, GateSimulator, PulseSchedule, computational_state
from fermigate.hubbard import hopping_from_bands
from fermigate.lattice import DepthPoint
from fermigate.analytic import swap_cost_derivative
from fermigate.optimize import (MULTIBAND_BOUNDS, TWO_BAND_BOUNDS, Objective, OptimizationProblem,
                                central_difference_gradient, make_problem, optimize_state_transfer,
                                pulse_from_json, pulse_to_json, scan_scattering_length)


def random_pulse(rng, problem, a=None):
    g = problem.guess
    n = g.n_steps
    lo_s, hi_s = g.bounds["V_s"]
    lo_l, hi_l = g.bounds["V_l"]
    vs, vl = g.V_s.copy(), g.V_l.copy()
    vs[problem.free] = rng.uniform(lo_s, hi_s, problem.n_free)
    vl[problem.free] = rng.uniform(lo_l, hi_l, problem.n_free)
    p = g.with_controls(vs, vl)
    return p if a is None else p.with_a(a)


def rel_err(g, ref, free):
    return np.linalg.norm((g - ref)[:, free]) / np.linalg.norm(ref[:, free])


@pytest.fixture(scope="module")
def two_band_problem(config, spline_table):
    return make_problem(config, "two-band", "swap", 0.06, table=spline_table)


# -- gradients --

def test_spline_gradient_vs_finite_difference(two_band_problem, rng):
    obj = Objective(two_band_problem)
    for _ in range(10):
        p = random_pulse(rng, two_band_problem, a=rng.uniform(0, 1000))
        _, g = obj.value_and_gradient(p)
        fd = obj.brute_force_gradient(p, 1e-6)
        assert rel_err(g, fd, two_band_problem.free) < 1e-4


def test_unpinned_first_segment_carries_frozen_interaction(config, spline_table, rng):
    # U is taken at the first segment's depth, so moving V[0] changes every segment
    pr = make_problem(config, "two-band", "swap", 0.05, table=spline_table, pin_endpoints=False, a=800.0)
    obj = Objective(pr)
    p = random_pulse(rng, pr, a=800.0)
    _, g = obj.value_and_gradient(p)
    fd = obj.brute_force_gradient(p, 1e-5)
    assert rel_err(g, fd, pr.free) < 1e-4
    assert abs(g[0, 0] - fd[0, 0]) < 1e-4 * np.abs(fd).max()


def test_backends_agree_on_two_band(two_band_problem, rng):
    fd_obj = Objective(replace(two_band_problem, backend="finite-difference"))
    spline_obj = Objective(two_band_problem)
    p = random_pulse(rng, two_band_problem, a=0.0)
    _, g_fd = fd_obj.value_and_gradient(p)
    _, g_sp = spline_obj.value_and_gradient(p)
    _, g_ap = fd_obj.value_and_gradient(p, "approx-analytic")
    free = two_band_problem.free
    assert rel_err(g_sp, g_fd, free) < 1e-3
    assert rel_err(g_ap, g_fd, free) < 0.05


def test_local_finite_difference_matches_full_recompute(config, rng):
    pr = make_problem(config, "multiband-4", "swap", 0.04, a=700.0, backend="finite-difference")
    obj = Objective(pr)
    p = random_pulse(rng, pr, a=700.0)
    _, g = obj.value_and_gradient(p)
    ref = obj.brute_force_gradient(p)
    assert rel_err(g, ref, pr.free) < 1e-6


def test_finite_difference_evaluation_count(config, spline_table):
    pr = make_problem(config, "two-band", "swap", 0.03, backend="finite-difference", pin_endpoints=False)
    obj = Objective(pr)
    obj.value_and_gradient(pr.guess)
    assert obj.fd_evaluations == 2 * pr.guess.n_steps * 2


def test_central_difference_quadratic(rng):
    A = rng.normal(size=(6, 6))
    A = A + A.T
    b = rng.normal(size=6)
    x = rng.normal(size=6)
    g = central_difference_gradient(lambda v: 0.5 * v @ A @ v + b @ v, x, 1e-3)
    np.testing.assert_allclose(g, A @ x + b, atol=1e-10)
    with pytest.warns(RuntimeWarning):
        central_difference_gradient(lambda v: v @ v, x, 1e-10)


def test_approx_gradient_slow_multiband_pulse(config):
    # slowly varying pulse at a = 0: the dropped basis-change terms stay small
    n = 120
    t = np.linspace(0, 1, n)
    vs = 45 - 37 * np.sin(np.pi * t) ** 2
    vl = np.full(n, 30.0)
    pr = make_problem(config, "multiband-4", "swap", 0.6, backend="approx-analytic")
    p = pr.guess.with_controls(vs, vl)
    obj = Objective(pr)
    c, g_ap = obj.value_and_gradient(p)
    _, g_fd = obj.value_and_gradient(p, "finite-difference")
    assert 0.3 < c < 0.9  # away from both the optimum and the trivial maximum
    assert rel_err(g_ap, g_fd, pr.free) < 0.05
    # a small step along the negative approximate gradient lowers the cost
    x = pr.to_vector(p)
    d = -np.concatenate([g_ap[0, pr.free], g_ap[1, pr.free]])
    step = 1e-2 / np.max(np.abs(d))
    assert obj.cost(pr.to_pulse(x + step * d)) < c


def test_approx_gradient_error_shrinks_with_dt(config):
    # same depth trace on a fixed duration, sampled with dt and dt/2
    vs_t = lambda t: 10 - 7 * np.sin(np.pi * t / 0.04)
    vl_t = lambda t: 28 + 2 * np.sin(np.pi * t / 0.04)
    errs = []
    for dt in (0.002, 0.001):
        pr = make_problem(config, "two-band", "swap", 0.04, dt=dt, backend="finite-difference",
                          pin_endpoints=False, a=1500.0)
        t = (np.arange(pr.guess.n_steps) + 0.5) * dt
        p = pr.guess.with_controls(vs_t(t), vl_t(t))
        obj = Objective(pr)
        _, g_ap = obj.value_and_gradient(p, "approx-analytic")
        ref = obj.brute_force_gradient(p, 1e-5)
        errs.append(rel_err(g_ap, ref, pr.free))
    assert errs[1] / errs[0] == pytest.approx(0.5, abs=0.1)


def test_constant_pulse_gradient_matches_closed_form(config, spline_table):
    n = 10
    pr = make_problem(config, "two-band", "swap", 0.05, table=spline_table, pin_endpoints=False)
    p = pr.guess.with_controls(np.full(n, 12.0), np.full(n, 30.0))
    obj = Objective(pr)
    _, g = obj.value_and_gradient(p)
    dJ_dVs = spline_table.gradient(12.0, 30.0)[0]
    dC_dJ = g[0].sum() / dJ_dVs
    J = float(spline_table.J(12.0, 30.0))
    assert dC_dJ == pytest.approx(swap_cost_derivative(J, 0.05), rel=1e-8)


# -- optimization runs --

@pytest.fixture(scope="module")
def two_band_report(two_band_problem):
    return optimize_state_transfer(two_band_problem)


def test_two_band_swap_converges(two_band_report, two_band_problem):
    r = two_band_report
    assert r.cost < 1e-6
    assert r.cost <= r.initial_cost
    assert r.evaluations >= r.iterations
    assert np.all(np.diff(r.history) <= 0)
    _, g = Objective(two_band_problem).value_and_gradient(r.pulse)
    free = two_band_problem.free
    x = two_band_problem.to_vector(r.pulse)
    lo = np.array([b[0] for b in two_band_problem.scipy_bounds()])
    hi = np.array([b[1] for b in two_band_problem.scipy_bounds()])
    gv = np.concatenate([g[0, free], g[1, free]])
    projected = np.clip(x - gv, lo, hi) - x
    assert np.max(np.abs(projected)) < 1e-6


def test_iterates_respect_bounds_and_pins(two_band_problem):
    seen = []

    class Recording(Objective):
        def value_and_gradient(self, pulse, backend=None):
            seen.append(pulse)
            return super().value_and_gradient(pulse, backend)

    pr = replace(two_band_problem, max_iter=5)
    optimize_state_transfer(pr, Recording(pr))
    g = pr.guess
    for p in seen:
        assert p.V_s[0] == g.V_s[0] and p.V_s[-1] == g.V_s[-1]
        assert p.V_l[0] == g.V_l[0] and p.V_l[-1] == g.V_l[-1]
        assert np.all((p.V_s >= 2) & (p.V_s <= 30) & (p.V_l >= 20) & (p.V_l <= 30))


def test_below_speed_limit(config, spline_table):
    r = optimize_state_transfer(make_problem(config, "two-band", "swap", 0.03, table=spline_table))
    assert r.cost > 0.1


def test_backend_cost_ordering(config, spline_table):
    times, evals = {}, {}
    for backend in ("spline", "approx-analytic", "finite-difference"):
        pr = make_problem(config, "two-band", "swap", 0.06, table=spline_table, backend=backend)
        t0 = time.perf_counter()
        r = optimize_state_transfer(pr)
        times[backend] = time.perf_counter() - t0
        evals[backend] = r.evaluations
        assert r.cost < 1e-6
    assert times["spline"] < times["approx-analytic"] < times["finite-difference"]
    assert evals["finite-difference"] == max(evals.values())


def test_hybrid_multiband_improves(config):
    pr = make_problem(config, "multiband-4", "swap", 0.06, max_iter=5)
    assert pr.backend == "hybrid"
    r = optimize_state_transfer(pr)
    assert r.cost < r.initial_cost
    assert np.all(np.diff(r.history) <= 0)


def test_report_json_roundtrip(two_band_report, tmp_path):
    path = tmp_path / "report.json"
    two_band_report.save(path)
    data = json.loads(path.read_text())
    assert data["cost"] == two_band_report.cost and data["backend"] == "spline"
    p = pulse_from_json(data["pulse"])
    np.testing.assert_array_equal(p.V_s, two_band_report.pulse.V_s)
    assert pulse_to_json(p)["units"]["V_l"] == "E_rl"


def test_problem_validation(config, spline_table):
    g = PulseSchedule.linear_ramp(0.06, 0.005, (2, 30), 30, 0, TWO_BAND_BOUNDS)
    with pytest.raises(ValueError):
        OptimizationProblem(config, "multiband-4", STATE_PAIRS["swap"], g, "spline", table=spline_table)
    with pytest.raises(ValueError):
        OptimizationProblem(config, "two-band", STATE_PAIRS["swap"], g, "spline")
    with pytest.raises(ValueError):
        OptimizationProblem(config, "two-band", [], g, "finite-difference")
    with pytest.raises(ValueError):
        OptimizationProblem(config, "two-band", STATE_PAIRS["swap"], g, "newton")
    with pytest.raises(ValueError):
        OptimizationProblem(config, "two-band", STATE_PAIRS["swap"], replace(g, bounds={}), "finite-difference")


# -- scattering-length scan --

def test_scan_synthetic_parabola():
    grid = np.linspace(500, 3000, 26)
    r = scan_scattering_length(None, grid, cost_fn=lambda a: (a - 1800.0) ** 2 / 1e6 + 0.01)
    assert r.best_a == 1800.0 and r.best_cost == pytest.approx(0.01)
    r = scan_scattering_length(None, grid, cost_fn=lambda a: (a - 1830.0) ** 2 / 1e6 + 0.01)
    assert r.best_a == pytest.approx(1830.0)
    with pytest.raises(ValueError):
        scan_scattering_length(None, [], cost_fn=abs)
    with pytest.raises(ValueError):
        scan_scattering_length(None, [3, 1], cost_fn=abs)


def test_scan_zero_a_bounded_by_noninteracting(config, two_band_report):
    from fermigate.dynamics import SQRT_SWAP_UD

    # without interactions |ud> only reaches cos^2(th)|ud> - sin^2(th)|du> + doublons
    th = np.linspace(0, np.pi, 20001)
    t = np.array([SQRT_SWAP_UD["ud"], SQRT_SWAP_UD["du"]])
    best = np.min(1 - np.abs(t[0].conjugate() * np.cos(th) ** 2 - t[1].conjugate() * np.sin(th) ** 2) ** 2)
    sim = GateSimulator(config, "two-band")
    r = scan_scattering_length(two_band_report.pulse, [0.0, 500.0, 1000.0], "sqrt-swap", simulator=sim)
    assert r.costs[0] >= best - 1e-12
