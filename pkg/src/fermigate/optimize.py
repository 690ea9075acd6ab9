"""GRAPE-style optimization of depth pulses and the scattering-length search.

Controls are the per-segment depths V_s and V_l.  With pinned endpoints the
first and last segments keep their template values and only the interior
segments are free.  Three gradient backends are available:

* ``spline``: two-band only; J(V_s, V_l) from a bicubic table and the exact
  derivative of each segment propagator with respect to J.
* ``finite-difference``: central differences of the true cost, reusing
  forward and backward states so a perturbed segment costs one local update.
* ``approx-analytic``: dU/dV ~ -i dt H' U with H' built from Hellmann-Feynman
  band derivatives; projection derivatives are ignored.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .dynamics import (GATE_PAIRS, STATE_PAIRS, GateSimulator, Model, PulseSchedule, group_pairs,
                       _propagators)
from .fock import sector_operators
from .hubbard import SplineTable, level_parameter_gradients
from .lattice import DepthPoint, Discretization, LatticeConfig, solve_bands

BACKENDS = ("spline", "finite-difference", "approx-analytic", "hybrid")

TWO_BAND_BOUNDS = {"V_s": (2.0, 30.0), "V_l": (20.0, 30.0)}
MULTIBAND_BOUNDS = {"V_s": (0.1, 45.0), "V_l": (7.0, 35.0)}


class StagnationWarning(RuntimeWarning):
    """The optimizer stopped without satisfying its convergence test."""


@dataclass
class OptimizationProblem:
    """Everything needed to optimize one pulse.

    ``pairs`` holds (initial, target) state specs (labels or amplitude dicts);
    ``guess`` supplies N_T, dt, a and the bound box; with ``pin_endpoints``
    the first and last segments keep the guess values.
    """

    config: LatticeConfig
    model: Model
    pairs: list
    guess: PulseSchedule
    backend: str = "spline"
    pin_endpoints: bool = True
    tol: float = 1e-10
    max_iter: int = 500
    max_eval: int = 15000
    fd_step: float = 1e-6
    table: SplineTable | None = None
    disc: Discretization = field(default_factory=Discretization)

    def __post_init__(self):
        self.model = Model.parse(self.model)
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "spline":
            if self.model.kind != "two-band":
                raise ValueError("the spline backend supports the two-band model only")
            if self.table is None:
                raise ValueError("the spline backend needs a SplineTable")
        if not self.pairs:
            raise ValueError("empty pair list")
        for name in ("V_s", "V_l"):
            if name not in self.guess.bounds:
                raise ValueError(f"guess pulse needs a bound box for {name}")
        if self.guess.n_steps < (3 if self.pin_endpoints else 1):
            raise ValueError("too few segments to optimize")

    @property
    def free(self) -> slice:
        n = self.guess.n_steps
        return slice(1, n - 1) if self.pin_endpoints else slice(0, n)

    @property
    def n_free(self) -> int:
        s = self.free
        return s.stop - s.start

    def to_vector(self, pulse: PulseSchedule) -> np.ndarray:
        return np.concatenate([pulse.V_s[self.free], pulse.V_l[self.free]])

    def to_pulse(self, x: np.ndarray) -> PulseSchedule:
        n = self.n_free
        vs, vl = self.guess.V_s.copy(), self.guess.V_l.copy()
        lo_s, hi_s = self.guess.bounds["V_s"]
        lo_l, hi_l = self.guess.bounds["V_l"]
        vs[self.free] = np.clip(x[:n], lo_s, hi_s)
        vl[self.free] = np.clip(x[n:], lo_l, hi_l)
        return self.guess.with_controls(vs, vl)

    def scipy_bounds(self):
        n = self.n_free
        return [self.guess.bounds["V_s"]] * n + [self.guess.bounds["V_l"]] * n


@dataclass
class OptimizationReport:
    """Result of one optimization run (immutable by convention)."""

    pulse: PulseSchedule
    cost: float
    initial_cost: float
    iterations: int
    evaluations: int
    gradient_calls: int
    wall_time: float
    history: list
    backend: str
    stagnated: bool = False
    message: str = ""

    def to_json(self) -> dict:
        p = self.pulse
        return {"backend": self.backend, "cost": self.cost, "initial_cost": self.initial_cost,
                "iterations": self.iterations, "evaluations": self.evaluations,
                "gradient_calls": self.gradient_calls, "wall_time_s": self.wall_time,
                "history": [float(c) for c in self.history], "stagnated": self.stagnated,
                "message": self.message, "pulse": pulse_to_json(p)}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def pulse_to_json(pulse: PulseSchedule) -> dict:
    return {"units": {"duration": "ms", "V_s": "E_rs", "V_l": "E_rl", "a": "a0"},
            "duration": pulse.duration, "a": pulse.a, "V_s": pulse.V_s.tolist(), "V_l": pulse.V_l.tolist(),
            "bounds": {k: list(v) for k, v in pulse.bounds.items()}}


def pulse_from_json(data: dict) -> PulseSchedule:
    return PulseSchedule(float(data["duration"]), np.array(data["V_s"], float), np.array(data["V_l"], float),
                         float(data.get("a", 0.0)), {k: tuple(v) for k, v in data.get("bounds", {}).items()})


# ---------------------------------------------------------------------------
# Cost and gradient evaluation
# ---------------------------------------------------------------------------

def central_difference_gradient(fun, x, h: float) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate."""
    if h < 1e-8:
        warnings.warn(f"finite-difference step {h:g} is below the round-off noise floor", RuntimeWarning)
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def _frechet_weights(w: np.ndarray, dt: float) -> np.ndarray:
    """Gamma_ab with d exp(-i dt H) = V (Gamma * V^+ H' V) V^+ (divided differences)."""
    mean = (w[:, None] + w[None, :]) / 2
    diff = (w[:, None] - w[None, :]) * dt / 2
    return -1j * dt * np.exp(-1j * dt * mean) * np.sinc(diff / np.pi)


class Objective:
    """Cost C = 1 - mean |<target|U(T)|initial>|^2 and its gradients for a problem.

    The spline backend evaluates the two-band cost with the spline hopping; the
    other backends use lattice hopping, which the spline interpolates.
    """

    def __init__(self, problem: OptimizationProblem, simulator: GateSimulator | None = None):
        self.problem = problem
        if simulator is None:
            j_source = "spline" if problem.backend == "spline" else "lattice"
            simulator = GateSimulator(problem.config, problem.model, problem.disc, problem.table,
                                      j_source=j_source, leakage_threshold=None)
        self.sim = simulator
        self.groups = group_pairs(problem.pairs, self.sim.model)
        self.n_pairs = len(problem.pairs)
        self.cost_evaluations = 0
        self.fd_evaluations = 0
        self._deriv_cache: dict = {}

    # -- cost -------------------------------------------------------------------
    def overlaps(self, pulse: PulseSchedule) -> np.ndarray:
        out = np.empty(self.n_pairs, dtype=complex)
        for sector, (ini, tar, idx) in self.groups.items():
            final = self.sim.propagate_states(pulse, ini, sector=sector, check_leakage=False)
            out[idx] = np.einsum("dm,dm->m", tar.conj(), final)
        return out

    def cost(self, pulse: PulseSchedule) -> float:
        self.cost_evaluations += 1
        return float(1.0 - np.mean(np.abs(self.overlaps(pulse)) ** 2))

    # -- shared forward/backward sweep ----------------------------------------------
    def _sweep(self, pulse: PulseSchedule, sector, ini, tar):
        ops = self.sim.operators(pulse, sector)
        U, w, V = _propagators(ops.hamiltonians(pulse.a), pulse.dt)
        n = pulse.n_steps
        phis = []  # state entering U_j (after P_j)
        psi = ini.astype(complex)
        for j in range(n):
            if ops.P[j] is not None:
                psi = ops.P[j] @ psi
            phis.append(psi)
            psi = U[j] @ psi
        final = ops.closing @ psi if ops.closing is not None else psi
        lam = ops.closing.conj().T @ tar if ops.closing is not None else tar.astype(complex)
        lams = [None] * n  # co-state leaving U_j
        for j in range(n - 1, -1, -1):
            lams[j] = lam
            lam = U[j].conj().T @ lam
            if ops.P[j] is not None:
                lam = ops.P[j].conj().T @ lam
        o = np.einsum("dm,dm->m", tar.conj(), final)
        return ops, U, w, V, phis, lams, o

    def value_and_gradient(self, pulse: PulseSchedule, backend: str | None = None):
        """(C, dC/dV) with the gradient as an array of shape (2, N_T): rows V_s, V_l."""
        backend = backend or self.problem.backend
        if backend == "finite-difference":
            return self._finite_difference(pulse)
        if backend == "spline":
            return self._spline_gradient(pulse)
        if backend in ("approx-analytic", "hybrid"):
            return self._approx_gradient(pulse)
        raise ValueError(f"unknown backend {backend!r}")

    def _accumulate(self, pulse, direction_terms, directional=None):
        """Run sweeps per sector; ``direction_terms(sector, ops, U, w, V, phis, lams, j)``
        returns d o / d(V_s, V_l) of segment j as an array (2, m).

        ``directional(U, w, V, j, G)`` gives dU_j along a perturbation G of every
        segment Hamiltonian; it adds the two-band term from U being frozen at
        the first segment's depth.
        """
        n = pulse.n_steps
        o_all = np.empty(self.n_pairs, dtype=complex)
        do_all = np.zeros((2, n, self.n_pairs), dtype=complex)
        active = self._active_segments(n)
        frozen = (directional is not None and self.sim.model.kind == "two-band"
                  and pulse.a != 0 and n and 0 in active)
        if frozen:
            dlnU = self.onsite_log_derivative(pulse.V_s[0], pulse.V_l[0])
        for sector, (ini, tar, idx) in self.groups.items():
            ops, U, w, V, phis, lams, o = self._sweep(pulse, sector, ini, tar)
            o_all[idx] = o
            for j in active:
                do_all[:, j, idx] = direction_terms(sector, ops, U, w, V, phis, lams, j)
            if frozen:
                G = pulse.a * ops.H1[0]
                d = sum(np.einsum("dm,dm->m", lams[j].conj(), directional(U, w, V, j, G) @ phis[j])
                        for j in range(n))
                do_all[:, 0, idx] += dlnU[:, None] * d[None, :]
        self.cost_evaluations += 1
        cost = float(1.0 - np.mean(np.abs(o_all) ** 2))
        grad = -2.0 / self.n_pairs * np.einsum("m,kjm->kj", o_all.conj(), do_all).real
        return cost, grad

    def _active_segments(self, n):
        return range(*self.problem.free.indices(n))

    def onsite_log_derivative(self, vs: float, vl: float, h: float = 1e-4) -> np.ndarray:
        """d ln U / d(V_s, V_l) of the onsite interaction, by central differences."""
        def lnU(a, b):
            return np.log(self.sim.cache.get(a, b)[2].onsite())
        return np.array([(lnU(vs + h, vl) - lnU(vs - h, vl)) / (2 * h),
                         (lnU(vs, vl + h) - lnU(vs, vl - h)) / (2 * h)])

    def _spline_gradient(self, pulse):
        if self.sim.model.kind != "two-band":
            raise ValueError("the spline backend supports the two-band model only")
        table = self.sim.table
        gs, gl = table.gradient(pulse.V_s, pulse.V_l)
        dJ = np.stack([np.atleast_1d(gs), np.atleast_1d(gl)])
        hj = {s: self.sim.two_band_hopping_operator(s) for s in self.groups}

        def terms(sector, ops, U, w, V, phis, lams, j):
            G = V[j].conj().T @ hj[sector] @ V[j]
            dU = V[j] @ (_frechet_weights(w[j], pulse.dt) * G) @ V[j].conj().T
            do = np.einsum("dm,dm->m", lams[j].conj(), dU @ phis[j])
            return dJ[:, j, None] * do[None, :]

        def exact(U, w, V, j, G):
            return V[j] @ (_frechet_weights(w[j], pulse.dt) * (V[j].conj().T @ G @ V[j])) @ V[j].conj().T

        return self._accumulate(pulse, terms, exact)

    # -- approximate analytic ------------------------------------------------------
    def depth_derivatives(self, vs: float, vl: float):
        """(dJ_p, deps_p) per control, shapes (2, M), from Hellmann-Feynman band derivatives."""
        key = self.sim.cache.key(vs, vl)
        hit = self._deriv_cache.get(key)
        if hit is None:
            if self.sim.model.kind == "two-band":
                bands = solve_bands(self.sim.config, DepthPoint(vs, vl, self.sim.config.relative_phase), 2,
                                    self.sim.disc.n_k, self.sim.disc.f_max)
            else:
                bands = self.sim.cache.get(vs, vl)[0]
            hit = level_parameter_gradients(bands, self.sim.model.n_levels)
            self._deriv_cache[key] = hit
        return hit

    def _hamiltonian_derivatives(self, pulse, sector, ops, j):
        """H' of segment j for (V_s, V_l), in the segment's gauge."""
        dJ, deps = self.depth_derivatives(pulse.V_s[j], pulse.V_l[j])
        if self.sim.model.kind == "two-band":
            HJ = self.sim.two_band_hopping_operator(sector)
            return [dJ[k, 0] * HJ for k in range(2)]
        M = self.sim.model.n_levels
        signs = ops.bases[j].gauge_signs
        out = []
        for k in range(2):
            t = np.zeros((2 * M, 2 * M))
            for p in range(M):
                L, R = 2 * p, 2 * p + 1
                t[L, L] = t[R, R] = deps[k, p]
                t[L, R] = t[R, L] = -dJ[k, p] * signs[L] * signs[R]
            out.append(self.sim.onebody_matrix_from(t, sector))
        return out

    def _approx_gradient(self, pulse):
        def terms(sector, ops, U, w, V, phis, lams, j):
            Hp = self._hamiltonian_derivatives(pulse, sector, ops, j)
            res = []
            for H in Hp:
                dU = -1j * pulse.dt * H @ U[j]
                res.append(np.einsum("dm,dm->m", lams[j].conj(), dU @ phis[j]))
            return np.array(res)

        def approx(U, w, V, j, G):
            return -1j * pulse.dt * G @ U[j]

        return self._accumulate(pulse, terms, approx)

    # -- finite differences ----------------------------------------------------------
    def _finite_difference(self, pulse):
        h = self.problem.fd_step
        if h < 1e-8:
            warnings.warn(f"finite-difference step {h:g} is below the round-off noise floor", RuntimeWarning)
        n = pulse.n_steps
        grad = np.zeros((2, n))
        o_all = np.empty(self.n_pairs, dtype=complex)
        active = list(self._active_segments(n))
        shifted = {}
        for sector, (ini, tar, idx) in self.groups.items():
            ops, U, w, V, phis, lams, o = self._sweep(pulse, sector, ini, tar)
            o_all[idx] = o
            for j in active:
                for k in range(2):
                    for sgn in (1, -1):
                        vs, vl = pulse.V_s[j], pulse.V_l[j]
                        if k == 0:
                            vs = vs + sgn * h
                        else:
                            vl = vl + sgn * h
                        o_new = self._local_overlap(pulse, sector, ops, U, phis, lams, tar, j, vs, vl)
                        shifted.setdefault((j, k, sgn), np.empty(self.n_pairs, dtype=complex))[idx] = o_new
        cost = float(1.0 - np.mean(np.abs(o_all) ** 2))
        for j in active:
            for k in range(2):
                cp = 1.0 - np.mean(np.abs(shifted[(j, k, 1)]) ** 2)
                cm = 1.0 - np.mean(np.abs(shifted[(j, k, -1)]) ** 2)
                grad[k, j] = (cp - cm) / (2 * h)
        self.cost_evaluations += 1 + 4 * len(active)
        self.fd_evaluations += 4 * len(active)
        return cost, grad

    def brute_force_gradient(self, pulse: PulseSchedule, h: float | None = None) -> np.ndarray:
        """Central differences of the full cost, shape (2, N_T); pinned segments stay zero.

        Slow reference used to check the local-update finite differences.
        """
        free = self.problem.free
        m = self.problem.n_free
        base = replace(pulse, bounds={})  # probes may step past a bound

        def f(v):
            vs, vl = pulse.V_s.copy(), pulse.V_l.copy()
            vs[free], vl[free] = v[:m], v[m:]
            return self.cost(base.with_controls(vs, vl))
        x = np.concatenate([pulse.V_s[free], pulse.V_l[free]])
        g = central_difference_gradient(f, x, h or self.problem.fd_step)
        out = np.zeros((2, pulse.n_steps))
        out[0, free], out[1, free] = g[:m], g[m:]
        return out

    def _local_overlap(self, pulse, sector, ops, U, phis, lams, tar, j, vs, vl):
        """<target|U(T)|initial> with segment j moved to depth (vs, vl)."""
        sim = self.sim
        n = pulse.n_steps
        if sim.model.kind == "two-band":
            if j == 0:
                p = replace(pulse, bounds={}).with_controls(np.r_[vs, pulse.V_s[1:]], np.r_[vl, pulse.V_l[1:]])
                final = sim.propagate_states(p, phis[0], sector=sector, check_leakage=False)
                return np.einsum("dm,dm->m", tar.conj(), final)
            H = sim.hopping(vs, vl) * sim.two_band_hopping_operator(sector) + pulse.a * ops.H1[j]
            new = _propagators(H[None], pulse.dt)[0][0] @ phis[j]
            return np.einsum("dm,dm->m", lams[j].conj(), new)
        prev = ops.bases[j - 1] if j > 0 else None
        basis, params, O = sim.aligned_segment(vs, vl, prev)
        H = sim.onebody_matrix(params, sector) + pulse.a * sim.interaction_matrix(params, sector)
        Uj = _propagators(H[None], pulse.dt)[0][0]
        entering = self._pre_projection(ops, U, phis, j)
        x = entering if O is None else sim.lift(O, sector) @ entering
        x = Uj @ x
        if j == n - 1:
            fresh = sim.cache.get(vs, vl)[1]
            signs = basis.gauge_signs * fresh.gauge_signs
            if np.any(signs < 0):
                x = sim.lift(np.diag(signs), sector) @ x
            return np.einsum("dm,dm->m", tar.conj(), x)
        nxt = ops.bases[j + 1]
        O_next = nxt.dx * nxt.modes @ basis.modes.T
        x = sim.lift(O_next, sector) @ x
        # co-state entering U_{j+1} from the left
        mu = U[j + 1].conj().T @ lams[j + 1]
        return np.einsum("dm,dm->m", mu.conj(), x)

    @staticmethod
    def _pre_projection(ops, U, phis, j):
        return phis[0] if j == 0 else U[j - 1] @ phis[j - 1]


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

def _run_lbfgs(problem: OptimizationProblem, objective: Objective, start: PulseSchedule, backend: str,
               max_iter: int | None = None):
    """One bounded L-BFGS-B run; returns (best pulse, best cost, history, nit, ngrad, message, ok)."""
    best = {"cost": np.inf, "x": problem.to_vector(start)}
    ngrad = [0]

    def fun(x):
        pulse = problem.to_pulse(x)
        c, g = objective.value_and_gradient(pulse, backend)
        ngrad[0] += 1
        if c < best["cost"]:
            best.update(cost=c, x=x.copy())
        return c, np.concatenate([g[0, problem.free], g[1, problem.free]])

    history = []
    x0 = problem.to_vector(start)
    c0, _ = fun(x0)
    history.append(c0)

    def callback(xk):
        history.append(best["cost"])

    remaining = max(problem.max_eval - objective.cost_evaluations, 1)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=problem.scipy_bounds(), callback=callback,
                   options={"maxcor": 10, "gtol": problem.tol, "ftol": 1e-15,
                            "maxiter": max_iter or problem.max_iter, "maxfun": remaining})
    message = res.message if isinstance(res.message, str) else res.message.decode()
    return problem.to_pulse(best["x"]), float(best["cost"]), history, int(res.nit), ngrad[0], message, res.success


def optimize_state_transfer(problem: OptimizationProblem, objective: Objective | None = None,
                            start: PulseSchedule | None = None) -> OptimizationReport:
    """Minimize the cost of ``problem`` from its guess with bounded L-BFGS.

    For multiband problems the ``hybrid`` backend runs the approximate analytic
    gradient to stagnation and then refines with finite differences.  The
    returned cost never exceeds the initial cost.
    """
    t0 = time.perf_counter()
    obj = objective or Objective(problem)
    start = start or problem.guess
    initial = obj.cost(start)
    if problem.backend == "hybrid":
        stages = ["approx-analytic", "finite-difference"]
    else:
        stages = [problem.backend]
    pulse, cost, history, nit, ngrad, message, ok = start, initial, [initial], 0, 0, "", True
    for stage in stages:
        p, c, h, it, ng, message, ok = _run_lbfgs(problem, obj, pulse, stage)
        nit += it
        ngrad += ng
        history.extend(min(history[-1], x) for x in h[1:])
        if c <= cost:
            pulse, cost = p, c
    stagnated = not ok and "ABNORMAL" in message.upper()
    if stagnated:
        warnings.warn(f"optimizer stagnated: {message}", StagnationWarning)
    return OptimizationReport(pulse, float(cost), float(initial), nit, obj.cost_evaluations, ngrad,
                              time.perf_counter() - t0, history, problem.backend, stagnated, message)


def optimize_full_gate(problem: OptimizationProblem, warm_start: PulseSchedule | None = None,
                       objective: Objective | None = None) -> OptimizationReport:
    """Minimize the averaged pair cost starting from a state-transfer solution."""
    if len(problem.pairs) < 2:
        raise ValueError("a full-gate problem needs several (initial, target) pairs")
    if warm_start is not None:
        problem = replace(problem, guess=replace(warm_start, bounds=problem.guess.bounds))
    return optimize_state_transfer(problem, objective)


@dataclass
class ScanResult:
    a_grid: np.ndarray
    costs: np.ndarray
    best_a: float
    best_cost: float


def scan_scattering_length(pulse: PulseSchedule, a_grid, target=None, model=None,
                           simulator: GateSimulator | None = None, cost_fn=None,
                           refine: bool = True) -> ScanResult:
    """Evaluate the cost over ``a_grid`` and return the best a.

    ``cost_fn(a)`` overrides the default pair cost built from ``target``
    (a pair list or a gate name).  With ``refine`` a parabola through the grid
    minimum and its neighbours proposes a vertex, kept if it is better.
    """
    grid = np.asarray(a_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty scattering-length grid")
    if not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0):
        raise ValueError("scattering-length grid must be finite and ascending")
    if cost_fn is None:
        if simulator is None:
            raise ValueError("need a simulator or a cost function")
        pairs = STATE_PAIRS[target] if isinstance(target, str) else target
        obj = Objective.__new__(Objective)
        obj.sim, obj.n_pairs, obj.cost_evaluations = simulator, len(pairs), 0
        obj.groups = group_pairs(pairs, simulator.model)
        cost_fn = lambda a: obj.cost(pulse.with_a(a))  # noqa: E731
    costs = np.array([cost_fn(a) for a in grid])
    i = int(np.argmin(costs))
    best_a, best_cost = float(grid[i]), float(costs[i])
    if refine and 0 < i < grid.size - 1:
        x, y = grid[i - 1: i + 2], costs[i - 1: i + 2]
        c2, c1, _ = np.polyfit(x, y, 2)
        if c2 > 0:
            vertex = -c1 / (2 * c2)
            if x[0] < vertex < x[2] and not np.isclose(vertex, best_a, rtol=0, atol=1e-12 * max(1, abs(best_a))):
                cv = float(cost_fn(vertex))
                if cv < best_cost:
                    best_a, best_cost = float(vertex), cv
    return ScanResult(grid, costs, best_a, best_cost)


def optimize_sqrt_swap(problem: OptimizationProblem, a_grid, rounds: int = 2) -> tuple[OptimizationReport, ScanResult]:
    """Alternate depth optimization at fixed a with a one-dimensional a search."""
    report = None
    scan = None
    obj = Objective(problem)
    guess = problem.guess
    for _ in range(rounds):
        p = replace(problem, guess=guess)
        obj.problem = p
        report = optimize_state_transfer(p, obj)
        scan = scan_scattering_length(report.pulse, a_grid, problem.pairs, simulator=obj.sim)
        guess = report.pulse.with_a(scan.best_a)
    final_cost = obj.cost(guess)
    if final_cost <= report.cost:
        report = replace(report, pulse=guess, cost=final_cost)
    return report, scan


def make_problem(config: LatticeConfig, model, gate: str, duration: float, dt: float = 0.005,
                 a: float = 0.0, full_gate: bool = False, backend: str | None = None,
                 table: SplineTable | None = None, bounds: dict | None = None, guess=None,
                 **kwargs) -> OptimizationProblem:
    """Problem with standard bounds, pinned deep-lattice endpoints and a ramp guess."""
    model = Model.parse(model)
    if bounds is None:
        bounds = TWO_BAND_BOUNDS if model.kind == "two-band" else MULTIBAND_BOUNDS
    if guess is None:
        vl = 30.0 if model.kind == "two-band" else min(30.0, bounds["V_l"][1])
        guess = PulseSchedule.linear_ramp(duration, dt, bounds["V_s"], vl, a, bounds)
    elif isinstance(guess, PulseSchedule):
        guess = replace(guess, bounds=bounds, a=a if a else guess.a)
    pairs = (GATE_PAIRS if full_gate else STATE_PAIRS)[gate]
    if backend is None:
        backend = "spline" if model.kind == "two-band" else "hybrid"
    return OptimizationProblem(config, model, pairs, guess, backend, table=table, **kwargs)
