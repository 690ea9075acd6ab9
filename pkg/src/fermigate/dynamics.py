"""Time evolution under piecewise-constant depth pulses.

A pulse holds V_s and V_l constant over each of N_T segments of length dt.
In the multiband and 3D models each segment has its own Wannier basis; the
state is carried over between segments by the lifted overlap of consecutive
bases, so excitations caused by fast depth changes show up as population
outside the computational states (and as norm lost to untracked bands).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fock import (FockBasis, enumerate_fock_basis, lift_projection_to_fock, sector_operators,
                   three_d_components)
from .hubbard import LatticeCache, SplineTable, hopping_from_bands, transverse_levels
from .lattice import DepthPoint, Discretization, LatticeConfig, align_gauge, solve_bands


class LeakageError(RuntimeError):
    """Norm lost to truncation exceeded the configured threshold."""

    def __init__(self, step: int, leakage: float, threshold: float):
        super().__init__(f"leakage {leakage:.3e} at step {step} exceeds threshold {threshold:.3e}")
        self.step, self.leakage, self.threshold = step, leakage, threshold


# ---------------------------------------------------------------------------
# Pulses and models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PulseSchedule:
    """Piecewise-constant depths V_s (E_rs) and V_l (E_rl) over N_T segments.

    ``a`` is the scattering length in Bohr radii; ``bounds`` maps "V_s" and
    "V_l" to (low, high) boxes that every segment must respect.
    """

    duration: float
    V_s: np.ndarray
    V_l: np.ndarray
    a: float = 0.0
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        vs = np.asarray(self.V_s, dtype=float).ravel()
        vl = np.asarray(self.V_l, dtype=float).ravel()
        object.__setattr__(self, "V_s", vs)
        object.__setattr__(self, "V_l", vl)
        object.__setattr__(self, "bounds", {k: tuple(float(x) for x in v) for k, v in self.bounds.items()})
        if vs.shape != vl.shape:
            raise ValueError("V_s and V_l must have the same number of segments")
        if not np.isfinite(self.duration) or self.duration < 0:
            raise ValueError("duration must be a non-negative number")
        if vs.size == 0 and self.duration > 0:
            raise ValueError("a pulse of positive duration needs at least one segment")
        if vs.size and self.duration == 0:
            raise ValueError("segments need a positive duration")
        if not (np.all(np.isfinite(vs)) and np.all(np.isfinite(vl)) and np.isfinite(self.a)):
            raise ValueError("pulse values must be finite")
        if np.any(vs < 0) or np.any(vl < 0):
            raise ValueError("depths must be non-negative")
        for name, values in (("V_s", vs), ("V_l", vl)):
            if name in self.bounds:
                lo, hi = self.bounds[name]
                if lo > hi:
                    raise ValueError(f"empty bound box for {name}")
                if np.any(values < lo - 1e-12) or np.any(values > hi + 1e-12):
                    raise ValueError(f"{name} leaves its bounds [{lo}, {hi}]")

    @property
    def n_steps(self) -> int:
        return self.V_s.size

    @property
    def dt(self) -> float:
        return self.duration / self.n_steps if self.n_steps else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def with_controls(self, V_s, V_l) -> "PulseSchedule":
        return replace(self, V_s=np.asarray(V_s, float), V_l=np.asarray(V_l, float))

    def with_a(self, a: float) -> "PulseSchedule":
        return replace(self, a=float(a))

    def scaled(self, e_s: float, e_l: float) -> "PulseSchedule":
        """Depth traces multiplied by (1 + e_s) and (1 + e_l); bounds dropped."""
        return PulseSchedule(self.duration, self.V_s * (1 + e_s), self.V_l * (1 + e_l), self.a)

    @classmethod
    def linear_ramp(cls, duration: float, dt: float, vs_range, vl: float, a: float = 0.0,
                    bounds: dict | None = None) -> "PulseSchedule":
        """Linearly decreasing V_s with constant V_l; endpoints at vs_range[1].

        The ramp goes from the upper V_s value down to the lower one at mid
        pulse and back, so first and last segments sit in the deep lattice.
        """
        n = int(round(duration / dt))
        if n < 1 or abs(n * dt - duration) > 1e-9 * max(duration, 1):
            raise ValueError("duration must be a positive multiple of dt")
        lo, hi = vs_range
        s = np.abs(np.linspace(-1, 1, n))
        return cls(duration, lo + (hi - lo) * s, np.full(n, float(vl)), a, bounds or {})


@dataclass(frozen=True)
class Model:
    """Which Hamiltonian drives the evolution.

    kind is "two-band" (frozen basis, four-state matrix), "multiband"
    (2M bands with non-adiabatic reprojection) or "3d" (four-band x model with
    two transverse levels in y and z).
    """

    kind: str = "multiband"
    n_bands: int = 4

    def __post_init__(self):
        if self.kind not in ("two-band", "multiband", "3d"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "two-band" and self.n_bands != 2:
            object.__setattr__(self, "n_bands", 2)
        if self.kind == "3d" and self.n_bands != 4:
            object.__setattr__(self, "n_bands", 4)
        if self.n_bands < 2 or self.n_bands % 2:
            raise ValueError("n_bands must be a positive even number")

    @property
    def n_levels(self) -> int:
        return self.n_bands // 2

    @property
    def tag(self) -> str:
        return {"two-band": "two-band", "3d": "3d"}.get(self.kind, f"multiband-{self.n_bands}")

    @classmethod
    def parse(cls, tag: "str | Model") -> "Model":
        if isinstance(tag, Model):
            return tag
        t = str(tag).lower().strip()
        names = {"two-band": 2, "2": 2, "four-band": 4, "4": 4, "six-band": 6, "6": 6}
        if t in ("two-band", "2"):
            return cls("two-band", 2)
        if t in ("3d", "3d-four-band"):
            return cls("3d", 4)
        if t.startswith("multiband-"):
            return cls("multiband", int(t.split("-", 1)[1]))
        if t in names:
            return cls("multiband", names[t])
        raise ValueError(f"unknown model tag {tag!r}")


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

_SITE_CODES = {"0": (0, 0), "u": (1, 0), "d": (0, 1), "D": (1, 1)}


def sector_of(label: str) -> tuple[int, int]:
    """(N_up, N_down) of a two-site label such as "ud" or "Du"."""
    if len(label) != 2 or any(ch not in _SITE_CODES for ch in label):
        raise ValueError(f"state label {label!r} must be two of 0, u, d, D")
    n_up = sum(_SITE_CODES[ch][0] for ch in label)
    n_dn = sum(_SITE_CODES[ch][1] for ch in label)
    return n_up, n_dn


@dataclass(frozen=True)
class ManyBodyState:
    """Amplitudes over the basis of one particle-number sector of a model."""

    vector: np.ndarray
    sector: tuple[int, int]
    model: str

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    @property
    def leakage(self) -> float:
        return 1.0 - self.norm**2


def model_dimension(model: Model, sector) -> int:
    if model.kind == "3d":
        return 256
    return enumerate_fock_basis(2 * model.n_levels, *sector).dim


def computational_state(label: str, model: "Model | str") -> ManyBodyState:
    """Basis state with lowest-level occupations of L and R given by ``label``.

    Characters: 0 empty, u spin up, d spin down, D doubly occupied.  For
    example "ud" is |up, down> (up atom left, down atom right).
    """
    model = Model.parse(model)
    sector = sector_of(label)
    up = sum(_SITE_CODES[ch][0] << i for i, ch in enumerate(label))
    dn = sum(_SITE_CODES[ch][1] << i for i, ch in enumerate(label))
    if model.kind == "3d":
        if sector != (1, 1):
            raise ValueError("the 3D model holds exactly one up and one down atom")
        x = enumerate_fock_basis(4, 1, 1).basis_vector(up, dn)
        return ManyBodyState(np.kron(x, np.eye(16)[0]).astype(complex), sector, model.tag)
    basis = enumerate_fock_basis(2 * model.n_levels, *sector)
    return ManyBodyState(basis.basis_vector(up, dn), sector, model.tag)


def superposition(amplitudes: dict, model: "Model | str") -> ManyBodyState:
    """Normalized combination of computational states from one sector."""
    model = Model.parse(model)
    states = [computational_state(k, model) for k in amplitudes]
    if len({s.sector for s in states}) != 1:
        raise ValueError("superposed states must share a particle-number sector")
    v = sum(complex(c) * s.vector for c, s in zip(amplitudes.values(), states))
    return ManyBodyState(v / np.linalg.norm(v), states[0].sector, model.tag)


def as_state(spec, model) -> ManyBodyState:
    if isinstance(spec, ManyBodyState):
        return spec
    if isinstance(spec, str):
        return computational_state(spec, model)
    if isinstance(spec, dict):
        return superposition(spec, model)
    raise TypeError(f"cannot interpret {spec!r} as a state")


SQRT_SWAP_UD = {"ud": (1 + 1j) / 2, "du": -(1 - 1j) / 2}
SQRT_SWAP_DU = {"ud": (-1 + 1j) / 2, "du": (1 + 1j) / 2}

GATE_PAIRS = {
    "swap": [("ud", "du"), ("du", "ud"), ("uu", "uu"), ("dd", "dd")],
    "sqrt-swap": [("ud", SQRT_SWAP_UD), ("du", SQRT_SWAP_DU), ("uu", "uu"), ("dd", "dd")],
}
STATE_PAIRS = {"swap": [("ud", "du")], "sqrt-swap": [("ud", SQRT_SWAP_UD)]}


# ---------------------------------------------------------------------------
# Propagators
# ---------------------------------------------------------------------------

def step_propagator(H, dt: float) -> np.ndarray:
    """exp(-i H dt) from the Hermitian eigendecomposition of H."""
    H = np.asarray(getattr(H, "matrix", H))
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w * dt)) @ V.conj().T


def _propagators(Hs: np.ndarray, dt: float):
    """Batched exp(-i H dt) plus eigendata, for a stack of Hamiltonians."""
    w, V = np.linalg.eigh(Hs)
    U = np.einsum("nij,nj,nkj->nik", V, np.exp(-1j * w * dt), V.conj())
    return U, w, V


@dataclass
class SegmentOperators:
    """Per-segment matrices of one sector: H = H0 + a * H1, then projection P.

    ``P[j]`` maps the state from basis j-1 into basis j (``P[0]`` is None);
    ``closing`` maps the last basis onto the canonical gauge of the final depth.
    """

    H0: np.ndarray
    H1: np.ndarray
    P: list
    closing: np.ndarray | None
    params: list
    bases: list

    def hamiltonians(self, a: float) -> np.ndarray:
        return self.H0 + a * self.H1


class GateSimulator:
    """Builds segment Hamiltonians and projections for a model and lattice setup.

    Lattice solutions are cached per depth, so repeated evaluations during
    optimization mostly reuse earlier band and Wannier computations.  ``j_source``
    selects the two-band hopping: "lattice" (band solve) or "spline" (table).
    """

    def __init__(self, config: LatticeConfig, model: "Model | str" = "multiband-4",
                 disc: Discretization = Discretization(), table: SplineTable | None = None,
                 j_source: str = "lattice", leakage_threshold: float | None = 0.05,
                 cache: LatticeCache | None = None):
        self.config = config
        self.model = Model.parse(model)
        self.disc = disc
        self.table = table
        if j_source not in ("lattice", "spline"):
            raise ValueError("j_source must be 'lattice' or 'spline'")
        if j_source == "spline" and table is None:
            raise ValueError("spline hopping requires a SplineTable")
        self.j_source = j_source
        self.leakage_threshold = leakage_threshold
        self.cache = cache or LatticeCache(config, self.model.n_levels, disc)
        self._hopping: dict = {}
        self.evaluations = 0

    # -- two-band hopping ---------------------------------------------------
    def hopping(self, vs: float, vl: float) -> float:
        if self.j_source == "spline":
            return float(self.table.J(vs, vl))
        key = self.cache.key(vs, vl)
        if key not in self._hopping:
            self._hopping[key] = hopping_from_bands(self.config, DepthPoint(vs, vl, self.config.relative_phase),
                                                    self.disc)
        return self._hopping[key]

    # -- per-depth data with gauge continuity ----------------------------------
    def aligned_segment(self, vs: float, vl: float, prev_basis=None):
        """(basis, unit-a parameters, overlap with prev) in the continuity gauge."""
        _, basis, params = self.cache.get(vs, vl)
        if prev_basis is None:
            return basis, params, None
        aligned = align_gauge(basis, prev_basis)
        if aligned is not basis:
            params = params.with_signs(aligned.gauge_signs)
        O = aligned.dx * aligned.modes @ prev_basis.modes.T
        return aligned, params, O

    def chain(self, pulse: PulseSchedule):
        """Aligned bases, parameters and overlaps along a pulse."""
        bases, params, overlaps = [], [], []
        prev = None
        for vs, vl in zip(pulse.V_s, pulse.V_l):
            b, p, O = self.aligned_segment(vs, vl, prev)
            bases.append(b)
            params.append(p)
            overlaps.append(O)
            prev = b
        return bases, params, overlaps

    # -- sector operators -----------------------------------------------------
    def sector_dim(self, sector) -> int:
        return model_dimension(self.model, sector)

    def onebody_matrix(self, params, sector):
        """H0 of one segment from (unit-a) parameters."""
        if self.model.kind == "3d":
            return three_d_components(params, *self._transverse())[0]
        return sector_operators(2 * self.model.n_levels, *sector).onebody(params.onebody)

    def onebody_matrix_from(self, t, sector):
        """Many-body operator of a single-particle matrix ``t`` over the x modes."""
        if self.model.kind == "3d":
            return np.kron(sector_operators(4, 1, 1).onebody(t), np.eye(16))
        return sector_operators(2 * self.model.n_levels, *sector).onebody(t)

    def interaction_matrix(self, params, sector):
        if self.model.kind == "3d":
            return three_d_components(params, *self._transverse())[1]
        return sector_operators(2 * self.model.n_levels, *sector).interaction(params.interaction)

    def _transverse(self):
        return transverse_levels(self.config, "y", self.disc), transverse_levels(self.config, "z", self.disc)

    def lift(self, O, sector):
        if self.model.kind == "3d":
            return np.kron(lift_projection_to_fock(O, enumerate_fock_basis(4, 1, 1)), np.eye(16))
        return lift_projection_to_fock(O, enumerate_fock_basis(2 * self.model.n_levels, *sector))

    def two_band_interaction(self, pulse: PulseSchedule, sector) -> np.ndarray:
        """Onsite-only interaction per Bohr radius, frozen at the first segment."""
        if pulse.n_steps == 0:
            return np.zeros((self.sector_dim(sector),) * 2)
        _, _, params = self.cache.get(pulse.V_s[0], pulse.V_l[0])
        g = np.zeros_like(params.interaction)
        g[0, 0, 0, 0] = params.interaction[0, 0, 0, 0]
        g[1, 1, 1, 1] = params.interaction[1, 1, 1, 1]
        return sector_operators(2, *sector).interaction(g)

    def two_band_hopping_operator(self, sector) -> np.ndarray:
        """d H / d J for the two-band model: -(sum over spin of L<->R hopping)."""
        t = np.array([[0.0, -1.0], [-1.0, 0.0]])
        return sector_operators(2, *sector).onebody(t)

    def operators(self, pulse: PulseSchedule, sector) -> SegmentOperators:
        """All segment matrices of one sector for the given pulse."""
        n = pulse.n_steps
        D = self.sector_dim(sector)
        if self.model.kind == "two-band":
            HJ = self.two_band_hopping_operator(sector)
            J = np.array([self.hopping(vs, vl) for vs, vl in zip(pulse.V_s, pulse.V_l)])
            H0 = J[:, None, None] * HJ[None]
            H1 = np.broadcast_to(self.two_band_interaction(pulse, sector), (n, D, D))
            return SegmentOperators(H0, H1, [None] * n, None, list(J), [])
        bases, params, overlaps = self.chain(pulse)
        H0 = np.empty((n, D, D), dtype=complex)
        H1 = np.empty((n, D, D), dtype=complex)
        for j, p in enumerate(params):
            H0[j] = self.onebody_matrix(p, sector)
            H1[j] = self.interaction_matrix(p, sector)
        P = [None] + [self.lift(O, sector) for O in overlaps[1:]]
        closing = None
        if n:
            fresh = self.cache.get(pulse.V_s[-1], pulse.V_l[-1])[1]
            signs = bases[-1].gauge_signs * fresh.gauge_signs
            if np.any(signs < 0):
                closing = self.lift(np.diag(signs), sector)
        return SegmentOperators(H0, H1, P, closing, params, bases)

    # -- propagation ----------------------------------------------------------
    def propagate_states(self, pulse: PulseSchedule, psi0: np.ndarray, ops: SegmentOperators | None = None,
                         sector=None, record: bool = False, check_leakage: bool = True):
        """Evolve column vectors ``psi0`` (D,) or (D, m); returns final (and snapshots)."""
        if ops is None:
            ops = self.operators(pulse, sector)
        self.evaluations += 1
        psi = np.asarray(psi0, dtype=complex)
        snapshots = [psi.copy()] if record else None
        if pulse.n_steps:
            U, _, _ = _propagators(ops.hamiltonians(pulse.a), pulse.dt)
            for j in range(pulse.n_steps):
                if ops.P[j] is not None:
                    psi = ops.P[j] @ psi
                psi = U[j] @ psi
                if j == pulse.n_steps - 1 and ops.closing is not None:
                    psi = ops.closing @ psi
                if check_leakage and self.leakage_threshold is not None:
                    leak = 1 - np.min(np.sum(np.abs(psi) ** 2, axis=0))
                    if leak > self.leakage_threshold:
                        raise LeakageError(j + 1, float(leak), self.leakage_threshold)
                if record:
                    snapshots.append(psi.copy())
        return (psi, snapshots) if record else psi

    def gate_matrix(self, pulse: PulseSchedule, sector) -> np.ndarray:
        """Full propagator of one sector including projections (not unitary in general)."""
        D = self.sector_dim(sector)
        return self.propagate_states(pulse, np.eye(D, dtype=complex), sector=sector, check_leakage=False)


# ---------------------------------------------------------------------------
# Trajectories and costs
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Snapshots of one propagation: N_T + 1 states, parameters and leakage."""

    times: np.ndarray
    states: np.ndarray
    params: list
    leakage: np.ndarray
    model: str
    sector: tuple
    labels: list
    costs: dict = field(default_factory=dict)

    @property
    def final(self) -> ManyBodyState:
        return ManyBodyState(self.states[-1], self.sector, self.model)

    def populations(self) -> np.ndarray:
        return np.abs(self.states) ** 2

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ms", "basis_label", "re", "im", "prob"])
            for t, psi in zip(self.times, self.states):
                for label, c in zip(self.labels, psi):
                    w.writerow([f"{t:.9g}", label, f"{c.real:.17g}", f"{c.imag:.17g}", f"{abs(c) ** 2:.17g}"])

    def sidecar(self) -> dict:
        return {"model": self.model, "sector": list(self.sector), "steps": len(self.times) - 1,
                "costs": self.costs, "leakage": [float(x) for x in self.leakage],
                "max_leakage": float(np.max(self.leakage))}

    def save(self, csv_path) -> None:
        self.to_csv(csv_path)
        Path(csv_path).with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2))


def basis_labels(model: Model, sector) -> list[str]:
    if model.kind == "3d":
        x = enumerate_fock_basis(4, 1, 1)
        return [f"{x.state_name(i)}|y{a}{b}|z{c}{d}" for i in range(x.dim)
                for a in (0, 1) for b in (0, 1) for c in (0, 1) for d in (0, 1)]
    basis = enumerate_fock_basis(2 * model.n_levels, *sector)
    return [basis.state_name(i) for i in range(basis.dim)]


def propagate_nonadiabatic(config: LatticeConfig, pulse: PulseSchedule, model, psi0,
                           simulator: GateSimulator | None = None, target=None, **kwargs) -> Trajectory:
    """Propagate ``psi0`` under ``pulse``, reprojecting onto each step's Wannier basis.

    ``psi0`` may be a ManyBodyState, a label such as "ud" or a dict of label
    amplitudes.  In two-band mode the basis is frozen and U is fixed at its
    first-segment value.  Raises LeakageError when the lost norm exceeds the
    simulator's threshold.
    """
    sim = simulator or GateSimulator(config, model, **kwargs)
    state = as_state(psi0, sim.model)
    ops = sim.operators(pulse, state.sector)
    final, snaps = sim.propagate_states(pulse, state.vector, ops=ops, record=True)
    states = np.array(snaps)
    leakage = 1 - np.sum(np.abs(states) ** 2, axis=1)
    if sim.model.kind == "two-band":
        U0 = sim.cache.get(pulse.V_s[0], pulse.V_l[0])[2].onsite() * pulse.a if pulse.n_steps else 0.0
        params = [{"J": J, "U": U0} for J in ops.params]
    else:
        params = [p.with_a(pulse.a) for p in ops.params]
    traj = Trajectory(pulse.times, states, params, leakage, sim.model.tag, state.sector,
                      basis_labels(sim.model, state.sector))
    if target is not None:
        traj.costs["state"] = evaluate_state_cost(traj.final, as_state(target, sim.model))
    return traj


def evaluate_state_cost(final, target) -> float:
    """C = 1 - |<target|psi>|^2."""
    psi = getattr(final, "vector", final)
    tar = getattr(target, "vector", target)
    if np.shape(psi) != np.shape(tar):
        raise ValueError("state and target live in different bases")
    return float(1.0 - abs(np.vdot(tar, psi)) ** 2)


def evaluate_gate_cost(pulse: PulseSchedule, pairs, model=None, simulator: GateSimulator | None = None,
                       config: LatticeConfig | None = None) -> float:
    """C^F = 1 - (1/N_i) sum |<target|U(T)|initial>|^2 over (initial, target) pairs.

    Per-pair phases are ignored, so this is weaker than a true gate fidelity.
    """
    if not pairs:
        raise ValueError("empty pair list")
    sim = simulator or GateSimulator(config or LatticeConfig(), model)
    overlaps = pair_overlaps(sim, pulse, pairs)
    return float(1.0 - np.mean(np.abs(overlaps) ** 2))


def group_pairs(pairs, model):
    """Pairs grouped by sector: {sector: (initial columns, target columns, indices)}."""
    groups: dict = {}
    for i, (ini, tar) in enumerate(pairs):
        s0, s1 = as_state(ini, model), as_state(tar, model)
        if s0.sector != s1.sector:
            raise ValueError("initial and target states must share a sector")
        groups.setdefault(s0.sector, []).append((i, s0.vector, s1.vector))
    return {sec: (np.array([g[1] for g in grp]).T, np.array([g[2] for g in grp]).T, [g[0] for g in grp])
            for sec, grp in groups.items()}


def pair_overlaps(sim: GateSimulator, pulse: PulseSchedule, pairs) -> np.ndarray:
    out = np.empty(len(pairs), dtype=complex)
    for sector, (ini, tar, idx) in group_pairs(pairs, sim.model).items():
        final = sim.propagate_states(pulse, ini, sector=sector)
        out[idx] = np.einsum("dm,dm->m", tar.conj(), final)
    return out
