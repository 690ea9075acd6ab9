"""Robustness of optimized pulses against static experimental imperfections.

Error sources are a static superlattice phase, a multiplicative intensity
error on both depth traces, tunneling into neighbouring double wells and a
deviation of the scattering length.  Repeated-gate sequences apply the gate
map of one noise realization k times and compare with the ideal k-fold gate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .dynamics import GATE_PAIRS, STATE_PAIRS, GateSimulator, Model, PulseSchedule, as_state, group_pairs
from .hubbard import LatticeCache
from .lattice import DepthPoint, Discretization, LatticeConfig, align_gauge


@dataclass(frozen=True)
class NoiseSpec:
    """Noise strengths: phase std (rad), intensity extent (fraction), sampling sizes."""

    phase_sigma: float = 4.5e-3
    intensity_extent: float = 5e-3
    grid_shape: tuple = (20, 20)
    n_samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.phase_sigma) or self.phase_sigma < 0:
            raise ValueError("phase_sigma must be non-negative")
        if not 0 <= self.intensity_extent < 1:
            raise ValueError("intensity_extent must lie in [0, 1)")
        if len(self.grid_shape) != 2 or min(self.grid_shape) < 1:
            raise ValueError("grid_shape must be two positive integers")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def phase_samples(self, n: int | None = None) -> np.ndarray:
        return self.rng().normal(0.0, self.phase_sigma, n or self.n_samples)

    def intensity_samples(self, n: int) -> np.ndarray:
        """(n, 2) uniform errors on (V_s, V_l) in [-e, e]."""
        e = self.intensity_extent
        return self.rng().uniform(-e, e, (n, 2))


@dataclass
class EnsembleResult:
    """Per-sample parameters and costs of a noise ensemble."""

    parameters: np.ndarray
    costs: np.ndarray
    baseline: float
    name: str = "parameter"

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs))

    @property
    def std(self) -> float:
        return float(np.std(self.costs))

    @property
    def stderr(self) -> float:
        return self.std / np.sqrt(self.costs.size)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "parameter", "cost"])
            for i, (p, c) in enumerate(zip(self.parameters.reshape(len(self.costs), -1), self.costs)):
                w.writerow([i, ";".join(f"{x:.12g}" for x in np.atleast_1d(p)), f"{c:.17g}"])


def _pairs(pairs):
    if pairs is None:
        return STATE_PAIRS["swap"]
    return STATE_PAIRS[pairs] if isinstance(pairs, str) else pairs


def gate_cost(simulator: GateSimulator, pulse: PulseSchedule, pairs) -> float:
    """Averaged transfer infidelity of ``pairs`` (no leakage abort)."""
    out = []
    for sector, (ini, tar, _) in group_pairs(pairs, simulator.model).items():
        final = simulator.propagate_states(pulse, ini, sector=sector, check_leakage=False)
        out.extend(np.abs(np.einsum("dm,dm->m", tar.conj(), final)) ** 2)
    return float(1.0 - np.mean(out))


def _simulator(config, model, disc):
    return GateSimulator(config, model, disc, leakage_threshold=None)


def simulate_phase_noise(pulse: PulseSchedule, spec: NoiseSpec, model="multiband-4",
                         config: LatticeConfig = LatticeConfig(), pairs=None,
                         disc: Discretization = Discretization(), phases=None) -> EnsembleResult:
    """Gate cost for static phase offsets drawn from N(0, phase_sigma^2)."""
    pairs = _pairs(pairs)
    base = gate_cost(_simulator(config, model, disc), pulse, pairs)
    phis = spec.phase_samples() if phases is None else np.asarray(phases, float)
    costs = np.empty(phis.size)
    for i, phi in enumerate(phis):
        if phi == config.relative_phase:
            costs[i] = base
            continue
        costs[i] = gate_cost(_simulator(config.with_phase(float(phi)), model, disc), pulse, pairs)
    return EnsembleResult(phis, costs, base, "phi")


@dataclass
class IntensityMap:
    deltas_s: np.ndarray
    deltas_l: np.ndarray
    costs: np.ndarray
    baseline: float

    @property
    def worst(self) -> float:
        return float(np.max(self.costs))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "delta_V_s", "delta_V_l", "cost"])
            k = 0
            for i, ds in enumerate(self.deltas_s):
                for j, dl in enumerate(self.deltas_l):
                    w.writerow([k, f"{ds:.12g}", f"{dl:.12g}", f"{self.costs[i, j]:.17g}"])
                    k += 1


def simulate_intensity_grid(pulse: PulseSchedule, spec: NoiseSpec, model="multiband-4",
                            config: LatticeConfig = LatticeConfig(), pairs=None,
                            disc: Discretization = Discretization(), simulator=None) -> IntensityMap:
    """Cost with both depth traces scaled by (1 + delta) over a uniform grid in [-e, e]^2."""
    pairs = _pairs(pairs)
    sim = simulator or _simulator(config, model, disc)
    e = spec.intensity_extent
    ns, nl = spec.grid_shape
    ds = np.linspace(-e, e, ns) if ns > 1 else np.zeros(1)
    dl = np.linspace(-e, e, nl) if nl > 1 else np.zeros(1)
    costs = np.empty((ns, nl))
    for i, a in enumerate(ds):
        for j, b in enumerate(dl):
            costs[i, j] = gate_cost(sim, pulse.scaled(a, b), pairs)
    return IntensityMap(ds, dl, costs, gate_cost(sim, pulse, pairs))


def scan_scattering_deviation(pulse: PulseSchedule, a_base: float, deltas, model="multiband-4",
                              config: LatticeConfig = LatticeConfig(), pairs="sqrt-swap",
                              disc: Discretization = Discretization(), simulator=None) -> EnsembleResult:
    """Cost at a_base + delta for each deviation (Bohr radii)."""
    pairs = _pairs(pairs)
    sim = simulator or _simulator(config, model, disc)
    deltas = np.asarray(deltas, dtype=float)
    if not np.all(np.isfinite(deltas)):
        raise ValueError("deviations must be finite")
    costs = np.array([gate_cost(sim, pulse.with_a(a_base + d), pairs) for d in deltas])
    return EnsembleResult(deltas, costs, gate_cost(sim, pulse.with_a(a_base), pairs), "delta_a")


# ---------------------------------------------------------------------------
# Single atom in three double wells
# ---------------------------------------------------------------------------

# (cell shift, mode index within the cell) for the 8 tracked modes
INTERWELL_MODES = [(-1, 1), (-1, 3), (0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 2)]
INTERWELL_LABELS = ["L1", "L2", "M0L", "M0R", "M1L", "M1R", "R1", "R2"]


@dataclass
class InterwellResult:
    times: np.ndarray
    populations: np.ndarray  # (N_T + 1, 8)
    labels: list

    @property
    def neighbor(self) -> np.ndarray:
        return self.populations[:, [0, 1, 6, 7]].sum(axis=1)

    @property
    def middle(self) -> np.ndarray:
        return self.populations[:, 2:6].sum(axis=1)

    @property
    def model_leakage(self) -> np.ndarray:
        return 1.0 - self.populations.sum(axis=1)

    @property
    def max_leakage(self) -> float:
        return float(np.max(self.neighbor))


def _interwell_basis(basis):
    """Weights (8, L, B) and real-space modes (8, N) of the tracked modes."""
    ppc = basis.points_per_cell
    w = np.stack([basis.shifted_weights(s)[m] for s, m in INTERWELL_MODES])
    modes = np.stack([np.roll(basis.modes[m], s * ppc) for s, m in INTERWELL_MODES])
    return w, modes


def interwell_operators(pulse: PulseSchedule, config: LatticeConfig = LatticeConfig(),
                        disc: Discretization = Discretization(), cache: LatticeCache | None = None):
    """Per-segment 8x8 Hamiltonians and step-to-step overlaps of the three-well model."""
    cache = cache or LatticeCache(config, 2, disc)
    H, P = [], []
    prev = prev_modes = None
    for vs, vl in zip(pulse.V_s, pulse.V_l):
        _, basis, _ = cache.get(vs, vl)
        if prev is not None:
            basis = align_gauge(basis, prev)
        w, modes = _interwell_basis(basis)
        E = basis.bands.energies
        H.append(np.einsum("inb,nb,jnb->ij", w.conj(), E, w))
        P.append(None if prev_modes is None else basis.dx * modes @ prev_modes.T)
        prev, prev_modes = basis, modes
    return np.array(H), P


def simulate_interwell_leakage(pulse: PulseSchedule, config: LatticeConfig = LatticeConfig(),
                               initial: str = "M0L", disc: Discretization = Discretization(),
                               cache: LatticeCache | None = None) -> InterwellResult:
    """Propagate one atom starting in a middle-well mode; record all 8 populations."""
    H, P = interwell_operators(pulse, config, disc, cache)
    psi = np.zeros(8, dtype=complex)
    psi[INTERWELL_LABELS.index(initial)] = 1.0
    pops = [np.abs(psi) ** 2]
    for j in range(pulse.n_steps):
        if P[j] is not None:
            psi = P[j] @ psi
        w, V = np.linalg.eigh(H[j])
        psi = V @ (np.exp(-1j * w * pulse.dt) * (V.conj().T @ psi))
        pops.append(np.abs(psi) ** 2)
    return InterwellResult(pulse.times, np.array(pops), list(INTERWELL_LABELS))


def interwell_gate_map(pulse: PulseSchedule, config: LatticeConfig = LatticeConfig(),
                       disc: Discretization = Discretization(), cache=None) -> np.ndarray:
    """8x8 single-atom map of one gate in the three-well model."""
    H, P = interwell_operators(pulse, config, disc, cache)
    G = np.eye(8, dtype=complex)
    for j in range(pulse.n_steps):
        if P[j] is not None:
            G = P[j] @ G
        w, V = np.linalg.eigh(H[j])
        G = (V * np.exp(-1j * w * pulse.dt)) @ V.conj().T @ G
    return G


# ---------------------------------------------------------------------------
# Repeated gates and decay fits
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    """Fidelity after k gates and the fitted F(t) = exp(-t / tau_d)."""

    n_gates: np.ndarray
    times: np.ndarray
    fidelities: np.ndarray
    tau: float
    oscillations: float
    residual: float
    source: str = ""

    @property
    def bounded(self) -> bool:
        return np.isfinite(self.tau)

    def to_json(self) -> dict:
        return {"source": self.source, "tau_ms": self.tau if self.bounded else None,
                "oscillations": self.oscillations if self.bounded else None, "residual": self.residual}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ms", "F"])
            for t, f in zip(self.times, self.fidelities):
                w.writerow([f"{t:.9g}", f"{f:.17g}"])

    def save(self, csv_path) -> None:
        from pathlib import Path
        self.to_csv(csv_path)
        Path(csv_path).with_suffix(".json").write_text(json.dumps(self.to_json(), indent=2))


def fit_exponential_decay(times, fidelities, gate_duration: float | None = None, source: str = "") -> DecayFit:
    """Least-squares fit of exp(-t / tau); tau is infinite when F does not decrease."""
    t = np.asarray(times, dtype=float)
    F = np.asarray(fidelities, dtype=float)
    n = np.arange(1, t.size + 1) if gate_duration is None else np.rint(t / gate_duration).astype(int)
    if t.size < 2 or np.all(F >= 1.0 - 1e-15) or np.polyfit(t, F, 1)[0] >= 0:
        return DecayFit(n, t, F, np.inf, np.inf, 0.0, source)
    guess_rate = max(-np.polyfit(t, np.log(np.clip(F, 1e-12, None)), 1)[0], 1e-9)
    (rate,), _ = curve_fit(lambda x, r: np.exp(-r * x), t, F, p0=[guess_rate])
    if rate <= 0:
        return DecayFit(n, t, F, np.inf, np.inf, float(np.sqrt(np.mean((F - 1) ** 2))), source)
    tau = 1.0 / rate
    resid = float(np.sqrt(np.mean((F - np.exp(-t * rate)) ** 2)))
    period = 2 * gate_duration if gate_duration else np.nan
    return DecayFit(n, t, F, float(tau), float(tau / period) if gate_duration else np.nan, resid, source)


def repeated_fidelities(gate_maps, initial: np.ndarray, targets, n_gates: int) -> np.ndarray:
    """Mean over realizations of |<target_k|G^k|initial>|^2 for k = 1..n_gates.

    ``targets`` is a pair (odd, even) of target vectors for alternating gates.
    """
    odd, even = targets
    F = np.zeros(n_gates)
    for G in gate_maps:
        psi = initial.astype(complex)
        for k in range(n_gates):
            psi = G @ psi
            tar = odd if k % 2 == 0 else even
            F[k] += abs(np.vdot(tar, psi)) ** 2
    return F / len(gate_maps)


def _two_atom_maps(pulses_and_configs, model, disc):
    sector = (1, 1)
    maps = []
    for pulse, config in pulses_and_configs:
        maps.append(_simulator(config, model, disc).gate_matrix(pulse, sector))
    return maps


def fit_decay_time(pulse: PulseSchedule, n_gates: int, spec: NoiseSpec, source: str,
                   model="multiband-4", config: LatticeConfig = LatticeConfig(),
                   disc: Discretization = Discretization(), n_draws: int | None = None) -> DecayFit:
    """Repeat the SWAP ``n_gates`` times under one error source and fit tau_d.

    Sources: "phase" (20 static phases by default), "intensity" (25 scaled
    pulses), "interwell" (single atom in three double wells, noiseless) and
    "none".  The fidelity after k gates is the overlap with |du> for odd k and
    |ud> for even k.
    """
    if n_gates < 10:
        raise ValueError("need at least 10 gate repetitions")
    model = Model.parse(model)
    if source == "interwell":
        G = interwell_gate_map(pulse, config, disc)
        e = np.eye(8)
        ML, MR = INTERWELL_LABELS.index("M0L"), INTERWELL_LABELS.index("M0R")
        F = repeated_fidelities([G], e[ML], (e[MR], e[ML]), n_gates)
    else:
        if source == "phase":
            draws = n_draws or 20
            runs = [(pulse, config.with_phase(float(p))) for p in spec.phase_samples(draws)]
        elif source == "intensity":
            draws = n_draws or 25
            runs = [(pulse.scaled(a, b), config) for a, b in spec.intensity_samples(draws)]
        elif source == "none":
            runs = [(pulse, config)]
        else:
            raise ValueError(f"unknown error source {source!r}")
        maps = _two_atom_maps(runs, model, disc)
        ud, du = as_state("ud", model).vector, as_state("du", model).vector
        F = repeated_fidelities(maps, ud, (du, ud), n_gates)
    times = pulse.duration * np.arange(1, n_gates + 1)
    return fit_exponential_decay(times, F, pulse.duration, source)
