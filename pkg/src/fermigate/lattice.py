"""Band structure and Wannier bases of the bichromatic superlattice.

The superlattice potential along x is

    V(x) = V_s cos^2(k_s x + phi) - V_l cos^2(k_l x)

with k_s = 2 k_l, so one unit cell of length d = pi / k_l holds a double well.
Everything is solved in a plane-wave basis with reciprocal vector G = k_s.

Internal conventions: hbar = 1, energies in angular kHz (rad/ms), times in
ms, positions in units of the cell length d.  The depth V_s is given in short
lattice recoils E_rs, V_l in long lattice recoils E_rl = E_rs / 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.constants as sc

LI6_MASS = 6.0151228874 * sc.atomic_mass
BOHR_RADIUS = sc.physical_constants["Bohr radius"][0]


class LatticeError(ValueError):
    """Raised for invalid lattice input or an ill-conditioned construction."""


@dataclass(frozen=True)
class LatticeConfig:
    """Laser geometry and species constants.

    Wavelengths are in nm, angles in degrees, the mass in kg.  ``V_y`` and
    ``V_z`` are transverse depths in transverse recoil units.  The transverse
    lattices are taken as single-color lattices of wavelength
    ``lambda_transverse`` in the same tilted geometry as the short lattice.
    """

    lambda_s: float = 532.0
    lambda_l: float = 1064.0
    tilt_angle: float = 26.7
    V_y: float = 45.0
    V_z: float = 45.0
    species_mass: float = LI6_MASS
    relative_phase: float = 0.0
    lambda_transverse: float = 532.0
    transverse_tilt_angle: float = 26.7

    def __post_init__(self):
        for name in ("lambda_s", "lambda_l", "species_mass", "lambda_transverse"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise LatticeError(f"{name} must be positive, got {value}")
        if abs(self.lambda_l - 2.0 * self.lambda_s) > 1e-9 * self.lambda_l:
            raise LatticeError("lambda_l must equal 2 * lambda_s for the Fourier grid to close")
        for name in ("tilt_angle", "transverse_tilt_angle"):
            angle = getattr(self, name)
            if not 0.0 < angle < 180.0:
                raise LatticeError(f"{name} must lie in (0, 180) degrees, got {angle}")
        for name in ("V_y", "V_z"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise LatticeError(f"{name} must be a non-negative depth")
        if not np.isfinite(self.relative_phase):
            raise LatticeError("relative_phase must be finite")

    def with_phase(self, phi: float) -> "LatticeConfig":
        return replace(self, relative_phase=float(phi))

    @property
    def k_s(self) -> float:
        """Short-lattice wave vector in 1/m."""
        return 2 * np.pi / (self.lambda_s * 1e-9) * math.sin(math.radians(self.tilt_angle) / 2)

    @property
    def k_l(self) -> float:
        return 2 * np.pi / (self.lambda_l * 1e-9) * math.sin(math.radians(self.tilt_angle) / 2)

    @property
    def cell_length(self) -> float:
        """Superlattice period d = pi / k_l in metres."""
        return np.pi / self.k_l

    @property
    def E_rs(self) -> float:
        """Short-lattice recoil energy in rad/ms."""
        return sc.hbar * self.k_s**2 / (2 * self.species_mass) * 1e-3

    @property
    def E_rl(self) -> float:
        return sc.hbar * self.k_l**2 / (2 * self.species_mass) * 1e-3

    @property
    def k_transverse(self) -> float:
        return (2 * np.pi / (self.lambda_transverse * 1e-9)
                * math.sin(math.radians(self.transverse_tilt_angle) / 2))

    @property
    def E_rt(self) -> float:
        """Transverse recoil energy in rad/ms."""
        return sc.hbar * self.k_transverse**2 / (2 * self.species_mass) * 1e-3


@dataclass(frozen=True)
class DepthPoint:
    """Instantaneous lattice depths: V_s in E_rs, V_l in E_rl, phase in rad."""

    V_s: float
    V_l: float
    phi: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.V_s) and np.isfinite(self.V_l) and np.isfinite(self.phi)):
            raise LatticeError(f"non-finite depth {self}")
        if self.V_s < 0 or self.V_l < 0:
            raise LatticeError(f"depths must be non-negative, got {self}")


# Plane-wave cutoff: 16 keeps every retained band energy within 1e-8 E_rs of the
# doubled-cutoff value for depths up to 50 recoils; 10 only reaches ~2e-5 E_rs.
DEFAULT_F_MAX = 16


@dataclass(frozen=True)
class Discretization:
    """Momentum grid size, plane-wave cutoff and real-space sampling."""

    n_k: int = 16
    f_max: int = DEFAULT_F_MAX
    points_per_cell: int = 512

    def __post_init__(self):
        if self.n_k < 2 or self.n_k % 2:
            raise LatticeError("n_k must be an even integer >= 2")
        if self.f_max < 2:
            raise LatticeError("f_max must be >= 2 to represent the short-lattice coupling")
        if self.points_per_cell < 8:
            raise LatticeError("points_per_cell must be >= 8")


def quasi_momenta(n_k: int) -> np.ndarray:
    """Discrete quasi-momenta kappa_n = (2n + 1 - L) / (2L) in units of G."""
    n = np.arange(n_k)
    return (2 * n + 1 - n_k) / (2 * n_k)


def _superlattice_harmonics(depth: DepthPoint):
    # Fourier components in units of E_rs keyed by harmonic of G = k_s = 2 k_l.
    # cos^2(k_s x + phi) = 1/2 + (e^{2i(k_s x + phi)} + c.c.)/4 is harmonic 2,
    # cos^2(k_l x) = 1/2 + (e^{i k_s x} + c.c.)/4 is harmonic 1.
    v_l = depth.V_l / 4.0  # E_rl -> E_rs
    dc = depth.V_s / 2 - v_l / 2
    return dc, {1: -v_l / 4, 2: depth.V_s / 4 * np.exp(2j * depth.phi)}


def _fourier_blocks(kappas, f_max, kinetic_scale, dc, harmonics) -> np.ndarray:
    """Stack of plane-wave Hamiltonians, one per quasi-momentum.

    Entry [f', f] couples e^{i(f+kappa)Gx} to e^{i(f'+kappa)Gx}; harmonic h with
    amplitude c contributes c at f' = f + h and conj(c) at f' = f - h.
    """
    f = np.arange(-f_max, f_max + 1)
    nf = f.size
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    H = np.zeros((kappas.size, nf, nf), dtype=complex)
    idx = np.arange(nf)
    H[:, idx, idx] = kinetic_scale * (f[None, :] + kappas[:, None]) ** 2 + dc
    for h, amp in harmonics.items():
        i = np.arange(nf - h)
        H[:, i + h, i] = amp
        H[:, i, i + h] = np.conj(amp)
    return H


def build_fourier_hamiltonian(config: LatticeConfig, depth: DepthPoint, k: float,
                              f_max: int = DEFAULT_F_MAX) -> np.ndarray:
    """Plane-wave Hamiltonian at quasi-momentum ``k`` (units of G = k_s).

    Returns an Hermitian (2 f_max + 1) square matrix in rad/ms.  Row/column
    index f + f_max labels the plane wave exp(i (f + k) k_s x).
    """
    if f_max < 2:
        raise LatticeError("f_max must be >= 2 to represent the short-lattice coupling")
    if not -0.5 <= k <= 0.5:
        raise LatticeError(f"quasi-momentum {k} outside the first Brillouin zone [-1/2, 1/2]")
    dc, harmonics = _superlattice_harmonics(depth)
    return _fourier_blocks([k], f_max, 1.0, dc, harmonics)[0] * config.E_rs


@dataclass(frozen=True)
class BandSolution:
    """Lowest B Bloch bands on the discrete momentum grid.

    ``energies`` has shape (L, B) in rad/ms; ``bloch_coeffs`` has shape
    (L, 2 f_max + 1, B) with unit-norm columns.
    """

    config: LatticeConfig
    depth: DepthPoint
    k_grid: np.ndarray
    energies: np.ndarray
    bloch_coeffs: np.ndarray
    f_max: int

    @property
    def n_k(self) -> int:
        return self.k_grid.size

    @property
    def n_bands(self) -> int:
        return self.energies.shape[1]

    def band_means(self) -> np.ndarray:
        """Band-averaged energies, i.e. the onsite energy of each band's Wannier state."""
        return self.energies.mean(axis=0)


def _eigh_stack(H, n_bands):
    try:
        energies, vectors = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise LatticeError(f"eigensolver failed: {exc}") from exc
    return energies[:, :n_bands], vectors[:, :, :n_bands]


def solve_bands(config: LatticeConfig, depth: DepthPoint, n_bands: int, L: int = 16,
                f_max: int = DEFAULT_F_MAX) -> BandSolution:
    """Diagonalize the superlattice at the L quasi-momenta of a ring of L cells."""
    if L < 2 or L % 2:
        raise LatticeError("L must be an even integer >= 2")
    if f_max < 2:
        raise LatticeError("f_max must be >= 2")
    if not 1 <= n_bands <= 2 * f_max:
        raise LatticeError(f"n_bands={n_bands} exceeds the plane-wave basis (2 f_max = {2 * f_max})")
    kappas = quasi_momenta(L)
    dc, harmonics = _superlattice_harmonics(depth)
    H = _fourier_blocks(kappas, f_max, 1.0, dc, harmonics)
    energies, vectors = _eigh_stack(H, n_bands)
    return BandSolution(config, depth, kappas, energies * config.E_rs, vectors, f_max)


# ---------------------------------------------------------------------------
# Real-space sampling on the ring of L cells
# ---------------------------------------------------------------------------

def ring_grid(n_k: int, points_per_cell: int) -> np.ndarray:
    """Midpoint grid over x in [-L/2, L/2) (units of d)."""
    n = n_k * points_per_cell
    return -n_k / 2 + (np.arange(n) + 0.5) * (n_k / n)


def _frequency_index(n_k, f_max):
    # nu = f + kappa_n = (q + 1/2) / L with integer q
    f = np.arange(-f_max, f_max + 1)
    return f[None, :] * n_k + np.arange(n_k)[:, None] - n_k // 2


def plane_waves_to_real_space(pw: np.ndarray, f_max: int, points_per_cell: int) -> np.ndarray:
    """Sample functions given by plane-wave coefficients on the ring grid.

    ``pw`` has shape (..., L, 2 f_max + 1) holding coefficients a such that
    w(x) = L^{-1/2} sum a exp(2 pi i (f + kappa_n) x).  Uses one FFT per
    function; exact for these band-limited functions.
    """
    pw = np.asarray(pw)
    n_k = pw.shape[-2]
    n = n_k * points_per_cell
    q = _frequency_index(n_k, f_max)
    if q.max() - q.min() >= n:
        raise LatticeError("real-space grid too coarse for the plane-wave cutoff")
    lead = pw.shape[:-2]
    A = np.zeros(lead + (n,), dtype=complex)
    phase = np.exp(-1j * np.pi * (q + 0.5) * (1 - 1 / n))
    A[..., q.ravel() % n] = (pw * phase).reshape(lead + (-1,))
    ramp = np.exp(1j * np.pi * np.arange(n) / n)
    return ramp * np.fft.ifft(A, axis=-1) * n / np.sqrt(n_k)


# ---------------------------------------------------------------------------
# Wannier construction
# ---------------------------------------------------------------------------

def _single_band_phases(C: np.ndarray) -> np.ndarray:
    """Bloch weights of the localized Wannier state of one isolated band.

    ``C`` has shape (L, nf): the periodic parts u_k on the discrete loop.
    Phases follow from parallel transport around the Brillouin zone with the
    Berry phase distributed uniformly, which makes the state an eigenstate of
    the band-projected (periodic) position operator.  All weights have
    modulus 1/sqrt(L).
    """
    n_k = C.shape[0]
    links = np.einsum("nf,nf->n", C[:-1].conj(), C[1:])
    # closing link: u_{k0 + G} has coefficients shifted by one plane wave
    closing = np.sum(C[-1, :-1].conj() * C[0, 1:])
    transport = np.concatenate([[0.0], np.cumsum(np.angle(links))])
    berry = np.angle(closing * np.exp(1j * transport[-1]))
    return np.exp(-1j * transport + 1j * np.arange(n_k) * berry / n_k) / np.sqrt(n_k)


@dataclass(frozen=True)
class WannierBasis:
    """Left/right localized modes of M levels on the ring grid.

    Mode order is level-major, side-minor: [0L, 0R, 1L, 1R, ...].
    ``modes`` are real samples with shape (2M, N); ``weights`` hold each mode's
    expansion over the Bloch states of ``bands`` with shape (2M, L, B).
    """

    bands: BandSolution
    x: np.ndarray
    modes: np.ndarray
    weights: np.ndarray
    centers: np.ndarray
    gauge_signs: np.ndarray
    points_per_cell: int

    @property
    def n_levels(self) -> int:
        return self.modes.shape[0] // 2

    @property
    def dx(self) -> float:
        return self.x[1] - self.x[0]

    @property
    def levels(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.modes[2 * p], self.modes[2 * p + 1]) for p in range(self.n_levels)]

    def plane_waves(self, shift: int = 0) -> np.ndarray:
        """Plane-wave coefficients (2M, L, nf), optionally translated by ``shift`` cells."""
        pw = np.einsum("mnb,nfb->mnf", self.weights, self.bands.bloch_coeffs)
        if shift:
            pw = pw * np.exp(-2j * np.pi * self.bands.k_grid * shift)[None, :, None]
        return pw

    def shifted_weights(self, shift: int) -> np.ndarray:
        return self.weights * np.exp(-2j * np.pi * self.bands.k_grid * shift)[None, :, None]

    def energy_matrix(self) -> np.ndarray:
        """Single-particle Hamiltonian <w_i|H|w_j> in rad/ms (exact, Bloch space)."""
        return np.einsum("inb,nb,jnb->ij", self.weights.conj(), self.bands.energies,
                         self.weights).real

    def with_signs(self, signs) -> "WannierBasis":
        signs = np.asarray(signs, dtype=float)
        return replace(self, modes=self.modes * signs[:, None],
                       weights=self.weights * signs[:, None, None],
                       gauge_signs=self.gauge_signs * signs)


def _position_moments(w, x, dx):
    return dx * np.einsum("ix,x,jx->ij", w, x, w)


def build_wannier_basis(bands: BandSolution, n_levels: int, prev: WannierBasis | None = None,
                        points_per_cell: int = 512) -> WannierBasis:
    """Localized left/right modes for the lowest ``n_levels`` band pairs.

    Each band first gets its own localized Wannier state (centered in the
    reference cell); within each pair {2p, 2p+1} the 2x2 position operator is
    then diagonalized, giving w_pL (smaller center) and w_pR.  Modes are made
    real with a positive peak; if ``prev`` is given, signs are flipped where
    needed to maximize overlap with the previous step.
    """
    if bands.n_bands < 2 * n_levels:
        raise LatticeError(f"need {2 * n_levels} bands for {n_levels} levels, have {bands.n_bands}")
    n_k = bands.n_k
    x = ring_grid(n_k, points_per_cell)
    dx = x[1] - x[0]

    # single-band Wannier states centered in the reference cell
    band_weights = np.zeros((2 * n_levels, n_k), dtype=complex)
    for b in range(2 * n_levels):
        c = _single_band_phases(bands.bloch_coeffs[:, :, b])
        w = plane_waves_to_real_space(c[:, None] * bands.bloch_coeffs[:, :, b],
                                      bands.f_max, points_per_cell)
        center = dx * np.sum(x * np.abs(w) ** 2)
        shift = np.round(center)
        if shift:
            c = c * np.exp(-2j * np.pi * bands.k_grid * shift)
            w = plane_waves_to_real_space(c[:, None] * bands.bloch_coeffs[:, :, b],
                                          bands.f_max, points_per_cell)
        peak = np.argmax(np.abs(w))
        band_weights[b] = c * np.exp(-1j * np.angle(w[peak]))

    pw = np.einsum("bn,nfb->bnf", band_weights, bands.bloch_coeffs[:, :, : 2 * n_levels])
    wb = plane_waves_to_real_space(pw, bands.f_max, points_per_cell)
    wb_real = wb.real

    modes = np.empty((2 * n_levels, x.size))
    weights = np.zeros((2 * n_levels, n_k, bands.n_bands), dtype=complex)
    centers = np.empty(2 * n_levels)
    for p in range(n_levels):
        pair = wb_real[2 * p: 2 * p + 2]
        X = _position_moments(pair, x, dx)
        X = (X + X.T) / 2
        xs, R = np.linalg.eigh(X)
        if abs(xs[1] - xs[0]) < 1e-8:
            raise LatticeError(f"degenerate position eigenvalues at level {p}")
        for side in range(2):
            m = 2 * p + side
            coeff = R[:, side]
            mode = coeff @ pair
            sign = 1.0 if mode[np.argmax(np.abs(mode))] > 0 else -1.0
            modes[m] = sign * mode
            weights[m, :, 2 * p: 2 * p + 2] = sign * (band_weights[2 * p: 2 * p + 2].T * coeff)
            centers[m] = xs[side]

    signs = np.ones(2 * n_levels)
    basis = WannierBasis(bands, x, modes, weights, centers, signs, points_per_cell)
    if prev is not None:
        basis = align_gauge(basis, prev)
    return basis


def align_gauge(basis: WannierBasis, prev: WannierBasis) -> WannierBasis:
    """Flip mode signs so each mode overlaps positively with its predecessor."""
    if basis.modes.shape != prev.modes.shape:
        raise LatticeError("cannot align bases of different shape")
    diag = basis.dx * np.einsum("ix,ix->i", basis.modes, prev.modes)
    flips = np.where(diag < 0, -1.0, 1.0)
    if np.all(flips > 0):
        return basis
    return basis.with_signs(flips)


def wannier_overlap_matrix(new: WannierBasis, old: WannierBasis) -> tuple[np.ndarray, float]:
    """Overlap O_ij = integral of w_i^new w_j^old and the truncation leakage.

    The leakage is the largest deviation of O O^T from the identity.
    """
    if new.x.shape != old.x.shape or not np.allclose(new.x, old.x, rtol=0, atol=1e-12):
        raise LatticeError("Wannier bases are sampled on different grids")
    O = new.dx * new.modes @ old.modes.T
    leak = float(np.max(np.abs(O @ O.T - np.eye(O.shape[0]))))
    return O, leak


# ---------------------------------------------------------------------------
# Transverse single-color lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransverseLevels:
    """Two lowest Wannier levels of a transverse single-color lattice.

    ``energies`` are band-averaged onsite energies in rad/ms; ``overlaps``
    holds integral w_m w_n w_o w_p dy in 1/m for m, n, o, p in {0, 1}.
    """

    energies: np.ndarray
    overlaps: np.ndarray

    @property
    def ground_integral(self) -> float:
        return float(self.overlaps[0, 0, 0, 0])


def solve_transverse_levels(config: LatticeConfig, depth: float, n_levels: int = 2,
                            disc: Discretization = Discretization()) -> TransverseLevels:
    """Wannier levels of V cos^2(k y) with V in transverse recoils.

    Uses the same plane-wave machinery with reciprocal vector 2k (period pi/k),
    so the kinetic term is 4 E_rt (f + kappa)^2.
    """
    kappas = quasi_momenta(disc.n_k)
    H = _fourier_blocks(kappas, disc.f_max, 4.0, depth / 2, {1: depth / 4})
    energies, vectors = _eigh_stack(H, n_levels)
    x = ring_grid(disc.n_k, disc.points_per_cell)
    dx = x[1] - x[0]
    ws = []
    for b in range(n_levels):
        c = _single_band_phases(vectors[:, :, b])
        w = plane_waves_to_real_space(c[:, None] * vectors[:, :, b], disc.f_max, disc.points_per_cell)
        shift = np.round(dx * np.sum(x * np.abs(w) ** 2))
        if shift:
            c = c * np.exp(-2j * np.pi * kappas * shift)
            w = plane_waves_to_real_space(c[:, None] * vectors[:, :, b], disc.f_max,
                                          disc.points_per_cell)
        w = (w * np.exp(-1j * np.angle(w[np.argmax(np.abs(w))]))).real
        ws.append(w)
    ws = np.array(ws)
    spacing = np.pi / config.k_transverse
    overlaps = dx * np.einsum("ax,bx,cx,dx->abcd", ws, ws, ws, ws) / spacing
    return TransverseLevels(energies.mean(axis=0) * config.E_rt, overlaps)
