"""Fermi-Hubbard parameters from Wannier bases, plus fast J(V) backends."""

from __future__ import annotations

import hashlib
import itertools
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.constants as sc
from scipy.interpolate import RectBivariateSpline

from .lattice import (BOHR_RADIUS, DEFAULT_F_MAX, DepthPoint, Discretization, LatticeConfig, LatticeError,
                      TransverseLevels, WannierBasis, _fourier_blocks, build_wannier_basis,
                      quasi_momenta, solve_bands, solve_transverse_levels)


class OutOfDomainError(ValueError):
    """Spline query outside the tabulated (V_s, V_l) box."""


def contact_strength(config: LatticeConfig) -> float:
    """4 pi hbar a / m per Bohr radius, converted to rad/ms * m^3."""
    return 4 * np.pi * sc.hbar * BOHR_RADIUS / config.species_mass * 1e-3


@dataclass(frozen=True)
class TransverseFactors:
    """Ground-mode integrals of the frozen y and z lattices, in 1/m."""

    I_y: float
    I_z: float

    @property
    def product(self) -> float:
        return self.I_y * self.I_z


@lru_cache(maxsize=16)
def transverse_levels(config: LatticeConfig, axis: str = "y",
                      disc: Discretization = Discretization()) -> TransverseLevels:
    depth = config.V_y if axis == "y" else config.V_z
    return solve_transverse_levels(config, depth, 2, disc)


def transverse_factors(config: LatticeConfig, disc: Discretization = Discretization()) -> TransverseFactors:
    return TransverseFactors(transverse_levels(config, "y", disc).ground_integral,
                             transverse_levels(config, "z", disc).ground_integral)


@lru_cache(maxsize=8)
def significant_mask(n_levels: int) -> np.ndarray:
    """Boolean mask over (2M)^4 mode tuples (a, b, c, d) that are kept.

    Within one level every side pattern is kept (onsite, offsite, exchange,
    pair tunneling and density-assisted hopping).  Across two levels only
    same-side tuples whose multiset is {X, X, Y, Y} survive.
    """
    S = 2 * n_levels
    mask = np.zeros((S,) * 4, dtype=bool)
    for tup in itertools.product(range(S), repeat=4):
        levels = {m // 2 for m in tup}
        if len(levels) == 1:
            mask[tup] = True
        elif len(levels) == 2 and len({m % 2 for m in tup}) == 1:
            mask[tup] = all(tup.count(m) == 2 for m in set(tup))
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True)
class HubbardParameters:
    """Hubbard parameters of one time step.

    J: (M,) hopping per level; eps: (M, 2) onsite energies (L, R); dJ: (M, 2)
    density-assisted corrections; all in rad/ms.  ``onebody`` is the
    (2M, 2M) single-particle matrix and ``interaction`` the dense (2M)^4
    tensor with non-significant tuples zeroed.  ``x_overlaps`` keeps the bare
    x integrals (1/m) and ``contact_unit`` the strength 4 pi hbar a0 / m.
    """

    J: np.ndarray
    eps: np.ndarray
    dJ: np.ndarray
    a: float
    onebody: np.ndarray
    interaction: np.ndarray
    x_overlaps: np.ndarray
    contact_unit: float = 0.0

    @property
    def n_levels(self) -> int:
        return self.J.size

    @property
    def U(self) -> dict[tuple[int, int, int, int], float]:
        """Significant interaction entries keyed by mode tuple."""
        idx = np.argwhere(significant_mask(self.n_levels))
        return {tuple(int(i) for i in t): float(self.interaction[tuple(t)]) for t in idx}

    def onsite(self, level: int = 0, side: int = 0) -> float:
        m = 2 * level + side
        return float(self.interaction[m, m, m, m])

    def offsite(self, level: int = 0) -> float:
        L, R = 2 * level, 2 * level + 1
        return float(self.interaction[L, R, L, R])

    def with_a(self, a: float) -> "HubbardParameters":
        """Rescale every interaction term to scattering length ``a`` (Bohr)."""
        if self.a == 0:
            raise ValueError("cannot rescale parameters computed at a = 0")
        s = a / self.a
        return replace(self, a=float(a), interaction=self.interaction * s, dJ=self.dJ * s)

    def with_signs(self, signs) -> "HubbardParameters":
        """Parameters in a basis whose modes were multiplied by ``signs``."""
        s = np.asarray(signs, dtype=float)
        onebody = self.onebody * np.outer(s, s)
        s4 = np.einsum("a,b,c,d->abcd", s, s, s, s)
        J = -onebody[0::2, 1::2].diagonal().copy()
        return replace(self, J=J, onebody=onebody, interaction=self.interaction * s4,
                       x_overlaps=self.x_overlaps * s4,
                       dJ=self.dJ * (s[0::2] * s[1::2])[:, None])


def compute_hubbard_parameters(wannier: WannierBasis, depth: DepthPoint | None, a: float,
                               transverse: TransverseFactors | tuple[float, float]) -> HubbardParameters:
    """Hopping, onsite energies and contact-interaction terms of a Wannier basis.

    Single-particle terms are evaluated exactly in the Bloch eigenbasis.  The
    interaction uses g = 4 pi hbar^2 a / m with the x integral of four modes
    times the transverse ground-mode integrals.
    """
    if not np.isfinite(a):
        raise ValueError("scattering length must be finite")
    gram = wannier.dx * np.einsum("ix,ix->i", wannier.modes, wannier.modes)
    if np.max(np.abs(gram - 1)) > 1e-6:
        raise LatticeError("Wannier modes are not normalized")
    if not isinstance(transverse, TransverseFactors):
        transverse = TransverseFactors(*transverse)
    M = wannier.n_levels
    config = wannier.bands.config

    full = wannier.energy_matrix()
    onebody = np.zeros_like(full)
    for p in range(M):
        block = slice(2 * p, 2 * p + 2)
        onebody[block, block] = full[block, block]
    onebody = (onebody + onebody.T) / 2
    J = -onebody[0::2, 1::2].diagonal().copy()
    eps = onebody.diagonal().reshape(M, 2).copy()

    w = wannier.modes
    d = config.cell_length
    x4 = wannier.dx * np.einsum("ax,bx,cx,dx->abcd", w, w, w, w, optimize=True) / d
    x4 = np.where(significant_mask(M), x4, 0.0)
    g = contact_strength(config) * a * transverse.product
    interaction = g * x4
    dJ = np.empty((M, 2))
    for p in range(M):
        L, R = 2 * p, 2 * p + 1
        dJ[p] = [interaction[L, L, L, R], interaction[R, R, L, R]]
    return HubbardParameters(J, eps, dJ, float(a), onebody, interaction, x4,
                             contact_strength(config))


# ---------------------------------------------------------------------------
# Hellmann-Feynman band derivatives
# ---------------------------------------------------------------------------

def _depth_derivative_operators(f_max: int, phi: float):
    # dH/dV_s per E_rs and dH/dV_l per E_rl, both in units of E_rs
    zero = np.zeros(1)
    dVs = _fourier_blocks(zero, f_max, 0.0, 0.5, {2: 0.25 * np.exp(2j * phi)})[0]
    dVl = _fourier_blocks(zero, f_max, 0.0, -1 / 8, {1: -1 / 16})[0]
    return dVs, dVl


def band_derivatives(bands) -> tuple[np.ndarray, np.ndarray]:
    """Hellmann-Feynman dE_{k,b}/dV_s and dE_{k,b}/dV_l for a whole BandSolution.

    Returns two (L, B) arrays in rad/ms per recoil.  Points where a band is
    closer than 1e-10 to a neighbour fall back to a symmetric finite difference.
    """
    dVs, dVl = _depth_derivative_operators(bands.f_max, bands.depth.phi)
    v = bands.bloch_coeffs
    gs = np.einsum("kfb,fg,kgb->kb", v.conj(), dVs, v).real * bands.config.E_rs
    gl = np.einsum("kfb,fg,kgb->kb", v.conj(), dVl, v).real * bands.config.E_rs
    gaps = np.diff(bands.energies, axis=1) / bands.config.E_rs
    if np.any(np.abs(gaps) < 1e-10):
        gs, gl = _fd_band_derivatives(bands)
    return gs, gl


def _fd_band_derivatives(bands, h: float = 1e-5):
    def energies(dvs, dvl):
        dp = DepthPoint(bands.depth.V_s + dvs, bands.depth.V_l + dvl, bands.depth.phi)
        return solve_bands(bands.config, dp, bands.n_bands, bands.n_k, bands.f_max).energies
    gs = (energies(h, 0) - energies(-h, 0)) / (2 * h)
    gl = (energies(0, h) - energies(0, -h)) / (2 * h)
    return gs, gl


class DegeneracyWarning(UserWarning):
    pass


def band_energy_gradient(config: LatticeConfig, depth: DepthPoint, band: int, k: float,
                         f_max: int = DEFAULT_F_MAX) -> tuple[float, float]:
    """(dE_band/dV_s, dE_band/dV_l) at quasi-momentum k via Hellmann-Feynman.

    Near a degeneracy (gap below 1e-10 E_rs) the result comes from a symmetric
    finite difference instead and a DegeneracyWarning is issued.
    """
    import warnings

    dc = depth.V_s / 2 - depth.V_l / 8
    harmonics = {1: -depth.V_l / 16, 2: depth.V_s / 4 * np.exp(2j * depth.phi)}
    H = _fourier_blocks([k], f_max, 1.0, dc, harmonics)[0]
    e, v = np.linalg.eigh(H)
    gaps = [abs(e[band] - e[j]) for j in (band - 1, band + 1) if 0 <= j < e.size]
    if min(gaps) < 1e-10:
        warnings.warn(f"band {band} is degenerate at k={k}; using finite differences",
                      DegeneracyWarning, stacklevel=2)

        def energy(dvs, dvl):
            dcp = (depth.V_s + dvs) / 2 - (depth.V_l + dvl) / 8
            hp = {1: -(depth.V_l + dvl) / 16, 2: (depth.V_s + dvs) / 4 * np.exp(2j * depth.phi)}
            return np.linalg.eigvalsh(_fourier_blocks([k], f_max, 1.0, dcp, hp)[0])[band]
        h = 1e-5
        return ((energy(h, 0) - energy(-h, 0)) / (2 * h) * config.E_rs,
                (energy(0, h) - energy(0, -h)) / (2 * h) * config.E_rs)
    dVs, dVl = _depth_derivative_operators(f_max, depth.phi)
    vi = v[:, band]
    return (float((vi.conj() @ dVs @ vi).real * config.E_rs),
            float((vi.conj() @ dVl @ vi).real * config.E_rs))


def level_parameter_gradients(bands, n_levels: int):
    """dJ_p/dV and d eps_p/dV (symmetric-well band formulas).

    Returns arrays of shape (2, M): row 0 is d/dV_s, row 1 d/dV_l.
    J_p = (E_{2p+1} - E_{2p}) / 2 and eps_p = (E_{2p+1} + E_{2p}) / 2 with
    band-averaged energies.
    """
    gs, gl = band_derivatives(bands)
    g = np.stack([gs.mean(axis=0), gl.mean(axis=0)])[:, : 2 * n_levels]
    dJ = (g[:, 1::2] - g[:, 0::2]) / 2
    deps = (g[:, 1::2] + g[:, 0::2]) / 2
    return dJ, deps


def hopping_from_bands(config: LatticeConfig, depth: DepthPoint, disc: Discretization = Discretization()) -> float:
    """J_0 = (E_1 - E_0) / 2 with band-averaged energies."""
    e = solve_bands(config, depth, 2, disc.n_k, disc.f_max).band_means()
    return float((e[1] - e[0]) / 2)


# ---------------------------------------------------------------------------
# Spline table of the two-band hopping
# ---------------------------------------------------------------------------

TABLE_FORMAT_VERSION = 1


def config_hash(config: LatticeConfig, disc: Discretization, extra=None) -> str:
    payload = json.dumps({"config": asdict(config), "disc": asdict(disc), "extra": extra},
                         sort_keys=True, default=float)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class SplineTable:
    """Bicubic fit of J_0(V_s, V_l) over a rectangular grid of depths."""

    vs_nodes: np.ndarray
    vl_nodes: np.ndarray
    values: np.ndarray
    residual: float
    key: str = ""

    def __post_init__(self):
        self._spline = RectBivariateSpline(self.vs_nodes, self.vl_nodes, self.values, kx=3, ky=3, s=0)

    @property
    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return ((float(self.vs_nodes[0]), float(self.vs_nodes[-1])),
                (float(self.vl_nodes[0]), float(self.vl_nodes[-1])))

    def _check(self, vs, vl):
        (a, b), (c, d) = self.bounds
        tol = 1e-12 * max(abs(b), abs(d), 1.0)
        vs = np.asarray(vs, dtype=float)
        vl = np.asarray(vl, dtype=float)
        if np.any(vs < a - tol) or np.any(vs > b + tol) or np.any(vl < c - tol) or np.any(vl > d + tol):
            raise OutOfDomainError(f"depth outside spline domain V_s in [{a}, {b}], V_l in [{c}, {d}]")
        return np.clip(vs, a, b), np.clip(vl, c, d)

    def J(self, vs, vl):
        vs, vl = self._check(vs, vl)
        return self._spline.ev(vs, vl)

    def gradient(self, vs, vl):
        """(dJ/dV_s, dJ/dV_l) at the given points."""
        vs, vl = self._check(vs, vl)
        return self._spline.ev(vs, vl, dx=1), self._spline.ev(vs, vl, dy=1)

    def save(self, path) -> None:
        meta = {"version": TABLE_FORMAT_VERSION, "key": self.key, "residual": self.residual,
                "vs": [float(self.vs_nodes[0]), float(self.vs_nodes[-1]), int(self.vs_nodes.size)],
                "vl": [float(self.vl_nodes[0]), float(self.vl_nodes[-1]), int(self.vl_nodes.size)],
                "units": {"V_s": "E_rs", "V_l": "E_rl", "J": "rad/ms"}}
        with open(path, "wb") as fh:
            np.savez(fh, vs=self.vs_nodes, vl=self.vl_nodes, J=self.values, meta=json.dumps(meta))

    @classmethod
    def load(cls, path) -> "SplineTable":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != TABLE_FORMAT_VERSION:
                raise ValueError(f"unsupported table version {meta.get('version')}")
            return cls(data["vs"], data["vl"], data["J"], meta["residual"], meta["key"])


def default_cache_dir() -> Path:
    import os
    return Path(os.environ.get("FERMIGATE_CACHE", Path.home() / ".cache" / "fermigate"))


def build_spline_table(config: LatticeConfig, vs_range=(2.0, 30.0), vl_range=(20.0, 50.0),
                       n: int | tuple[int, int] = 100, disc: Discretization = Discretization(),
                       cache_dir: str | Path | None = None) -> SplineTable:
    """Tabulate J_0 on an n x n depth grid and fit a degree-3 bivariate spline.

    With ``cache_dir`` the table is loaded from / saved to a file keyed by a
    hash of the configuration, ranges and grid size.
    """
    nx, ny = (n, n) if np.isscalar(n) else n
    if nx < 4 or ny < 4:
        raise ValueError("need at least 4 nodes per axis for a cubic spline")
    if vs_range[0] < 0 or vl_range[0] < 0 or vs_range[1] <= vs_range[0] or vl_range[1] <= vl_range[0]:
        raise ValueError("invalid depth ranges")
    key = config_hash(config, disc, [list(vs_range), list(vl_range), nx, ny])
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"jtable-{key}.npz"
        if path.exists():
            return SplineTable.load(path)
    vs = np.linspace(*vs_range, nx)
    vl = np.linspace(*vl_range, ny)
    kappas = quasi_momenta(disc.n_k)
    values = np.empty((nx, ny))
    for i, a in enumerate(vs):
        for j, b in enumerate(vl):
            dc = a / 2 - b / 8
            harmonics = {1: -b / 16, 2: a / 4 * np.exp(2j * config.relative_phase)}
            e = np.linalg.eigvalsh(_fourier_blocks(kappas, disc.f_max, 1.0, dc, harmonics))
            values[i, j] = (e[:, 1].mean() - e[:, 0].mean()) / 2 * config.E_rs
    table = SplineTable(vs, vl, values, 0.0, key)
    grid_fit = table._spline(vs, vl)
    table.residual = float(np.max(np.abs(grid_fit - values)))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.save(path)
    return table


# ---------------------------------------------------------------------------
# Per-depth cache of lattice solutions
# ---------------------------------------------------------------------------

class LatticeCache:
    """Memoized (band solution, Wannier basis, unit-a Hubbard parameters) per depth.

    Keys are depths quantized to 1e-9 recoils.  Cached parameters use a = 1
    Bohr radius and the fresh (positive-peak) gauge; callers rescale and align.
    """

    def __init__(self, config: LatticeConfig, n_levels: int, disc: Discretization = Discretization(),
                 n_bands: int | None = None, maxsize: int = 1024):
        self.config = config
        self.n_levels = n_levels
        self.disc = disc
        self.n_bands = n_bands or 2 * n_levels
        self.maxsize = maxsize
        self.transverse = transverse_factors(config, disc)
        self._store: OrderedDict = OrderedDict()
        self.solves = 0

    def key(self, vs: float, vl: float):
        return (round(float(vs) * 1e9), round(float(vl) * 1e9))

    def get(self, vs: float, vl: float):
        k = self.key(vs, vl)
        hit = self._store.get(k)
        if hit is not None:
            self._store.move_to_end(k)
            return hit
        depth = DepthPoint(float(vs), float(vl), self.config.relative_phase)
        bands = solve_bands(self.config, depth, self.n_bands, self.disc.n_k, self.disc.f_max)
        basis = build_wannier_basis(bands, self.n_levels, points_per_cell=self.disc.points_per_cell)
        params = compute_hubbard_parameters(basis, depth, 1.0, self.transverse)
        self.solves += 1
        if len(self._store) >= self.maxsize:
            self._store.popitem(last=False)
        self._store[k] = (bands, basis, params)
        return self._store[k]
