"""Fermionic occupation bases and second-quantized Hamiltonians.

Modes are ordered level-major, side-minor: mode 2p is w_pL, mode 2p+1 is w_pR,
and mode i corresponds to bit i of an occupation mask.  Spin-orbitals are
ordered all spin-up modes first, then all spin-down modes, and a basis state
is the product of creation operators in descending spin-orbital order acting
on the vacuum.  This is the spin-ordered convention: for one level the basis
|D0>, |ud>, |du>, |0D> reproduces the two-band matrix with all couplings -J.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np


def _masks(S: int, N: int) -> list[int]:
    return sorted(sum(1 << i for i in c) for c in combinations(range(S), N))


def _bits(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


@dataclass(frozen=True)
class FockBasis:
    """Occupation basis for S spatial modes holding N_up and N_down fermions."""

    S: int
    N_up: int
    N_down: int
    up_masks: tuple = field(repr=False)
    down_masks: tuple = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.up_masks) * len(self.down_masks)

    @property
    def states(self) -> list[tuple[int, int]]:
        return [(u, d) for u in self.up_masks for d in self.down_masks]

    def label(self, up_mask: int, down_mask: int) -> int:
        """Index I = I_up * C(S, N_down) + I_down."""
        return self.up_masks.index(up_mask) * len(self.down_masks) + self.down_masks.index(down_mask)

    def state(self, index: int) -> tuple[int, int]:
        i_up, i_dn = divmod(index, len(self.down_masks))
        return self.up_masks[i_up], self.down_masks[i_dn]

    def state_name(self, index: int) -> str:
        up, dn = self.state(index)
        return f"{up:0{self.S}b}|{dn:0{self.S}b}"

    def basis_vector(self, up_mask: int, down_mask: int) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.label(up_mask, down_mask)] = 1.0
        return v


@lru_cache(maxsize=64)
def enumerate_fock_basis(S: int, N_up: int, N_down: int) -> FockBasis:
    """All occupations with up masks ascending, then down masks ascending."""
    if S < 1 or not (0 <= N_up <= S and 0 <= N_down <= S):
        raise ValueError(f"invalid sector S={S}, N_up={N_up}, N_down={N_down}")
    return FockBasis(S, N_up, N_down, tuple(_masks(S, N_up)), tuple(_masks(S, N_down)))


@lru_cache(maxsize=64)
def hopping_operators(S: int, N: int) -> np.ndarray:
    """E[i, j] = c_i^dagger c_j on the single-species N-particle space.

    Shape (S, S, D, D) with D = C(S, N); Jordan-Wigner signs from the parity of
    occupied modes below each operator site.
    """
    masks = _masks(S, N)
    index = {m: k for k, m in enumerate(masks)}
    E = np.zeros((S, S, len(masks), len(masks)))
    for col, m in enumerate(masks):
        for j in _bits(m):
            sign_j = -1 if bin(m & ((1 << j) - 1)).count("1") % 2 else 1
            m1 = m & ~(1 << j)
            for i in range(S):
                if m1 >> i & 1:
                    continue
                sign_i = -1 if bin(m1 & ((1 << i) - 1)).count("1") % 2 else 1
                E[i, j, index[m1 | (1 << i)], col] = sign_i * sign_j
    E.setflags(write=False)
    return E


@dataclass(frozen=True)
class HamiltonianMatrix:
    """Hermitian matrix over a Fock basis with a model tag."""

    matrix: np.ndarray
    model: str
    time_index: int | None = None

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def assemble_two_band_hamiltonian(J: float, U: float) -> HamiltonianMatrix:
    """Two-band matrix in the order |D0>, |ud>, |du>, |0D>."""
    H = np.array([[U, -J, -J, 0.0],
                  [-J, 0.0, 0.0, -J],
                  [-J, 0.0, 0.0, -J],
                  [0.0, -J, -J, U]], dtype=float)
    return HamiltonianMatrix(H, "two-band")


class SectorOperators:
    """Cached one- and two-body operator stacks for one (S, N_up, N_down) sector."""

    def __init__(self, basis: FockBasis):
        self.basis = basis
        S = basis.S
        self.Eu = hopping_operators(S, basis.N_up)
        self.Ed = hopping_operators(S, basis.N_down)
        du, dd = self.Eu.shape[-1], self.Ed.shape[-1]
        self.du, self.dd = du, dd
        eye_u, eye_d = np.eye(du), np.eye(dd)
        # sum over spin of c_i^dag c_j, shape (S, S, D, D)
        self.one = (np.einsum("ijab,cd->ijacbd", self.Eu, eye_d)
                    + np.einsum("ab,ijcd->ijacbd", eye_u, self.Ed)).reshape(S, S, du * dd, du * dd)

    def onebody(self, t: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ijxy->xy", t, self.one)

    def interaction(self, g: np.ndarray) -> np.ndarray:
        # sum g_abcd c^dag_a,up c^dag_b,dn c_c,dn c_d,up = g_abcd E^up_ad (x) E^dn_bc
        tmp = np.einsum("abcd,bcKL->adKL", g, self.Ed)
        H = np.einsum("adIJ,adKL->IKJL", self.Eu, tmp)
        return H.reshape(self.du * self.dd, self.du * self.dd)


@lru_cache(maxsize=32)
def sector_operators(S: int, N_up: int, N_down: int) -> SectorOperators:
    return SectorOperators(enumerate_fock_basis(S, N_up, N_down))


def assemble_multiband_hamiltonian(params, basis: FockBasis) -> HamiltonianMatrix:
    """Hopping, onsite energies and significant interaction families."""
    S = 2 * params.n_levels
    if basis.S != S:
        raise ValueError(f"basis has {basis.S} modes but parameters describe {S}")
    ops = sector_operators(basis.S, basis.N_up, basis.N_down)
    H = ops.onebody(params.onebody)
    if params.a != 0:
        H = H + ops.interaction(params.interaction)
    H = (H + H.T.conj()) / 2
    return HamiltonianMatrix(H, f"multiband-{S}")


def compound_matrix(O: np.ndarray, N: int) -> np.ndarray:
    """N-th exterior power of O over ascending N-subsets (determinants of minors)."""
    S = O.shape[0]
    if N == 0:
        return np.ones((1, 1), dtype=O.dtype)
    if N == 1:
        return O.copy()
    subsets = [_bits(m) for m in _masks(S, N)]
    rows = np.array(subsets)
    minors = O[rows[:, None, :, None], rows[None, :, None, :]]
    return np.linalg.det(minors)


def lift_projection_to_fock(O: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Many-body overlap <new occupation|old occupation> from single-particle O."""
    O = np.asarray(O)
    if O.shape != (basis.S, basis.S):
        raise ValueError(f"overlap matrix shape {O.shape} does not match {basis.S} modes")
    return np.kron(compound_matrix(O, basis.N_up), compound_matrix(O, basis.N_down))


# ---------------------------------------------------------------------------
# 3D extension: x Fock space (1 up, 1 down) times transverse level pairs
# ---------------------------------------------------------------------------

def transverse_pair_operators(levels) -> tuple[np.ndarray, np.ndarray]:
    """Two-atom energy and interaction matrices over (m_up, m_down) level pairs.

    States are ordered (m_up, m_down) row-major.  Interaction entries are the
    level overlap integrals in 1/m.
    """
    e = np.asarray(levels.energies)
    n = e.size
    H = np.diag((e[:, None] + e[None, :]).ravel())
    # <a_up b_dn | U | d_up c_dn> = int w_a w_b w_c w_d
    U = np.einsum("abcd->abdc", levels.overlaps).reshape(n * n, n * n)
    return H, U


def three_d_components(x_params, y_levels, z_levels) -> tuple[np.ndarray, np.ndarray]:
    """(H_0, H_int per Bohr radius) of the 3D model over the 256-state product basis."""
    if x_params.n_levels != 2:
        raise ValueError("the 3D model uses the four-band x model")
    if len(y_levels.energies) != 2 or len(z_levels.energies) != 2:
        raise ValueError("the 3D model uses two transverse levels per direction")
    ops = sector_operators(4, 1, 1)
    Hx = ops.onebody(x_params.onebody)
    # x-only interaction operator with g = 4 pi hbar^2 a / m
    Ux = ops.interaction(x_params.x_overlaps) * x_params.contact_unit
    Hy, Uy = transverse_pair_operators(y_levels)
    Hz, Uz = transverse_pair_operators(z_levels)
    Iy, Iz, Ix = np.eye(Hy.shape[0]), np.eye(Hz.shape[0]), np.eye(Hx.shape[0])
    H0 = (np.kron(np.kron(Hx, Iy), Iz) + np.kron(np.kron(Ix, Hy), Iz)
          + np.kron(np.kron(Ix, Iy), Hz))
    return H0, np.kron(np.kron(Ux, Uy), Uz)


def assemble_3d_hamiltonian(x_params, y_levels, z_levels, a: float | None = None) -> HamiltonianMatrix:
    """Tensor-product Hamiltonian of the x Fock space with frozen transverse levels.

    H = H_x (x) 1 (x) 1 + 1 (x) H_y (x) 1 + 1 (x) 1 (x) H_z + U_x (x) U_y (x) U_z, with
    no hopping along y and z.  Restricting y and z to their ground level gives
    the 1D four-band model up to a constant.
    """
    a = x_params.a if a is None else a
    H0, H1 = three_d_components(x_params, y_levels, z_levels)
    H = H0 + a * H1
    return HamiltonianMatrix((H + H.T.conj()) / 2, "3d")
