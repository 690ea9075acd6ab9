import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermigate.hubbard import (DegeneracyWarning, LatticeCache, OutOfDomainError, SplineTable,
                               band_derivatives, band_energy_gradient, build_spline_table,
                               compute_hubbard_parameters, hopping_from_bands, level_parameter_gradients,
                               significant_mask, transverse_factors)
from fermigate.lattice import DepthPoint, LatticeConfig, LatticeError, build_wannier_basis, solve_bands


def params_at(config, vs, vl, a=1000.0, n_levels=2):
    basis = build_wannier_basis(solve_bands(config, DepthPoint(vs, vl), 2 * n_levels), n_levels)
    return compute_hubbard_parameters(basis, DepthPoint(vs, vl), a, transverse_factors(config))


def test_zero_scattering_length(config):
    p0 = params_at(config, 10, 30, a=0.0)
    p1 = params_at(config, 10, 30, a=1500.0)
    assert not p0.interaction.any() and not p0.dJ.any()
    np.testing.assert_array_equal(p0.J, p1.J)
    np.testing.assert_array_equal(p0.eps, p1.eps)


@pytest.mark.parametrize("vs,vl", [(2, 30), (10, 30), (25, 45), (0.5, 10)])
def test_hopping_matches_band_formula(config, vs, vl):
    bands = solve_bands(config, DepthPoint(vs, vl), 4)
    e = bands.band_means()
    p = params_at(config, vs, vl)
    for lev in range(2):
        assert p.J[lev] == pytest.approx((e[2 * lev + 1] - e[2 * lev]) / 2, rel=1e-6)
        assert p.eps[lev, 0] == pytest.approx((e[2 * lev + 1] + e[2 * lev]) / 2, rel=1e-6)


def test_j_max_at_shallowest_two_band_depth(config):
    # the two-band optimization bounds put the largest hopping at V_s = 2, V_l = 30
    assert hopping_from_bands(config, DepthPoint(2, 30)) == pytest.approx(34.03, abs=0.005)


def test_two_band_specialization(config):
    p = params_at(config, 8, 30, n_levels=1)
    assert p.J[0] == pytest.approx(hopping_from_bands(config, DepthPoint(8, 30)), rel=1e-10)


def test_parameters_are_real_and_symmetric(config):
    p = params_at(config, 6, 30)
    g = p.interaction
    assert np.isrealobj(g) and np.isrealobj(p.onebody)
    np.testing.assert_allclose(g, g.transpose(1, 0, 3, 2), atol=1e-12 * np.abs(g).max())
    np.testing.assert_allclose(g, g.transpose(3, 2, 1, 0), atol=1e-12 * np.abs(g).max())
    np.testing.assert_allclose(p.eps[:, 0], p.eps[:, 1], rtol=1e-10)


def test_significant_mask_families():
    m = significant_mask(2)
    L0, R0, L1, R1 = range(4)
    for t in [(L0,) * 4, (L0, R0, L0, R0), (L0, R0, R0, L0), (L0, L0, R0, R0), (L0, L0, L0, R0),
              (L0, L1, L1, L0), (L0, L0, L1, L1), (R0, R1, R0, R1)]:
        assert m[t], t
    for t in [(L0, R1, L0, R1), (L0, L1, R0, R1), (L0, L0, L0, L1), (L0, R0, L1, R1)]:
        assert not m[t], t


def test_scaling_with_a(config):
    p = params_at(config, 10, 30, a=500.0)
    q = p.with_a(1500.0)
    np.testing.assert_allclose(q.interaction, 3 * p.interaction)
    np.testing.assert_allclose(q.dJ, 3 * p.dJ)
    with pytest.raises(ValueError):
        params_at(config, 10, 30, a=0.0).with_a(10.0)


def test_sign_change_is_a_basis_change(config):
    p = params_at(config, 10, 30)
    s = np.array([1, -1, -1, 1])
    q = p.with_signs(s)
    np.testing.assert_allclose(q.onebody, np.diag(s) @ p.onebody @ np.diag(s))
    assert q.J[0] == pytest.approx(-p.J[0]) and q.J[1] == pytest.approx(-p.J[1])


def test_rejects_unnormalized_modes(config):
    from dataclasses import replace

    basis = build_wannier_basis(solve_bands(config, DepthPoint(10, 30), 2), 1)
    bad = replace(basis, modes=basis.modes * 1.01)
    with pytest.raises(LatticeError):
        compute_hubbard_parameters(bad, None, 1.0, transverse_factors(config))
    with pytest.raises(ValueError):
        compute_hubbard_parameters(basis, None, np.inf, transverse_factors(config))


def test_onsite_decreases_as_short_lattice_shallows(config):
    vs = [30, 20, 10, 5, 2]
    onsite = [params_at(config, v, 30).onsite() for v in vs]
    assert np.all(np.diff(onsite) < 0)


def test_hopping_grows_as_short_lattice_shallows(config):
    vs = np.linspace(30, 2, 15)
    J = [hopping_from_bands(config, DepthPoint(v, 30)) for v in vs]
    assert np.all(np.diff(J) > 0)


def test_offsite_small_when_deep(config):
    deep = params_at(config, 30, 30)
    shallow = params_at(config, 1, 30)
    assert abs(deep.offsite()) < 1e-3 * deep.onsite()
    assert abs(shallow.offsite()) > 10 * abs(deep.offsite())


# -- Hellmann-Feynman gradients --

def test_free_limit_gradient(config):
    gs, gl = band_energy_gradient(config, DepthPoint(1e-9, 1e-9), 0, 0.25)
    assert gs / config.E_rs == pytest.approx(0.5, abs=1e-6)
    assert gl / config.E_rl == pytest.approx(-0.5, abs=1e-6)


@pytest.mark.parametrize("band,k", [(0, 0.0), (1, 0.2), (3, -0.4), (4, 0.1)])
def test_gradient_vs_finite_difference(config, band, k):
    from fermigate.lattice import build_fourier_hamiltonian

    depth = DepthPoint(12.0, 27.0)
    h = 1e-5

    def energy(dvs, dvl):
        d = DepthPoint(depth.V_s + dvs, depth.V_l + dvl)
        return np.linalg.eigvalsh(build_fourier_hamiltonian(config, d, k, 16))[band]
    fd = ((energy(h, 0) - energy(-h, 0)) / (2 * h), (energy(0, h) - energy(0, -h)) / (2 * h))
    hf = band_energy_gradient(config, depth, band, k)
    np.testing.assert_allclose(hf, fd, rtol=1e-6)


def test_degenerate_point_warns(config):
    with pytest.warns(DegeneracyWarning):
        band_energy_gradient(config, DepthPoint(0, 0), 1, 0.0)


def test_band_pair_sum_gives_onsite_derivative(config):
    bands = solve_bands(config, DepthPoint(9, 31), 4)
    gs, gl = band_derivatives(bands)
    dJ, deps = level_parameter_gradients(bands, 2)
    for p in range(2):
        assert gs[:, 2 * p].mean() + gs[:, 2 * p + 1].mean() == pytest.approx(2 * deps[0, p])
        assert gl[:, 2 * p].mean() + gl[:, 2 * p + 1].mean() == pytest.approx(2 * deps[1, p])


def test_level_gradients_vs_finite_difference(config):
    h = 1e-5

    def levels(vs, vl):
        e = solve_bands(config, DepthPoint(vs, vl), 4).band_means()
        return np.array([(e[1] - e[0]) / 2, (e[3] - e[2]) / 2])
    dJ, _ = level_parameter_gradients(solve_bands(config, DepthPoint(9, 31), 4), 2)
    fd_s = (levels(9 + h, 31) - levels(9 - h, 31)) / (2 * h)
    fd_l = (levels(9, 31 + h) - levels(9, 31 - h)) / (2 * h)
    np.testing.assert_allclose(dJ[0], fd_s, rtol=1e-6)
    np.testing.assert_allclose(dJ[1], fd_l, rtol=1e-6)


# -- spline table --

def test_spline_nodes(spline_table):
    t = spline_table
    vs, vl = np.meshgrid(t.vs_nodes, t.vl_nodes, indexing="ij")
    assert np.max(np.abs(t.J(vs, vl) - t.values)) <= t.residual + 1e-12
    assert t.values.shape == (100, 100)


def test_spline_gradient_self_consistent(spline_table, rng):
    h = 1e-4
    for vs, vl in zip(rng.uniform(3, 29, 10), rng.uniform(21, 49, 10)):
        gs, gl = spline_table.gradient(vs, vl)
        fs = (spline_table.J(vs + h, vl) - spline_table.J(vs - h, vl)) / (2 * h)
        fl = (spline_table.J(vs, vl + h) - spline_table.J(vs, vl - h)) / (2 * h)
        assert gs == pytest.approx(fs, rel=1e-6)
        assert gl == pytest.approx(fl, rel=1e-6)


def test_spline_vs_direct(config, spline_table, rng):
    for vs, vl in zip(rng.uniform(2, 30, 20), rng.uniform(20, 50, 20)):
        direct = hopping_from_bands(config, DepthPoint(vs, vl))
        assert float(spline_table.J(vs, vl)) == pytest.approx(direct, rel=1e-3)


def test_spline_out_of_domain(spline_table):
    with pytest.raises(OutOfDomainError):
        spline_table.J(1.0, 30.0)
    with pytest.raises(OutOfDomainError):
        spline_table.gradient(10.0, 55.0)


def test_spline_cache_roundtrip(config, tmp_path):
    t = build_spline_table(config, (2, 10), (25, 35), 6, cache_dir=tmp_path)
    files = list(tmp_path.glob("jtable-*.npz"))
    assert len(files) == 1
    again = build_spline_table(config, (2, 10), (25, 35), 6, cache_dir=tmp_path)
    np.testing.assert_array_equal(again.values, t.values)
    loaded = SplineTable.load(files[0])
    assert loaded.key == t.key and loaded.residual == t.residual


def test_spline_build_errors(config):
    with pytest.raises(ValueError):
        build_spline_table(config, n=3)
    with pytest.raises(ValueError):
        build_spline_table(config, (10, 2), (20, 30), 5)


def test_lattice_cache_lru(config):
    cache = LatticeCache(config, 1, maxsize=2)
    cache.get(10, 30)
    cache.get(11, 30)
    cache.get(10, 30)
    cache.get(12, 30)
    assert cache.solves == 3
    cache.get(10, 30)
    assert cache.solves == 3
    cache.get(11, 30)
    assert cache.solves == 4


@settings(max_examples=10, deadline=None)
@given(vs=st.floats(0.5, 40), vl=st.floats(10, 40), a=st.floats(-2000, 3000))
def test_interaction_linear_in_a(vs, vl, a):
    cfg = LatticeConfig()
    basis = build_wannier_basis(solve_bands(cfg, DepthPoint(vs, vl), 4), 2, points_per_cell=128)
    tf = transverse_factors(cfg)
    p1 = compute_hubbard_parameters(basis, None, 1.0, tf)
    pa = compute_hubbard_parameters(basis, None, a, tf)
    np.testing.assert_allclose(pa.interaction, a * p1.interaction, rtol=1e-12, atol=1e-300)
    assert p1.onsite() > 0
