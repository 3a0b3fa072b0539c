import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from minklab import spectral_field as sf
from minklab.spectral_field import (GridSpec, SpaceTimeField, SpectralSymbolTable, apply_multiplier,
                                    build_symbol_table, fourier_y, inverse_fourier_y, norms,
                                    spacetime_sobolev_norm)


def small_grid(n=1, N_y=64, L=8.0, N_t=9):
    return GridSpec(n, L, N_y, -1.0, 1.0, N_t)


def random_field(grid, seed=0):
    rng = np.random.default_rng(seed)
    return SpaceTimeField(grid, rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape))


# GridSpec -----------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(1, 8.0, 100, 0.0, 1.0, 10)
    with pytest.raises(ValueError):
        GridSpec(1, 8.0, 64, 1.0, 1.0, 10)
    with pytest.raises(ValueError):
        GridSpec(4, 8.0, 64, 0.0, 1.0, 10)


def test_dual_lattice():
    g = GridSpec(1, 4.0, 8, 0.0, 1.0, 3)
    assert np.allclose(np.sort(g.eta1), math.pi / 4 * np.arange(-4, 4))
    assert g.eta_max == pytest.approx(math.pi)


def test_field_shape_and_finiteness():
    g = small_grid()
    with pytest.raises(ValueError):
        SpaceTimeField(g, np.zeros((3, 3)))
    bad = np.zeros(g.shape)
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        SpaceTimeField(g, bad)


# symbol table -------------------------------------------------------------------

def test_symbol_at_zero():
    t = SpectralSymbolTable.from_eta(np.array([0.0]))
    assert t.a[0] == pytest.approx((1 - 1j) / math.sqrt(2), abs=1e-15)
    assert t.a1[0] == pytest.approx(2 ** -0.5, abs=1e-15)
    assert t.a2[0] == pytest.approx(0.7071068, abs=1e-7)


def test_symbol_at_one():
    t = SpectralSymbolTable.from_eta(np.array([1.0]))
    assert t.r[0] == pytest.approx(1.1892071, abs=1e-7)
    assert t.a2[0] == pytest.approx(0.4550899, abs=1e-7)
    assert t.a[0] == pytest.approx(np.sqrt(1 - 1j), rel=1e-15)


def test_symbol_asymptote():
    t = SpectralSymbolTable.from_eta(np.array([1e3]))
    assert 0.49 <= t.a2[0] * 1e3 <= 0.51


def test_symbol_invariants_random_samples():
    eta = np.concatenate([[0.0], np.logspace(-8, 8, 50_000), np.random.default_rng(0).uniform(0, 100, 50_000)])
    t = SpectralSymbolTable.from_eta(eta)
    err = t.invariant_errors()
    assert err["square"] <= 1e-12 and err["modulus"] <= 1e-12 and err["imag"] <= 1e-12
    assert err["a2_min"] > 0
    oracle = np.sqrt(eta ** 2 - 1j)        # principal root has Im <= 0 here
    assert np.max(np.abs(t.a - oracle) / np.abs(oracle)) <= 1e-12


def test_symbol_table_on_grid_and_constants():
    g = GridSpec(2, 4.0, 32, 0.0, 1.0, 2)
    t = build_symbol_table(g)
    assert t.eta_abs.shape == (32, 32)
    c = t.equivalence_constants()
    assert 1.0 <= c["C_r"] <= math.sqrt(2) + 1e-12
    assert 1.0 <= c["C_a2"] <= 2.0


# transforms ----------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 3])
def test_constant_maps_to_delta(n):
    g = GridSpec(n, 4.0, 16, 0.0, 1.0, 2)
    fh = fourier_y(SpaceTimeField(g, np.ones(g.shape))).values
    w = (2 * g.L) ** n / (2 * math.pi) ** (n / 2)
    origin = (slice(None),) + (0,) * n
    assert np.allclose(fh[origin], w, rtol=1e-13)
    fh[origin] = 0
    assert np.abs(fh).max() <= 1e-12 * w


def test_gaussian_matches_continuum():
    g = GridSpec(1, 30.0, 512, 0.0, 1.0, 2)
    f = SpaceTimeField.from_function(g, lambda t, y: np.exp(-y ** 2 / 2) + 0 * t)
    fh = fourier_y(f).values[0]
    assert np.abs(fh - np.exp(-g.eta1 ** 2 / 2)).max() <= 1e-8


def test_gaussian_2d_matches_continuum():
    g = GridSpec(2, 20.0, 128, 0.0, 1.0, 2)
    f = SpaceTimeField.from_function(g, lambda t, y1, y2: np.exp(-(y1 ** 2 + y2 ** 2) / 2) + 0 * t)
    fh = fourier_y(f).values[1]
    assert np.abs(fh - np.exp(-g.eta_abs() ** 2 / 2)).max() <= 1e-8


@pytest.mark.parametrize("n", [1, 2])
def test_parseval_and_round_trip(n):
    g = small_grid(n=n, N_y=32)
    f = random_field(g, 1)
    fh = fourier_y(f)
    lhs = np.sum(np.abs(f.values) ** 2) * g.dy ** n
    rhs = np.sum(np.abs(fh.values) ** 2) * g.deta ** n
    assert rhs == pytest.approx(lhs, rel=1e-12)
    back = inverse_fourier_y(fh)
    assert np.abs(back.values - f.values).max() <= 1e-12 * np.abs(f.values).max()


def test_transform_representation_guard():
    f = random_field(small_grid())
    with pytest.raises(ValueError):
        inverse_fourier_y(f)
    with pytest.raises(ValueError):
        fourier_y(fourier_y(f))


# multipliers ----------------------------------------------------------------------

def test_identity_symbol():
    f = random_field(small_grid())
    out = apply_multiplier(f, sf.japanese(0.0))
    assert np.abs(out.values - f.values).max() <= 1e-12


def test_japanese_power_inverse():
    f = random_field(small_grid())
    out = apply_multiplier(apply_multiplier(f, sf.japanese(1.5)), sf.japanese(-1.5))
    assert np.abs(out.values - f.values).max() <= 1e-10 * np.abs(f.values).max()
    out2 = apply_multiplier(apply_multiplier(f, sf.japanese(1.5)), sf.japanese(1.5), inverse=True)
    assert np.abs(out2.values - f.values).max() <= 1e-10 * np.abs(f.values).max()


def test_semigroup():
    f = fourier_y(random_field(small_grid()))
    twice = apply_multiplier(apply_multiplier(f, sf.exp_minus_i_tau_a(1.0)), sf.exp_minus_i_tau_a(1.0))
    once = apply_multiplier(f, sf.exp_minus_i_tau_a(2.0))
    assert np.abs(twice.values - once.values).max() <= 1e-12 * np.abs(f.values).max()


def test_a_inverse_times_a_squared():
    f = fourier_y(random_field(small_grid()))
    a_sq = lambda tab: tab.a ** 2
    out = apply_multiplier(apply_multiplier(f, sf.a_inverse()), a_sq)
    ref = apply_multiplier(f, lambda tab: tab.a)
    assert np.abs(out.values - ref.values).max() <= 1e-12 * np.abs(ref.values).max()


def test_vanishing_symbol_inverse_rejected():
    f = random_field(small_grid())
    with pytest.raises(ValueError):
        apply_multiplier(f, lambda tab: tab.eta_abs, inverse=True)
    with pytest.raises(ValueError):
        with np.errstate(divide="ignore"):
            apply_multiplier(f, lambda tab: 1.0 / tab.eta_abs)
    # |a| >= 1 so a^{-1} inverts cleanly
    apply_multiplier(f, sf.a_inverse(), inverse=True)


def test_multiplier_array_symbol():
    g = small_grid()
    f = random_field(g)
    arr = np.cos(g.eta1)
    a = apply_multiplier(f, arr)
    b = apply_multiplier(f, lambda tab: np.cos(g.eta1))
    assert np.array_equal(a.values, b.values)


symbols = st.sampled_from([sf.japanese(0.7), sf.japanese(-1.2), sf.a_inverse(), sf.exp_minus_i_tau_a(0.3),
                           sf.exp_i_tau_a1(2.0), sf.a2_power(0.5), sf.a2_power(-1.0)])


@settings(max_examples=40, deadline=None)
@given(s1=symbols, s2=symbols, seed=st.integers(0, 2 ** 16))
def test_multiplier_composition(s1, s2, seed):
    f = fourier_y(random_field(small_grid(N_t=3), seed))
    both = apply_multiplier(apply_multiplier(f, s1), s2)
    prod = apply_multiplier(f, lambda tab: s1(tab) * s2(tab))
    swap = apply_multiplier(apply_multiplier(f, s2), s1)
    scale = np.abs(both.values).max()
    assert np.abs(both.values - prod.values).max() <= 1e-12 * scale
    assert np.abs(both.values - swap.values).max() <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(tau=st.floats(0, 50), seed=st.integers(0, 2 ** 16))
def test_exp_minus_i_tau_a_contracts(tau, seed):
    f = random_field(small_grid(N_t=3), seed)
    out = apply_multiplier(f, sf.exp_minus_i_tau_a(tau))
    for i in range(3):
        assert np.linalg.norm(out.values[i]) <= np.linalg.norm(f.values[i]) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(k1=st.floats(-2, 2), k2=st.floats(-2, 2), seed=st.integers(0, 2 ** 16))
def test_norm_monotone_in_k(k1, k2, seed):
    k1, k2 = sorted((k1, k2))
    f = random_field(small_grid(N_t=3), seed)
    assert norms(f, k1)["Hk"] <= norms(f, k2)["Hk"] * (1 + 1e-12)


# norms --------------------------------------------------------------------------

def single_mode(g, k):
    eta = math.pi * k / g.L
    return SpaceTimeField.from_function(g, lambda t, y: np.exp(1j * eta * y) + 0 * t), eta


def test_single_mode_sobolev_weight():
    g = small_grid()
    f, eta = single_mode(g, 5)
    rep = norms(f, 0.5)
    jap = math.sqrt(1 + eta * eta)
    assert rep["Hk"] == pytest.approx(jap ** 0.5 * rep["L2"], rel=1e-12)
    # L2 of a unit mode over [-1, 1] x box
    assert rep["L2"] == pytest.approx(math.sqrt(2 * 2 * g.L), rel=1e-12)


def test_single_mode_a2_ratio_within_table_constant():
    g = small_grid()
    C = build_symbol_table(g).equivalence_constants()["C_a2"]
    for k in (0, 3, 20):
        f, _ = single_mode(g, k)
        ratio = norms(f, 0.5)["A2_over_Hk"]
        assert C ** -0.5 <= ratio <= C ** 0.5


def test_zero_field_norms():
    rep = norms(SpaceTimeField.zeros(small_grid()), 1.0, w=0.6)
    assert all(v == 0 for v in rep.values.values())


def test_norms_k_range():
    with pytest.raises(ValueError):
        norms(SpaceTimeField.zeros(small_grid()), 2.5)


def test_weighted_time_norm():
    g = GridSpec(1, 8.0, 64, -1.0, 1.0, 2001)
    f, _ = single_mode(g, 0)
    rep = norms(f, 0.0, w=1.0)
    exact = math.sqrt(2 * g.L * integrate.quad(lambda t: 1 + t * t, -1, 1)[0])
    assert rep["weighted_t1"] == pytest.approx(exact, rel=1e-6)


# space-time Sobolev norm -----------------------------------------------------------

def gauss_grid():
    return GridSpec(1, 12.0, 256, -12.0, 12.0, 256)


def gauss_field(g):
    return SpaceTimeField.from_function(g, lambda t, y: np.exp(-(t ** 2 + y ** 2) / 2))


def test_sobolev_zero():
    assert spacetime_sobolev_norm(SpaceTimeField.zeros(gauss_grid()), 0.5) == 0.0


def test_sobolev_k0_is_l2():
    g = gauss_grid()
    f = gauss_field(g)
    assert spacetime_sobolev_norm(f, 0.0) == pytest.approx(norms(f, 0.0)["L2"], rel=1e-10)
    assert spacetime_sobolev_norm(f, 0.0) == pytest.approx(math.sqrt(math.pi), rel=1e-10)


def test_sobolev_half_continuum_oracle():
    g = gauss_grid()
    val = spacetime_sobolev_norm(gauss_field(g), 0.5)
    # |F|^2 = exp(-rho^2) in (tau, eta); radial integral in the plane
    radial = integrate.quad(lambda r: (1 + r * r) ** 0.5 * math.exp(-r * r) * r, 0, np.inf,
                            epsabs=0, epsrel=1e-13)[0]
    assert val == pytest.approx(math.sqrt(2 * math.pi * radial), rel=1e-6)


def test_sobolev_support_violation():
    g = gauss_grid()
    f = SpaceTimeField.from_function(g, lambda t, y: np.exp(-y ** 2 / 2) + 0 * t)
    with pytest.raises(ValueError):
        spacetime_sobolev_norm(f, 0.5)


# serialisation --------------------------------------------------------------------

def test_binary_round_trip(tmp_path):
    g = small_grid(n=2, N_y=8)
    f = random_field(g)
    path = tmp_path / "f.bin"
    sf.write_field(path, f)
    back = sf.read_field(path, g)
    assert np.array_equal(back.values, f.values.astype(np.complex64).astype(complex))
    raw = path.read_bytes()
    assert raw[:4] == b"STF1"
    assert len(raw) == 4 + 4 + 8 * 3 + 8 * f.values.size


def test_binary_rejects_corruption():
    f = random_field(small_grid())
    buf = sf.field_to_bytes(f)
    with pytest.raises(ValueError):
        sf.array_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(ValueError):
        sf.array_from_bytes(buf[:-8])


def test_csv_round_trip():
    g = GridSpec(1, 2.0, 4, 0.0, 1.0, 3)
    f = random_field(g)
    text = sf.field_to_csv(f)
    assert text.splitlines()[0] == "t,y1,re,im"
    back = sf.field_from_csv(text, g)
    assert np.array_equal(back.values, f.values)


def test_csv_rejects_large():
    with pytest.raises(ValueError):
        sf.field_to_csv(SpaceTimeField.zeros(GridSpec(2, 2.0, 512, 0.0, 1.0, 2)))
