import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padic_schrodinger.operators import (
    MultiplierSpec,
    assemble_laplacian,
    ball_difference_vector,
    lambda_of_rank,
)
from padic_schrodinger.padic import Cell, Grid, PoleError, distance_matrix, enumerate_cells, radial_sum, gamma_p
from padic_schrodinger.schrodinger import (
    DivergentAverage,
    OutOfRange,
    PotentialSpec,
    ThresholdMap,
    apply_D_alpha_radial,
    assemble_hamiltonian,
    bottom_of_spectrum,
    cell_average_potential,
    eigen_spectrum,
    min_eigenvalue,
    negative_witness,
    offset_potential_energy,
    potential_vector,
    power_identity_constant,
    power_identity_ratio,
    quadratic_form,
    radial_jump_energy,
    rayleigh_quotient,
    spectral_histogram,
    w_formula_check,
    witness_energy,
    witness_function,
    witness_quotient,
    zero_cell_average,
)

# b* for p=2, alpha=0.5, evaluated once with 50-digit arithmetic:
# -Gamma_2(0.75)**2 = -((1 - 2**-0.25) / (1 - 2**-0.75))**2
B_STAR_2_05 = -0.15402813716439090


def test_b_star_pinned():
    with mpmath.workdps(50):
        ref = -(((1 - mpmath.mpf(2) ** -0.25) / (1 - mpmath.mpf(2) ** -0.75)) ** 2)
    assert float(ref) == pytest.approx(B_STAR_2_05, rel=1e-15)
    assert ThresholdMap(2, 0.5).b_star() == pytest.approx(B_STAR_2_05, rel=1e-14)
    assert ThresholdMap(2, 0.5, extended=True).b_star() == pytest.approx(B_STAR_2_05, rel=1e-15)


# -- potentials ---------------------------------------------------------------------


def test_potential_on_nonzero_cell():
    g = Grid(3, 2, 2)
    pot = PotentialSpec.inverse_power(-0.4, 0.5)
    for c in enumerate_cells(g)[1:]:
        from padic_schrodinger.padic import cell_norm

        assert cell_average_potential(pot, c, g) == -0.4 * cell_norm(c, g) ** -0.5


@pytest.mark.parametrize("p,a,S", [(2, 0.5, 3), (3, 0.2, 2), (5, 0.9, 4)])
def test_zero_cell_average_series(p, a, S):
    g = Grid(p, 1, S)
    b = 1.3
    series = radial_sum(lambda r: b * r**-a, -S - 300, -S, p)
    assert zero_cell_average(PotentialSpec.inverse_power(b, a), g) == pytest.approx(series / g.cell_measure, rel=1e-12)


def test_zero_coupling_is_zero():
    g = Grid(2, 2, 2)
    assert np.all(potential_vector(PotentialSpec.inverse_power(0.0, 0.5), g) == 0)


def test_divergent_average():
    with pytest.raises(DivergentAverage):
        zero_cell_average(PotentialSpec.inverse_power(1.0, 1.2), Grid(2, 1, 1))


def test_offset_zero_cell_average():
    g = Grid(2, 1, 3)
    pot = PotentialSpec.offset_power(-2.0, 0.4)
    series = radial_sum(lambda r: -2.0 * (r + 1) ** -0.4, -3 - 300, -3, 2)
    assert zero_cell_average(pot, g) == pytest.approx(series / g.cell_measure, rel=1e-12)


def test_radial_table_potential():
    g = Grid(2, 1, 1)
    pot = PotentialSpec.radial_table({2.0: 1.0, 1.0: -1.0}, zero_value=5.0)
    np.testing.assert_array_equal(potential_vector(pot, g), [5.0, -1.0, 1.0, 1.0])


# -- Hamiltonian and spectra -----------------------------------------------------------


def test_hamiltonian_without_potential_is_laplacian():
    g = Grid(2, 2, 2)
    spec = MultiplierSpec.power(2, 0.5)
    np.testing.assert_array_equal(assemble_hamiltonian(g, spec, None).entries, assemble_laplacian(g, spec).entries)
    H0 = assemble_hamiltonian(g, spec, PotentialSpec.inverse_power(0.0, 0.5))
    np.testing.assert_array_equal(H0.entries, assemble_laplacian(g, spec).entries)


@pytest.mark.parametrize("p,a,R", [(2, 0.5, 4), (3, 0.3, 3), (2, 0.9, 3), (3, 0.7, 2)])
def test_nonnegative_at_critical_coupling(p, a, R):
    g = Grid(p, R, R)
    H = assemble_hamiltonian(g, MultiplierSpec.power(p, a), PotentialSpec.inverse_power(ThresholdMap(p, a).b_star(), a))
    assert min_eigenvalue(H) >= -1e-10


def test_negative_below_critical_coupling():
    b = 2 * ThresholdMap(2, 0.5).b_star()
    found = [min_eigenvalue(assemble_hamiltonian(Grid(2, r, r), MultiplierSpec.power(2, 0.5), PotentialSpec.inverse_power(b, 0.5))) for r in (2, 3, 4, 5)]
    assert min(found) < 0


def test_eigen_spectrum_properties():
    g = Grid(3, 2, 2)
    H = assemble_hamiltonian(g, MultiplierSpec.power(3, 0.5), PotentialSpec.inverse_power(-0.1, 0.5))
    res = eigen_spectrum(H, want_vectors=True)
    assert np.all(np.diff(res.eigenvalues) >= 0)
    V = res.eigenvectors
    np.testing.assert_allclose(V.T @ V, np.eye(g.size), atol=1e-12)
    norm = np.linalg.norm(H.entries, 2)
    resid = np.linalg.norm(H.entries @ V - V * res.eigenvalues, axis=0)
    assert np.all(resid <= 1e-8 * norm)
    assert res.eigenvalues.sum() == pytest.approx(np.trace(H.entries), rel=1e-9)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = rng.normal(size=g.size)
        assert res.minimum <= rayleigh_quotient(H, u) + 1e-12
    counts, edges = spectral_histogram(res, bins=8)
    assert counts.sum() == g.size


def test_quadratic_form_on_eigenprobe():
    g = Grid(2, 2, 3)
    spec = MultiplierSpec.power(2, 0.6)
    H = assemble_hamiltonian(g, spec, None)
    f = ball_difference_vector(g, 3, 0)
    q = quadratic_form(H, f)
    assert q.matrix == pytest.approx(lambda_of_rank(spec, 1) * f @ f, rel=1e-12)
    assert q.measure == pytest.approx(q.matrix * g.cell_measure)


@given(st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_quadratic_form_bilinear_symmetric(seed):
    g = Grid(2, 2, 2)
    H = assemble_hamiltonian(g, MultiplierSpec.power(2, 0.4), PotentialSpec.inverse_power(0.3, 0.4))
    rng = np.random.default_rng(seed)
    u, v, w = rng.normal(size=(3, g.size))
    assert quadratic_form(H, u, v).matrix == pytest.approx(quadratic_form(H, v, u).matrix, rel=1e-12, abs=1e-12)
    lhs = quadratic_form(H, 2 * u + w, v).matrix
    assert lhs == pytest.approx(2 * quadratic_form(H, u, v).matrix + quadratic_form(H, w, v).matrix, rel=1e-10, abs=1e-10)


def test_bottom_of_spectrum():
    g = Grid(2, 3, 3)
    spec = MultiplierSpec.power(2, 0.7)
    pot = PotentialSpec.offset_power(-1.0, 0.3)
    lams = np.linspace(0, 30, 16)
    E = bottom_of_spectrum(g, spec, pot, lams)
    assert E[0] == pytest.approx(assemble_laplacian(g, spec).tail, rel=1e-9)
    assert np.all(np.diff(E) <= 1e-12)
    assert np.all(np.diff(E, 2) <= 1e-10)
    # single-cell probe at 0 certifies negativity once lam * V(0) beats the diagonal
    L = assemble_laplacian(g, spec)
    lam = 1.01 * L.entries[0, 0] / -potential_vector(pot, g)[0]
    assert bottom_of_spectrum(g, spec, pot, [lam])[0] < 0


# -- threshold map -------------------------------------------------------------------


@pytest.mark.parametrize("p,a", [(2, 0.5), (3, 0.3), (5, 0.8)])
def test_c_alpha_properties(p, a):
    tm = ThresholdMap(p, a)
    assert tm.c_alpha((1 - a) / 2) == pytest.approx(0.0, abs=1e-15)
    assert tm.c_alpha(0.0) == pytest.approx(-gamma_p((1 + a) / 2, p) ** 2)
    assert tm.c_alpha(50.0) == pytest.approx(-(p**a), rel=1e-9)
    assert -(p**a) < tm.c_alpha(0.0)
    thetas = np.linspace(0, (1 + a) / 2, 200)[:-1]
    vals = [tm.c_alpha(t) for t in thetas]
    assert all(x < y for x, y in zip(vals, vals[1:]))
    for t in thetas[::20]:
        assert tm.c_alpha(-t) == pytest.approx(tm.c_alpha(t), rel=1e-13, abs=1e-15)
    with pytest.raises(PoleError):
        tm.c_alpha((1 + a) / 2)


def test_b_star_sign_and_limit():
    for p in (2, 3, 7):
        for a in np.linspace(0.01, 0.99, 50):
            assert ThresholdMap(p, a).b_star() < 0
        assert abs(ThresholdMap(p, 1 - 1e-9).b_star()) < 1e-15


@pytest.mark.parametrize("p,a", [(2, 0.5), (3, 0.25), (3, 0.9)])
def test_beta_from_b_anchors(p, a):
    tm = ThresholdMap(p, a)
    assert tm.beta_from_b(tm.b_star()) == pytest.approx((a - 1) / 2)
    assert tm.beta_from_b(tm.b_star(), "lower") == pytest.approx((a - 1) / 2)
    assert tm.beta_from_b(0.0) == pytest.approx(0.0, abs=1e-15)
    assert tm.beta_from_b(0.0, "lower") == pytest.approx(a - 1)
    with pytest.raises(OutOfRange):
        tm.beta_from_b(tm.b_star() * 1.001)
    with pytest.raises(OutOfRange):
        tm.beta_from_b(0.5, "lower")


@pytest.mark.parametrize("p,a", [(2, 0.5), (3, 0.3), (5, 0.95)])
def test_round_trip(p, a):
    tm = ThresholdMap(p, a)
    for b in np.linspace(tm.b_star(), 10, 60):
        assert tm.b_from_beta(tm.beta_from_b(b)) == pytest.approx(b, abs=1e-10)
        if b < 0:
            lower = tm.beta_from_b(b, "lower")
            assert a - 1 < lower <= (a - 1) / 2
            assert tm.b_from_beta(lower) == pytest.approx(b, abs=1e-10)


def test_b_from_beta_anchors_and_monotone():
    tm = ThresholdMap(3, 0.6)
    assert tm.b_from_beta(0.0) == 0.0
    assert tm.b_from_beta(-0.2) == pytest.approx(tm.b_star(), rel=1e-14)
    betas = np.linspace(-0.2, 0.6, 400)[1:-1]
    vals = [tm.b_from_beta(b) for b in betas]
    assert all(x < y for x, y in zip(vals, vals[1:]))
    assert vals[-1] > 100
    with pytest.raises(PoleError):
        tm.b_from_beta(0.6 - 1)


def test_coupling_consistency_of_matrices():
    g = Grid(2, 2, 2)
    spec = MultiplierSpec.power(2, 0.5)
    tm = ThresholdMap(2, 0.5)
    for b in np.linspace(tm.b_star(), 5, 9):
        b2 = tm.b_from_beta(tm.beta_from_b(b))
        A = assemble_hamiltonian(g, spec, PotentialSpec.inverse_power(b, 0.5)).entries
        B = assemble_hamiltonian(g, spec, PotentialSpec.inverse_power(b2, 0.5)).entries
        assert np.max(np.abs(A - B)) <= 1e-12 * max(1.0, np.max(np.abs(A)))


# -- power functions -----------------------------------------------------------------


def test_power_identity_beta_zero():
    assert apply_D_alpha_radial(0.5, 0.0, 3, 2) == 0.0


@pytest.mark.parametrize("p,a,beta", [(2, 0.5, -0.3), (3, 0.7, 0.4), (5, 0.2, -0.6), (2, 0.9, 0.85)])
def test_power_identity_constant(p, a, beta):
    c = power_identity_constant(a, beta, p)
    ratios = [power_identity_ratio(a, beta, g, p) for g in range(-4, 5)]
    assert max(ratios) / min(ratios) == pytest.approx(1.0, abs=1e-8)
    for r in ratios:
        assert r == pytest.approx(c, rel=1e-8)


def test_power_identity_vs_grid_sum():
    # (L_N w)_i minus the exterior part of int ||y||**beta J reproduces D**alpha ||x||**beta
    p, a, beta = 3, 0.6, 0.35
    g = Grid(p, 3, 3)
    from padic_schrodinger.green import WeightedGrid, weighted_tail
    from padic_schrodinger.padic import cell_norms

    L = assemble_laplacian(g, MultiplierSpec.power(p, a))
    w = WeightedGrid.build(g, beta).cell_weights
    got = L.entries @ w - weighted_tail(a, beta, g)
    norms = cell_norms(g)
    for i in (1, 4, 13, 200):
        gamma = round(math.log(norms[i], p))
        assert got[i] == pytest.approx(apply_D_alpha_radial(a, beta, gamma, p), rel=1e-10)


def test_power_identity_range():
    with pytest.raises(ArithmeticError):
        apply_D_alpha_radial(0.5, 0.5, 0, 2)
    with pytest.raises(ArithmeticError):
        apply_D_alpha_radial(0.5, -0.6, 0, 2)


# -- witnesses ------------------------------------------------------------------------


@pytest.mark.parametrize("p,a,j,K", [(2, 0.7, 0, 5), (3, 0.4, -2, 3), (2, 0.5, 3, 8)])
def test_witness_energy_two_ways(p, a, j, K):
    f = witness_function(p, a, j, K)
    assert radial_jump_energy(f) == pytest.approx(witness_energy(p, a, j, K), rel=1e-12)


def test_witness_on_grid():
    # grid compression applied to the cell-constant witness reproduces Q exactly
    p, a, j, K = 2, 0.6, -1, 1
    g = Grid(p, K + 2, 2)
    f = witness_function(p, a, j, K)
    from padic_schrodinger.padic import cell_norms

    norms = cell_norms(g)
    u = np.array([f.ball_value if n <= 2.0**j else f.sphere_values.get(round(math.log2(n)), 0.0) for n in norms])
    L = assemble_laplacian(g, MultiplierSpec.power(p, a))
    assert g.cell_measure * u @ L.entries @ u == pytest.approx(witness_energy(p, a, j, K), rel=1e-12)
    assert g.cell_measure * u @ u == pytest.approx(f.norm_squared(), rel=1e-12)
    pot = PotentialSpec.offset_power(1.0, 0.3)
    qv = g.cell_measure * np.sum(potential_vector(pot, g) * u * u)
    assert qv == pytest.approx(offset_potential_energy(f, 0.3), rel=1e-12)


def test_w_value_example():
    # p=2, alpha=1/2, m(B)=1
    assert w_formula_check(2, 0.5, 0, 60).W_exact == pytest.approx(2 - math.sqrt(2))


def test_w_formula_convergence():
    errs = [w_formula_check(2, 0.5, 0, K).relative_error for K in (10, 20, 40, 80)]
    assert all(x > y for x, y in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8


@pytest.mark.parametrize("lam", [0.1, 1.0])
def test_negative_witness_found(lam):
    res = negative_witness(0.7, 0.3, lam, 2, K=12)
    assert res.found and res.quotient < 0
    q, energy, pot, n2 = witness_quotient(2, 0.7, 0.3, lam, res.j, 12)
    f = witness_function(2, 0.7, res.j, 12)
    raw = (radial_jump_energy(f) - lam * offset_potential_energy(f, 0.3)) / f.norm_squared()
    assert raw == pytest.approx(res.quotient, rel=1e-10)


def test_no_witness_in_threshold_regime():
    # beta_off >= alpha: (||x||+1)**-beta_off <= ||x||**-alpha, so lam < |b*| keeps H nonnegative
    lam = 0.5 * abs(ThresholdMap(2, 0.5).b_star())
    res = negative_witness(0.5, 0.8, lam, 2, K=12)
    assert not res.found and res.j is None and res.best_quotient > 0
    with pytest.raises(ValueError):
        negative_witness(0.5, 1.2, 0.1, 2)
    with pytest.raises(ValueError):
        negative_witness(0.5, 0.3, 0.0, 2)
