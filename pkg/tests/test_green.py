import math

import numpy as np
import pytest

from padic_schrodinger.green import (
    EmptyInterior,
    TildeMetricEval,
    WeightedGrid,
    assemble_weighted_laplacian,
    compare_QH_forms,
    estimator_gap,
    green_table,
    interior_rows,
    is_transient,
    lambda_tilde,
    ratio_diagnostics,
    tilde_metric,
    transience_index,
    weighted_spectrum,
    weighted_tail,
    zero_cell_weight,
)
from padic_schrodinger.operators import MultiplierSpec, assemble_laplacian
from padic_schrodinger.padic import ZERO_CELL, Grid, cell_norms, radial_sum
from padic_schrodinger.schrodinger import OutOfRange, PotentialSpec, ThresholdMap, assemble_hamiltonian


def test_zero_cell_weight_series():
    g = Grid(3, 2, 2)
    for beta in (-0.3, 0.0, 0.4):
        series = radial_sum(lambda r: r**beta, -g.S - 400, -g.S, g)
        assert zero_cell_weight(g, beta) == pytest.approx(series / g.cell_measure, rel=1e-12)


def test_beta_zero_is_plain_laplacian():
    g = Grid(2, 3, 2)
    M = assemble_weighted_laplacian(WeightedGrid.build(g, 0.0), 0.5)
    L = assemble_laplacian(g, MultiplierSpec.power(2, 0.5))
    np.testing.assert_allclose(M.entries, L.entries, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("p,a,beta", [(2, 0.5, -0.2), (3, 0.7, 0.3), (2, 0.3, 0.1)])
def test_weighted_structure(p, a, beta):
    g = Grid(p, 2, 2)
    wg = WeightedGrid.build(g, beta)
    M = assemble_weighted_laplacian(wg, a).entries
    np.testing.assert_allclose(M.sum(axis=1), weighted_tail(a, beta, g), rtol=1e-10)
    off = M - np.diag(np.diag(M))
    assert np.all(off <= 0)
    S = wg.cell_weights[:, None] * M
    np.testing.assert_allclose(S, S.T, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("p,a,beta,R", [(2, 0.5, -0.2, 3), (3, 0.7, 0.3, 2), (2, 0.3, 0.25, 3), (3, 0.4, -0.3, 2)])
def test_weighted_spectrum_closed_form(p, a, beta, R):
    g = Grid(p, R, R)
    wg = WeightedGrid.build(g, beta)
    M = assemble_weighted_laplacian(wg, a).entries
    s = np.sqrt(wg.cell_weights)
    sym = s[:, None] * M / s[None, :]
    sym = 0.5 * (sym + sym.T)
    ev = np.linalg.eigvalsh(sym)
    np.testing.assert_allclose(ev, weighted_spectrum(wg, a), rtol=1e-10)


def test_lambda_tilde_beta_zero():
    g = Grid(3, 2, 2)
    wg = WeightedGrid.build(g, 0.0)
    spec = MultiplierSpec.power(3, 0.6)
    from padic_schrodinger.operators import lambda_of_rank

    for r in range(-g.S + 1, g.R + 1):
        for idx in (0, 5, 40):
            assert lambda_tilde(wg, 0.6, (idx, r)) == pytest.approx(lambda_of_rank(spec, r), rel=1e-12)


def test_lambda_tilde_monotone_and_unbounded():
    g = Grid(2, 2, 12)
    wg = WeightedGrid.build(g, 0.3)
    vals = [lambda_tilde(wg, 0.6, (0, r)) for r in range(-g.S, g.R + 1)]
    # balls around 0 scale exactly like m(B)**(beta - alpha), so the values grow without bound
    for x, y in zip(vals, vals[1:]):
        assert x / y == pytest.approx(2.0**0.3, rel=1e-12)
    # away from 0 the nested sequence also decreases
    far = g.size - 1
    vals = [lambda_tilde(wg, 0.6, (far, r)) for r in range(-g.S, g.R + 1)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


@pytest.mark.parametrize("radius", [0.01, 0.5, 1.0, 3.7, 250.0])
def test_tilde_metric_beta_zero(radius):
    ev = TildeMetricEval(0.5, 0.0, 3)
    for x in (ZERO_CELL, 1.0, 81.0):
        F, V = tilde_metric(ev, x, radius)
        assert F == pytest.approx(radius, rel=1e-12)
        assert V == pytest.approx(3.0 ** ev.rank_of_radius(radius))


@pytest.mark.parametrize("a,beta", [(0.5, -0.2), (0.7, 0.4), (0.3, 0.1)])
def test_tilde_metric_regimes(a, beta):
    ev = TildeMetricEval(a, beta, 2)
    radii = np.logspace(-6, 6, 49)
    # around 0: F ~ R**(1 - beta/alpha), V ~ R**((1+beta)/alpha)
    f0 = [ev.F(0.0, r) / r ** (1 - beta / a) for r in radii]
    v0 = [ev.volume(0.0, r) / r ** ((1 + beta) / a) for r in radii]
    for seq in (f0, v0):
        assert max(seq) / min(seq) < 2.0 ** (2 + abs(beta) + 2 / a)
    # far from 0 at small radius: h is nearly constant, F ~ R / h(x), V ~ m(B) h(x)
    # the correction is of relative order R / d(x, 0)
    x = 2.0 ** math.ceil(25 / a)
    for r in (1e-3, 1e-1, 1.0):
        assert ev.F(x, r) * x**beta / r == pytest.approx(1.0, rel=1e-5)
        assert ev.volume(x, r) == pytest.approx(2.0 ** ev.rank_of_radius(r) * x**beta)


def test_transience():
    assert transience_index(0.5, 0.0) == pytest.approx(2.0)
    assert is_transient(0.5, 0.0)
    assert is_transient(0.5, -0.2)
    # delta > 1 is equivalent to beta > (alpha - 1)/2, so the whole range is transient
    for a in np.linspace(0.05, 0.95, 10):
        for beta in np.linspace((a - 1) / 2, a, 12)[1:-1]:
            assert is_transient(a, beta)
        assert transience_index(a, (a - 1) / 2 + 1e-12) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        transience_index(0.5, -0.25)


# -- Green tables ------------------------------------------------------------------


@pytest.fixture(scope="module")
def table_p2():
    return green_table(Grid(2, 3, 3), 0.5, b=ThresholdMap(2, 0.5).b_star() / 2, cross_check=True, keep_matrix=True)


def test_green_matrix_symmetric_positive(table_p2):
    G = table_p2.g_H_matrix
    np.testing.assert_allclose(G, G.T, rtol=1e-10)
    assert np.all(G > 0)
    assert table_p2.meta["max_class_deviation"] < 1e-10
    assert table_p2.meta["max_class_deviation_direct"] < 1e-10


def test_green_inverts_hamiltonian(table_p2):
    g = table_p2.grid
    H = assemble_hamiltonian(g, MultiplierSpec.power(2, 0.5), PotentialSpec.inverse_power(table_p2.b, 0.5))
    np.testing.assert_allclose(H.entries @ table_p2.g_H_matrix * g.cell_measure, np.eye(g.size), atol=1e-9)


@pytest.mark.parametrize("p,R,b_frac", [(2, 3, 0.5), (3, 2, 1.0), (2, 4, 0.0), (3, 3, -1.0)])
def test_orbit_matches_dense(p, R, b_frac):
    g = Grid(p, R, R)
    b = b_frac * ThresholdMap(p, 0.5).b_star()
    dense = green_table(g, 0.5, b=b, estimator="matrix_inverse", cross_check=True)
    orbit = green_table(g, 0.5, b=b, estimator="orbit_reduced", cross_check=True)
    assert len(dense.rows) == len(orbit.rows)
    for r1, r2 in zip(dense.rows, orbit.rows):
        assert (r1.norm_x, r1.norm_y, r1.dist, r1.count) == (r2.norm_x, r2.norm_y, r2.dist, r2.count)
        assert r2.g_H == pytest.approx(r1.g_H, rel=1e-9)
        assert r2.g_L_direct == pytest.approx(r1.g_L_direct, rel=1e-9)
    assert sum(r.count for r in dense.rows) == g.size**2


def test_beta_zero_table():
    t = green_table(Grid(2, 3, 3), 0.5, b=0.0, cross_check=True)
    assert t.beta == 0.0
    for r in t.rows:
        assert r.g_L == pytest.approx(r.g_H)
    assert estimator_gap(t) < 1e-10


def test_table_arguments():
    g = Grid(2, 2, 2)
    with pytest.raises(ValueError):
        green_table(g, 0.5, beta=0.1, b=0.1)
    with pytest.raises(OutOfRange):
        green_table(g, 0.5, b=2 * ThresholdMap(2, 0.5).b_star())
    t = green_table(g, 0.5, beta=0.2)
    assert t.b == pytest.approx(ThresholdMap(2, 0.5).b_from_beta(0.2))


def test_interior_and_empty():
    t = green_table(Grid(2, 2, 2), 0.5, b=0.0)
    assert interior_rows(t, margin=1)
    with pytest.raises(EmptyInterior):
        ratio_diagnostics(t, margin=3)


def test_ratio_diagnostics_b_zero():
    t = green_table(Grid(3, 3, 3), 0.5, b=0.0)
    d = ratio_diagnostics(t)
    assert d.rows and 0.8 < d.rho_min <= d.rho_max < 1.0
    assert d.equal_norm_rho[0] <= d.equal_norm_rho[1]


def test_lookup(table_p2):
    r = table_p2.rows[len(table_p2.rows) // 2]
    assert table_p2.lookup(r.norm_x, r.norm_y, r.dist) == r


@pytest.mark.parametrize("p,a,beta,R", [(3, 0.5, -0.1, 2), (2, 0.7, 0.3, 3), (2, 0.4, -0.3, 3)])
def test_QH_identity(p, a, beta, R):
    g = Grid(p, R, R)
    rng = np.random.default_rng(7)
    for _ in range(3):
        u = rng.normal(size=g.size)
        u[0] = 0.0
        assert compare_QH_forms(g, a, beta, u).relative_gap < 1e-10


@pytest.mark.parametrize("b_frac", [1.0, 0.5, 0.0, -2.0])
def test_ratio_spread_shrinks_with_margin(b_frac):
    b = b_frac * ThresholdMap(3, 0.5).b_star()
    t = green_table(Grid(3, 5, 5), 0.5, b=b, estimator="orbit_reduced")
    spreads = [ratio_diagnostics(t, m).rho_spread for m in (1, 2, 3, 4)]
    assert all(x >= y for x, y in zip(spreads, spreads[1:]))
