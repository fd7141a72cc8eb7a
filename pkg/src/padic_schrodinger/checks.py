"""Named invariant checks run by ``padic-schrodinger verify``.

Each check is small enough for a laptop and reports the measured deviation
next to the tolerance it was held to.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import green, operators, padic, schrodinger
from .operators import MultiplierSpec
from .padic import Grid


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _result(name: str, measured: float, tolerance: float, detail: str = "", *, upper: bool = True) -> CheckResult:
    ok = measured <= tolerance if upper else measured >= tolerance
    return CheckResult(name, bool(ok), float(measured), float(tolerance), detail)


# -- padic -----------------------------------------------------------------------


def check_gamma_reflection() -> CheckResult:
    worst = 0.0
    for p in (2, 3, 5):
        for z in np.linspace(-3.05, 3.95, 100):
            worst = max(worst, abs(padic.gamma_p(z, p) * padic.gamma_p(1 - z, p) - 1))
    return _result("gamma_p reflection", worst, 1e-12)


def check_ultrametric() -> CheckResult:
    grid = Grid(5, 1, 2)
    D = padic.distance_matrix(grid)
    worst = float(np.max(D[:, None, :] - np.maximum(D[:, :, None], D[None, :, :])))
    sym = float(np.max(np.abs(D - D.T)))
    return _result("ultrametric inequality", max(worst, sym, 0.0), 0.0)


def check_radial_sum() -> CheckResult:
    grid = Grid(3, 2, 2)
    norms = padic.cell_norms(grid)[1:]
    worst = 0.0
    for e in (-1.5, -0.5, 0.0, 0.7, 2.0):
        direct = grid.cell_measure * math.fsum(norms**e)
        radial = padic.radial_sum(lambda r: r**e, -grid.S + 1, grid.R, grid)
        worst = max(worst, abs(direct / radial - 1))
    return _result("radial_sum vs cell sum", worst, 1e-12)


# -- operator -----------------------------------------------------------------------


def check_exact_spectrum() -> CheckResult:
    worst = 0.0
    for p, a in itertools.product((2, 3), (0.3, 0.5, 0.9)):
        grid = Grid(p, 3, 3) if p == 2 else Grid(p, 2, 2)
        spec = MultiplierSpec.power(p, a)
        ev = np.linalg.eigvalsh(operators.assemble_laplacian(grid, spec).entries)
        cf = operators.closed_form_spectrum(grid, spec)
        worst = max(worst, float(np.max(np.abs(ev - cf) / cf)))
    return _result("exact spectrum of L_N", worst, 1e-9)


def check_markov_structure() -> CheckResult:
    grid = Grid(2, 3, 3)
    L = operators.assemble_laplacian(grid, MultiplierSpec.power(2, 0.5))
    A = L.entries
    off = A - np.diag(np.diag(A))
    worst = max(float(np.max(off)), float(np.max(np.abs(A.sum(axis=1) - L.tail))) / L.tail, float(np.max(np.abs(A - A.T))))
    return _result("Markov structure of L_N", worst, 1e-12)


def check_ranksum_form() -> CheckResult:
    grid = Grid(3, 2, 2)
    spec = MultiplierSpec.power(3, 0.7)
    A = operators.assemble_laplacian(grid, spec, form="jump").entries
    B = operators.assemble_laplacian(grid, spec, form="ranksum").entries
    return _result("rank-sum vs jump assembly", float(np.max(np.abs(A - B)) / np.max(np.abs(A))), 1e-12)


def check_subordination() -> CheckResult:
    grid = Grid(2, 3, 3)
    a, s = 0.6, 0.5
    A = operators.assemble_laplacian(grid, MultiplierSpec.power(2, a)).entries
    B = operators.assemble_laplacian(grid, MultiplierSpec.power(2, a * s)).entries
    vals, vecs = np.linalg.eigh(A)
    P = np.eye(grid.size) - 1.0 / grid.size
    As = P @ (vecs @ np.diag(vals**s) @ vecs.T) @ P
    return _result("subordination on mean-zero functions", float(np.max(np.abs(As - P @ B @ P)) / np.max(np.abs(B))), 1e-9)


def check_heat_kernel() -> CheckResult:
    worst = 0.0
    for p, a in itertools.product((2, 3), (0.3, 0.7)):
        spec = MultiplierSpec.power(p, a)
        for t in (float(p) ** -6, 1.3, float(p) ** 6):
            worst = max(worst, abs(operators.heat_kernel_mass(spec, t) - 1))
            ss = operators.heat_kernel(spec, t * float(p) ** a, 0.0) * p / operators.heat_kernel(spec, t, 0.0)
            worst = max(worst, abs(ss - 1))
    return _result("heat kernel mass and self-similarity", worst, 1e-8)


def check_green_time_integral() -> CheckResult:
    worst = 0.0
    for p, a in itertools.product((2, 3), (0.3, 0.5, 0.7)):
        spec = MultiplierSpec.power(p, a)
        for r0 in range(-4, 5):
            d = float(p) ** r0
            worst = max(worst, abs(operators.green_time_integral(spec, d) / operators.green_L(a, d, p) - 1))
    return _result("Green function as heat time integral", worst, 1e-12)


def check_square_gradient() -> CheckResult:
    grid = Grid(3, 2, 2)
    L = operators.assemble_laplacian(grid, MultiplierSpec.power(3, 0.5))
    rng = np.random.default_rng(7)
    u = rng.normal(size=grid.size)
    G = operators.square_gradient(L, u, u)
    total = grid.cell_measure * math.fsum(G) + operators.exterior_gradient_mass(L, u, u)
    form = grid.cell_measure * float(u @ L.entries @ u)
    return _result("carre du champ integrates to the form", abs(total / form - 1) + max(0.0, -float(G.min())), 1e-10)


# -- schrodinger --------------------------------------------------------------------


def check_critical_positivity() -> CheckResult:
    worst = math.inf
    for p, a in itertools.product((2, 3), (0.3, 0.5, 0.8)):
        tm = schrodinger.ThresholdMap(p, a)
        for r in (2, 3):
            grid = Grid(p, r, r)
            H = schrodinger.assemble_hamiltonian(grid, MultiplierSpec.power(p, a), schrodinger.PotentialSpec.inverse_power(tm.b_star(), a))
            worst = min(worst, schrodinger.min_eigenvalue(H))
    return _result("H_N >= 0 at b = b*", worst, -1e-10, upper=False)


def check_subcritical_negativity() -> CheckResult:
    tm = schrodinger.ThresholdMap(2, 0.5)
    best = math.inf
    for r in (2, 3, 4):
        grid = Grid(2, r, r)
        H = schrodinger.assemble_hamiltonian(grid, MultiplierSpec.power(2, 0.5), schrodinger.PotentialSpec.inverse_power(2 * tm.b_star(), 0.5))
        best = min(best, schrodinger.min_eigenvalue(H))
    return _result("negative eigenvalue at b = 2 b*", best, 0.0, "measured is the smallest eigenvalue found")


def check_threshold_roundtrip() -> CheckResult:
    worst = 0.0
    for p, a in itertools.product((2, 3), (0.2, 0.5, 0.9)):
        tm = schrodinger.ThresholdMap(p, a)
        for b in np.linspace(tm.b_star(), 5, 40):
            worst = max(worst, abs(tm.b_from_beta(tm.beta_from_b(b)) - b))
    return _result("b -> beta -> b round trip", worst, 1e-10)


def check_power_identity() -> CheckResult:
    worst = 0.0
    for p, a in itertools.product((2, 3), (0.25, 0.6)):
        for beta in (a - 0.9, -0.2, 0.15, a - 0.05):
            if not a - 1 < beta < a or beta == 0:
                continue
            c = schrodinger.power_identity_constant(a, beta, p)
            for g in (-4, 0, 4):
                worst = max(worst, abs(schrodinger.power_identity_ratio(a, beta, g, p) / c - 1))
    return _result("D**alpha of power functions", worst, 1e-8)


def check_witness() -> CheckResult:
    res = [schrodinger.negative_witness(0.7, 0.3, lam, 2, K=12) for lam in (0.1, 1.0)]
    worst = max(r.best_quotient for r in res)
    return _result("negative witness below the threshold regime", worst, 0.0)


def check_bottom_of_spectrum() -> CheckResult:
    grid = Grid(2, 3, 3)
    pot = schrodinger.PotentialSpec.offset_power(-1.0, 0.3)
    lams = np.linspace(0, 40, 20)
    E = schrodinger.bottom_of_spectrum(grid, MultiplierSpec.power(2, 0.7), pot, lams)
    inc = float(np.max(np.diff(E)))
    curv = float(np.max(np.diff(E, 2)))
    scale = float(np.max(np.abs(E)))
    return _result("E_lambda nonincreasing and concave", max(inc, curv, 0.0) / scale, 1e-12)


# -- green ----------------------------------------------------------------------------


def check_weighted_spectrum() -> CheckResult:
    worst = 0.0
    for beta in (-0.25, 0.0, 0.3):
        wg = green.WeightedGrid.build(Grid(3, 2, 2), beta)
        M = green.assemble_weighted_laplacian(wg, 0.5)
        ev = schrodinger.eigen_spectrum(M).eigenvalues
        cf = green.weighted_spectrum(wg, 0.5)
        worst = max(worst, float(np.max(np.abs(ev - cf) / cf)))
    return _result("weighted Laplacian spectrum", worst, 1e-9)


def check_qh_identity() -> CheckResult:
    grid = Grid(3, 2, 2)
    rng = np.random.default_rng(3)
    worst = 0.0
    for beta in (-0.25, -0.1, 0.2):
        u = rng.normal(size=grid.size)
        u[0] = 0.0
        worst = max(worst, green.compare_QH_forms(grid, 0.5, beta, u).relative_gap)
    return _result("ground-state form identity", worst, 1e-8)


def check_orbit_solver() -> CheckResult:
    grid = Grid(2, 3, 3)
    b = schrodinger.ThresholdMap(2, 0.5).b_star() / 2
    t1 = green.green_table(grid, 0.5, b=b, estimator="matrix_inverse", cross_check=True)
    t2 = green.green_table(grid, 0.5, b=b, estimator="orbit_reduced", cross_check=True)
    worst = max(
        max(abs(r1.g_H / r2.g_H - 1), abs(r1.g_L_direct / r2.g_L_direct - 1)) for r1, r2 in zip(t1.rows, t2.rows)
    )
    worst = max(worst, t1.meta["max_class_deviation"])
    return _result("orbit-reduced vs dense Green solve", worst, 1e-10)


def check_tilde_metric() -> CheckResult:
    ev = green.TildeMetricEval(0.5, 0.0, 2)
    worst = max(abs(ev.F(x, r) / r - 1) for x in (0.25, 1.0, 8.0, padic.ZERO_CELL) for r in (0.01, 0.3, 1.0, 7.0, 100.0))
    return _result("tilde metric is the identity at beta = 0", worst, 1e-12)


def check_transience() -> CheckResult:
    worst = math.inf
    for a in np.linspace(0.05, 0.95, 19):
        for beta in np.linspace((a - 1) / 2, a, 21)[1:-1]:
            worst = min(worst, green.transience_index(a, beta))
    return _result("transience index above 1", worst, 1.0, upper=False)


SUITES: dict[str, list[Callable[[], CheckResult]]] = {
    "padic": [check_gamma_reflection, check_ultrametric, check_radial_sum],
    "operator": [
        check_exact_spectrum,
        check_markov_structure,
        check_ranksum_form,
        check_subordination,
        check_heat_kernel,
        check_green_time_integral,
        check_square_gradient,
    ],
    "schrodinger": [
        check_critical_positivity,
        check_subcritical_negativity,
        check_threshold_roundtrip,
        check_power_identity,
        check_witness,
        check_bottom_of_spectrum,
    ],
    "green": [check_weighted_spectrum, check_qh_identity, check_orbit_solver, check_tilde_metric, check_transience],
}


def run_suite(name: str) -> list[CheckResult]:
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    return [check() for suite in names for check in SUITES[suite]]
