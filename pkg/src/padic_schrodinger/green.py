"""Ground-state transform of ``H = D**alpha + b ||x||**-alpha`` and Green tables.

With ``h(x) = ||x||**beta`` and ``b = b(beta)``, ``H`` is conjugate to the
weighted hierarchical Laplacian ``Lcal`` on ``(X, h m)``.  This module assembles
``Lcal`` on a grid, evaluates its tilde metric and volume, tabulates Green
functions of ``H`` and ``Lcal``, and computes the ratio diagnostics against the
two-sided estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .operators import MultiplierSpec, OperatorMatrix, green_L, jump_constant, tail_constant
from .padic import (
    ZERO_CELL,
    Grid,
    ZeroCell,
    first_difference_matrix,
    first_difference_to,
    lowest_nonzero_position,
)
from .schrodinger import (
    NumericalFailure,
    PotentialSpec,
    ThresholdMap,
    assemble_hamiltonian,
    potential_vector,
)


class SingularOperatorError(NumericalFailure):
    """The operator could not be inverted (expected only below the critical coupling)."""


class EmptyInterior(ValueError):
    """No interior pairs remain after removing the boundary margins."""


def _check_beta(alpha: float, beta: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not (alpha - 1) / 2 <= beta < alpha:
        raise ValueError(f"beta must lie in [(alpha-1)/2, alpha), got {beta}")


def zero_cell_weight(grid: Grid, beta: float) -> float:
    """Mean of ``||x||**beta`` over the zero cell (finite for ``beta > -1``)."""
    p, S = grid.p, grid.S
    if not beta > -1:
        raise ValueError("||x||**beta is not integrable at 0 for beta <= -1")
    return float(p) ** S * (1 - 1 / p) * float(p) ** (-S * (1 + beta)) / (1 - float(p) ** (-(1 + beta)))


@dataclass(frozen=True, eq=False)
class WeightedGrid:
    """Grid with the weight ``h = ||x||**beta``; ``cell_weights`` are exact cell averages of ``h``."""

    grid: Grid
    beta: float
    cell_weights: np.ndarray

    @classmethod
    def build(cls, grid: Grid, beta: float) -> "WeightedGrid":
        j0 = lowest_nonzero_position(grid)
        w = np.empty(grid.size)
        nz = j0 < grid.n_digits
        w[nz] = float(grid.p) ** ((grid.R - j0[nz]) * beta)
        w[~nz] = zero_cell_weight(grid, beta)
        w.flags.writeable = False
        return cls(grid=grid, beta=float(beta), cell_weights=w)


def weighted_tail(alpha: float, beta: float, grid: Grid) -> float:
    """``int_{||y|| > p**R} J(y) ||y||**beta dm(y)``; the same for every grid cell."""
    p = grid.p
    return jump_constant(alpha, p) * (1 - 1 / p) * float(p) ** ((grid.R + 1) * (beta - alpha)) / (1 - float(p) ** (beta - alpha))


def _jump_by_position(alpha: float, grid: Grid) -> np.ndarray:
    c = jump_constant(alpha, grid.p)
    return np.array([c * float(grid.p) ** (-(grid.R - j) * (1 + alpha)) for j in range(grid.n_digits)] + [0.0])


def assemble_weighted_laplacian(wg: WeightedGrid, alpha: float) -> OperatorMatrix:
    """Compression of ``Lcal u(x) = int (u(x) - u(y)) J(x - y) h(y) dm(y)``.

    Off-diagonal ``-J(d_ij) w_j m_cell``; the diagonal adds the row's jump mass and
    the exterior tail.  Self-adjoint for the ``w``-weighted coefficient product.
    """
    _check_beta(alpha, wg.beta)
    grid = wg.grid
    grid.check_cap()
    m = grid.cell_measure
    J = _jump_by_position(alpha, grid)
    jd = first_difference_matrix(grid)
    entries = J[jd]
    del jd
    entries *= -(wg.cell_weights * m)[None, :]
    tail = weighted_tail(alpha, wg.beta, grid)
    entries[np.diag_indices_from(entries)] = -entries.sum(axis=1) + tail
    spec = MultiplierSpec.power(grid.p, alpha)
    return OperatorMatrix(grid=grid, entries=entries, tail=tail, spec=spec, weights=wg.cell_weights, label="Lcal")


def weighted_ball_measure(p: int, beta: float, k: int, x_norm: float | ZeroCell) -> float:
    """``int_B h dm`` for the ball of measure ``p**k`` around a point of norm ``x_norm``."""
    P = float(p)
    if x_norm is ZERO_CELL or x_norm == 0 or x_norm <= P**k:
        return P ** (k * (1 + beta)) * (p - 1) / (p - P ** (-beta))
    return P**k * float(x_norm) ** beta


def lambda_tilde(wg: WeightedGrid, alpha: float, ball: tuple[int, int]) -> float:
    """``(p**alpha - 1) sum_{S >= B} mtilde(S) / m(S)**(1+alpha)`` for ``ball = (cell index, rank)``.

    Balls not containing 0 contribute a finite sum; from the first ball containing 0
    on the series is geometric with ratio ``p**(beta - alpha)``.
    """
    grid = wg.grid
    p, beta = grid.p, wg.beta
    _check_beta(alpha, beta)
    index, r = ball
    if not -grid.S <= r <= grid.R:
        raise ValueError(f"rank {r} outside [-S, R]")
    j0 = int(first_difference_to(index, grid, np.array([0]))[0])
    P = float(p)
    # the rank-s ball around the cell contains 0 iff s >= log_p ||x||
    k0 = r if j0 == grid.n_digits else max(r, grid.R - j0)
    x_norm = P ** (grid.R - j0) if j0 < grid.n_digits else ZERO_CELL
    terms = [weighted_ball_measure(p, beta, s, x_norm) * P ** (-s * (1 + alpha)) for s in range(r, k0)]
    terms.append((p - 1) / (p - P ** (-beta)) * P ** (k0 * (beta - alpha)) / (1 - P ** (beta - alpha)))
    return (P**alpha - 1) * math.fsum(terms)


def weighted_spectrum(wg: WeightedGrid, alpha: float) -> np.ndarray:
    """Closed-form sorted spectrum of the weighted compression.

    Each grid ball ``B`` of rank ``-S+1 .. R`` contributes ``lambda_tilde(B)`` with
    multiplicity ``p - 1`` (mean-zero functions constant on its children); the
    constant vector contributes the tail.
    """
    grid = wg.grid
    p = grid.p
    vals = [weighted_tail(alpha, wg.beta, grid)]
    for r in range(-grid.S + 1, grid.R + 1):
        # balls of rank r: the one around 0 and p**(R-r) - 1 others grouped by norm
        step = p ** (r + grid.S)
        for start in range(0, grid.size, step):
            vals.extend([lambda_tilde(wg, alpha, (start, r))] * (p - 1))
    return np.sort(np.array(vals))


# -- tilde metric ----------------------------------------------------------------


@dataclass(frozen=True)
class TildeMetricEval:
    """Tilde metric ``F(x, R)`` and volume for ``h = ||x||**beta``.

    Uses the intrinsic metric ``d(x, y) = p**-alpha ||x - y||**alpha``; the closed
    ``d``-ball of radius ``r`` has measure ``p**k`` with ``k = floor(1 + log_p(r)/alpha)``.
    """

    alpha: float
    beta: float
    p: int

    def __post_init__(self):
        _check_beta(self.alpha, self.beta)

    def rank_of_radius(self, radius: float) -> int:
        return math.floor(1 + math.log(radius) / (self.alpha * math.log(self.p)) + 1e-12)

    def breakpoint(self, k: int) -> float:
        """Smallest radius whose ball has measure ``p**k``."""
        return float(self.p) ** ((k - 1) * self.alpha)

    def average_h(self, k: int, x_norm) -> float:
        return weighted_ball_measure(self.p, self.beta, k, x_norm) / float(self.p) ** k

    def distance_to_origin(self, x_norm) -> float:
        if x_norm is ZERO_CELL or x_norm == 0:
            return 0.0
        return float(self.p) ** (-self.alpha) * float(x_norm) ** self.alpha

    def F(self, x_norm, radius: float) -> float:
        """``(int_R^inf avg_{B_r(x)} h dr / r**2)**-1``."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        P = float(self.p)
        a, b = self.alpha, self.beta
        kR = self.rank_of_radius(radius)
        kx = -(10**9) if x_norm is ZERO_CELL or x_norm == 0 else round(math.log(x_norm) / math.log(self.p))
        k0 = max(kR + 1, kx)
        terms = []
        for k in range(kR, k0):
            lo = radius if k == kR else self.breakpoint(k)
            terms.append(self.average_h(k, x_norm) * (1 / lo - 1 / self.breakpoint(k + 1)))
        # balls of rank >= k0 contain 0: avg h = c p**(k beta), width (p**a - 1) p**(-k a)
        head = (self.p - 1) / (self.p - P ** (-b))
        terms.append(head * (P**a - 1) * P ** (k0 * (b - a)) / (1 - P ** (b - a)))
        return 1.0 / math.fsum(terms)

    def volume(self, x_norm, radius: float) -> float:
        """``mtilde(B_R(x))`` for the intrinsic ball of radius ``radius``."""
        return weighted_ball_measure(self.p, self.beta, self.rank_of_radius(radius), x_norm)


def tilde_metric(ev: TildeMetricEval, x_norm, radius: float) -> tuple[float, float]:
    """``(Rtilde, Vtilde) = (F(x, R), mtilde(B_R(x)))``."""
    return ev.F(x_norm, radius), ev.volume(x_norm, radius)


def transience_index(alpha: float, beta: float) -> float:
    """Volume growth exponent ``delta = (1 + beta)/(alpha - beta)``; transient iff ``delta > 1``."""
    if not (alpha - 1) / 2 < beta < alpha:
        raise ValueError(f"beta must lie in ((alpha-1)/2, alpha), got {beta}")
    return (1 + beta) / (alpha - beta)


def is_transient(alpha: float, beta: float) -> bool:
    return transience_index(alpha, beta) > 1


# -- Green tables -----------------------------------------------------------------


@dataclass(frozen=True)
class GreenRow:
    """Green values shared by every pair in one symmetry class.

    ``norm_x``/``norm_y`` are 0 for the zero cell; ``dist`` is 0 on the diagonal.
    """

    norm_x: float
    norm_y: float
    dist: float
    count: int
    g_H: float
    g_L: float
    g_L_direct: float | None = None


@dataclass(frozen=True, eq=False)
class GreenTable:
    grid: Grid
    alpha: float
    beta: float
    b: float
    estimator: str
    rows: tuple[GreenRow, ...]
    meta: dict = field(default_factory=dict)
    g_H_matrix: np.ndarray | None = None

    def lookup(self, norm_x: float, norm_y: float, dist: float) -> GreenRow:
        for row in self.rows:
            if (
                math.isclose(row.norm_x, norm_x, rel_tol=1e-12, abs_tol=0.0)
                and math.isclose(row.norm_y, norm_y, rel_tol=1e-12)
                and math.isclose(row.dist, dist, rel_tol=1e-12)
            ):
                return row
        raise KeyError((norm_x, norm_y, dist))


def _norm_of_position(grid: Grid, j: np.ndarray) -> np.ndarray:
    j = np.asarray(j)
    return np.where(j < grid.n_digits, float(grid.p) ** (grid.R - j.astype(float)), 0.0)


def _operator_row(grid: Grid, alpha: float, index: int, col_weights: np.ndarray | None, diag_extra: np.ndarray, tail: float) -> np.ndarray:
    """One row of ``L_N + diag`` (``col_weights`` None) or of the weighted compression."""
    J = _jump_by_position(alpha, grid)
    jd = first_difference_to(index, grid)
    row = -J[jd] * grid.cell_measure
    if col_weights is not None:
        row *= col_weights
    row[index] = 0.0
    row[index] = -row.sum() + tail + diag_extra[index]
    return row


def _orbit_solve(grid: Grid, alpha: float, pot_diag: np.ndarray, L_tail: float, weights: np.ndarray | None, w_tail: float):
    """Green values of ``H`` (and the weighted operator if ``weights``) per class.

    For fixed ``y``, cells with equal ``(norm position, first difference to y)`` are
    exchanged by tree automorphisms fixing 0 and ``y``; both operators commute with
    them, so Green columns are constant on these classes.
    """
    n = grid.n_digits
    j0 = lowest_nonzero_position(grid).astype(np.int64)
    out = []
    zeros = np.zeros(grid.size)
    per_norm = np.bincount(j0, minlength=n + 1)
    for jy in range(n + 1):
        y = 0 if jy == n else grid.p ** (n - 1 - jy)
        jd = first_difference_to(y, grid).astype(np.int64)
        label = j0 * (n + 1) + jd
        keys, inverse = np.unique(label, return_inverse=True)
        reps = np.array([np.flatnonzero(inverse == c)[0] for c in range(len(keys))])
        counts = np.bincount(inverse)
        k = len(keys)
        A_H = np.empty((k, k))
        A_L = np.empty((k, k)) if weights is not None else None
        for c, x in enumerate(reps):
            A_H[c] = np.bincount(inverse, weights=_operator_row(grid, alpha, x, None, pot_diag, L_tail), minlength=k)
            if weights is not None:
                A_L[c] = np.bincount(inverse, weights=_operator_row(grid, alpha, x, weights, zeros, w_tail), minlength=k)
        cy = int(inverse[y])
        rhs = np.zeros(k)
        rhs[cy] = 1.0 / grid.cell_measure
        try:
            gH = np.linalg.solve(A_H, rhs)
            gL = np.linalg.solve(A_L, rhs / weights[y]) if weights is not None else None
        except np.linalg.LinAlgError as exc:
            raise SingularOperatorError(str(exc)) from exc
        for c, key in enumerate(keys):
            jx, jdx = divmod(int(key), n + 1)
            out.append((jx, jy, jdx, int(counts[c] * per_norm[jy]), gH[c], None if gL is None else gL[c]))
    return out


def _dense_classes(grid: Grid, G: np.ndarray, j0: np.ndarray):
    """Per-class means of a dense Green matrix and the largest relative deviation."""
    n = grid.n_digits
    size = (n + 1) ** 3
    sums = np.zeros(size)
    counts = np.zeros(size, dtype=np.int64)
    block = 512
    for s in range(0, grid.size, block):
        idx = np.arange(s, min(s + block, grid.size))
        jd = first_difference_matrix_rows(grid, idx)
        key = (j0[idx, None] * (n + 1) + j0[None, :]) * (n + 1) + jd
        sums += np.bincount(key.ravel(), weights=G[idx].ravel(), minlength=size)
        counts += np.bincount(key.ravel(), minlength=size)
    means = np.divide(sums, counts, out=np.zeros(size), where=counts > 0)
    worst = 0.0
    for s in range(0, grid.size, block):
        idx = np.arange(s, min(s + block, grid.size))
        jd = first_difference_matrix_rows(grid, idx)
        key = (j0[idx, None] * (n + 1) + j0[None, :]) * (n + 1) + jd
        worst = max(worst, float(np.max(np.abs(G[idx] / means[key] - 1))))
    return means, counts, worst


def first_difference_matrix_rows(grid: Grid, rows: np.ndarray) -> np.ndarray:
    """First-difference positions between the cells ``rows`` and all cells."""
    n = grid.n_digits
    idx = np.arange(grid.size, dtype=np.int64)
    out = np.zeros((len(rows), grid.size), dtype=np.int64)
    for k in range(1, n + 1):
        scale = grid.p ** (n - k)
        out += (rows[:, None] // scale) == (idx[None, :] // scale)
    return out


def green_table(
    grid: Grid,
    alpha: float,
    beta: float | None = None,
    b: float | None = None,
    estimator: str = "auto",
    cross_check: bool = False,
    keep_matrix: bool = False,
) -> GreenTable:
    """Green functions of ``H = D**alpha + b ||x||**-alpha`` and of its h-transform.

    Exactly one of ``beta`` and ``b`` is given; ``b`` maps to ``beta`` on the upper
    branch.  ``g_H = H_N**-1 / m_cell``; ``g_L = g_H / (h_x h_y)``.  With
    ``cross_check`` the weighted operator is also inverted directly, giving the
    independent estimate ``g_L_direct``.

    Args:
        estimator: ``"matrix_inverse"`` (dense, needs ``N <= cap``),
            ``"orbit_reduced"`` (exact solve on symmetry classes, any ``N``), or
            ``"auto"`` (dense within the cap, reduced otherwise).
    """
    if (beta is None) == (b is None):
        raise ValueError("give exactly one of beta and b")
    tm = ThresholdMap(grid.p, alpha)
    if beta is None:
        beta = tm.beta_from_b(b, "upper")
    else:
        _check_beta(alpha, beta)
        b = tm.b_from_beta(beta) if beta != 0 else 0.0
    _check_beta(alpha, beta)
    if estimator == "auto":
        estimator = "matrix_inverse" if grid.size <= grid.cap else "orbit_reduced"
    spec = MultiplierSpec.power(grid.p, alpha)
    pot = PotentialSpec.inverse_power(b, alpha)
    wg = WeightedGrid.build(grid, beta)
    w = wg.cell_weights
    L_tail = tail_constant(alpha, grid)
    w_tail = weighted_tail(alpha, beta, grid)
    n = grid.n_digits
    norms = _norm_of_position(grid, np.arange(n + 1))
    h_of = np.append(float(grid.p) ** ((grid.R - np.arange(n)) * beta), zero_cell_weight(grid, beta))
    dists = np.append(float(grid.p) ** (grid.R - np.arange(n, dtype=float)), 0.0)
    meta: dict[str, Any] = {"tail": L_tail, "weighted_tail": w_tail, "N": grid.size}
    rows = []
    G = None
    if estimator == "matrix_inverse":
        H = assemble_hamiltonian(grid, spec, pot)
        try:
            G = np.linalg.inv(H.entries)
        except np.linalg.LinAlgError as exc:
            raise SingularOperatorError(str(exc)) from exc
        del H
        G /= grid.cell_measure
        j0 = lowest_nonzero_position(grid).astype(np.int64)
        means, counts, dev = _dense_classes(grid, G, j0)
        meta["max_class_deviation"] = dev
        means_L = None
        if cross_check:
            M = assemble_weighted_laplacian(wg, alpha)
            try:
                GL = np.linalg.inv(M.entries)
            except np.linalg.LinAlgError as exc:
                raise SingularOperatorError(str(exc)) from exc
            del M
            GL /= (w * grid.cell_measure)[None, :]
            means_L, _, dev_L = _dense_classes(grid, GL, j0)
            meta["max_class_deviation_direct"] = dev_L
            del GL
        for key in np.flatnonzero(counts):
            jx, rest = divmod(int(key), (n + 1) ** 2)
            jy, jdx = divmod(rest, n + 1)
            gH = float(means[key])
            rows.append(
                GreenRow(
                    norm_x=float(norms[jx]), norm_y=float(norms[jy]), dist=float(dists[jdx]), count=int(counts[key]),
                    g_H=gH, g_L=gH / (h_of[jx] * h_of[jy]),
                    g_L_direct=None if means_L is None else float(means_L[key]),
                )
            )
        if not keep_matrix:
            G = None
    elif estimator == "orbit_reduced":
        pot_diag = potential_vector(pot, grid)
        for jx, jy, jdx, count, gH, gL in _orbit_solve(grid, alpha, pot_diag, L_tail, w if cross_check else None, w_tail):
            rows.append(
                GreenRow(
                    norm_x=float(norms[jx]), norm_y=float(norms[jy]), dist=float(dists[jdx]), count=count,
                    g_H=float(gH), g_L=float(gH) / (h_of[jx] * h_of[jy]),
                    g_L_direct=None if gL is None else float(gL),
                )
            )
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    rows.sort(key=lambda r: (r.norm_x, r.norm_y, r.dist))
    if any(not r.g_H > 0 for r in rows):
        raise SingularOperatorError("Green table has non-positive entries; the operator is not positive definite")
    return GreenTable(grid=grid, alpha=alpha, beta=float(beta), b=float(b), estimator=estimator, rows=tuple(rows), meta=meta, g_H_matrix=G)


# -- diagnostics -------------------------------------------------------------------


def interior_rows(table: GreenTable, margin: int = 2) -> list[GreenRow]:
    """Off-diagonal rows with both norms in ``[p**(-S+margin), p**(R-margin)]`` and ``dist >= p**(-S+margin)``."""
    grid = table.grid
    lo = float(grid.p) ** (-grid.S + margin)
    hi = float(grid.p) ** (grid.R - margin)
    eps = 1e-9

    def inside(v):
        return lo * (1 - eps) <= v <= hi * (1 + eps)

    return [r for r in table.rows if r.dist >= lo * (1 - eps) and inside(r.norm_x) and inside(r.norm_y)]


@dataclass(frozen=True, eq=False)
class RatioDiagnostics:
    """Ratio statistics over interior pairs.

    ``rho = g_H / (g_L0(d) * (min norm ratio)**beta)``; ``sigma`` uses the two-variable
    form ``g_L * (|x| v |y|)**(2 beta) / d**(alpha-1)``; ``sigma_alt`` replaces
    ``|x| v |y|`` by ``d``.
    """

    rho_min: float
    rho_max: float
    sigma_min: float
    sigma_max: float
    sigma_alt_min: float
    sigma_alt_max: float
    rows: list[dict]
    equal_norm_rho: tuple[float, float]

    @property
    def rho_spread(self) -> float:
        return self.rho_max / self.rho_min

    @property
    def sigma_spread(self) -> float:
        return self.sigma_max / self.sigma_min

    @property
    def sigma_alt_spread(self) -> float:
        return self.sigma_alt_max / self.sigma_alt_min


def ratio_diagnostics(table: GreenTable, margin: int = 2) -> RatioDiagnostics:
    rows = interior_rows(table, margin)
    if not rows:
        raise EmptyInterior(f"no interior pairs on {table.grid} with margin {margin}")
    a, b = table.alpha, table.beta
    p = table.grid.p
    rho, sigma, sigma_alt, eq = [], [], [], []
    csv_rows = []
    for r in rows:
        factor = min(r.norm_x / r.norm_y, r.norm_y / r.norm_x) ** b
        base = green_L(a, r.dist, p)
        value = r.g_H / (base * factor)
        rho.append(value)
        sigma.append(r.g_L * max(r.norm_x, r.norm_y) ** (2 * b) / r.dist ** (a - 1))
        sigma_alt.append(r.g_L * r.dist ** (2 * b) / r.dist ** (a - 1))
        if r.norm_x == r.norm_y:
            eq.append(value)
        csv_rows.append(
            {"norm_x": r.norm_x, "norm_y": r.norm_y, "dist": r.dist, "g_H": r.g_H, "g_L": r.g_L, "ratio": value, "predicted_factor": factor}
        )
    return RatioDiagnostics(
        rho_min=min(rho), rho_max=max(rho),
        sigma_min=min(sigma), sigma_max=max(sigma),
        sigma_alt_min=min(sigma_alt), sigma_alt_max=max(sigma_alt),
        rows=csv_rows,
        equal_norm_rho=(min(eq), max(eq)) if eq else (math.nan, math.nan),
    )


def estimator_gap(table: GreenTable, margin: int = 2) -> float:
    """Largest relative gap between derived and direct ``g_L`` over interior pairs."""
    rows = interior_rows(table, margin)
    if not rows:
        raise EmptyInterior("no interior pairs")
    if rows[0].g_L_direct is None:
        raise ValueError("table was built without cross_check")
    return max(abs(r.g_L / r.g_L_direct - 1) for r in rows)


@dataclass(frozen=True)
class FormComparison:
    lhs: float
    rhs: float
    relative_gap: float


def compare_QH_forms(grid: Grid, alpha: float, beta: float, u: np.ndarray) -> FormComparison:
    """Compare ``Q_H(hu, hu)`` with ``1/2 iint (u(x)-u(y))**2 J h(x) h(y)`` plus the exterior term.

    ``H`` uses ``b = b(beta)``.  The exterior term is ``tail_w * int u**2 h dm``
    with ``tail_w`` the exterior integral of ``J h``.  The identity is exact for
    probes vanishing on the zero cell.
    """
    _check_beta(alpha, beta)
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.size,):
        raise ValueError(f"u must have shape ({grid.size},)")
    tm = ThresholdMap(grid.p, alpha)
    b = tm.b_from_beta(beta) if beta != 0 else 0.0
    spec = MultiplierSpec.power(grid.p, alpha)
    H = assemble_hamiltonian(grid, spec, PotentialSpec.inverse_power(b, alpha))
    h = WeightedGrid.build(grid, beta).cell_weights
    m = grid.cell_measure
    hu = h * u
    lhs = float(hu @ (H.entries @ hu)) * m
    J = _jump_by_position(alpha, grid)
    jd = first_difference_matrix(grid)
    K = J[jd]
    del jd
    diff2 = (u[:, None] - u[None, :]) ** 2
    bulk = 0.5 * float(np.sum(diff2 * K * h[:, None] * h[None, :])) * m * m
    exterior = weighted_tail(alpha, beta, grid) * m * float(np.sum(u * u * h))
    rhs = bulk + exterior
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return FormComparison(lhs=lhs, rhs=rhs, relative_gap=abs(lhs - rhs) / scale)
