"""Schrodinger operators ``H = D**alpha + V`` on truncated grids.

Covers potential averaging, Hamiltonian assembly, dense spectra, the critical
coupling map ``b <-> beta`` and variational witnesses of negative spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np
import scipy.linalg

from .operators import (
    MultiplierSpec,
    OperatorMatrix,
    assemble_laplacian,
    jump_constant,
)
from .padic import (
    Cell,
    Grid,
    PoleError,
    ZERO_CELL,
    cell_norm,
    cell_norms,
    gamma_p,
    series_sum,
)


class DivergentAverage(ValueError):
    """The potential is not integrable over the zero cell."""


class OutOfRange(ValueError):
    """No real root of the coupling equation exists for this ``b``."""


class NumericalFailure(ArithmeticError):
    """An eigensolve or linear solve failed."""


# -- potentials -----------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSpec:
    """Radial potential ``V``.

    Kinds:
        ``inverse_power``: ``b * ||x||**-alpha`` (needs ``0 < alpha < 1``).
        ``offset_power``: ``c * (||x|| + 1)**-beta_off``.
        ``radial_table``: explicit ``norm -> value`` pairs plus the zero-cell average.
    """

    kind: str
    b: float = 0.0
    alpha: float | None = None
    c: float = 0.0
    beta_off: float | None = None
    table: tuple[tuple[float, float], ...] = ()
    zero_value: float | None = None

    def __post_init__(self):
        if self.kind not in ("inverse_power", "offset_power", "radial_table"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "inverse_power" and (self.alpha is None or not self.alpha > 0):
            raise ValueError("inverse_power needs a positive alpha")
        if self.kind == "offset_power" and (self.beta_off is None or not self.beta_off > 0):
            raise ValueError("offset_power needs a positive beta_off")
        if self.kind == "radial_table" and self.zero_value is None:
            raise ValueError("radial_table needs the zero-cell average")

    @classmethod
    def inverse_power(cls, b: float, alpha: float) -> "PotentialSpec":
        return cls(kind="inverse_power", b=float(b), alpha=float(alpha))

    @classmethod
    def offset_power(cls, c: float, beta_off: float) -> "PotentialSpec":
        return cls(kind="offset_power", c=float(c), beta_off=float(beta_off))

    @classmethod
    def radial_table(cls, table: Mapping[float, float], zero_value: float) -> "PotentialSpec":
        return cls(kind="radial_table", table=tuple(sorted((float(k), float(v)) for k, v in table.items())), zero_value=float(zero_value))

    def value(self, norm: float) -> float:
        """``V`` at a point of positive norm."""
        if self.kind == "inverse_power":
            return self.b * float(norm) ** (-self.alpha)
        if self.kind == "offset_power":
            return self.c * (float(norm) + 1.0) ** (-self.beta_off)
        for k, v in self.table:
            if math.isclose(k, norm, rel_tol=1e-12):
                return v
        raise KeyError(f"norm {norm} missing from radial table")

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "inverse_power":
            out.update(b=self.b, alpha=self.alpha)
        elif self.kind == "offset_power":
            out.update(c=self.c, beta_off=self.beta_off)
        else:
            out.update(table=[list(kv) for kv in self.table], zero_value=self.zero_value)
        return out


def zero_cell_average(pot: PotentialSpec, grid: Grid) -> float:
    """Exact mean of ``V`` over the cell ``{||x|| <= p**-S}``."""
    p, S = grid.p, grid.S
    if pot.kind == "inverse_power":
        a = pot.alpha
        if a >= 1:
            raise DivergentAverage(f"||x||**-alpha is not integrable at 0 for alpha={a}")
        if pot.b == 0:
            return 0.0
        # (1-1/p) sum_{g <= -S} p**(g(1-alpha)) / m_cell
        return pot.b * (1 - 1 / p) * float(p) ** (-S * (1 - a)) / (1 - float(p) ** (-(1 - a))) * float(p) ** S
    if pot.kind == "offset_power":
        if pot.c == 0:
            return 0.0
        integral = series_sum(
            (1 - 1 / p) * float(p) ** g * (float(p) ** g + 1.0) ** (-pot.beta_off) for g in range(-S, -S - 100_000, -1)
        )
        return pot.c * integral * float(p) ** S
    return pot.zero_value


def cell_average_potential(pot: PotentialSpec, cell: Cell, grid: Grid) -> float:
    """Galerkin diagonal entry: the average of ``V`` over one cell."""
    norm = cell_norm(cell, grid)
    if norm is ZERO_CELL:
        return zero_cell_average(pot, grid)
    return pot.value(norm)


def potential_vector(pot: PotentialSpec, grid: Grid) -> np.ndarray:
    """Cell averages of ``V`` in enumeration order."""
    norms = cell_norms(grid)
    out = np.empty(grid.size)
    out[0] = zero_cell_average(pot, grid)
    values = {g: pot.value(g) for g in np.unique(norms[1:])}
    out[1:] = [values[g] for g in norms[1:]]
    return out


def assemble_hamiltonian(grid: Grid, spec: MultiplierSpec, pot: PotentialSpec | None) -> OperatorMatrix:
    """``H_N = L_N + diag(cell averages of V)``, the exact compression of ``Q_L + Q_V``."""
    L = assemble_laplacian(grid, spec)
    if pot is None:
        return OperatorMatrix(grid=grid, entries=L.entries.copy(), tail=L.tail, spec=spec, label="H")
    entries = L.entries.copy()
    entries[np.diag_indices_from(entries)] += potential_vector(pot, grid)
    return OperatorMatrix(grid=grid, entries=entries, tail=L.tail, spec=spec, potential=pot, label="H")


# -- spectra ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def minimum(self) -> float:
        return float(self.eigenvalues[0])


def _symmetric_entries(H: OperatorMatrix) -> np.ndarray:
    """Entries in an orthonormal frame; weighted operators are conjugated by ``diag(w)**1/2``."""
    if H.weights is None:
        return H.entries
    s = np.sqrt(H.weights)
    A = s[:, None] * H.entries / s[None, :]
    return 0.5 * (A + A.T)


def eigen_spectrum(H: OperatorMatrix, want_vectors: bool = False) -> SpectralResult:
    """Dense symmetric eigensolve with ascending eigenvalues.

    For weighted operators the returned vectors are orthonormal in the
    ``w``-weighted coefficient inner product.
    """
    H.grid.check_cap()
    A = _symmetric_entries(H)
    try:
        if want_vectors:
            vals, vecs = np.linalg.eigh(A)
            if H.weights is not None:
                vecs = vecs / np.sqrt(H.weights)[:, None]
        else:
            vals, vecs = np.linalg.eigvalsh(A), None
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolve failed: {exc}") from exc
    return SpectralResult(eigenvalues=vals, eigenvectors=vecs, meta=H.meta())


def min_eigenvalue(H: OperatorMatrix) -> float:
    A = _symmetric_entries(H)
    try:
        return float(scipy.linalg.eigvalsh(A, subset_by_index=[0, 0])[0])
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolve failed: {exc}") from exc


@dataclass(frozen=True)
class FormValue:
    """A quadratic form in both conventions.

    ``matrix`` is ``u @ H @ v``; ``measure`` multiplies by ``m_cell`` and equals the
    integral form ``Q(u, v)``.  Rayleigh quotients use ``measure / (m_cell * u @ u)``,
    which coincides with ``matrix / (u @ u)``.
    """

    matrix: float
    measure: float


def quadratic_form(H: OperatorMatrix, u: np.ndarray, v: np.ndarray | None = None) -> FormValue:
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    if u.shape != (H.size,) or v.shape != (H.size,):
        raise ValueError(f"vectors must have shape ({H.size},)")
    val = float(u @ (H.entries @ v))
    return FormValue(matrix=val, measure=val * H.cell_measure)


def rayleigh_quotient(H: OperatorMatrix, u: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    return quadratic_form(H, u).matrix / float(u @ u)


def bottom_of_spectrum(grid: Grid, spec: MultiplierSpec, pot: PotentialSpec, couplings: Iterable[float]) -> np.ndarray:
    """``E_lambda = min spec(L_N + lambda * diag(V))`` for each coupling ``lambda``.

    ``E_0`` equals the truncation floor ``tail`` rather than 0.
    """
    L = assemble_laplacian(grid, spec)
    V = potential_vector(pot, grid)
    out = []
    for lam in couplings:
        A = L.entries.copy()
        A[np.diag_indices_from(A)] += lam * V
        out.append(float(scipy.linalg.eigvalsh(A, subset_by_index=[0, 0])[0]))
    return np.array(out)


def spectral_histogram(result: SpectralResult, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Qualitative eigenvalue histogram on a log-magnitude scale (signed)."""
    x = result.eigenvalues
    signed_log = np.sign(x) * np.log10(1 + np.abs(x))
    return np.histogram(signed_log, bins=bins)


# -- critical coupling -------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdMap:
    """``C_alpha(theta) = -Gamma_p((1+alpha)/2 + theta) Gamma_p((1+alpha)/2 - theta)``.

    ``theta = beta + (1 - alpha)/2`` relates it to the coupling
    ``b(beta) = -Gamma_p(beta + 1) / Gamma_p(beta + 1 - alpha)``.
    """

    p: int
    alpha: float
    extended: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def pole(self) -> float:
        return (1 + self.alpha) / 2

    def c_alpha(self, theta: float) -> float:
        h = self.pole
        if abs(theta) == h:
            raise PoleError(f"C_alpha has a pole at theta = +-{h}")
        return -gamma_p(h + theta, self.p, self.extended) * gamma_p(h - theta, self.p, self.extended)

    def b_star(self) -> float:
        return -gamma_p(self.pole, self.p, self.extended) ** 2

    def b_from_beta(self, beta: float) -> float:
        return -gamma_p(beta + 1, self.p, self.extended) / gamma_p(beta + 1 - self.alpha, self.p, self.extended)

    def theta_from_b(self, b: float) -> float:
        """Root ``theta in [0, (1+alpha)/2)`` of ``C_alpha(theta) = b``, by bisection."""
        bs = self.b_star()
        if b < bs:
            raise OutOfRange(f"b={b} lies below the critical coupling b*={bs}")
        if b == bs:
            return 0.0
        lo, hi = 0.0, self.pole
        while True:
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                return lo if abs(self.c_alpha(lo) - b) <= abs(self._c_safe(hi) - b) else hi
            if self.c_alpha(mid) < b:
                lo = mid
            else:
                hi = mid

    def _c_safe(self, theta: float) -> float:
        try:
            return self.c_alpha(theta)
        except PoleError:
            return math.inf

    def beta_from_b(self, b: float, branch: str = "upper") -> float:
        """Solve ``b_from_beta(beta) = b``.

        Upper branch: ``beta in [(alpha-1)/2, alpha)``.  Lower branch:
        ``beta in [alpha-1, (alpha-1)/2]``, the mirror ``theta -> -theta``;
        ``b = 0`` maps to its endpoint ``alpha - 1``.

        Raises:
            OutOfRange: ``b < b*``, or ``b > 0`` on the lower branch.
        """
        if branch not in ("upper", "lower"):
            raise ValueError(f"branch must be 'upper' or 'lower', got {branch!r}")
        if branch == "lower" and b > 0:
            raise OutOfRange("the lower branch covers b in [b*, 0] only")
        shift = (1 - self.alpha) / 2
        if b == 0:
            return self.alpha - 1 if branch == "lower" else 0.0
        theta = self.theta_from_b(b)
        return (theta if branch == "upper" else -theta) - shift


def c_alpha(tm: ThresholdMap, theta: float) -> float:
    return tm.c_alpha(theta)


def b_star(tm: ThresholdMap) -> float:
    return tm.b_star()


def beta_from_b(tm: ThresholdMap, b: float, branch: str = "upper") -> float:
    return tm.beta_from_b(b, branch)


def b_from_beta(tm: ThresholdMap, beta: float) -> float:
    return tm.b_from_beta(beta)


# -- power functions ---------------------------------------------------------------


def apply_D_alpha_radial(alpha: float, beta: float, gamma: int, p: int) -> float:
    """``D**alpha ||.||**beta`` at a point of norm ``p**gamma``.

    Splits the hypersingular integral over spheres ``||y|| = p**k``: the
    sphere ``k = gamma`` contributes nothing, inner spheres sit at distance
    ``p**gamma`` and outer spheres at distance ``p**k``.
    """
    if not alpha - 1 < beta < alpha:
        raise ArithmeticError(f"D**alpha ||x||**beta needs alpha-1 < beta < alpha, got beta={beta}")
    if beta == 0:
        return 0.0
    q = 1 - 1 / p
    P = float(p)
    xb = P ** (gamma * beta)
    inner = series_sum(q * P ** (-gamma * (1 + alpha)) * (xb * P**k - P ** (k * (1 + beta))) for k in range(gamma - 1, gamma - 200_000, -1))
    outer = series_sum(q * (xb * P ** (-k * alpha) - P ** (k * (beta - alpha))) for k in range(gamma + 1, gamma + 200_000))
    return jump_constant(alpha, p) * math.fsum([inner, outer])


def power_identity_ratio(alpha: float, beta: float, gamma: int, p: int) -> float:
    """``D**alpha ||x||**beta / ||x||**(beta - alpha)`` at norm ``p**gamma``."""
    return apply_D_alpha_radial(alpha, beta, gamma, p) / float(p) ** (gamma * (beta - alpha))


def power_identity_constant(alpha: float, beta: float, p: int) -> float:
    return gamma_p(beta + 1, p) / gamma_p(beta + 1 - alpha, p)


# -- negative-spectrum witnesses ------------------------------------------------------


@dataclass(frozen=True)
class RadialWitness:
    """Radial cell-constant function centred at 0.

    Takes ``ball_value`` on ``{||x|| <= p**j}`` and ``sphere_values[g]`` on
    ``{||x|| = p**g}`` for ``g = j+1 .. K+1``; zero beyond.
    """

    p: int
    alpha: float
    j: int
    K: int
    ball_value: float
    sphere_values: dict

    def norm_squared(self) -> float:
        P = float(self.p)
        q = 1 - 1 / self.p
        terms = [self.ball_value**2 * P**self.j]
        terms += [v * v * q * P**g for g, v in sorted(self.sphere_values.items())]
        return math.fsum(terms)


def witness_function(p: int, alpha: float, j: int, K: int) -> RadialWitness:
    """Truncated ``D**-alpha 1_B`` for ``B = {||x|| <= p**j}``.

    ``f_K = m(B) * sum_{k=j}^{K} m(T_k)**alpha * f_{T_k}`` with ``T_k`` the ball of
    measure ``p**k`` around 0 and ``f_T = 1_T/m(T) - 1_{T'}/m(T')``.
    """
    if K < j:
        raise ValueError("K must be at least j")
    P = float(p)
    q = 1 - 1 / p
    ball = P**j * q * math.fsum(P ** (k * (alpha - 1)) for k in range(j, K + 1))
    spheres = {}
    for g in range(j + 1, K + 2):
        # on ||x|| = p**g the terms k >= g contribute fully, k = g-1 only through -1_{T'}
        inner = math.fsum(P ** (k * alpha) * (P ** (-k) - P ** (-k - 1)) for k in range(g, K + 1))
        spheres[g] = P**j * (inner - P ** ((g - 1) * alpha) * P ** (-g))
    return RadialWitness(p=p, alpha=alpha, j=j, K=K, ball_value=ball, sphere_values=spheres)


def witness_energy(p: int, alpha: float, j: int, K: int) -> float:
    """``Q_{D**alpha}(f_K, f_K)`` from the eigen-expansion: ``p**2j (1-1/p) sum p**(k(alpha-1))``."""
    P = float(p)
    return P ** (2 * j) * (1 - 1 / p) * math.fsum(P ** (k * (alpha - 1)) for k in range(j, K + 1))


def radial_jump_energy(f: RadialWitness) -> float:
    """``1/2 iint (f(x) - f(y))**2 J(x - y)`` for a radial witness, summed over sphere pairs.

    Independent of the eigen-expansion.  For points on different spheres the
    distance is the larger norm; points on one sphere share the value.  The
    inner ball is treated as the union of its spheres, all carrying ``ball_value``.
    """
    p, alpha = f.p, f.alpha
    P = float(p)
    q = 1 - 1 / p
    c = jump_constant(alpha, p)
    levels = sorted(f.sphere_values)
    top = levels[-1] if levels else f.j
    mB = P**f.j
    # the ordered double integral visits each unordered pair of regions twice, cancelling the 1/2
    terms = [(f.ball_value - f.sphere_values[g]) ** 2 * mB * q * P**g * c * P ** (-g * (1 + alpha)) for g in levels]
    for a_idx, ga in enumerate(levels):
        for gb in levels[a_idx + 1 :]:
            diff = f.sphere_values[ga] - f.sphere_values[gb]
            terms.append(diff * diff * q * P**ga * q * P**gb * c * P ** (-gb * (1 + alpha)))
    outside = c * q * P ** (-(top + 1) * alpha) / (1 - P ** (-alpha))
    terms.append(f.ball_value**2 * mB * outside)
    terms += [f.sphere_values[g] ** 2 * q * P**g * outside for g in levels]
    return math.fsum(terms)


def offset_potential_energy(f: RadialWitness, beta_off: float) -> float:
    """``int (||x|| + 1)**-beta_off f**2 dm`` by exact radial sums."""
    p = f.p
    P = float(p)
    q = 1 - 1 / p
    inside = series_sum(q * P**g * (P**g + 1) ** (-beta_off) for g in range(f.j, f.j - 200_000, -1))
    terms = [f.ball_value**2 * inside]
    terms += [v * v * q * P**g * (P**g + 1) ** (-beta_off) for g, v in sorted(f.sphere_values.items())]
    return math.fsum(terms)


def witness_ball_action(p: int, alpha: float, j: int, K: int) -> float:
    """``(D**alpha f_K)(x)`` for ``x`` in B, from the jump form.

    Inside B the integrand vanishes; every outside point sits at distance ``||y||``.
    """
    f = witness_function(p, alpha, j, K)
    P = float(p)
    q = 1 - 1 / p
    c = jump_constant(alpha, p)
    terms = [(f.ball_value - v) * q * P**g * c * P ** (-g * (1 + alpha)) for g, v in sorted(f.sphere_values.items())]
    terms.append(f.ball_value * c * q * P ** (-(K + 2) * alpha) / (1 - P ** (-alpha)))
    return math.fsum(terms)


@dataclass(frozen=True)
class WFormulaCheck:
    W_numeric: float
    W_exact: float
    relative_error: float
    ball_value: float


def w_formula_check(p: int, alpha: float, j: int, K: int) -> WFormulaCheck:
    """Compare ``(D**alpha f_K)/f_K`` on B with ``(p - p**alpha)/(p - 1) * m(B)**-alpha``."""
    f = witness_function(p, alpha, j, K)
    num = witness_ball_action(p, alpha, j, K) / f.ball_value
    exact = (p - float(p) ** alpha) / (p - 1) * float(p) ** (-j * alpha)
    return WFormulaCheck(W_numeric=num, W_exact=exact, relative_error=abs(num / exact - 1), ball_value=f.ball_value)


@dataclass(frozen=True)
class WitnessResult:
    """Outcome of :func:`negative_witness`.

    ``found`` is False when no ball in the search range gave a negative
    quotient; ``best_j`` and ``best_quotient`` then hold the smallest one seen.
    """

    found: bool
    j: int | None
    quotient: float | None
    best_j: int
    best_quotient: float
    energy: float
    potential_energy: float
    norm_squared: float
    K: int


def witness_quotient(p: int, alpha: float, beta_off: float, lam: float, j: int, K: int) -> tuple[float, float, float, float]:
    """Rayleigh quotient of ``Q_{D**alpha} - lam * Q_{(||x||+1)**-beta_off}`` on ``f_K``."""
    f = witness_function(p, alpha, j, K)
    energy = witness_energy(p, alpha, j, K)
    pot = offset_potential_energy(f, beta_off)
    n2 = f.norm_squared()
    return (energy - lam * pot) / n2, energy, pot, n2


def negative_witness(alpha: float, beta_off: float, lam: float, grid: Grid | int, K: int = 12, j_min: int | None = None) -> WitnessResult:
    """Search ball sizes ``m(B) = p**j``, ``j_min <= j <= K``, for a negative quotient.

    Any negative quotient certifies negative spectrum of
    ``D**alpha - lam * (||x|| + 1)**-beta_off`` by the variational principle.
    For ``beta_off >= alpha`` and small ``lam`` the operator is nonnegative and
    the search comes back empty.
    """
    if not (0 < alpha < 1 and 0 < beta_off < 1):
        raise ValueError("needs 0 < alpha < 1 and 0 < beta_off < 1")
    if not lam > 0:
        raise ValueError("lam must be positive")
    p = grid.p if isinstance(grid, Grid) else int(grid)
    if j_min is None:
        j_min = -K
    best = None
    for j in range(j_min, K + 1):
        qv, energy, pot, n2 = witness_quotient(p, alpha, beta_off, lam, j, K)
        if best is None or qv < best[1]:
            best = (j, qv, energy, pot, n2)
        if qv < 0:
            return WitnessResult(True, j, qv, j, qv, energy, pot, n2, K)
    j, qv, energy, pot, n2 = best
    return WitnessResult(False, None, None, j, qv, energy, pot, n2, K)
