"""Galerkin compression of p-adic multipliers Phi(D) and their closed forms.

The compressed matrix acts on coefficient vectors of cell-constant functions
supported in the grid ball.  With the Gram matrix ``m_cell * I`` it satisfies
``m_cell * u @ L @ u == Q_L(u, u)`` exactly; everything outside the grid
contributes a single analytic diagonal constant (the tail).

Eigenvalue convention throughout: a ball of measure ``p**r`` carries
``lambda_r = Phi(p**(1 - r))``, i.e. ``p**((1 - r) * alpha)`` for ``Phi = tau**alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .padic import Grid, first_difference_matrix, gamma_p, series_sum


@dataclass(frozen=True)
class MultiplierSpec:
    """Symbol of the multiplier ``Phi(D)`` on Q_p.

    Build with :meth:`power` for ``Phi(tau) = tau**alpha`` or :meth:`custom`
    for an arbitrary increasing homeomorphism of ``(0, inf)``.
    """

    p: int
    alpha: float | None = None
    phi: Callable[[float], float] | None = field(default=None, compare=False)
    phi_inv: Callable[[float], float] | None = field(default=None, compare=False)

    @classmethod
    def power(cls, p: int, alpha: float) -> "MultiplierSpec":
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        return cls(p=p, alpha=float(alpha))

    @classmethod
    def custom(cls, p: int, phi: Callable[[float], float], phi_inv: Callable[[float], float]) -> "MultiplierSpec":
        spec = cls(p=p, phi=phi, phi_inv=phi_inv)
        spec.validate()
        return spec

    @property
    def kind(self) -> str:
        return "power" if self.phi is None else "custom"

    @property
    def kappa(self) -> float:
        return float(self.p) ** (-self.alpha)

    def __call__(self, tau: float) -> float:
        if self.phi is None:
            return float(tau) ** self.alpha
        return float(self.phi(tau))

    def inverse(self, value: float) -> float:
        if self.phi is None:
            return float(value) ** (1.0 / self.alpha)
        return float(self.phi_inv(value))

    def validate(self) -> None:
        taus = np.logspace(-12, 12, 97)
        vals = np.array([self(t) for t in taus])
        if np.any(np.diff(vals) <= 0):
            raise ValueError("Phi must be strictly increasing")
        if not vals[0] < 1e-3 or not vals[-1] > 1e3:
            raise ValueError("Phi must satisfy Phi(0+) = 0 and Phi(inf) = inf")
        if self.phi_inv is not None:
            back = np.array([self.inverse(v) for v in vals])
            if not np.allclose(back, taus, rtol=1e-6):
                raise ValueError("phi_inv is not the inverse of phi")

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "p": self.p, "alpha": self.alpha}


def _require_power(spec: MultiplierSpec) -> float:
    if spec.kind != "power":
        raise ValueError("this operation needs a power multiplier Phi(tau) = tau**alpha")
    return spec.alpha


def lambda_of_rank(spec: MultiplierSpec, r: int) -> float:
    """Eigenvalue attached to a ball of measure ``p**r``: ``Phi(p**(1 - r))``."""
    if spec.kind == "power":
        return float(spec.p) ** ((1 - r) * spec.alpha)
    return spec(float(spec.p) ** (1 - r))


def coupling_constant(spec: MultiplierSpec, r: int) -> float:
    """Rank weight ``C(r) = lambda_r - lambda_{r+1}`` of the hierarchical form."""
    return lambda_of_rank(spec, r) - lambda_of_rank(spec, r + 1)


def jump_constant(alpha: float, p: int) -> float:
    """``-1 / Gamma_p(-alpha)``, the prefactor of the jump kernel of ``D**alpha``."""
    if alpha == 1:
        raise ValueError("jump kernel constant is not provided at alpha = 1")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return -1.0 / gamma_p(-alpha, p)


def dyson_kernel_constant(alpha: float, p: int) -> float:
    """Jump constant ``(1/kappa - 1) / (1 - kappa/p)`` of Dyson's model, ``kappa = p**-alpha``."""
    kappa = float(p) ** (-alpha)
    return (1.0 / kappa - 1.0) / (1.0 - kappa / p)


def jump_kernel_value(alpha: float, dist: float, p: int) -> float:
    """Jump kernel ``J(dist) = -dist**-(1+alpha) / Gamma_p(-alpha)`` of ``D**alpha``."""
    if not dist > 0:
        raise ValueError("jump kernel needs a positive distance")
    return jump_constant(alpha, p) * float(dist) ** (-(1.0 + alpha))


def tail_constant(alpha: float, grid: Grid) -> float:
    """``int_{||z|| > p**R} J(z) dm(z)``, the exterior contribution to each diagonal entry."""
    p = grid.p
    return jump_constant(alpha, p) * (1 - 1 / p) * float(p) ** (-(grid.R + 1) * alpha) / (1 - float(p) ** (-alpha))


def ranksum_tail(spec: MultiplierSpec, grid: Grid) -> float:
    """Eigenvalue of the constant vector for the rank-sum assembly.

    Equals ``sum_{k >= 1} C(R + k) * (1 - p**-k)``; coincides with
    :func:`tail_constant` for power symbols.
    """
    p = grid.p
    return series_sum(coupling_constant(spec, grid.R + k) * (1 - float(p) ** (-k)) for k in range(1, 100_000))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense symmetric (or weight-symmetric) compression of an operator on a grid.

    Attributes:
        grid: the grid the matrix lives on.
        entries: ``(N, N)`` read-only matrix in the coefficient basis.
        tail: exterior constant on the diagonal (``kappa_tail`` for ``L``).
        spec: multiplier the operator is built from.
        potential: potential descriptor for Hamiltonians, ``None`` otherwise.
        weights: per-cell averages of ``h`` for weighted operators, ``None`` otherwise.
        label: ``"L"``, ``"H"`` or ``"Lcal"``.
    """

    grid: Grid
    entries: np.ndarray
    tail: float
    spec: MultiplierSpec
    potential: Any = None
    weights: np.ndarray | None = None
    label: str = "L"

    def __post_init__(self):
        self.entries.flags.writeable = False

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def cell_measure(self) -> float:
        return self.grid.cell_measure

    def __matmul__(self, other):
        return self.entries @ other

    def meta(self) -> dict[str, Any]:
        out = {
            "label": self.label,
            "p": self.grid.p,
            "R": self.grid.R,
            "S": self.grid.S,
            "N": self.size,
            "tail": self.tail,
            "multiplier": self.spec.describe(),
        }
        if self.potential is not None:
            out["potential"] = self.potential.describe()
        return out


LaplacianMatrix = OperatorMatrix


def _jump_table(alpha: float, grid: Grid) -> np.ndarray:
    """``J`` indexed by first-difference position ``j``; distance is ``p**(R - j)``."""
    p = grid.p
    c = jump_constant(alpha, p)
    return np.array([c * float(p) ** (-(grid.R - j) * (1 + alpha)) for j in range(grid.n_digits)])


def _jump_row_sum(alpha: float, grid: Grid) -> float:
    """``sum_{j != i} J(d_ij) * m_cell``, the same for every cell."""
    p = grid.p
    table = _jump_table(alpha, grid)
    # cells at first-difference position j: (p - 1) * p**(R + S - 1 - j)
    counts = [(p - 1) * p ** (grid.n_digits - 1 - j) for j in range(grid.n_digits)]
    return math.fsum(t * c for t, c in zip(table, counts)) * grid.cell_measure


def assemble_laplacian(grid: Grid, spec: MultiplierSpec, form: str = "auto") -> OperatorMatrix:
    """Exact compression of ``Phi(D)`` onto cell-constant functions in the grid ball.

    Args:
        grid: truncation; ``grid.p`` must equal ``spec.p``.
        spec: multiplier symbol.
        form: ``"jump"`` (power symbols only), ``"ranksum"``, or ``"auto"``
            (jump form for power symbols, rank-sum otherwise).

    Raises:
        CapExceeded: if the grid exceeds its cell cap.
    """
    if grid.p != spec.p:
        raise ValueError(f"grid prime {grid.p} does not match multiplier prime {spec.p}")
    grid.check_cap()
    if form == "auto":
        form = "jump" if spec.kind == "power" else "ranksum"
    jd = first_difference_matrix(grid)
    n = grid.n_digits
    if form == "jump":
        alpha = _require_power(spec)
        tail = tail_constant(alpha, grid)
        table = np.append(-_jump_table(alpha, grid) * grid.cell_measure, _jump_row_sum(alpha, grid) + tail)
    elif form == "ranksum":
        table, tail = _ranksum_table(grid, spec)
    else:
        raise ValueError(f"unknown assembly form {form!r}")
    entries = table[jd]
    del jd
    return OperatorMatrix(grid=grid, entries=entries, tail=tail, spec=spec, label="L")


def _ranksum_table(grid: Grid, spec: MultiplierSpec) -> tuple[np.ndarray, float]:
    """Entries of ``sum_B C(B) (I - P_B)`` by first-difference position.

    Balls of rank ``r`` in the grid average over cells agreeing below position
    ``R - r``; balls above the grid ball average the grid mass over ``p**r``.
    """
    p, R, S, n = grid.p, grid.R, grid.S, grid.n_digits
    ranks = range(-S + 1, R + 1)
    C = {r: coupling_constant(spec, r) for r in ranks}
    above = lambda_of_rank(spec, R + 1)
    T = series_sum(coupling_constant(spec, R + k) * float(p) ** (-k) for k in range(1, 100_000))
    avg_R = float(p) ** (-R - S)
    table = np.empty(n + 1)
    for j in range(n):
        # cells differing first at position j share the balls of rank r >= R - j
        table[j] = -math.fsum(C[r] * float(p) ** (-r - S) for r in ranks if r >= R - j) - T * avg_R
    table[n] = math.fsum(C[r] * (1 - float(p) ** (-r - S)) for r in ranks) + above - T * avg_R
    return table, above - T


def closed_form_spectrum(grid: Grid, spec: MultiplierSpec, tail: float | None = None) -> np.ndarray:
    """Sorted eigenvalue multiset of the compressed Laplacian.

    ``{tail}`` together with ``lambda_r`` of multiplicity ``(p-1) p**(R-r)``
    for ``r = -S+1 .. R``.
    """
    if tail is None:
        tail = tail_constant(spec.alpha, grid) if spec.kind == "power" else ranksum_tail(spec, grid)
    p = grid.p
    parts = [np.array([tail])]
    for r in range(-grid.S + 1, grid.R + 1):
        parts.append(np.full((p - 1) * p ** (grid.R - r), lambda_of_rank(spec, r)))
    return np.sort(np.concatenate(parts))


def ball_difference_vector(grid: Grid, cell_index: int, r: int) -> np.ndarray:
    """Coefficients of ``f_B = 1_B/m(B) - 1_B'/m(B')`` for the rank-``r`` ball B around a cell.

    ``B'`` is the parent ball of rank ``r + 1``; needs ``-S <= r < R``.
    """
    if not -grid.S <= r < grid.R:
        raise ValueError(f"rank {r} outside [-S, R) for {grid}")
    from .padic import first_difference_to

    jd = first_difference_to(cell_index, grid)
    p = float(grid.p)
    in_B = jd >= grid.R - r
    in_parent = jd >= grid.R - r - 1
    return in_B / p**r - in_parent / p ** (r + 1)


def ball_indicator(grid: Grid, cell_index: int, r: int) -> np.ndarray:
    from .padic import first_difference_to

    return (first_difference_to(cell_index, grid) >= grid.R - r).astype(float)


# -- heat kernel and Green function -------------------------------------------


def _power_of_p(value: float, p: int) -> int:
    k = round(math.log(value) / math.log(p))
    if not math.isclose(float(p) ** k, value, rel_tol=1e-9):
        raise ValueError(f"{value} is not an integer power of {p}")
    return k


def heat_kernel(spec: MultiplierSpec, t: float, dist: float) -> float:
    """Transition density ``p(t, x, y)`` of ``exp(-t D**alpha)`` at ``||x - y|| = dist``.

    Closed form of ``t * int_0^{1/d*} N(tau) exp(-t tau) dtau`` for the step
    spectral function ``N``::

        sum_{r >= r0} p**-r * (exp(-t lambda_{r+1}) - exp(-t lambda_r))

    with ``r0 = log_p(dist)``, or the two-sided sum for ``dist = 0``.  Both ends
    are cut once increments drop below 1e-16 relative to the partial sum.
    """
    alpha = _require_power(spec)
    if not t > 0:
        raise ValueError("t must be positive")
    p = spec.p
    lp = math.log(p)

    def term(r: int) -> float:
        lo = t * math.exp(-r * alpha * lp)
        hi = t * math.exp((1 - r) * alpha * lp)
        return math.exp(-r * lp - lo) * -math.expm1(-(hi - lo))

    r_peak = math.floor(1 + math.log(t) / (alpha * lp))
    if dist == 0:
        start = r_peak
        ref = max(term(r_peak), term(r_peak + 1))
        while start > r_peak - 5 or term(start) > 1e-18 * ref:
            start -= 1
    else:
        r0 = _power_of_p(dist, p)
        start = r0
    terms = []
    r = start
    total = 0.0
    while True:
        tr = term(r)
        terms.append(tr)
        total += tr
        if r > r_peak + 2 and r > start + 2 and tr <= 1e-16 * total:
            break
        r += 1
    return math.fsum(terms)


def heat_kernel_mass(spec: MultiplierSpec, t: float, gamma_lo: int | None = None, gamma_hi: int | None = None) -> float:
    """Total mass ``int p(t, x) dm(x)``: spheres ``p**gamma_lo .. p**gamma_hi`` plus the inner ball.

    The inner ball ``||x|| < p**gamma_lo`` is credited with ``p**(gamma_lo - 1) * p(t, 0)``,
    an overestimate by less than its own size.  Default limits widen ``[-60, 60]`` until
    both neglected pieces fall below 1e-17.
    """
    alpha = _require_power(spec)
    p = spec.p
    lp = math.log(p)
    on_diag = heat_kernel(spec, t, 0.0)
    if gamma_hi is None:
        # outer tail ~ t * p**(-gamma alpha)
        gamma_hi = max(60, math.ceil(1 + (math.log(t) + 40 * math.log(10)) / (alpha * lp)))
    if gamma_lo is None:
        gamma_lo = min(-60, math.floor((-40 * math.log(10) - math.log(on_diag)) / lp))
    from .padic import radial_sum

    shell = radial_sum(lambda d: heat_kernel(spec, t, d), gamma_lo, gamma_hi, p)
    return math.fsum([float(p) ** (gamma_lo - 1) * on_diag, shell])


def green_L(alpha: float, dist: float, p: int) -> float:
    """Green function ``dist**(alpha - 1) / Gamma_p(alpha)`` of ``D**alpha`` (transient case)."""
    if not 0 < alpha < 1:
        raise ValueError("green function of D**alpha exists only for 0 < alpha < 1")
    if not dist > 0:
        raise ValueError("green function needs a positive distance")
    return float(dist) ** (alpha - 1) / gamma_p(alpha, p)


def green_time_integral(spec: MultiplierSpec, dist: float) -> float:
    """``int_0^inf p(t, dist) dt`` summed term by term: ``sum_{r>=r0} p**-r (1/lambda_{r+1} - 1/lambda_r)``."""
    _require_power(spec)
    p = spec.p
    r0 = _power_of_p(dist, p)
    return series_sum(
        float(p) ** (-r) * (1 / lambda_of_rank(spec, r + 1) - 1 / lambda_of_rank(spec, r)) for r in range(r0, r0 + 100_000)
    )


def spectral_function(spec: MultiplierSpec, tau: float) -> float:
    """Left-continuous step function with ``N(lambda_r) = p**-r``."""
    if not tau > 0:
        return 0.0
    p = spec.p
    # smallest r with lambda_r >= tau, i.e. tau in (lambda_{r+1}, lambda_r]
    if spec.kind == "power":
        r = math.floor(1 - math.log(tau) / (spec.alpha * math.log(p)) + 1e-12)
        while lambda_of_rank(spec, r) < tau:
            r -= 1
        while lambda_of_rank(spec, r + 1) >= tau:
            r += 1
    else:
        r = 0
        while lambda_of_rank(spec, r) < tau:
            r -= 1
        while lambda_of_rank(spec, r + 1) >= tau:
            r += 1
    return float(p) ** (-r)


def volume_function(spec: MultiplierSpec, radius: float) -> float:
    """Measure of a ball of intrinsic radius ``radius``: ``V(r) = 1 / N(1 / r)``."""
    return 1.0 / spectral_function(spec, 1.0 / radius)


def symbol_value(spec: MultiplierSpec, theta_norm: float) -> float:
    """Radial symbol ``Phi(||theta||)``, zero at the origin."""
    if theta_norm == 0:
        return 0.0
    return spec(theta_norm)


# -- carre du champ -------------------------------------------------------------


def square_gradient(L: OperatorMatrix, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cellwise ``Gamma(u, v) = (u Lv + v Lu - L(uv)) / 2`` on the grid cells.

    On grid cells this equals the full-space value
    ``1/2 int (u(x) - u(y))(v(x) - v(y)) J(x - y) dm(y)``.  The exterior of the grid
    carries the remaining mass, see :func:`exterior_gradient_mass`.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (L.size,) or v.shape != (L.size,):
        raise ValueError(f"vectors must have shape ({L.size},)")
    A = L.entries
    return 0.5 * (u * (A @ v) + v * (A @ u) - A @ (u * v))


def exterior_gradient_mass(L: OperatorMatrix, u: np.ndarray, v: np.ndarray) -> float:
    """``int_{outside grid} Gamma(u, v) dm`` for grid-supported ``u, v``: ``tail/2 * <u, v>``."""
    return 0.5 * L.tail * L.cell_measure * float(np.dot(u, v))
