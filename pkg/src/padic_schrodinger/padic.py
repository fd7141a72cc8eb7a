"""Truncated p-adic grids: cells, norms, distances, radial integration and Gamma_p.

A grid with parameters ``(p, R, S)`` covers the ball ``{||x||_p <= p**R}`` of the
p-adic numbers, split into ``p**(R + S)`` elementary balls (cells) of measure
``p**-S``.  A cell is identified by its digit vector: position ``j`` holds the
coefficient of ``p**(j - R)``, for ``j = 0 .. R + S - 1``.  Cells are enumerated
in lexicographic order of their digit vectors, position 0 being the most
significant, so the enumeration index is the base-p number ``d_0 d_1 ... d_{n-1}``.

Ball membership is a prefix condition: two cells lie in a common ball of
measure ``p**r`` iff their digits agree at every position ``j < R - r``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

DEFAULT_CAP = 2**14


class CapExceeded(ValueError):
    """The grid has more cells than the dense-solver cap allows."""


class PoleError(ZeroDivisionError):
    """Evaluation at a pole of the p-adic Gamma function."""


class PrecisionWarning(RuntimeWarning):
    """Gamma_p was evaluated close to its pole; few significant digits remain."""


class ZeroCell:
    """Sentinel returned as the norm of the cell containing the origin.

    Every point of that cell has norm at most ``p**-S``; there is no single norm
    value, so callers must handle it explicitly.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ZERO_CELL"

    def __reduce__(self):
        return (ZeroCell, ())


ZERO_CELL = ZeroCell()


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % k for k in range(2, math.isqrt(n) + 1))


@dataclass(frozen=True)
class Grid:
    """Truncation parameters of a p-adic grid.

    Args:
        p: prime base.
        R: outer rank; the grid ball has measure ``p**R``.
        S: inner rank; every cell has measure ``p**-S``.
        cap: largest cell count accepted by the dense routines.
    """

    p: int
    R: int
    S: int
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not isinstance(self.p, (int, np.integer)) or not is_prime(int(self.p)):
            raise ValueError(f"p must be a prime, got {self.p!r}")
        if int(self.R) < 1 or int(self.S) < 1:
            raise ValueError(f"ranks must satisfy R >= 1 and S >= 1, got R={self.R}, S={self.S}")

    @property
    def n_digits(self) -> int:
        return self.R + self.S

    @property
    def size(self) -> int:
        return self.p**self.n_digits

    @property
    def cell_measure(self) -> float:
        return float(self.p) ** (-self.S)

    @property
    def measure(self) -> float:
        return float(self.p) ** self.R

    def check_cap(self) -> None:
        if self.size > self.cap:
            raise CapExceeded(
                f"grid p={self.p}, R={self.R}, S={self.S} has {self.size} cells, cap is {self.cap}"
            )


@dataclass(frozen=True)
class Cell:
    digits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "digits", tuple(int(d) for d in self.digits))

    @property
    def is_zero(self) -> bool:
        return not any(self.digits)


def _check_cell(cell: Cell, grid: Grid) -> None:
    if len(cell.digits) != grid.n_digits or any(not 0 <= d < grid.p for d in cell.digits):
        raise ValueError(f"{cell} does not belong to {grid}")


def cell_norm(cell: Cell, grid: Grid) -> float | ZeroCell:
    """p-adic norm of the cell's points, or ``ZERO_CELL`` for the cell holding 0.

    If the lowest nonzero digit sits at position ``j0`` the norm is ``p**(R - j0)``.
    """
    _check_cell(cell, grid)
    for j, d in enumerate(cell.digits):
        if d:
            return float(grid.p) ** (grid.R - j)
    return ZERO_CELL


def cell_distance(a: Cell, b: Cell, grid: Grid) -> float:
    """Ultrametric distance ``||a - b||_p`` between two cells (0 if equal).

    Subtraction borrows only move toward higher positions, so the lowest
    position where the digits differ fixes the valuation of the difference.
    """
    _check_cell(a, grid)
    _check_cell(b, grid)
    for j, (x, y) in enumerate(zip(a.digits, b.digits)):
        if x != y:
            return float(grid.p) ** (grid.R - j)
    return 0.0


def cell_index(cell: Cell, grid: Grid) -> int:
    _check_cell(cell, grid)
    index = 0
    for d in cell.digits:
        index = index * grid.p + d
    return index


def cell_from_index(index: int, grid: Grid) -> Cell:
    if not 0 <= index < grid.size:
        raise IndexError(index)
    digits = []
    for _ in range(grid.n_digits):
        index, d = divmod(index, grid.p)
        digits.append(d)
    return Cell(tuple(reversed(digits)))


def enumerate_cells(grid: Grid) -> list[Cell]:
    """All cells in lexicographic digit order; index 0 is the zero cell."""
    grid.check_cap()
    return [cell_from_index(i, grid) for i in range(grid.size)]


# -- vectorised views ---------------------------------------------------------


def digit_array(grid: Grid) -> np.ndarray:
    """``(N, R+S)`` array of digits in enumeration order (not capped)."""
    idx = np.arange(grid.size, dtype=np.int64)
    n = grid.n_digits
    powers = grid.p ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % grid.p


def lowest_nonzero_position(grid: Grid) -> np.ndarray:
    """Position of the lowest nonzero digit per cell; ``R + S`` for the zero cell."""
    digits = digit_array(grid)
    nz = digits != 0
    return np.where(nz.any(axis=1), nz.argmax(axis=1), grid.n_digits)


def cell_norms(grid: Grid) -> np.ndarray:
    """Norm of every cell, with ``0.0`` standing in for the zero cell."""
    j0 = lowest_nonzero_position(grid)
    out = np.zeros(grid.size)
    nz = j0 < grid.n_digits
    out[nz] = float(grid.p) ** (grid.R - j0[nz])
    return out


def first_difference_to(index: int, grid: Grid, others: np.ndarray | None = None) -> np.ndarray:
    """Lowest differing digit position between cell ``index`` and every other cell.

    Equal cells get ``R + S``.  Computed from shared base-p prefixes of the
    enumeration index, so it needs no digit table.
    """
    if others is None:
        others = np.arange(grid.size, dtype=np.int64)
    n = grid.n_digits
    out = np.zeros(others.shape, dtype=np.int16)
    for k in range(1, n + 1):
        scale = grid.p ** (n - k)
        out += (others // scale) == (index // scale)
    return out


def first_difference_matrix(grid: Grid) -> np.ndarray:
    """``(N, N)`` int8 matrix of lowest differing positions (``R + S`` on the diagonal)."""
    grid.check_cap()
    idx = np.arange(grid.size, dtype=np.int64)
    n = grid.n_digits
    out = np.zeros((grid.size, grid.size), dtype=np.int8)
    for k in range(1, n + 1):
        prefix = idx // grid.p ** (n - k)
        out += prefix[:, None] == prefix[None, :]
    return out


def distance_matrix(grid: Grid) -> np.ndarray:
    jd = first_difference_matrix(grid)
    exponent = (grid.R - jd.astype(np.float64))
    dist = np.power(float(grid.p), exponent)
    dist[jd == grid.n_digits] = 0.0
    return dist


# -- Gamma_p ------------------------------------------------------------------


def gamma_p(z, p: int, extended: bool = False):
    """p-adic Gamma function ``(1 - p**(z-1)) / (1 - p**-z)``.

    Satisfies ``gamma_p(z) * gamma_p(1 - z) == 1`` and vanishes at ``z = 1``.

    Args:
        z: real argument (scalar or array); ``z = 0`` is a pole.
        p: prime.
        extended: evaluate with 50-digit mpmath arithmetic and round once.

    Raises:
        PoleError: if any ``z`` equals 0.
    """
    if np.ndim(z):
        arr = np.asarray(z, dtype=float)
        return np.array([gamma_p(float(v), p, extended) for v in arr.ravel()]).reshape(arr.shape)
    z = float(z)
    if z == 0.0:
        raise PoleError("Gamma_p has a pole at z = 0")
    if extended:
        import mpmath

        with mpmath.workdps(50):
            zz = mpmath.mpf(z)
            val = (1 - mpmath.power(p, zz - 1)) / (1 - mpmath.power(p, -zz))
            return float(val)
    # expm1 keeps relative accuracy of both factors near z = 0 and z = 1
    lp = math.log(p)
    den = -math.expm1(-z * lp)
    if abs(den) < 1e-12:
        warnings.warn(f"Gamma_p evaluated at z={z!r}, within 1e-12 of its pole", PrecisionWarning, stacklevel=2)
    return -math.expm1((z - 1) * lp) / den


# -- radial integration -------------------------------------------------------


def radial_sum(f: Callable[[float], float], gamma_min: int, gamma_max: int, grid: Grid | int) -> float:
    """Integral of a radial function over ``p**gamma_min <= ||x|| <= p**gamma_max``.

    Uses ``int f(||x||) dm = (1 - 1/p) * sum_gamma f(p**gamma) p**gamma``; terms
    are accumulated in ascending order of ``gamma``.
    """
    p = grid.p if isinstance(grid, Grid) else int(grid)
    terms = [f(float(p) ** g) * float(p) ** g for g in range(gamma_min, gamma_max + 1)]
    return (1.0 - 1.0 / p) * math.fsum(terms)


def sphere_counts(grid: Grid) -> dict[int, int]:
    """Number of cells on each sphere ``||x|| = p**gamma``, keyed by gamma."""
    j0 = lowest_nonzero_position(grid)
    out: dict[int, int] = {}
    for g, c in zip(*np.unique(grid.R - j0[j0 < grid.n_digits], return_counts=True)):
        out[int(g)] = int(c)
    return out


def geometric_tail(first: float, ratio: float) -> float:
    """Sum of ``first * ratio**k`` for ``k >= 0``; requires ``|ratio| < 1``."""
    if not abs(ratio) < 1:
        raise ValueError(f"divergent geometric series with ratio {ratio}")
    return first / (1.0 - ratio)


def series_sum(terms: Iterable[float], rel_tol: float = 1e-16, min_terms: int = 4, max_terms: int = 100_000) -> float:
    """Sum a convergent series until an increment drops below ``rel_tol`` relative."""
    acc: list[float] = []
    total = 0.0
    for k, t in enumerate(terms):
        acc.append(t)
        total += t
        if k >= min_terms and abs(t) <= rel_tol * abs(total):
            break
        if k >= max_terms:
            raise ArithmeticError("series did not converge within the term budget")
    return math.fsum(acc)
