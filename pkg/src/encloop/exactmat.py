"""Exact rational matrix arithmetic.

All plant and controller coefficients are rationals (decimal data parses
exactly), so every integrality question ("does F/a have integer entries?")
has an exact yes/no answer.  This module keeps that arithmetic exact via
`fractions.Fraction`; floating point is used only for eigenvalues, which
gate inequalities with wide margins.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

Rational = Union[int, str, Fraction]


class ExactMatError(Exception):
    pass


class ZeroMatrixError(ExactMatError):
    """Scale of an all-zero matrix is undefined."""


class NonSquareError(ExactMatError):
    pass


class DimensionMismatchError(ExactMatError):
    pass


class SingularMatrixError(ExactMatError):
    pass


def as_fraction(x) -> Fraction:
    """Exact conversion; decimal strings like "0.26" become 13/50, "p/q" works too.

    Binary floats are converted exactly (their binary expansion is a rational).
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, str)):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as a rational")


def rational_gcd(a: Fraction, b: Fraction) -> Fraction:
    """gcd over Q: largest rational dividing both (gcd(p1/q1, p2/q2) = gcd(p1 q2, p2 q1)/(q1 q2))."""
    a, b = abs(a), abs(b)
    if a == 0:
        return b
    if b == 0:
        return a
    num = math.gcd(a.numerator * b.denominator, b.numerator * a.denominator)
    return Fraction(num, a.denominator * b.denominator)


class RationalMatrix:
    """Dense matrix of Fractions, row-major.  Supports zero-sized dimensions."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, entries: Sequence[Fraction]):
        if rows < 0 or cols < 0 or len(entries) != rows * cols:
            raise DimensionMismatchError(
                f"need {rows}x{cols}={rows * cols} entries, got {len(entries)}"
            )
        self.rows = rows
        self.cols = cols
        self.data = tuple(entries)

    # -- construction -------------------------------------------------

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[Rational]]) -> "RationalMatrix":
        rows = [list(r) for r in rows]
        nr = len(rows)
        nc = len(rows[0]) if nr else 0
        if any(len(r) != nc for r in rows):
            raise DimensionMismatchError("ragged rows")
        return cls(nr, nc, [as_fraction(x) for r in rows for x in r])

    @classmethod
    def column(cls, entries: Iterable[Rational]) -> "RationalMatrix":
        vals = [as_fraction(x) for x in entries]
        return cls(len(vals), 1, vals)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "RationalMatrix":
        return cls(rows, cols, [Fraction(0)] * (rows * cols))

    @classmethod
    def identity(cls, n: int) -> "RationalMatrix":
        return cls(n, n, [Fraction(int(i == j)) for i in range(n) for j in range(n)])

    # -- access -------------------------------------------------------

    def __getitem__(self, ij) -> Fraction:
        i, j = ij
        return self.data[i * self.cols + j]

    def row(self, i: int):
        return self.data[i * self.cols : (i + 1) * self.cols]

    def to_lists(self):
        return [list(self.row(i)) for i in range(self.rows)]

    def to_floats(self) -> np.ndarray:
        return np.array(
            [[float(x) for x in self.row(i)] for i in range(self.rows)], dtype=float
        ).reshape(self.rows, self.cols)

    def column_vector(self):
        """Entries of an n x 1 matrix as a flat tuple."""
        if self.cols != 1:
            raise DimensionMismatchError("not a column vector")
        return self.data

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __eq__(self, other):
        return (
            isinstance(other, RationalMatrix)
            and self.shape == other.shape
            and self.data == other.data
        )

    def __hash__(self):
        return hash((self.rows, self.cols, self.data))

    def __repr__(self):
        return f"RationalMatrix({self.to_lists()!r})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other: "RationalMatrix") -> "RationalMatrix":
        if self.shape != other.shape:
            raise DimensionMismatchError(f"{self.shape} + {other.shape}")
        return RationalMatrix(
            self.rows, self.cols, [a + b for a, b in zip(self.data, other.data)]
        )

    def __sub__(self, other: "RationalMatrix") -> "RationalMatrix":
        if self.shape != other.shape:
            raise DimensionMismatchError(f"{self.shape} - {other.shape}")
        return RationalMatrix(
            self.rows, self.cols, [a - b for a, b in zip(self.data, other.data)]
        )

    def __neg__(self) -> "RationalMatrix":
        return RationalMatrix(self.rows, self.cols, [-a for a in self.data])

    def scale(self, c) -> "RationalMatrix":
        c = as_fraction(c)
        return RationalMatrix(self.rows, self.cols, [c * a for a in self.data])

    def __matmul__(self, other: "RationalMatrix") -> "RationalMatrix":
        if self.cols != other.rows:
            raise DimensionMismatchError(f"{self.shape} @ {other.shape}")
        n, k, m = self.rows, self.cols, other.cols
        out = []
        for i in range(n):
            ri = self.row(i)
            for j in range(m):
                out.append(sum((ri[t] * other.data[t * m + j] for t in range(k)), Fraction(0)))
        return RationalMatrix(n, m, out)

    def transpose(self) -> "RationalMatrix":
        return RationalMatrix(
            self.cols, self.rows,
            [self.data[i * self.cols + j] for j in range(self.cols) for i in range(self.rows)],
        )

    def matpow(self, k: int) -> "RationalMatrix":
        if self.rows != self.cols:
            raise NonSquareError("power of a non-square matrix")
        acc = RationalMatrix.identity(self.rows)
        for _ in range(k):
            acc = acc @ self
        return acc

    def is_zero(self) -> bool:
        return all(x == 0 for x in self.data)

    def is_integer(self) -> bool:
        return all(x.denominator == 1 for x in self.data)

    def inverse(self) -> "RationalMatrix":
        """Exact Gauss-Jordan inverse."""
        if self.rows != self.cols:
            raise NonSquareError("inverse of a non-square matrix")
        n = self.rows
        a = [list(self.row(i)) for i in range(n)]
        b = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
        for col in range(n):
            piv = next((r for r in range(col, n) if a[r][col] != 0), None)
            if piv is None:
                raise SingularMatrixError("matrix is singular")
            a[col], a[piv] = a[piv], a[col]
            b[col], b[piv] = b[piv], b[col]
            inv = 1 / a[col][col]
            a[col] = [x * inv for x in a[col]]
            b[col] = [x * inv for x in b[col]]
            for r in range(n):
                if r != col and a[r][col] != 0:
                    f = a[r][col]
                    a[r] = [x - f * y for x, y in zip(a[r], a[col])]
                    b[r] = [x - f * y for x, y in zip(b[r], b[col])]
        return RationalMatrix(n, n, [x for row in b for x in row])

    def rank(self) -> int:
        """Exact rank via fraction-free-ish elimination."""
        a = [list(self.row(i)) for i in range(self.rows)]
        rank = 0
        col = 0
        while rank < self.rows and col < self.cols:
            piv = next((r for r in range(rank, self.rows) if a[r][col] != 0), None)
            if piv is None:
                col += 1
                continue
            a[rank], a[piv] = a[piv], a[rank]
            inv = 1 / a[rank][col]
            a[rank] = [x * inv for x in a[rank]]
            for r in range(self.rows):
                if r != rank and a[r][col] != 0:
                    f = a[r][col]
                    a[r] = [x - f * y for x, y in zip(a[r], a[rank])]
            rank += 1
            col += 1
        return rank

    def denominator_lcm(self) -> int:
        out = 1
        for x in self.data:
            out = out * x.denominator // math.gcd(out, x.denominator)
        return out


# -- block assembly ----------------------------------------------------


def hstack(*mats: RationalMatrix) -> RationalMatrix:
    rows = mats[0].rows
    if any(m.rows != rows for m in mats):
        raise DimensionMismatchError("hstack row mismatch")
    data = []
    for i in range(rows):
        for m in mats:
            data.extend(m.row(i))
    return RationalMatrix(rows, sum(m.cols for m in mats), data)


def vstack(*mats: RationalMatrix) -> RationalMatrix:
    cols = mats[0].cols
    if any(m.cols != cols for m in mats):
        raise DimensionMismatchError("vstack column mismatch")
    data = []
    for m in mats:
        data.extend(m.data)
    return RationalMatrix(sum(m.rows for m in mats), cols, data)


def block(rows_of_blocks) -> RationalMatrix:
    return vstack(*[hstack(*row) for row in rows_of_blocks])


# -- norms and spectra -------------------------------------------------


def inf_norm(m: RationalMatrix) -> Fraction:
    """Induced infinity norm: max absolute row sum.  Exact."""
    if m.rows == 0 or m.cols == 0:
        return Fraction(0)
    return max(sum((abs(x) for x in m.row(i)), Fraction(0)) for i in range(m.rows))


def spectral_radius(m: RationalMatrix) -> float:
    """max |eigenvalue| in double precision (abs tol ~1e-9 on balanced matrices)."""
    if m.rows != m.cols:
        raise NonSquareError("spectral radius of a non-square matrix")
    if m.rows == 0:
        return 0.0
    ev = np.linalg.eigvals(m.to_floats())
    return float(np.max(np.abs(ev)))


# -- integer scaling ---------------------------------------------------


@dataclass(frozen=True)
class IntegralityCertificate:
    """Evidence that source = scale * scaled_entries with integer scaled_entries."""

    scale: Fraction
    scaled_entries: tuple  # row-major ints
    rows: int
    cols: int
    source: str

    def verify(self, m: RationalMatrix) -> bool:
        if (self.rows, self.cols) != m.shape:
            return False
        return all(
            self.scale * s == x for s, x in zip(self.scaled_entries, m.data)
        )

    def as_matrix(self) -> RationalMatrix:
        return RationalMatrix(self.rows, self.cols, [Fraction(v) for v in self.scaled_entries])


def max_integer_scale(m: RationalMatrix) -> Fraction:
    """Largest a in (0, 1] such that m/a is an integer matrix.

    The rational gcd g of the nonzero entries is the largest unrestricted
    scale; when g > 1 the answer is its largest divisor not exceeding 1,
    g/ceil(g).  Raises ZeroMatrixError for an all-zero matrix.
    """
    g = Fraction(0)
    for x in m.data:
        if x != 0:
            g = rational_gcd(g, x)
    if g == 0:
        raise ZeroMatrixError("all-zero matrix has no integer scale")
    if g > 1:
        g = g / math.ceil(g)
    return g


def is_integer_after_scale(m: RationalMatrix, a, source: str = ""):
    """Check every entry of m/a is an integer; return (bool, certificate or None)."""
    a = as_fraction(a)
    if a <= 0:
        raise ValueError("scale must be positive")
    scaled = []
    for x in m.data:
        y = x / a
        if y.denominator != 1:
            return False, None
        scaled.append(y.numerator)
    cert = IntegralityCertificate(a, tuple(scaled), m.rows, m.cols, source)
    return True, cert


# -- closed-loop block -------------------------------------------------


def block_closed_loop(plant, ctrl) -> RationalMatrix:
    """[[A + B J C, B H], [G C, F]] of the interconnected plant/controller pair."""
    A, B, C = plant.A, plant.B, plant.C
    F, G, H, J = ctrl.F, ctrl.G, ctrl.H, ctrl.J
    return block([[A + B @ J @ C, B @ H], [G @ C, F]])


# -- JSON ---------------------------------------------------------------


def matrix_from_json(obj, name: str = "matrix") -> RationalMatrix:
    """Parse a matrix from JSON rows of decimal or "p/q" strings (exact).

    Bare JSON numbers are accepted only when integral; binary floats are
    rejected so configs cannot smuggle inexact coefficients.
    """
    if not isinstance(obj, list) or (obj and not isinstance(obj[0], list)):
        raise ValueError(f"{name}: expected a list of rows")
    rows = []
    for r in obj:
        row = []
        for x in r:
            if isinstance(x, bool):
                raise ValueError(f"{name}: booleans are not matrix entries")
            if isinstance(x, float):
                raise ValueError(
                    f"{name}: float {x!r} rejected; use a decimal string like \"{x}\""
                )
            row.append(as_fraction(x))
        rows.append(row)
    return RationalMatrix.from_rows(rows)


def fraction_to_str(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def matrix_to_json(m: RationalMatrix):
    return [[fraction_to_str(x) for x in m.row(i)] for i in range(m.rows)]


def load_matrix(path_or_obj, name="matrix") -> RationalMatrix:
    if isinstance(path_or_obj, str):
        with open(path_or_obj) as f:
            return matrix_from_json(json.load(f), name)
    return matrix_from_json(path_or_obj, name)
