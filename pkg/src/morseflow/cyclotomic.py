"""Exact arithmetic in cyclotomic fields Q(zeta_m).

Elements are polynomials in a primitive m-th root of unity with Fraction
coefficients, reduced modulo the m-th cyclotomic polynomial.  This keeps
delta^2 = 0 and twisted Betti numbers exact decisions instead of floating
rank thresholds.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from typing import List, Sequence, Tuple


@lru_cache(maxsize=None)
def cyclotomic_poly(m: int) -> Tuple[int, ...]:
    """Coefficients (ascending) of the m-th cyclotomic polynomial."""
    # divide x^m - 1 by all lower cyclotomic polynomials of divisors of m
    poly = [Fraction(-1)] + [Fraction(0)] * (m - 1) + [Fraction(1)]
    for d in range(1, m):
        if m % d == 0:
            poly = _polydiv_exact(poly, [Fraction(c) for c in cyclotomic_poly(d)])
    return tuple(int(c) for c in poly)


def _polydiv_exact(num: List[Fraction], den: List[Fraction]) -> List[Fraction]:
    num = list(num)
    q = [Fraction(0)] * (len(num) - len(den) + 1)
    for i in range(len(q) - 1, -1, -1):
        q[i] = num[i + len(den) - 1] / den[-1]
        for j, d in enumerate(den):
            num[i + j] -= q[i] * d
    assert all(c == 0 for c in num[: len(den) - 1])
    return q


class CycElem:
    """An element of Q(zeta_m), reduced mod the cyclotomic polynomial."""

    __slots__ = ("m", "coeffs")

    def __init__(self, m: int, coeffs: Sequence[Fraction]):
        self.m = m
        deg = len(cyclotomic_poly(m)) - 1
        cs = [Fraction(c) for c in coeffs]
        if len(cs) > deg:
            cs = _reduce(cs, m)
        cs += [Fraction(0)] * (deg - len(cs))
        self.coeffs = tuple(cs)

    @classmethod
    def zero(cls, m: int) -> "CycElem":
        return cls(m, [])

    @classmethod
    def one(cls, m: int) -> "CycElem":
        return cls(m, [Fraction(1)])

    @classmethod
    def root_power(cls, m: int, j: int) -> "CycElem":
        """zeta_m^j."""
        j %= m
        return cls(m, [Fraction(0)] * j + [Fraction(1)])

    def is_zero(self) -> bool:
        return all(c == 0 for c in self.coeffs)

    def __add__(self, other: "CycElem") -> "CycElem":
        return CycElem(self.m, [a + b for a, b in zip(self.coeffs, other.coeffs)])

    def __sub__(self, other: "CycElem") -> "CycElem":
        return CycElem(self.m, [a - b for a, b in zip(self.coeffs, other.coeffs)])

    def __neg__(self) -> "CycElem":
        return CycElem(self.m, [-a for a in self.coeffs])

    def __mul__(self, other) -> "CycElem":
        if isinstance(other, (int, Fraction)):
            return CycElem(self.m, [a * other for a in self.coeffs])
        prod = [Fraction(0)] * (len(self.coeffs) + len(other.coeffs) - 1)
        for i, a in enumerate(self.coeffs):
            if a == 0:
                continue
            for j, b in enumerate(other.coeffs):
                prod[i + j] += a * b
        return CycElem(self.m, prod)

    __rmul__ = __mul__

    def inverse(self) -> "CycElem":
        if self.is_zero():
            raise ZeroDivisionError("inverse of zero cyclotomic element")
        # extended Euclid in Q[x]: the cyclotomic polynomial is irreducible,
        # so gcd(self, phi) is a nonzero constant and t1 * self = gcd mod phi
        phi = [Fraction(c) for c in cyclotomic_poly(self.m)]
        r0, r1 = phi, _trim(list(self.coeffs))
        t0, t1 = [Fraction(0)], [Fraction(1)]
        while len(r1) > 1:
            q, r = _polydivmod(r0, r1)
            r0, r1 = r1, _trim(r)
            t0, t1 = t1, [x - y for x, y in _padzip(t0, _polymul(q, t1))]
        c = r1[0]
        return CycElem(self.m, [t / c for t in t1])

    def __eq__(self, other) -> bool:
        return isinstance(other, CycElem) and self.m == other.m \
            and self.coeffs == other.coeffs

    def __repr__(self) -> str:
        return f"CycElem(m={self.m}, {[str(c) for c in self.coeffs]})"

    def complex_value(self) -> complex:
        import cmath
        z = cmath.exp(2j * cmath.pi / self.m)
        return sum(float(c) * z**j for j, c in enumerate(self.coeffs))


def _trim(p: List[Fraction]) -> List[Fraction]:
    while len(p) > 1 and p[-1] == 0:
        p = p[:-1]
    return p


def _padzip(a: List[Fraction], b: List[Fraction]):
    n = max(len(a), len(b))
    a = a + [Fraction(0)] * (n - len(a))
    b = b + [Fraction(0)] * (n - len(b))
    return zip(a, b)


def _polymul(a: List[Fraction], b: List[Fraction]) -> List[Fraction]:
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def _polydivmod(num: List[Fraction], den: List[Fraction]):
    num = list(num)
    den = _trim(list(den))
    if len(num) < len(den):
        return [Fraction(0)], num
    q = [Fraction(0)] * (len(num) - len(den) + 1)
    for i in range(len(q) - 1, -1, -1):
        q[i] = num[i + len(den) - 1] / den[-1]
        for j, d in enumerate(den):
            num[i + j] -= q[i] * d
    return q, num[: len(den) - 1]


def _reduce(cs: List[Fraction], m: int) -> List[Fraction]:
    phi = [Fraction(c) for c in cyclotomic_poly(m)]
    _q, r = _polydivmod(cs, phi)
    deg = len(phi) - 1
    r += [Fraction(0)] * (deg - len(r))
    return r[:deg]


def exact_rank(rows: List[List[CycElem]]) -> int:
    """Gaussian elimination rank over Q(zeta_m)."""
    if not rows or not rows[0]:
        return 0
    mat = [list(r) for r in rows]
    nrows, ncols = len(mat), len(mat[0])
    rank, prow = 0, 0
    for col in range(ncols):
        piv = next((r for r in range(prow, nrows)
                    if not mat[r][col].is_zero()), None)
        if piv is None:
            continue
        mat[prow], mat[piv] = mat[piv], mat[prow]
        inv = mat[prow][col].inverse()
        mat[prow] = [x * inv for x in mat[prow]]
        for r in range(nrows):
            if r != prow and not mat[r][col].is_zero():
                f = mat[r][col]
                mat[r] = [x - f * y for x, y in zip(mat[r], mat[prow])]
        prow += 1
        rank += 1
        if prow == nrows:
            break
    return rank
