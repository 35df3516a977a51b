"""Geometric cochain complexes from signed trajectory counts.

Incidence entries I_q(v, w) = sum of epsilon(gamma) over unbroken
trajectories; the differential delta^q f(v) = sum_w I_{q+1}(v, w) f(w) on
index-graded generator spaces.  Twisting over an m-fold cyclic covering of
one periodic coordinate multiplies each trajectory's contribution by the
character value at its deck winding; all arithmetic stays exact (integers
untwisted, cyclotomic field elements twisted).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cyclotomic import CycElem, exact_rank
from .errors import MissingDeck, MissingPair, PreconditionViolation
from .morse import CriticalPoint


@dataclass(frozen=True)
class CoverSpec:
    coordinate: int
    m: int
    kappa: int


@dataclass
class GeometricComplex:
    """Index-graded generators with integer (or cyclotomic) incidence data.

    generators[q] lists critical point ids of index q in deterministic
    order; incidence[q] is the matrix I_q over X_q x X_{q-1}; differentials
    are the transposes reindexed as delta^q : C^q -> C^{q+1}.
    """

    dim: int
    generators: Dict[int, List[str]]
    incidence: Dict[int, np.ndarray]
    cover: Optional[CoverSpec] = None
    twisted_incidence: Optional[Dict[int, list]] = None  # CycElem matrices

    @property
    def twisted(self) -> bool:
        return self.twisted_incidence is not None

    def differential(self, q: int):
        """delta^q as a matrix with rows X_{q+1}, columns X_q."""
        if self.twisted:
            return self.twisted_incidence.get(q + 1)
        return self.incidence.get(q + 1)

    def euler_characteristic(self) -> int:
        return sum((-1) ** q * len(g) for q, g in self.generators.items())


def build_complex(points: Sequence[CriticalPoint],
                  connections: Dict[Tuple[str, str], list],
                  dim: Optional[int] = None) -> GeometricComplex:
    """Assemble the untwisted complex; every adjacent pair must be present."""
    n = dim if dim is not None else max((p.index for p in points), default=0)
    generators: Dict[int, List[str]] = {q: [] for q in range(n + 1)}
    by_id = {}
    for p in sorted(points, key=lambda p: (-p.value, p.id)):
        generators[p.index].append(p.id)
        by_id[p.id] = p

    incidence: Dict[int, np.ndarray] = {}
    for q in range(1, n + 1):
        rows, cols = generators[q], generators[q - 1]
        I = np.zeros((len(rows), len(cols)), dtype=int)
        for i, vid in enumerate(rows):
            for j, wid in enumerate(cols):
                if by_id[vid].value <= by_id[wid].value:
                    continue  # no descending trajectory possible
                if (vid, wid) not in connections:
                    raise MissingPair(f"pair ({vid}, {wid}) was never searched")
                I[i, j] = sum(t.sign for t in connections[(vid, wid)])
        incidence[q] = I
    return GeometricComplex(dim=n, generators=generators, incidence=incidence)


def verify_d2(complex_: GeometricComplex) -> int:
    """Max absolute entry of delta^{q+1} o delta^q over all q; 0 is required."""
    worst = 0
    for q in range(complex_.dim + 1):
        D1 = complex_.differential(q)
        D2 = complex_.differential(q + 1)
        if D1 is None or D2 is None or min(np.shape(D1)) == 0 \
                or min(np.shape(D2)) == 0:
            continue
        if complex_.twisted:
            for i in range(len(D2)):
                for k in range(len(D1[0])):
                    s = CycElem.zero(complex_.cover.m)
                    for j in range(len(D1)):
                        s = s + D2[i][j] * D1[j][k]
                    if not s.is_zero():
                        worst = max(worst, 1)
        else:
            prod = np.asarray(D2) @ np.asarray(D1)
            if prod.size:
                worst = max(worst, int(np.max(np.abs(prod))))
    return worst


def _rank_exact_int(mat: np.ndarray) -> int:
    """Rank over Q by Fraction Gaussian elimination."""
    rows = [[Fraction(int(x)) for x in row] for row in np.atleast_2d(mat)]
    if not rows or not rows[0]:
        return 0
    nrows, ncols = len(rows), len(rows[0])
    rank, prow = 0, 0
    for col in range(ncols):
        piv = next((r for r in range(prow, nrows) if rows[r][col] != 0), None)
        if piv is None:
            continue
        rows[prow], rows[piv] = rows[piv], rows[prow]
        inv = 1 / rows[prow][col]
        rows[prow] = [x * inv for x in rows[prow]]
        for r in range(nrows):
            if r != prow and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [x - f * y for x, y in zip(rows[r], rows[prow])]
        prow += 1
        rank += 1
        if prow == nrows:
            break
    return rank


def betti(complex_: GeometricComplex) -> List[int]:
    """b_q = dim C^q - rank delta^q - rank delta^{q-1}, exact arithmetic."""
    n = complex_.dim
    ranks = {}
    for q in range(-1, n + 1):
        D = complex_.differential(q)
        if D is None or min(_shape(D)) == 0:
            ranks[q] = 0
        elif complex_.twisted:
            ranks[q] = exact_rank(D)
        else:
            ranks[q] = _rank_exact_int(D)
    out = []
    for q in range(n + 1):
        dim_q = len(complex_.generators.get(q, []))
        out.append(dim_q - ranks[q] - ranks[q - 1])
    return out


def _shape(mat) -> Tuple[int, int]:
    if isinstance(mat, np.ndarray):
        return mat.shape if mat.ndim == 2 else (0, 0)
    return (len(mat), len(mat[0]) if mat else 0)


def build_cover_complex(points: Sequence[CriticalPoint],
                        connections: Dict[Tuple[str, str], list],
                        m: int, kappa: int, coordinate: int,
                        dim: Optional[int] = None) -> GeometricComplex:
    """Character-twisted complex over the m-fold cyclic cover.

    The covering unrolls one periodic coordinate m times; base lifts are
    fixed in the fundamental domain [0, period/m).  The character is
    rho(g) = zeta_m^{kappa g}, and each trajectory contributes
    epsilon(gamma) * rho(deck(gamma)).  Different lift choices conjugate the
    differential and leave Betti numbers unchanged.
    """
    if m < 1:
        raise PreconditionViolation("cover multiplicity must be >= 1")
    base = build_complex(points, connections, dim=dim)
    twisted: Dict[int, list] = {}
    for q, I in base.incidence.items():
        rows = base.generators[q]
        cols = base.generators[q - 1]
        mat = [[CycElem.zero(m) for _ in cols] for _ in rows]
        for i, vid in enumerate(rows):
            for j, wid in enumerate(cols):
                for t in connections.get((vid, wid), ()):
                    if t.deck.size == 0:
                        raise MissingDeck(f"trajectory {vid}->{wid} lacks deck data")
                    g = int(t.deck[coordinate]) % m
                    mat[i][j] = mat[i][j] + t.sign * CycElem.root_power(m, kappa * g)
        twisted[q] = mat
    return GeometricComplex(dim=base.dim, generators=base.generators,
                            incidence=base.incidence,
                            cover=CoverSpec(coordinate=coordinate, m=m,
                                            kappa=kappa),
                            twisted_incidence=twisted)


# --- explicit finite covers (lift enumeration, Eqs for small m) -------------

@dataclass
class LiftedComplex:
    """Explicit m-fold cover: generators (id, sheet), integer incidences."""

    m: int
    generators: Dict[int, List[Tuple[str, int]]]
    incidence: Dict[int, np.ndarray]

    def differential(self, q: int):
        return self.incidence.get(q + 1)


def enumerate_lifts(points: Sequence[CriticalPoint],
                    connections: Dict[Tuple[str, str], list],
                    m: int, coordinate: int,
                    dim: Optional[int] = None) -> LiftedComplex:
    """All m sheets of every generator, with deck-translated trajectories.

    A base trajectory gamma from v to w with winding d lifts, from the sheet-a
    lift of v, to the trajectory ending on the sheet (a + d mod m) lift of w;
    the sign of a lift is the sign of its projection.
    """
    base = build_complex(points, connections, dim=dim)
    gens = {q: [(vid, a) for vid in base.generators[q] for a in range(m)]
            for q in base.generators}
    inc: Dict[int, np.ndarray] = {}
    for q in range(1, base.dim + 1):
        rows, cols = gens[q], gens[q - 1]
        index = {g: i for i, g in enumerate(cols)}
        I = np.zeros((len(rows), len(cols)), dtype=int)
        for i, (vid, a) in enumerate(rows):
            for wid in base.generators[q - 1]:
                for t in connections.get((vid, wid), ()):
                    b = (a + int(t.deck[coordinate])) % m
                    I[i, index[(wid, b)]] += t.sign
        inc[q] = I
    return LiftedComplex(m=m, generators=gens, incidence=inc)


def check_cover_identities(points, connections, m: int, coordinate: int,
                           dim: Optional[int] = None) -> None:
    """Assert equivariance and the deck-sum identity on explicit lifts.

    Raises AssertionError when the lifted incidences fail
    I_q(v, w) = sum_g Itilde_q(vtilde, g wtilde) or the translation
    invariance Itilde_q(g vtilde, g wtilde) = Itilde_q(vtilde, wtilde).
    """
    base = build_complex(points, connections, dim=dim)
    lifted = enumerate_lifts(points, connections, m, coordinate, dim=dim)
    for q in range(1, base.dim + 1):
        rows, cols = base.generators[q], base.generators[q - 1]
        lrows = {g: i for i, g in enumerate(lifted.generators[q])}
        lcols = {g: j for j, g in enumerate(lifted.generators[q - 1])}
        I, L = base.incidence[q], lifted.incidence[q]
        for i, vid in enumerate(rows):
            for j, wid in enumerate(cols):
                total = sum(L[lrows[(vid, 0)], lcols[(wid, g)]]
                            for g in range(m))
                assert total == I[i, j], \
                    f"deck sum of lifted incidences differs at ({vid}, {wid})"
                for g in range(1, m):
                    for b in range(m):
                        assert L[lrows[(vid, g)], lcols[(wid, (b + g) % m)]] \
                            == L[lrows[(vid, 0)], lcols[(wid, b)]], \
                            f"equivariance fails at ({vid}, {wid}, g={g})"
