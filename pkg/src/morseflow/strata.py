"""Combinatorial model of compactified trajectory spaces.

Broken-trajectory strata of B(v, w) are chains v > v_1 > ... > v_k > w with
every consecutive trajectory space nonempty; a chain with k intermediate
points is the codimension-k stratum, of dimension i(v) - i(w) - 1 - k.
Products of face lattices have additive codimension.  Everything here is
discrete: dimensions, boundary lists, and incidence order, never numerical
continuation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iter_product
from typing import Dict, List, Sequence, Tuple

from .morse import CriticalPoint


@dataclass(frozen=True)
class Stratum:
    codim: int
    label: str
    dim: int


@dataclass
class FaceLattice:
    """Strata with a closure partial order (coarser stratum, finer stratum)."""

    strata: List[Stratum]
    incidence: List[Tuple[int, int]] = field(default_factory=list)

    def by_codim(self, k: int) -> List[Stratum]:
        return [s for s in self.strata if s.codim == k]

    def codim_histogram(self) -> Dict[int, int]:
        out: Dict[int, int] = {}
        for s in self.strata:
            out[s.codim] = out.get(s.codim, 0) + 1
        return out

    @property
    def top_dim(self) -> int:
        return max((s.dim for s in self.strata if s.codim == 0), default=-1)


def _chains(points_by_id: Dict[str, CriticalPoint],
            nonempty: Dict[Tuple[str, str], int],
            vid: str, wid: str) -> List[Tuple[str, ...]]:
    """All descending chains v > v_1 > ... > w through nonempty adjacent steps."""
    out: List[Tuple[str, ...]] = []

    def extend(chain):
        last = chain[-1]
        if last == wid:
            out.append(tuple(chain))
            return
        for (a, b), count in nonempty.items():
            if a == last and count > 0:
                if b == wid or points_by_id[b].index > points_by_id[wid].index:
                    extend(chain + [b])

    extend([vid])
    return out


def enumerate_broken(points: Sequence[CriticalPoint],
                     connections: Dict[Tuple[str, str], list],
                     vid: str, wid: str) -> FaceLattice:
    """Face lattice of B(v, w) from the adjacent-pair connection database.

    The codimension-0 stratum (the unbroken space T(v, w)) is always listed;
    broken strata require every consecutive step to carry at least one
    trajectory.
    """
    by_id = {p.id: p for p in points}
    v, w = by_id[vid], by_id[wid]
    top_dim = v.index - w.index - 1
    counts = {k: len(trajs) for k, trajs in connections.items()}

    strata = [Stratum(codim=0, label=f"T({vid},{wid})", dim=top_dim)]
    chain_ix: Dict[Tuple[str, ...], int] = {(vid, wid): 0}
    for chain in _chains(by_id, counts, vid, wid):
        k = len(chain) - 2
        if k == 0:
            continue
        label = "x".join(f"T({a},{b})" for a, b in zip(chain, chain[1:]))
        chain_ix[chain] = len(strata)
        strata.append(Stratum(codim=k, label=label, dim=top_dim - k))

    incidence = []
    for chain, idx in chain_ix.items():
        if len(chain) == 2:
            continue
        # removing one intermediate point yields a coarser chain
        for drop in range(1, len(chain) - 1):
            coarser = chain[:drop] + chain[drop + 1:]
            if coarser in chain_ix:
                incidence.append((chain_ix[coarser], idx))
    return FaceLattice(strata=strata, incidence=sorted(set(incidence)))


def product_faces(A: FaceLattice, B: FaceLattice) -> FaceLattice:
    """Cartesian product lattice: codimensions and dimensions add."""
    strata = []
    index: Dict[Tuple[int, int], int] = {}
    for (i, a), (j, b) in iter_product(enumerate(A.strata), enumerate(B.strata)):
        index[(i, j)] = len(strata)
        strata.append(Stratum(codim=a.codim + b.codim,
                              label=f"({a.label})x({b.label})",
                              dim=a.dim + b.dim))
    incidence = []
    for (i, j), idx in index.items():
        for (ci, fi) in A.incidence:
            if ci == i:
                incidence.append((idx, index[(fi, j)]))
        for (cj, fj) in B.incidence:
            if cj == j:
                incidence.append((idx, index[(i, fj)]))
    return FaceLattice(strata=strata, incidence=sorted(set(incidence)))


def interval_lattice(label: str = "I") -> FaceLattice:
    """[0, 1] as a manifold with boundary: one 1-cell, two 0-cells."""
    return FaceLattice(
        strata=[Stratum(0, f"{label}.int", 1), Stratum(1, f"{label}.lo", 0),
                Stratum(1, f"{label}.hi", 0)],
        incidence=[(0, 1), (0, 2)])


def point_lattice(label: str = "pt") -> FaceLattice:
    return FaceLattice(strata=[Stratum(0, label, 0)], incidence=[])


def boundary_pairing_check(points: Sequence[CriticalPoint],
                           incidence_entry, uid: str, wid: str) -> int:
    """sum_v I(u, v) I(v, w) over intermediate generators; 0 when coherent."""
    by_id = {p.id: p for p in points}
    u, w = by_id[uid], by_id[wid]
    if u.index - w.index != 2:
        raise ValueError("boundary pairing needs an index gap of exactly 2")
    total = 0
    for p in points:
        if p.index == u.index - 1:
            total += incidence_entry(uid, p.id) * incidence_entry(p.id, wid)
    return total


def incidence_entry_from_db(connections: Dict[Tuple[str, str], list]):
    def entry(a: str, b: str) -> int:
        return sum(t.sign for t in connections.get((a, b), ()))
    return entry
