"""Differential forms on the surface scenarios and integration over
unstable manifolds: the Int map and the Stokes chain-map identity.

W^-_v is parametrized in (sphere direction, level) coordinates by flowing
the rescaled field from a tiny sphere around v.  The c-direction uses
square-root-clustered panels at critical levels (the parametrization is
smooth in sqrt(c - c_crit) there); the theta-direction splits the unstable
circle at separatrix angles and clusters nodes polynomially at the arc ends,
which regularizes the half-power blowup of the angular stretch near broken
trajectories.  Caps around v are exact region integrals in chart polar
coordinates with the outer radius Newton-solved on the true level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry
from .errors import (DegenerateMetric, NonConvergent, NotTopDegree,
                     PreconditionViolation, StepUnderflow,
                     StuckOnStableManifold)
from .flow import FlowConfig, level_transfer, project_to_level
from .morse import CriticalPoint, Ladder, MorseSystem


# --- differential forms -------------------------------------------------------

class DifferentialForm:
    """Degree-q form with a pullback evaluator on coordinate tangents."""

    degree: int

    def eval(self, sys: MorseSystem, point, tangents) -> float:
        raise NotImplementedError

    def d(self) -> "DifferentialForm":
        raise NotImplementedError


@dataclass
class CoordinateForm(DifferentialForm):
    """Form given by coefficient callables in (periodic) coordinates, n = 2.

    degree 0: coeffs = f;           d_coeffs = (f_x, f_y)
    degree 1: coeffs = (P, Q);      d_coeffs = Q_x - P_y
    degree 2: coeffs = f (dx^dy);   d vanishes
    """

    degree: int
    coeffs: object
    d_coeffs: object = None
    name: str = ""

    def eval(self, sys, point, tangents):
        p = np.asarray(point, dtype=float)
        if self.degree == 0:
            return float(self.coeffs(p))
        if self.degree == 1:
            t = tangents[0]
            return float(self.coeffs[0](p) * t[0] + self.coeffs[1](p) * t[1])
        t, u = tangents
        return float(self.coeffs(p) * (t[0] * u[1] - t[1] * u[0]))

    def d(self):
        if self.d_coeffs is None:
            raise PreconditionViolation(
                f"form {self.name!r} carries no exterior derivative data")
        if self.degree == 0:
            fx, fy = self.d_coeffs
            return CoordinateForm(1, (fx, fy), name=f"d({self.name})")
        if self.degree == 1:
            return CoordinateForm(2, self.d_coeffs, name=f"d({self.name})")
        raise NotTopDegree("d of a top-degree form on a surface")


@dataclass
class AmbientForm(DifferentialForm):
    """Form pulled back from R^3 along the embedding; globally smooth.

    degree 0: coeffs = F(x),        d_coeffs = grad F
    degree 1: coeffs = (P, Q, R),   d_coeffs = curl components
    degree 2: coeffs = (A, B, C) meaning A dy^dz + B dz^dx + C dx^dy
    """

    degree: int
    coeffs: object
    d_coeffs: object = None
    name: str = ""

    def _push(self, sys, point, tangents):
        E = sys.model.embedding.d1(np.asarray(point, dtype=float))
        return [E @ np.asarray(t, dtype=float) for t in tangents]

    def eval(self, sys, point, tangents):
        x = sys.model.embedding.point(np.asarray(point, dtype=float))
        if self.degree == 0:
            return float(self.coeffs(x))
        amb = self._push(sys, point, tangents)
        if self.degree == 1:
            c = np.array([f(x) for f in self.coeffs])
            return float(c @ amb[0])
        T, U = amb
        c = np.array([f(x) for f in self.coeffs])
        wedge = np.array([T[1] * U[2] - T[2] * U[1],
                          T[2] * U[0] - T[0] * U[2],
                          T[0] * U[1] - T[1] * U[0]])
        return float(c @ wedge)

    def d(self):
        if self.d_coeffs is None:
            raise PreconditionViolation(
                f"form {self.name!r} carries no exterior derivative data")
        return AmbientForm(self.degree + 1, self.d_coeffs,
                           name=f"d({self.name})")


def fd_exterior_derivative(form: CoordinateForm, fd_step: float = 1e-5
                           ) -> CoordinateForm:
    """Central-difference d for coordinate forms (validation fallback)."""
    h = fd_step

    if form.degree == 0:
        f = form.coeffs

        def fx(p):
            return (f(p + np.array([h, 0.0])) - f(p - np.array([h, 0.0]))) / (2 * h)

        def fy(p):
            return (f(p + np.array([0.0, h])) - f(p - np.array([0.0, h]))) / (2 * h)

        return CoordinateForm(1, (fx, fy), name=f"fd_d({form.name})")
    if form.degree == 1:
        P, Q = form.coeffs

        def curl(p):
            qx = (Q(p + np.array([h, 0.0])) - Q(p - np.array([h, 0.0]))) / (2 * h)
            py = (P(p + np.array([0.0, h])) - P(p - np.array([0.0, h]))) / (2 * h)
            return qx - py

        return CoordinateForm(2, curl, name=f"fd_d({form.name})")
    raise NotTopDegree("d of a top-degree form on a surface")


# --- quadrature scaffolding ----------------------------------------------------

@dataclass(frozen=True)
class QuadConfig:
    resolution: int = 256
    eps_seed: float = 1e-7     # seeding level offset below critical values
    eta_tail: float = 1e-8     # terminal cutoff above the target minimum
    cap_nodes: int = 12
    stop_radius: float = 0.05  # sweeps avoid the chart model except very close
    rel_tol: float = 1e-9      # sweep integrations need positions, not signs
    trace_turn: float = 0.08   # max tangent turn per level-curve step
    fd_step: float = 1e-5


@dataclass
class Cell:
    point: np.ndarray
    tangents: tuple
    weight: float


@dataclass
class UnstablePatch:
    v_id: str
    degree: int
    resolution: int
    cells: List[Cell]
    dropped_nodes: int = 0

    def integrate(self, sys: MorseSystem, form: DifferentialForm) -> float:
        if form.degree != self.degree:
            raise NotTopDegree(
                f"form degree {form.degree} != dim W^-({self.v_id}) = "
                f"{self.degree}")
        return math.fsum(c.weight * form.eval(sys, c.point, c.tangents)
                         for c in self.cells)


def _half_panel_nodes(a: float, b: float, anchor: float, side: str, n: int):
    """Gauss-Legendre nodes on [a, b] in the variable u = sqrt(|c - anchor|).

    The sweep parametrization is smooth in sqrt distance to the critical
    value, so anchoring at the true critical value (not the clipped panel
    edge) removes the boundary layer between the edge and the first node;
    Gauss nodes keep the leftover logarithmic end corrections harmless.
    """
    if side == "lo":
        u0, u1 = math.sqrt(a - anchor), math.sqrt(b - anchor)
    else:
        u0, u1 = math.sqrt(anchor - b), math.sqrt(anchor - a)
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * x
    cs = anchor + u * u if side == "lo" else anchor - u * u
    ws = 2.0 * u * w * 0.5 * (u1 - u0)
    return cs.tolist(), ws.tolist()


def _c_nodes(ladder: Ladder, c_hi: float, c_lo: float, n_total: int,
             anchor_hi: Optional[float] = None,
             anchor_lo: Optional[float] = None
             ) -> Tuple[np.ndarray, np.ndarray]:
    """Midpoint nodes and weights on [c_lo, c_hi], sqrt-clustered at the
    critical values bounding and subdividing the range.

    anchor_hi / anchor_lo are the critical values just outside the range
    (the seeding level sits eps below anchor_hi, the tail cutoff eta above
    anchor_lo).
    """
    crit = sorted(c for c in ladder.values if c_lo < c < c_hi)
    cuts = [c_lo] + crit + [c_hi]
    anchors = [anchor_lo if anchor_lo is not None else c_lo] + crit \
        + [anchor_hi if anchor_hi is not None else c_hi]
    nodes: List[float] = []
    weights: List[float] = []
    total_len = sum(math.sqrt(b - a) for a, b in zip(cuts, cuts[1:]))
    for i, (a, b) in enumerate(zip(cuts, cuts[1:])):
        n = max(8, int(round(n_total * math.sqrt(b - a) / total_len)))
        mid = 0.5 * (a + b)
        nn = max(4, n // 2)
        cs, ws = _half_panel_nodes(a, mid, anchors[i], "lo", nn)
        nodes.extend(cs)
        weights.extend(ws)
        cs, ws = _half_panel_nodes(mid, b, anchors[i + 1], "hi", nn)
        nodes.extend(cs)
        weights.extend(ws)
    order = np.argsort(nodes)[::-1]  # descending in level
    return np.asarray(nodes)[order], np.asarray(weights)[order]


def _ray_radius_on_level(sys: MorseSystem, v: CriticalPoint, direction,
                         level: float, r_guess: float) -> float:
    """Newton in the ray parameter for h(phi_v(r u)) = level."""
    u = np.asarray(direction, dtype=float)
    r = r_guess
    for _ in range(40):
        p = v.from_chart(r * u)
        res = sys.h(p) - level
        if abs(res) < 1e-14:
            break
        dr = float(sys.dh(p) @ (v.chart_map @ u))
        if dr == 0.0:
            break
        r -= res / dr
    return r


# --- patch builders ------------------------------------------------------------

def _sweep_flow_cfg(cfg: FlowConfig, quad: QuadConfig) -> FlowConfig:
    return replace(cfg, stop_radius=quad.stop_radius,
                   rel_tol=max(cfg.rel_tol, quad.rel_tol))


def _terminal_of(sys, ladder, cfg, seed) -> Tuple[CriticalPoint, np.ndarray]:
    """Flow a seed to the bottom; return the absorbing minimum."""
    bottom = min(lv.value for lv in ladder.levels)
    try:
        res = level_transfer(sys, seed, bottom + 1e-9, ladder, cfg)
    except StuckOnStableManifold as exc:
        if exc.point is not None and exc.point.index == 0:
            return exc.point, exc.point.coords
        raise
    mins = [cp for lv in ladder.levels for cp in ladder.points_at_level(
        ladder.level_index(lv.value)) if cp.index == 0]
    best = min(mins, key=lambda cp: geometry.distance(sys.model, res.point,
                                                      cp.coords))
    return best, res.point


def _cap_segment_cells(sys, v: CriticalPoint, level: float, n_nodes: int
                       ) -> List[Cell]:
    """1-D cap through an index-1 point: the chart ray across v, oriented
    along O^-_v, with ray length Newton-matched to the true level."""
    u1 = np.array([1.0, 0.0])
    r_guess = math.sqrt(2.0 * max(v.value - level, 1e-300))
    r_plus = _ray_radius_on_level(sys, v, u1, level, r_guess)
    r_minus = _ray_radius_on_level(sys, v, -u1, level, r_guess)
    cells = []
    taus = np.concatenate([-r_minus * (np.arange(n_nodes) + 0.5)[::-1] / n_nodes,
                           r_plus * (np.arange(n_nodes) + 0.5) / n_nodes])
    step = np.concatenate([np.full(n_nodes, r_minus / n_nodes),
                           np.full(n_nodes, r_plus / n_nodes)])
    for tau, w in zip(taus, step):
        point = v.from_chart(tau * u1)
        cells.append(Cell(point=point, tangents=(v.chart_map @ u1,),
                          weight=float(w)))
    return cells


def _cap_disk_cells(sys, v: CriticalPoint, level: float, n_r: int, n_th: int
                    ) -> List[Cell]:
    """2-D cap around an index-2 point, polar in the chart, exact boundary."""
    cells = []
    r_guess = math.sqrt(2.0 * max(v.value - level, 1e-300))
    for j in range(n_th):
        th = 2.0 * math.pi * (j + 0.5) / n_th
        u = np.array([math.cos(th), math.sin(th)])
        du = np.array([-math.sin(th), math.cos(th)])
        r_max = _ray_radius_on_level(sys, v, u, level, r_guess)
        for i in range(n_r):
            rho = r_max * (i + 0.5) / n_r
            point = v.from_chart(rho * u)
            t_r = v.chart_map @ u
            t_th = v.chart_map @ (rho * du)
            w = (r_max / n_r) * (2.0 * math.pi / n_th)
            cells.append(Cell(point=point, tangents=(t_r, t_th), weight=w))
    return cells


def _record_sweep_line(sys, ladder, cfg, seed, c_levels, b):
    """One trajectory of the sweep; points at the requested levels."""
    res = level_transfer(sys, seed, b, ladder, cfg,
                         record_levels=list(c_levels))
    return [res.level_hits.get(c) for c in c_levels], res.point


def build_patch_point(v: CriticalPoint) -> UnstablePatch:
    return UnstablePatch(v_id=v.id, degree=0, resolution=1,
                         cells=[Cell(point=v.coords.copy(), tangents=(),
                                     weight=1.0)])


def build_patch_curve(sys: MorseSystem, v: CriticalPoint, ladder: Ladder,
                      cfg: FlowConfig, quad: QuadConfig) -> UnstablePatch:
    """W^-_v for an index-1 point: two branches plus the chart cap."""
    fcfg = _sweep_flow_cfg(cfg, quad)
    c_seed = v.value - quad.eps_seed
    cells = _cap_segment_cells(sys, v, c_seed, max(8, quad.cap_nodes))
    dropped = 0
    for branch in (1.0, -1.0):
        u = np.array([branch, 0.0])
        r0 = _ray_radius_on_level(sys, v, u, c_seed,
                                  math.sqrt(2 * quad.eps_seed))
        seed = v.from_chart(r0 * u)
        seed = project_to_level(sys, seed, c_seed)
        w_term, _ = _terminal_of(sys, ladder, fcfg, seed)
        c_lo = w_term.value + quad.eta_tail
        c_nodes, c_w = _c_nodes(ladder, c_seed, c_lo, quad.resolution,
                                anchor_hi=v.value, anchor_lo=w_term.value)
        pts, endpoint = _record_sweep_line(sys, ladder, fcfg, seed, c_nodes,
                                           c_lo)
        for c, wgt, p in zip(c_nodes, c_w, pts):
            if p is None:
                dropped += 1
                continue
            tangent = sys.Y(p)
            cells.append(Cell(point=p, tangents=(tangent,),
                              weight=float(branch * wgt)))
        # terminal stub: straight segment closing the branch into the
        # minimum (length ~ sqrt(2 eta_tail), curvature error cubic)
        delta = geometry.wrap_diff(sys.model, w_term.coords, endpoint)
        for i in range(4):
            sgm = (i + 0.5) / 4.0
            cells.append(Cell(point=endpoint + sgm * delta, tangents=(delta,),
                              weight=float(branch) / 4.0))
    return UnstablePatch(v_id=v.id, degree=1, resolution=quad.resolution,
                         cells=cells, dropped_nodes=dropped)


def _unit_level_tangent(sys: MorseSystem, p) -> np.ndarray:
    """Coordinate-unit tangent of the level curve through p.

    The sign convention makes (t, -Y) positively oriented in coordinates:
    det[(dh_v, -dh_u), g^{-1} dh] = <dh, g^{-1} dh> > 0.
    """
    g = sys.dh(p)
    t = np.array([g[1], -g[0]])
    n = np.linalg.norm(t)
    if n == 0.0:
        raise PreconditionViolation("level tangent undefined at a critical point")
    return t / n


def _project_level(sys: MorseSystem, x, c: float, iters: int = 3) -> np.ndarray:
    """Newton steps along the coordinate gradient onto {h = c}."""
    x = np.asarray(x, dtype=float).copy()
    for _ in range(iters):
        g = sys.dh(x)
        r = sys.h(x) - c
        if abs(r) < 1e-14:
            break
        x -= g * (r / float(g @ g))
    return x


def _trace_level_loop(sys: MorseSystem, x0, c: float, step: float,
                      turn_tol: float = 0.08,
                      max_steps: int = 400000) -> List[np.ndarray]:
    """Closed polyline along {h = c} from x0, curvature-adaptive Heun steps.

    Closure is wrap-aware, so non-contractible loops on periodic models
    close onto a deck translate of the start point.
    """
    x0 = _project_level(sys, x0, c)
    pts = [x0]
    x = x0
    total = 0.0
    for _ in range(max_steps):
        t1 = _unit_level_tangent(sys, x)
        h_step = step
        for _ in range(30):
            t2 = _unit_level_tangent(sys, _project_level(sys, x + h_step * t1,
                                                         c, iters=1))
            if np.linalg.norm(t2 - t1) <= turn_tol:
                break
            h_step *= 0.5
        x_new = _project_level(sys, x + 0.5 * h_step * (t1 + t2), c)
        pts.append(x_new)
        total += float(np.linalg.norm(x_new - x))
        x = x_new
        if total > 6 * step and \
                geometry.distance(sys.model, x, x0) < 1.2 * h_step:
            break
    else:
        raise PreconditionViolation(
            f"level curve at c={c} did not close after {max_steps} steps")
    return pts


def _locate_on_loop(model, loop: List[np.ndarray], lengths: np.ndarray,
                    b: np.ndarray) -> float:
    """Arclength position of a point along a closed polyline."""
    dists = [geometry.distance(model, p, b) for p in loop]
    k = int(np.argmin(dists))
    # project onto the adjacent segments for sub-step accuracy
    best = lengths[k]
    best_d = dists[k]
    for k0 in (k - 1, k):
        a, bb = loop[k0 % len(loop)], loop[(k0 + 1) % len(loop)]
        seg = geometry.wrap_diff(model, bb, a)
        L2 = float(seg @ seg)
        if L2 == 0.0:
            continue
        lam = float(np.clip(geometry.wrap_diff(model, b, a) @ seg / L2, 0, 1))
        proj = a + lam * seg
        d = geometry.distance(model, proj, b)
        if d < best_d:
            best_d = d
            best = lengths[k0 % len(loop)] + lam * math.sqrt(L2)
    return float(best)


def _loop_lengths(model, loop: List[np.ndarray]) -> Tuple[np.ndarray, float]:
    segs = [float(np.linalg.norm(geometry.wrap_diff(model, loop[(k + 1) % len(loop)],
                                                    loop[k])))
            for k in range(len(loop))]
    lengths = np.concatenate([[0.0], np.cumsum(segs[:-1])])
    return lengths, float(lengths[-1] + segs[-1])


def _slice_cells(sys, v, loop, splits, toggles, ref_pos, w_c, orient_sign,
                 quad) -> List[Cell]:
    """Cells for the part of a level loop belonging to v's basin.

    splits are arclength positions of basin-boundary points; membership of
    the piece containing ref_pos is True and toggles across each split.
    """
    model = sys.model
    lengths, total = _loop_lengths(model, loop)
    n = len(loop)

    def vertex_cell(k: int, wl: float):
        p = loop[k]
        for _ in range(3):
            try:
                t_hat = _unit_level_tangent(sys, p)
                t_c = -sys.Y(p)
                return Cell(point=p, tangents=(t_hat, t_c),
                            weight=orient_sign * wl * w_c)
            except DegenerateMetric:
                # nudge along the curve away from a coordinate pole
                p = _project_level(sys, p + 0.3 * wl *
                                   _unit_level_tangent(sys, p), sys.h(p))
        return None

    if not splits:
        cells = []
        for k in range(n):
            prev = lengths[k] - (lengths[k - 1] if k else lengths[-1] - total)
            nxt = (lengths[k + 1] if k + 1 < n else total) - lengths[k]
            cell = vertex_cell(k, 0.5 * (prev + nxt))
            if cell is not None:
                cells.append(cell)
        return cells

    pos = sorted(splits)
    # pieces are the arcs between consecutive split positions; membership
    # toggles across every split (each splitting saddle separates exactly
    # two basins, one of which is v's)
    ref_piece = int(np.searchsorted(pos, ref_pos)) % len(pos)
    member = {}
    state = True
    idx = ref_piece
    for _ in range(len(pos)):
        member[idx] = state
        idx = (idx + 1) % len(pos)
        state = not state
    cells = []
    for piece in range(len(pos)):
        if not member.get(piece, False):
            continue
        s_a = pos[piece - 1] if piece > 0 else pos[-1] - total
        s_b = pos[piece]
        inside = [k for k in range(n)
                  if s_a < lengths[k] < s_b
                  or s_a < lengths[k] - total < s_b]
        inside.sort(key=lambda k: lengths[k] if s_a < lengths[k] < s_b
                    else lengths[k] - total)
        if not inside:
            continue
        coords = [lengths[k] if s_a < lengths[k] < s_b else lengths[k] - total
                  for k in inside]
        bounds = [s_a] + [0.5 * (a + b) for a, b in zip(coords, coords[1:])] \
            + [s_b]
        for k, (lo, hi) in zip(inside, zip(bounds, bounds[1:])):
            cell = vertex_cell(k, hi - lo)
            if cell is not None:
                cells.append(cell)
    return cells


def build_patch_disk(sys: MorseSystem, v: CriticalPoint, ladder: Ladder,
                     cfg: FlowConfig, quad: QuadConfig,
                     points: Sequence[CriticalPoint],
                     connections) -> UnstablePatch:
    """W^-_v for an index-2 point by level-curve slicing.

    Each level integrates independently (a top-degree form evaluated on
    (level tangent, -Y) needs no cross-level derivatives), which keeps the
    quadrature uniformly second order even when the linearization rates at
    v are strongly anisotropic and trajectory fans would focus.
    """
    fcfg = _sweep_flow_cfg(cfg, quad)
    c_seed = v.value - quad.eps_seed
    n_r = max(6, quad.cap_nodes)
    cells = _cap_disk_cells(sys, v, c_seed, n_r, 4 * n_r)
    dropped = 0
    orient_sign = 1.0 if float(np.linalg.det(v.frame)) > 0 else -1.0

    def seed_at(theta: float) -> np.ndarray:
        u = np.array([math.cos(theta), math.sin(theta)])
        r0 = _ray_radius_on_level(sys, v, u, c_seed,
                                  math.sqrt(2 * quad.eps_seed))
        return project_to_level(sys, v.from_chart(r0 * u), c_seed)

    # reference trajectory: start points for every level slice
    by_id = {p.id: p for p in points}
    w_term = None
    ref_line = None
    for probe in (0.37, 1.11, 1.93, 2.71, 3.49, 4.27, 5.05):
        try:
            w_term, _ = _terminal_of(sys, ladder, fcfg, seed_at(probe))
            c_lo = w_term.value + quad.eta_tail
            c_nodes, c_w = _c_nodes(ladder, c_seed, c_lo, quad.resolution,
                                    anchor_hi=v.value, anchor_lo=w_term.value)
            ref_line = _record_sweep_line(sys, ladder, fcfg, seed_at(probe),
                                          c_nodes, c_lo)[0]
            break
        except (DegenerateMetric, StuckOnStableManifold, StepUnderflow):
            continue
    if ref_line is None:
        raise PreconditionViolation(
            f"no reference trajectory found for the basin of {v.id}")

    # basin-splitting saddles: sources of their incoming trajectories
    splitters = []
    for s in points:
        if s.index != 1:
            continue
        sources = sorted({vid for (vid, wid), trajs in connections.items()
                          if wid == s.id and trajs})
        if v.id in sources and len(sources) == 2:
            splitters.append(s)

    # boundary branch curves of the splitting saddles, at the slice levels
    branch_pts: List[List[Optional[np.ndarray]]] = []
    for s in splitters:
        s_seed_level = s.value - quad.eps_seed
        for sign in (1.0, -1.0):
            u = np.array([sign, 0.0])
            r0 = _ray_radius_on_level(sys, s, u, s_seed_level,
                                      math.sqrt(2 * quad.eps_seed))
            seed = project_to_level(sys, s.from_chart(r0 * u), s_seed_level)
            wanted = [c for c in c_nodes if c < s_seed_level]
            hits = {}
            if wanted:
                try:
                    term, _ = _terminal_of(sys, ladder, fcfg, seed)
                    target = max(min(wanted), term.value + quad.eta_tail)
                    res = level_transfer(sys, seed, target, ladder, fcfg,
                                         record_levels=wanted)
                    hits = res.level_hits
                except (StuckOnStableManifold, StepUnderflow,
                        DegenerateMetric):
                    hits = {}
            branch_pts.append([hits.get(c) for c in c_nodes])

    step_base = 6.0 / quad.resolution
    for j, (c, wc) in enumerate(zip(c_nodes, c_w)):
        start = ref_line[j]
        if start is None:
            dropped += 1
            continue
        try:
            loop = _trace_level_loop(sys, start, c, step_base, quad.trace_turn)
        except (DegenerateMetric, PreconditionViolation):
            dropped += 1
            continue
        lengths, total = _loop_lengths(sys.model, loop)
        splits = []
        toggles = []
        for bl in branch_pts:
            if bl[j] is not None:
                splits.append(_locate_on_loop(sys.model, loop, lengths, bl[j]))
                toggles.append(True)
        ref_pos = 0.0  # the loop starts at the reference point
        cells.extend(_slice_cells(sys, v, loop, splits, toggles, ref_pos,
                                  wc, orient_sign, quad))
    return UnstablePatch(v_id=v.id, degree=2, resolution=quad.resolution,
                         cells=cells, dropped_nodes=dropped)


# --- the integration engine ----------------------------------------------------

class IntegrationEngine:
    """Caches W^-_v parametrizations and evaluates Int on forms.

    Connection angles from the trajectory database seed the separatrix
    refinement; patches are cached per (generator, resolution).
    """

    def __init__(self, sys: MorseSystem, points: Sequence[CriticalPoint],
                 ladder: Ladder, connections, cfg: FlowConfig = FlowConfig(),
                 quad: QuadConfig = QuadConfig()):
        self.sys = sys
        self.points = list(points)
        self.ladder = ladder
        self.connections = connections
        self.cfg = cfg
        self.quad = quad
        self._patches: Dict[Tuple[str, int], UnstablePatch] = {}

    def patch(self, v: CriticalPoint, resolution: Optional[int] = None
              ) -> UnstablePatch:
        res = resolution or self.quad.resolution
        key = (v.id, res)
        if key not in self._patches:
            quad = replace(self.quad, resolution=res)
            if v.index == 0:
                p = build_patch_point(v)
            elif v.index == 1:
                p = build_patch_curve(self.sys, v, self.ladder, self.cfg, quad)
            elif v.index == 2:
                p = build_patch_disk(self.sys, v, self.ladder, self.cfg, quad,
                                     self.points, self.connections)
            else:
                raise PreconditionViolation(
                    "integration implemented for indices 0..2")
            self._patches[key] = p
        return self._patches[key]

    def integrate_over_unstable(self, v: CriticalPoint, form: DifferentialForm,
                                resolution: Optional[int] = None,
                                with_estimate: bool = False):
        """Int of a form over W^-_v; optionally a Richardson error estimate."""
        if form.degree != v.index:
            raise NotTopDegree(
                f"form degree {form.degree} != index {v.index} of {v.id}")
        res = resolution or self.quad.resolution
        value = self.patch(v, res).integrate(self.sys, form)
        if not with_estimate:
            return value
        if v.index == 0:
            return value, 0.0
        coarse = self.patch(v, max(8, res // 2)).integrate(self.sys, form)
        est = abs(value - coarse) / 3.0 + 1e-12
        return value, est

    def int_map(self, form: DifferentialForm, resolution: Optional[int] = None
                ) -> Dict[str, float]:
        """Int(omega) as a cochain on the degree-matching generators."""
        out = {}
        for v in self.points:
            if v.index == form.degree:
                out[v.id] = self.integrate_over_unstable(v, form, resolution)
        return out

    def chain_map_residual(self, form: DifferentialForm, complex_,
                           resolution: Optional[int] = None) -> float:
        """max_v |Int(d omega)(v) - (delta Int(omega))(v)| over X_{q+1}."""
        q = form.degree
        if q >= self.sys.model.dim:
            raise PreconditionViolation("chain map needs degree q <= n-1")
        d_form = form.d()
        upper = self.int_map(d_form, resolution)
        lower = self.int_map(form, resolution)
        gens_q = complex_.generators.get(q, [])
        gens_q1 = complex_.generators.get(q + 1, [])
        I = complex_.incidence.get(q + 1)
        worst = 0.0
        for i, vid in enumerate(gens_q1):
            delta_val = 0.0
            if I is not None and I.size:
                delta_val = sum(int(I[i, j]) * lower[wid]
                                for j, wid in enumerate(gens_q))
            worst = max(worst, abs(upper[vid] - delta_val))
        return worst

    def verify_convergence(self, v: CriticalPoint, form: DifferentialForm,
                           resolution: Optional[int] = None) -> Tuple[float, float]:
        """Value with estimate; raises NonConvergent on doubling blowup."""
        res = resolution or self.quad.resolution
        value, est = self.integrate_over_unstable(v, form, res,
                                                  with_estimate=True)
        fine = self.patch(v, 2 * res).integrate(self.sys, form)
        if abs(fine - value) > 10.0 * max(est, 1e-12):
            raise NonConvergent(
                f"Int over {v.id}: doubling moved the value by "
                f"{abs(fine - value):.3e}, estimate was {est:.3e}")
        return value, est
