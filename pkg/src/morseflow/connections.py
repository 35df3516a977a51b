"""Unbroken trajectory spaces T(v, w) between adjacent-index critical points:
shooting searches, coherent signs, level-crossing data, and deck windings.

The sign of a trajectory transports the chosen orientation frame of W^-_v
along the orbit by the variational flow and factors it, at the target chart,
against [flow direction, O^-_w frame]; the determinant sign is epsilon(gamma).
Coherence of this convention is validated globally through the delta^2 = 0
suite rather than locally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry
from .errors import (CaptureAmbiguous, IndexZero, NonTransversalSuspected,
                     PreconditionViolation, StuckOnStableManifold)
from .flow import FlowConfig, TransferResult, level_transfer, project_to_level
from .morse import CriticalPoint, Ladder, MorseSystem


@dataclass(frozen=True)
class ScanConfig:
    resolution: int = 128
    # landings on L_{c_w + eps} sit at chart radius sqrt(2 eps) = r/2, so the
    # capture window must be strictly wider than half the chart
    capture_factor: float = 0.75
    slope_tol: float = 1e-4
    root_tol: float = 1e-10
    dedupe_tol: float = 1e-8
    zero_tol: float = 1e-8
    slope_probe: float = 1e-5
    theta_offset: float = 0.37  # fraction of one grid cell, breaks symmetry ties


@dataclass
class Trajectory:
    from_id: str
    to_id: str
    theta: float                  # scan parameter of the seed direction
    sign: int
    landing: np.ndarray           # unwrapped point on level c_w + eps_w
    samples: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    crossings: List[np.ndarray] = field(default_factory=list)
    crossing_levels: List[float] = field(default_factory=list)
    deck: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def sphere_seed(v: CriticalPoint, direction: np.ndarray, eps: float) -> np.ndarray:
    """Chart seed on the unstable sphere at quadratic level -eps."""
    x = np.zeros(v.coords.shape[0])
    x[: v.index] = math.sqrt(2.0 * eps) * direction
    return v.from_chart(x)


def unstable_directions(v: CriticalPoint, m: int, offset_frac: float = 0.37):
    """m deterministic directions on the unit (i(v)-1)-sphere, with thetas."""
    k = v.index
    if k == 0:
        raise IndexZero(f"{v.id} has index 0: no unstable sphere")
    if k == 1:
        return [(1.0, np.array([1.0])), (-1.0, np.array([-1.0]))]
    if k == 2:
        step = 2.0 * math.pi / m
        thetas = offset_frac * step + step * np.arange(m)
        return [(float(t), np.array([math.cos(t), math.sin(t)])) for t in thetas]
    rng = np.random.default_rng(0x5EED + m)
    dirs = rng.standard_normal((m, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return [(float(i), d) for i, d in enumerate(dirs)]


def unstable_sphere_samples(sys: MorseSystem, v: CriticalPoint, m: int,
                            ladder: Ladder, cfg: FlowConfig = FlowConfig()):
    """Points of S^-_v = W^-_v cap L_{c_v - eps}, one per scan direction."""
    eps = ladder.eps_of_point(v)
    out = []
    for theta, d in unstable_directions(v, m):
        p = project_to_level(sys, sphere_seed(v, d, eps), v.value - eps)
        out.append((theta, p))
    return out


def _capture(sys, ladder, w: CriticalPoint, point, capture_factor):
    """Chart-norm test against every chart at w's level; ambiguity guarded."""
    j = ladder.level_index(w.value)
    inside = [cp for cp in ladder.points_at_level(j)
              if np.linalg.norm(cp.to_chart(sys.model, point))
              <= capture_factor * cp.chart_radius]
    if len(inside) > 1:
        raise CaptureAmbiguous(
            f"landing near {[cp.id for cp in inside]} simultaneously")
    if inside and inside[0].id == w.id:
        return True
    return False


def _deck_of(model, landing, w: CriticalPoint) -> np.ndarray:
    d = np.asarray(landing, dtype=float) - w.coords
    wrapped = geometry.wrap_diff(model, landing, w.coords)
    deck = np.zeros(model.dim, dtype=int)
    for i, period in enumerate(model.periods):
        if period is not None:
            deck[i] = int(round((d[i] - wrapped[i]) / period))
    return deck


def _crossing_levels(ladder: Ladder, v: CriticalPoint, w: CriticalPoint):
    """Levels c_j - eps_j for critical values c_j with h(w) < c_j <= h(v)."""
    out = []
    for lv in ladder.levels:
        if w.value < lv.value <= v.value + 1e-12:
            out.append((lv.value, lv.value - lv.eps))
    return out


def _sign_from_frame(sys, frame, landing, w: CriticalPoint) -> int:
    """Factor the transported frame in the basis [X direction, O^-_w frame]."""
    X = sys.X(landing)
    X = X / np.linalg.norm(X)
    B = np.column_stack([X, w.unstable_orientation]) if w.index else X[:, None]
    C = np.linalg.lstsq(B, frame, rcond=None)[0]
    det = float(np.linalg.det(C)) if C.shape[0] > 1 else float(C[0, 0])
    return 1 if det > 0 else -1


def _refine_trajectory(sys, v, w, ladder, cfg, theta, direction,
                       eps_v) -> Trajectory:
    seed = project_to_level(sys, sphere_seed(v, direction, eps_v),
                            v.value - eps_v)
    eps_w = ladder.eps_of_point(w)
    levels = _crossing_levels(ladder, v, w)
    res = level_transfer(sys, seed, w.value + eps_w, ladder, cfg,
                         frame=v.unstable_orientation.copy(),
                         record_levels=[lv for (_c, lv) in levels],
                         collect=True, sample_ds=0.02)
    sign = _sign_from_frame(sys, res.frame, res.point, w)
    traj = Trajectory(
        from_id=v.id, to_id=w.id, theta=theta, sign=sign, landing=res.point,
        samples=res.samples,
        crossings=[res.level_hits[lv] for (_c, lv) in levels],
        crossing_levels=[lv for (_c, lv) in levels],
        deck=_deck_of(sys.model, res.point, w))
    return traj


class _SigmaScan:
    """Landing map for index-difference-one shooting from an index-2 point.

    sigma(theta) is the unstable chart coordinate of the landing at the
    target chart; it is measured for every landing (captured or not) so sign
    changes can be bracketed, and the capture test is applied only to
    refined roots, discarding far-field zero crossings of the coordinate.
    """

    def __init__(self, sys, v, w, ladder, cfg, scan):
        self.sys, self.v, self.w = sys, v, w
        self.ladder, self.cfg, self.scan = ladder, cfg, scan
        self.eps_v = ladder.eps_of_point(v)
        self.eps_w = ladder.eps_of_point(w)

    def probe(self, theta: float):
        """(sigma, landing) or None when the orbit broke elsewhere."""
        d = np.array([math.cos(theta), math.sin(theta)])
        seed = project_to_level(self.sys, sphere_seed(self.v, d, self.eps_v),
                                self.v.value - self.eps_v)
        try:
            res = level_transfer(self.sys, seed, self.w.value + self.eps_w,
                                 self.ladder, self.cfg)
        except StuckOnStableManifold as exc:
            u = exc.point
            if u is not None and u.index >= self.v.index:
                raise NonTransversalSuspected(
                    f"trajectory from {self.v.id} absorbed by {u.id} of index "
                    f"{u.index}: Morse-Smale condition violated",
                    theta=theta, at=u.id) from exc
            return None  # broken through a lower-index point, another pair's root
        z = self.w.to_chart(self.sys.model, res.point)
        return float(z[0]), res.point

    def __call__(self, theta: float) -> Optional[float]:
        out = self.probe(theta)
        return None if out is None else out[0]


def _bisect_root(sigma, lo, hi, s_lo, s_hi, root_tol):
    """Refine a sign-change bracket; None when a separatrix interrupts it."""
    for _ in range(200):
        if hi - lo <= root_tol:
            break
        mid = 0.5 * (lo + hi)
        s_mid = sigma(mid)
        if s_mid is None:
            return None
        if s_mid == 0.0:
            return mid
        if (s_mid > 0) == (s_lo > 0):
            lo, s_lo = mid, s_mid
        else:
            hi, s_hi = mid, s_mid
    return 0.5 * (lo + hi)


def find_connections(sys: MorseSystem, v: CriticalPoint, w: CriticalPoint,
                     ladder: Ladder, cfg: FlowConfig = FlowConfig(),
                     scan: ScanConfig = ScanConfig()) -> List[Trajectory]:
    """All unbroken trajectories from v to w, with signs, for i(v)-i(w)=1."""
    if v.index - w.index != 1:
        raise PreconditionViolation(
            f"find_connections needs adjacent indices, got "
            f"i({v.id})={v.index}, i({w.id})={w.index}")
    if v.value <= w.value:
        return []
    eps_v = ladder.eps_of_point(v)
    eps_w = ladder.eps_of_point(w)

    if v.index == 1:
        out = []
        for theta, d in unstable_directions(v, 2):
            seed = project_to_level(sys, sphere_seed(v, d, eps_v),
                                    v.value - eps_v)
            try:
                res = level_transfer(sys, seed, w.value + eps_w, ladder, cfg)
            except StuckOnStableManifold as exc:
                u = exc.point
                if u is not None and u.index >= v.index:
                    raise NonTransversalSuspected(
                        f"trajectory from {v.id} absorbed by {u.id} of index "
                        f"{u.index}: Morse-Smale condition violated",
                        theta=theta, at=u.id) from exc
                continue
            if _capture(sys, ladder, w, res.point, scan.capture_factor):
                out.append(_refine_trajectory(sys, v, w, ladder, cfg,
                                              theta, d, eps_v))
        return out

    if v.index != 2:
        raise PreconditionViolation(
            "scan search implemented for source indices 1 and 2 only")

    sigma = _SigmaScan(sys, v, w, ladder, cfg, scan)
    m = scan.resolution
    step = 2.0 * math.pi / m
    thetas = scan.theta_offset * step + step * np.arange(m)
    probes = [sigma.probe(t) for t in thetas]
    values = [None if p is None else p[0] for p in probes]

    roots: List[float] = []
    for i in range(m):
        j = (i + 1) % m
        s_i, s_j = values[i], values[j]
        if s_i is None or s_j is None:
            continue
        t_i, t_j = thetas[i], thetas[i] + step
        if s_i == 0.0:
            roots.append(t_i)
        elif s_i * s_j < 0:
            r = _bisect_root(sigma, t_i, t_j, s_i, s_j, scan.root_tol)
            if r is not None:
                roots.append(r)

    # dedupe cyclically
    roots = sorted(r % (2.0 * math.pi) for r in roots)
    dedup: List[float] = []
    for r in roots:
        if not dedup or (r - dedup[-1] > scan.dedupe_tol
                         and (2 * math.pi - (r - dedup[0])) > scan.dedupe_tol):
            dedup.append(r)

    # keep only roots whose landing is actually captured by w's chart
    kept: List[float] = []
    for r in dedup:
        probe = sigma.probe(r)
        if probe is None:
            continue
        if _capture(sys, ladder, w, probe[1], scan.capture_factor):
            kept.append(r)

    # transversality screening at roots and at near-tangential dips
    for r in kept:
        slope = _slope(sigma, r, scan.slope_probe)
        if slope is not None and abs(slope) < scan.slope_tol:
            raise NonTransversalSuspected(
                f"sigma root at theta={r:.6f} has slope {slope:.2e} below "
                f"tolerance: tangential intersection suspected", theta=r)
    for i in range(m):
        if probes[i] is None or abs(values[i]) >= scan.zero_tol:
            continue
        t_i = float(thetas[i])
        if any(abs((t_i - r + math.pi) % (2 * math.pi) - math.pi) < 10 * step
               for r in kept):
            continue
        if not _capture(sys, ladder, w, probes[i][1], scan.capture_factor):
            continue
        slope = _slope(sigma, t_i, scan.slope_probe)
        if slope is not None and abs(slope) < scan.slope_tol:
            raise NonTransversalSuspected(
                f"sigma vanishes at theta={t_i:.6f} without a transversal "
                f"crossing", theta=t_i)

    out = []
    for r in kept:
        d = np.array([math.cos(r), math.sin(r)])
        out.append(_refine_trajectory(sys, v, w, ladder, cfg, r, d, eps_v))
    out.sort(key=lambda tr: tr.theta)
    return out


def _slope(sigma, theta, probe):
    lo, hi = sigma(theta - probe), sigma(theta + probe)
    if lo is None or hi is None:
        return None
    return (hi - lo) / (2.0 * probe)


def trajectory_sign(sys: MorseSystem, traj: Trajectory, ladder: Ladder,
                    cfg: FlowConfig = FlowConfig()) -> int:
    """Recompute epsilon(gamma) by re-transporting O^-_v along the orbit."""
    v = ladder.points[traj.from_id]
    w = ladder.points[traj.to_id]
    eps_v = ladder.eps_of_point(v)
    eps_w = ladder.eps_of_point(w)
    if v.index == 1:
        d = np.array([traj.theta])
    else:
        d = np.array([math.cos(traj.theta), math.sin(traj.theta)])
    seed = project_to_level(sys, sphere_seed(v, d, eps_v), v.value - eps_v)
    res = level_transfer(sys, seed, w.value + eps_w, ladder, cfg,
                         frame=v.unstable_orientation.copy())
    return _sign_from_frame(sys, res.frame, res.point, w)


def all_adjacent_connections(sys: MorseSystem, points: Sequence[CriticalPoint],
                             ladder: Ladder, cfg: FlowConfig = FlowConfig(),
                             scan: ScanConfig = ScanConfig()
                             ) -> Dict[Tuple[str, str], List[Trajectory]]:
    """Search every adjacent-index pair (ordered by value); complete database."""
    db: Dict[Tuple[str, str], List[Trajectory]] = {}
    for v in points:
        for w in points:
            if v.index - w.index == 1:
                db[(v.id, w.id)] = (find_connections(sys, v, w, ladder, cfg,
                                                     scan)
                                    if v.value > w.value else [])
    return db
