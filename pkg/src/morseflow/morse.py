"""Morse systems: critical point location, classification, standard charts,
and the critical-value ladder with admissible epsilon bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from . import geometry
from .errors import (ChartTooSmall, DegenerateCritical, DegenerateMetric,
                     LadderCollision, PreconditionViolation)
from .geometry import ManifoldModel, canonicalize, metric_at, metric_d1, wrap_diff

NEWTON_TOL = 1e-11
DEGENERACY_TOL = 1e-8
MERGE_RADIUS = 1e-6
NEWTON_MAX_ITER = 50
CHART_TOL = 1.0 / 24.0
CHART_R_MIN = 1e-3


@dataclass(frozen=True)
class MorseSystem:
    """A Morse function with analytic derivative evaluators on a model.

    h, dh, hess act on raw (possibly unwrapped) coordinates and must be
    periodic in the model's periodic coordinates.  The negative gradient
    field and its rescaled companion are derived, never supplied.
    """

    model: ManifoldModel
    h: Callable[[np.ndarray], float]
    dh: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "_flat",
                           self.model.kind != geometry.EMBEDDED_SURFACE)

    def X(self, p) -> np.ndarray:
        """Descending gradient field X = -g^{-1} dh."""
        p = np.asarray(p, dtype=float)
        if self._flat:
            return -self.dh(p)
        return -geometry.inverse_metric_at(self.model, p) @ self.dh(p)

    def Xh(self, p) -> float:
        """X(h) = -|dh|_g^2, strictly negative off the critical set."""
        p = np.asarray(p, dtype=float)
        return float(self.dh(p) @ self.X(p))

    def Y(self, p) -> np.ndarray:
        """Rescaled field Y = -X / X(h), normalized so Y(h) = -1."""
        p = np.asarray(p, dtype=float)
        g = self.dh(p)
        if self._flat:
            return -g / float(g @ g)
        X = -geometry.inverse_metric_at(self.model, p) @ g
        return -X / float(g @ X)

    def jac_X(self, p) -> np.ndarray:
        """Coordinate Jacobian of X (for variational transport)."""
        p = np.asarray(p, dtype=float)
        ginv = geometry.inverse_metric_at(self.model, p)
        H = self.hess(p)
        J = -ginv @ H
        if self.model.kind == geometry.EMBEDDED_SURFACE:
            dg = metric_d1(self.model, p)
            dhv = self.dh(p)
            for j in range(self.model.dim):
                J[:, j] += ginv @ dg[j] @ ginv @ dhv
        return J

    def jac_Y(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        X = self.X(p)
        JX = self.jac_X(p)
        phi = float(self.dh(p) @ X)
        grad_phi = self.hess(p) @ X + JX.T @ self.dh(p)
        return -JX / phi + np.outer(X, grad_phi) / phi**2


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    """A located, classified critical point with its eigenframe chart.

    frame columns are g-orthonormal eigenvectors of the Hessian pencil,
    eigenvalues ascending (negative first); chart_map = frame @ diag(scales)
    sends chart coordinates to coordinate displacements.
    """

    id: str
    coords: np.ndarray
    value: float
    index: int
    eigenvalues: np.ndarray
    frame: np.ndarray
    chart_radius: float
    chart_tol: float = CHART_TOL
    chart_map: np.ndarray = field(repr=False, default=None)
    chart_inv: np.ndarray = field(repr=False, default=None)

    @property
    def scales(self) -> np.ndarray:
        return 1.0 / np.sqrt(np.abs(self.eigenvalues))

    @property
    def rates(self) -> np.ndarray:
        """Linearized contraction/expansion rates |lambda_j| of the flow."""
        return np.abs(self.eigenvalues)

    @property
    def unstable_orientation(self) -> np.ndarray:
        """Ordered basis of the negative eigenspace, fixing O^-_v."""
        return self.frame[:, : self.index]

    def to_chart(self, model: ManifoldModel, p) -> np.ndarray:
        return self.chart_inv @ wrap_diff(model, p, self.coords)

    def from_chart(self, x) -> np.ndarray:
        return self.coords + self.chart_map @ np.asarray(x, dtype=float)

    def quadratic(self, x) -> float:
        """Standard-form value h(v) - |x^-|^2/2 + |x^+|^2/2 in chart coords."""
        x = np.asarray(x, dtype=float)
        k = self.index
        return self.value - 0.5 * float(x[:k] @ x[:k]) + 0.5 * float(x[k:] @ x[k:])

    def chart_level(self, x) -> float:
        """Quadratic level relative to the critical value."""
        x = np.asarray(x, dtype=float)
        k = self.index
        return -0.5 * float(x[:k] @ x[:k]) + 0.5 * float(x[k:] @ x[k:])


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    for c in vec:
        if abs(c) > 1e-10:
            return vec if c > 0 else -vec
    return vec


def _seed_grid(model: ManifoldModel, density: int) -> np.ndarray:
    axes = []
    for i in range(model.dim):
        period = model.periods[i] if model.periods else None
        if period is not None:
            axes.append(np.linspace(0.0, period, density, endpoint=False))
        elif model.kind == geometry.EMBEDDED_SURFACE and model.bounds[i]:
            lo, hi = model.bounds[i]
            margin = (hi - lo) / (density + 1.0)
            axes.append(np.linspace(lo + margin, hi - margin, density))
        else:
            axes.append(np.linspace(-1.5, 1.5, density))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _newton(sys: MorseSystem, seed: np.ndarray, tol: float,
            max_iter: int) -> Optional[np.ndarray]:
    p = seed.astype(float).copy()
    scale = max(1.0, float(np.linalg.norm(seed)))
    for _ in range(max_iter):
        g = sys.dh(p)
        if np.max(np.abs(g)) < tol:
            return p
        try:
            step = np.linalg.solve(sys.hess(p), -g)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 10.0 * scale + 10.0:
            return None
        p = p + step
    return None


def _inside_bounds(model: ManifoldModel, p: np.ndarray, margin: float = 1e-6) -> bool:
    if model.kind != geometry.EMBEDDED_SURFACE:
        return True
    for i, b in enumerate(model.bounds):
        if b is not None and not (b[0] + margin < p[i] < b[1] - margin):
            return False
    return True


def _chart_directions(n: int) -> np.ndarray:
    if n == 2:
        ang = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    rng = np.random.default_rng(0xC0FFEE)
    dirs = rng.standard_normal((4 * n + 8, n))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _chart_radius(sys: MorseSystem, coords, value, index, A, r_cap,
                  chart_tol, r_min) -> Tuple[float, float]:
    """Largest radius with |h(phi(x)) - quadratic| <= tol * |x|^3 on samples.

    The inequality is scale-free when the cubic Taylor coefficient is
    nonzero, so the effective tolerance is the configured one or the
    measured intrinsic cubic coefficient, whichever is larger; failure then
    signals genuine near-degeneracy rather than ordinary anharmonicity.
    """
    dirs = _chart_directions(sys.model.dim)
    sign = np.concatenate([-np.ones(index), np.ones(sys.model.dim - index)])

    def residual(rad, u):
        x = rad * u
        quad = value + 0.5 * float(sign @ (x * x))
        return abs(sys.h(coords + A @ x) - quad)

    cubic = max(residual(rad, u) / rad**3
                for rad in (0.01, 0.02) for u in dirs)
    tol = max(chart_tol, 1.25 * cubic + 1e-9)

    r = r_cap
    while r >= r_min:
        if all(residual(rad, u) <= tol * rad**3
               for rad in (r, 0.5 * r) for u in dirs):
            return r, tol
        r *= 0.8
    raise ChartTooSmall(
        f"no chart radius >= {r_min} meets the cubic residual bound at {coords}")


def find_critical_points(sys: MorseSystem, grid_density: int, *,
                         newton_tol: float = NEWTON_TOL,
                         degeneracy_tol: float = DEGENERACY_TOL,
                         merge_radius: float = MERGE_RADIUS,
                         chart_tol: float = CHART_TOL,
                         max_iter: int = NEWTON_MAX_ITER) -> List[CriticalPoint]:
    """Newton search from a coordinate grid, deduplicated and classified.

    Returned list is sorted by (value descending, id); ids are c{level}_{rank}
    so reports are reproducible across runs and densities.
    """
    if grid_density < 4:
        raise PreconditionViolation("grid_density must be at least 4")
    model = sys.model

    found: List[np.ndarray] = []
    for seed in _seed_grid(model, grid_density):
        p = _newton(sys, seed, newton_tol, max_iter)
        if p is None:
            continue
        p = canonicalize(model, p)
        if not _inside_bounds(model, p):
            continue
        try:
            g = metric_at(model, p)
        except DegenerateMetric:
            # parametrization artifact (coordinate pole), not a manifold point
            continue
        if any(geometry.distance(model, p, q) < merge_radius for q in found):
            continue
        found.append(p)

    # classify
    raw = []
    for p in found:
        if np.max(np.abs(sys.dh(p))) >= newton_tol:
            continue
        g = metric_at(model, p)
        evals, evecs = scipy.linalg.eigh(sys.hess(p), g)
        if np.min(np.abs(evals)) < degeneracy_tol:
            raise DegenerateCritical(
                f"critical point at {p} has eigenvalue "
                f"{evals[np.argmin(np.abs(evals))]:.3e} below the Morse tolerance")
        for j in range(model.dim):
            evecs[:, j] = _fix_sign(evecs[:, j])
        index = int(np.sum(evals < 0))
        raw.append((p, float(sys.h(p)), index, evals, evecs, g))

    if not raw:
        return []

    # level clustering for ids
    values = sorted({round(v, 9) for (_, v, _, _, _, _) in raw}, reverse=True)

    def level_of(v):
        return min(range(len(values)), key=lambda j: abs(values[j] - v))

    by_level: Dict[int, list] = {}
    for entry in raw:
        by_level.setdefault(level_of(entry[1]), []).append(entry)

    all_coords = [e[0] for e in raw]
    min_dist = math.inf
    for i in range(len(all_coords)):
        for j in range(i + 1, len(all_coords)):
            min_dist = min(min_dist, geometry.distance(model, all_coords[i],
                                                       all_coords[j]))

    points: List[CriticalPoint] = []
    for lev in sorted(by_level):
        entries = sorted(by_level[lev], key=lambda e: tuple(np.round(e[0], 9)))
        for rank, (p, value, index, evals, evecs, g) in enumerate(entries):
            scales = 1.0 / np.sqrt(np.abs(evals))
            A = evecs @ np.diag(scales)
            A_inv = np.diag(1.0 / scales) @ evecs.T @ g
            r_cap = 1.0
            if math.isfinite(min_dist):
                r_cap = min(r_cap, 0.45 * min_dist / np.linalg.norm(A, 2))
            if model.kind == geometry.EMBEDDED_SURFACE:
                for i, b in enumerate(model.bounds):
                    if b is not None:
                        gap = min(p[i] - b[0], b[1] - p[i])
                        r_cap = min(r_cap, 0.9 * gap / np.linalg.norm(A, 2))
            radius, tol = _chart_radius(sys, p, value, index, A, r_cap,
                                        chart_tol, CHART_R_MIN)
            points.append(CriticalPoint(
                id=f"c{lev}_{rank}", coords=p, value=value, index=index,
                eigenvalues=evals, frame=evecs, chart_radius=radius,
                chart_tol=tol, chart_map=A, chart_inv=A_inv))

    points.sort(key=lambda cp: (-cp.value, cp.id))
    return points


def standard_chart(sys: MorseSystem, v: CriticalPoint):
    """Chart pair (phi_v, phi_v^{-1}) on the ball B_r, plus its radius."""

    def phi(x):
        return v.from_chart(x)

    def phi_inv(p):
        return v.to_chart(sys.model, p)

    return phi, phi_inv, v.chart_radius


@dataclass(frozen=True)
class LadderLevel:
    value: float
    eps: float
    radius: float
    point_ids: tuple


@dataclass(frozen=True)
class Ladder:
    """Critical values descending, with per-level radii r_j and bands eps_j
    satisfying c_j + r_j^2 < c_{j-1} - r_{j-1}^2 and 0 < eps_j < (r_j/2)^2.
    """

    levels: Tuple[LadderLevel, ...]
    points: Dict[str, CriticalPoint]

    @property
    def values(self) -> np.ndarray:
        return np.array([lv.value for lv in self.levels])

    def level_index(self, value: float) -> int:
        return int(np.argmin(np.abs(self.values - value)))

    def level_of_point(self, cp: CriticalPoint) -> LadderLevel:
        return self.levels[self.level_index(cp.value)]

    def eps_of_point(self, cp: CriticalPoint) -> float:
        return self.level_of_point(cp).eps

    def points_at_level(self, j: int) -> List[CriticalPoint]:
        return [self.points[pid] for pid in self.levels[j].point_ids]

    def critical_values_between(self, lo: float, hi: float) -> List[float]:
        """Critical values strictly inside (lo, hi), descending."""
        return [float(c) for c in self.values if lo < c < hi]


def critical_ladder(points: Sequence[CriticalPoint], *,
                    value_cluster_tol: float = 1e-9) -> Ladder:
    if not points:
        raise PreconditionViolation("critical_ladder needs at least one point")

    values = sorted({cp.value for cp in points}, reverse=True)
    clusters: List[List[float]] = [[values[0]]]
    for v in values[1:]:
        if abs(clusters[-1][-1] - v) <= value_cluster_tol:
            clusters[-1].append(v)
        else:
            clusters.append([v])
    cluster_vals = [float(np.mean(c)) for c in clusters]

    for a, b in zip(cluster_vals, cluster_vals[1:]):
        if a - b < 4 * value_cluster_tol:
            raise LadderCollision(
                f"critical values {a} and {b} are too close to separate")

    members: List[List[CriticalPoint]] = [[] for _ in cluster_vals]
    for cp in points:
        j = int(np.argmin([abs(cv - cp.value) for cv in cluster_vals]))
        members[j].append(cp)

    radii = [min(cp.chart_radius for cp in ms) for ms in members]
    # shrink neighbours jointly until every gap inequality holds strictly
    for _ in range(200):
        violated = False
        for j in range(1, len(cluster_vals)):
            gap = cluster_vals[j - 1] - cluster_vals[j]
            if radii[j] ** 2 + radii[j - 1] ** 2 >= gap:
                s = math.sqrt(0.5 * gap / (radii[j] ** 2 + radii[j - 1] ** 2))
                radii[j] *= s
                radii[j - 1] *= s
                violated = True
        if not violated:
            break

    levels = tuple(
        LadderLevel(value=cv, eps=(r / 2.0) ** 2 / 2.0, radius=r,
                    point_ids=tuple(sorted(cp.id for cp in ms)))
        for cv, r, ms in zip(cluster_vals, radii, members))
    return Ladder(levels=levels, points={cp.id: cp for cp in points})
