"""Manifold models: coordinates, periodic identifications, Riemannian metrics.

Three kinds are supported, and only three: the standard local model on R^n
(identity metric, quadratic Morse function of a fixed index), flat tori with
per-coordinate periods, and closed surfaces embedded in R^3 with global
(possibly periodic) parameter coordinates carrying the induced metric.
Everything downstream (flow integration, chart construction, sweeps) is
chart-switch free because of this restriction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateMetric, DimensionMismatch

STANDARD_MODEL = "standard_model"
FLAT_TORUS = "flat_torus"
EMBEDDED_SURFACE = "embedded_surface"

DEFAULT_METRIC_FLOOR = 1e-10


@dataclass(frozen=True)
class Embedding:
    """Parametrization (u, v) -> R^3 with analytic partial derivatives.

    point(p)  -> (3,) ambient position
    d1(p)     -> (3, 2) columns are E_u, E_v
    d2(p)     -> (3, 2, 2) second partials, d2[:, i, j] = E_{p_i p_j}
    """

    point: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ManifoldModel:
    kind: str
    dim: int
    index: int = 0
    # per-coordinate period length, None for a non-periodic coordinate
    periods: tuple = ()
    embedding: Optional[Embedding] = None
    # inclusive coordinate bounds for non-periodic coordinates (seeding only)
    bounds: tuple = ()
    metric_floor: float = DEFAULT_METRIC_FLOOR

    def __post_init__(self):
        if self.kind not in (STANDARD_MODEL, FLAT_TORUS, EMBEDDED_SURFACE):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == STANDARD_MODEL and not 0 <= self.index <= self.dim:
            raise ValueError("standard model index must lie in [0, n]")
        if self.kind == FLAT_TORUS and len(self.periods) != self.dim:
            raise ValueError("flat torus needs one period per coordinate")
        if self.kind == EMBEDDED_SURFACE and self.embedding is None:
            raise ValueError("embedded surface needs an embedding")


def standard_model(n: int, k: int) -> ManifoldModel:
    return ManifoldModel(kind=STANDARD_MODEL, dim=n, index=k,
                         periods=(None,) * n)


def flat_torus(periods: Sequence[float]) -> ManifoldModel:
    periods = tuple(float(p) for p in periods)
    if any(p <= 0 for p in periods):
        raise ValueError("periods must be positive")
    return ManifoldModel(kind=FLAT_TORUS, dim=len(periods), periods=periods)


def embedded_surface(embedding: Embedding, periods, bounds=()) -> ManifoldModel:
    return ManifoldModel(kind=EMBEDDED_SURFACE, dim=2, periods=tuple(periods),
                         embedding=embedding, bounds=tuple(bounds))


def _check_dim(model: ManifoldModel, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (model.dim,):
        raise DimensionMismatch(
            f"point has shape {p.shape}, model dimension is {model.dim}")
    return p


def canonicalize(model: ManifoldModel, p) -> np.ndarray:
    """Canonical representative: wrap periodic coordinates into [0, period)."""
    p = _check_dim(model, p)
    out = p.copy()
    for i, period in enumerate(model.periods):
        if period is not None:
            out[i] = out[i] % period
            # `x % p` can return p itself for tiny negative x
            if out[i] >= period:
                out[i] -= period
    return out


def wrap_diff(model: ManifoldModel, a, b) -> np.ndarray:
    """Minimal representative of a - b (periodic coordinates wrapped)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    for i, period in enumerate(model.periods):
        if period is not None:
            d[i] = (d[i] + period / 2.0) % period - period / 2.0
    return d


def distance(model: ManifoldModel, a, b) -> float:
    return float(np.linalg.norm(wrap_diff(model, a, b)))


def metric_at(model: ManifoldModel, p) -> np.ndarray:
    """Metric tensor g_ij at p (first fundamental form for embedded surfaces)."""
    p = _check_dim(model, p)
    if model.kind in (STANDARD_MODEL, FLAT_TORUS):
        return np.eye(model.dim)
    d1 = model.embedding.d1(p)
    g = d1.T @ d1
    g = 0.5 * (g + g.T)
    if np.linalg.eigvalsh(g)[0] < model.metric_floor:
        raise DegenerateMetric(
            f"induced metric degenerate at {p} "
            f"(min eigenvalue {np.linalg.eigvalsh(g)[0]:.3e})")
    return g


def metric_d1(model: ManifoldModel, p) -> np.ndarray:
    """Coordinate derivatives of the metric, dg[k, i, j] = d g_ij / d p_k."""
    p = _check_dim(model, p)
    n = model.dim
    if model.kind in (STANDARD_MODEL, FLAT_TORUS):
        return np.zeros((n, n, n))
    d1 = model.embedding.d1(p)      # (3, 2)
    d2 = model.embedding.d2(p)      # (3, 2, 2)
    dg = np.zeros((n, n, n))
    for k in range(n):
        dg[k] = d2[:, :, k].T @ d1 + d1.T @ d2[:, :, k]
    return dg


def inverse_metric_at(model: ManifoldModel, p) -> np.ndarray:
    if model.kind in (STANDARD_MODEL, FLAT_TORUS):
        return np.eye(model.dim)
    return np.linalg.inv(metric_at(model, p))
