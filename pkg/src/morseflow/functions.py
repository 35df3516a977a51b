"""Built-in catalog of Morse functions on the supported manifold models.

Scenario files refer to these by name; there is no runtime expression
parsing.  Embedded surfaces get their parametrization, its first and second
partials, and the height function's derivatives generated symbolically once
at construction time, so every evaluator downstream is analytic.
"""

from __future__ import annotations

import math
from typing import Callable, Dict

import numpy as np
import sympy as sp

from . import geometry
from .errors import ScenarioError
from .geometry import Embedding, embedded_surface, flat_torus, standard_model
from .morse import MorseSystem

TWO_PI = 2.0 * math.pi


def _lambdify_surface(u, v, exprs) -> Embedding:
    """Build an Embedding with analytic partials from three sympy expressions."""
    P = sp.Matrix(exprs)
    Pu, Pv = P.diff(u), P.diff(v)
    second = [[Pu.diff(u), Pu.diff(v)], [Pv.diff(u), Pv.diff(v)]]

    f_p = sp.lambdify((u, v), P, "numpy")
    f_d1 = sp.lambdify((u, v), sp.Matrix.hstack(Pu, Pv), "numpy")
    f_d2 = [[sp.lambdify((u, v), second[i][j], "numpy") for j in range(2)]
            for i in range(2)]

    def point(p):
        return np.asarray(f_p(p[0], p[1]), dtype=float).reshape(3)

    def d1(p):
        return np.asarray(f_d1(p[0], p[1]), dtype=float).reshape(3, 2)

    def d2(p):
        out = np.empty((3, 2, 2))
        for i in range(2):
            for j in range(2):
                out[:, i, j] = np.asarray(
                    f_d2[i][j](p[0], p[1]), dtype=float).reshape(3)
        return out

    return Embedding(point=point, d1=d1, d2=d2)


def _lambdify_height(u, v, expr):
    """Scalar function with gradient and Hessian evaluators."""
    grad = sp.Matrix([expr.diff(u), expr.diff(v)])
    hess = sp.hessian(expr, (u, v))
    f_h = sp.lambdify((u, v), expr, "numpy")
    f_g = sp.lambdify((u, v), grad, "numpy")
    f_H = sp.lambdify((u, v), hess, "numpy")

    def h(p):
        return float(f_h(p[0], p[1]))

    def dh(p):
        return np.asarray(f_g(p[0], p[1]), dtype=float).reshape(2)

    def hessian(p):
        return np.asarray(f_H(p[0], p[1]), dtype=float).reshape(2, 2)

    return h, dh, hessian


def _surface_system(exprs_builder, params) -> MorseSystem:
    u, v = sp.symbols("u v", real=True)
    exprs, periods, bounds = exprs_builder(u, v, params)
    emb = _lambdify_surface(u, v, exprs)
    h, dh, hess = _lambdify_height(u, v, exprs[2])
    model = embedded_surface(emb, periods=periods, bounds=bounds)
    return MorseSystem(model=model, h=h, dh=dh, hess=hess)


# --- catalog entries -------------------------------------------------------

def _cos_sum(params) -> MorseSystem:
    amp = float(params.get("amplitude", 1.0))
    model = flat_torus((TWO_PI, TWO_PI))

    def h(p):
        return amp * (math.cos(p[0]) + math.cos(p[1]))

    def dh(p):
        return amp * np.array([-math.sin(p[0]), -math.sin(p[1])])

    def hess(p):
        return amp * np.diag([-math.cos(p[0]), -math.cos(p[1])])

    return MorseSystem(model=model, h=h, dh=dh, hess=hess)


def _standard_model_k(params) -> MorseSystem:
    n = int(params.get("n", 2))
    k = int(params.get("k", 1))
    model = standard_model(n, k)
    sign = np.concatenate([-np.ones(k), np.ones(n - k)])

    def h(p):
        return float(0.5 * np.dot(sign * p, p))

    def dh(p):
        return sign * np.asarray(p, dtype=float)

    def hess(p):
        return np.diag(sign)

    return MorseSystem(model=model, h=h, dh=dh, hess=hess)


def _sphere_exprs(u, v, params):
    # chart poles placed on the +-y axis so that critical points of the
    # height (and everything flowing between them) stay in the interior
    radius = sp.Float(float(params.get("radius", 1.0)))
    x = radius * sp.sin(u) * sp.cos(v)
    y = radius * sp.cos(u)
    z = radius * sp.sin(u) * sp.sin(v)
    return (x, y, z), (None, TWO_PI), ((0.0, math.pi), None)


def _peanut_exprs(u, v, params):
    # round sphere with a radial bulge along +-y near the top: two summits,
    # one neck saddle at the former top, one round minimum at the bottom
    a = sp.Float(float(params.get("bulge", 2.0)))
    xs = sp.sin(u) * sp.cos(v)
    ys = sp.cos(u)
    zs = sp.sin(u) * sp.sin(v)
    r = 1 + a * ys**2 * (1 + zs) / 2
    return (r * xs, r * ys, r * zs), (None, TWO_PI), ((0.0, math.pi), None)


def _upright_torus_exprs(u, v, params):
    # torus of revolution standing on edge (axis horizontal, along y);
    # its height function famously violates the Morse-Smale condition
    # through a saddle-saddle orbit along the inner equator
    R = sp.Float(float(params.get("R", 2.0)))
    r = sp.Float(float(params.get("r", 1.0)))
    x = (R + r * sp.cos(v)) * sp.cos(u)
    y = r * sp.sin(v)
    z = (R + r * sp.cos(v)) * sp.sin(u)
    return (x, y, z), (TWO_PI, TWO_PI), (None, None)


def flat_revolution_torus_embedding(R: float = 2.0, r: float = 1.0) -> Embedding:
    """Axis-vertical torus of revolution; used for metric cross-checks."""
    u, v = sp.symbols("u v", real=True)
    x = (R + r * sp.cos(v)) * sp.cos(u)
    y = (R + r * sp.cos(v)) * sp.sin(u)
    z = r * sp.sin(v)
    return _lambdify_surface(u, v, (x, y, z))


_CATALOG: Dict[str, Callable] = {
    "cos_sum": _cos_sum,
    "standard_model_k": _standard_model_k,
    "sphere_height": lambda params: _surface_system(_sphere_exprs, params),
    "peanut_height": lambda params: _surface_system(_peanut_exprs, params),
    "torus_height": lambda params: _surface_system(_upright_torus_exprs, params),
}


def catalog_names():
    return sorted(_CATALOG)


def build_system(name: str, params=None) -> MorseSystem:
    if name not in _CATALOG:
        raise ScenarioError(f"unknown function {name!r}; "
                            f"known: {', '.join(catalog_names())}")
    return _CATALOG[name](dict(params or {}))
