"""Smale's model-box construction: cutoff functions, a perturbed
field/metric pair on M0 = R x S^{k-1}_rho x R^{n-k}, regular-value search,
and a sampled transversality certificate.

Coordinates are ordered (s, xi_1, ..., xi_{n-k}, sphere chart), so the
metric perturbation lives in the fixed (1, 2) entry block.  The background
metric is the flat product metric, for which -grad h0 = -d/ds holds with
h0(s, p, xi) = s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import numpy.polynomial.polynomial as npoly
import scipy.integrate

from .errors import (AlphaTooLarge, NoRegularValueFound, PositivityLost,
                     PreconditionViolation)


# --- cutoff beta (bump of prescribed mass) ----------------------------------

class BumpProfile:
    """Fixed C^4 bump zeta with unit mass and exactly computable norms.

    zeta(t) = C (a^2 - t^2)^5 on |t| <= a = 0.9 s0, zero outside; a
    polynomial profile keeps every derivative bound a root-finding exercise
    instead of numerical differentiation.
    """

    def __init__(self, s0: float):
        if s0 <= 0:
            raise PreconditionViolation("s0 must be positive")
        self.s0 = float(s0)
        self.a = 0.9 * self.s0
        # integral of (a^2 - t^2)^5 over [-a, a] is a^11 * 512/693
        self.scale = 693.0 / (512.0 * self.a ** 11)
        base = np.polynomial.Polynomial([self.a ** 2, 0.0, -1.0]) ** 5
        self.poly = base * self.scale
        self._derivs = [self.poly]
        for _ in range(8):
            self._derivs.append(self._derivs[-1].deriv())

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(np.abs(t) < self.a, self.poly(t), 0.0)
        return out if out.ndim else float(out)

    def deriv(self, j: int, t):
        t = np.asarray(t, dtype=float)
        out = np.where(np.abs(t) < self.a, self._derivs[j](t), 0.0)
        return out if out.ndim else float(out)

    def sup_deriv(self, j: int) -> float:
        """max |d^j zeta| over the support, via critical points of d^j."""
        p = self._derivs[j]
        cands = [0.0, self.a]
        roots = self._derivs[j + 1].roots()
        cands.extend(float(r.real) for r in roots
                     if abs(r.imag) < 1e-12 and abs(r.real) <= self.a)
        return max(abs(float(p(c))) for c in cands)

    def c_norm(self, ell: int) -> float:
        return max(self.sup_deriv(j) for j in range(ell + 1))


@dataclass(frozen=True)
class CutoffBeta:
    """beta = alpha * zeta: supported in (-s0, s0), mass alpha, C^ell-small."""

    profile: BumpProfile
    alpha: float
    eta: float
    ell: int

    @property
    def delta(self) -> float:
        return self.eta / (1.0 + self.profile.c_norm(self.ell))

    def __call__(self, t):
        return self.alpha * self.profile(t)

    def deriv(self, j: int, t):
        return self.alpha * self.profile.deriv(j, t)

    def integral(self) -> float:
        val, _err = scipy.integrate.quad(self, -self.profile.s0,
                                         self.profile.s0, limit=200,
                                         epsabs=1e-14, epsrel=1e-13)
        return val


def cutoff_beta(s0: float, eta: float, ell: int, alpha: float) -> CutoffBeta:
    profile = BumpProfile(s0)
    delta = eta / (1.0 + profile.c_norm(ell))
    if not 0.0 <= alpha <= delta:
        raise AlphaTooLarge(
            f"alpha={alpha} exceeds delta={delta} for eta={eta}, ell={ell}")
    return CutoffBeta(profile=profile, alpha=alpha, eta=eta, ell=ell)


# --- cutoff gamma (plateau cutoff) ------------------------------------------

def _smooth_step(t):
    """Standard exp-based increasing step: 0 for t<=0, 1 for t>=1."""
    t = np.asarray(t, dtype=float)
    lo = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    hi = np.where(1 - t > 0, np.exp(-1.0 / np.maximum(1 - t, 1e-300)), 0.0)
    out = lo / (lo + hi)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CutoffGamma:
    """Even plateau cutoff: 1 on |t| <= 5 rho/12, supported in (-rho, rho)."""

    rho: float
    ell: int

    def __call__(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        r = self.rho
        arg = (2.0 / r) * ((11.0 / 12.0) * r - t)
        out = np.where(t <= 5.0 * r / 12.0, 1.0,
                       np.where(t >= 11.0 * r / 12.0, 0.0, _smooth_step(arg)))
        return out if out.ndim else float(out)

    def deriv(self, j: int, t, h: Optional[float] = None) -> float:
        """Central finite-difference derivative (for bound checks only)."""
        h = h or self.rho * 1e-3
        if j == 0:
            return self(t)
        stencil = {1: ([-0.5, 0.5], [-1, 1]),
                   2: ([1.0, -2.0, 1.0], [-1, 0, 1]),
                   3: ([-0.5, 1.0, -1.0, 0.5], [-2, -1, 1, 2]),
                   4: ([1.0, -4.0, 6.0, -4.0, 1.0], [-2, -1, 0, 1, 2])}
        coef, off = stencil[j]
        return sum(c * self(t + o * h) for c, o in zip(coef, off)) / h ** j

    def step_c_norm(self, ell: int) -> float:
        """C_ell estimate of the underlying step on a dense grid."""
        ts = np.linspace(1e-4, 1 - 1e-4, 4001)
        worst = 1.0
        for j in range(1, ell + 1):
            h = 2e-4
            stencil = {1: ([-0.5, 0.5], [-1, 1]),
                       2: ([1.0, -2.0, 1.0], [-1, 0, 1]),
                       3: ([-0.5, 1.0, -1.0, 0.5], [-2, -1, 1, 2]),
                       4: ([1.0, -4.0, 6.0, -4.0, 1.0], [-2, -1, 0, 1, 2])}
            coef, off = stencil[j]
            vals = sum(c * _smooth_step(ts + o * h) for c, o in zip(coef, off)) / h ** j
            worst = max(worst, float(np.max(np.abs(vals))))
        return worst


def cutoff_gamma(rho: float, ell: int) -> CutoffGamma:
    if rho <= 0:
        raise PreconditionViolation("rho must be positive")
    return CutoffGamma(rho=float(rho), ell=ell)


# --- V+ submanifold samples ---------------------------------------------------

@dataclass(frozen=True)
class VPlusSamples:
    """Sampled submanifold of S^{k-1}_rho x R^{n-k} with analytic tangents.

    points: (N, n) rows (sphere part, xi part); tangents: (N, d, n) rows of
    tangent bases; d is the manifold dimension of V+.
    """

    k: int
    n: int
    rho: float
    points: np.ndarray
    tangents: np.ndarray

    @property
    def dim(self) -> int:
        return self.tangents.shape[1]

    def xi(self) -> np.ndarray:
        return self.points[:, self.k:]

    def xi_jacobians(self) -> np.ndarray:
        return self.tangents[:, :, self.k:]

    def xi_resolution(self) -> float:
        """Largest xi jump between consecutive samples (cyclic)."""
        xi = self.xi()
        if len(xi) < 2:
            return 0.0
        diffs = np.linalg.norm(np.roll(xi, -1, axis=0) - xi, axis=1)
        return float(np.max(diffs))


def _circle_points(rho: float, m: int) -> Tuple[np.ndarray, np.ndarray]:
    ang = 2.0 * math.pi * (np.arange(m) + 0.214) / m
    pts = rho * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    tans = rho * np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
    return pts, tans


def tangential_vplus(k: int, n: int, rho: float, m: int = 128,
                     xi_const: Optional[np.ndarray] = None) -> VPlusSamples:
    """V+ = S^{k-1}_rho x {xi_const}; the degenerate tangential test input."""
    xi_const = np.zeros(n - k) if xi_const is None else np.asarray(xi_const)
    if k == 1:
        sph = np.array([[rho], [-rho]])
        tans = np.zeros((2, 0, n))
        pts = np.hstack([sph, np.tile(xi_const, (2, 1))])
        return VPlusSamples(k, n, rho, pts, tans)
    if k == 2:
        sph, dsph = _circle_points(rho, m)
        pts = np.hstack([sph, np.tile(xi_const, (m, 1))])
        tans = np.zeros((m, 1, n))
        tans[:, 0, :2] = dsph
        return VPlusSamples(k, n, rho, pts, tans)
    raise PreconditionViolation("V+ sampling implemented for k in {1, 2}")


def graph_vplus(k: int, n: int, rho: float, f: Callable, df: Callable,
                m: int = 256) -> VPlusSamples:
    """V+ = {(p, f(p))} over S^{k-1}_rho, k = 2; df is d f / d angle."""
    if k != 2:
        raise PreconditionViolation("graph V+ implemented for k = 2")
    ang = 2.0 * math.pi * (np.arange(m) + 0.214) / m
    sph = rho * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    dsph = rho * np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
    vals = np.array([np.atleast_1d(f(a)) for a in ang], dtype=float)
    dvals = np.array([np.atleast_1d(df(a)) for a in ang], dtype=float)
    pts = np.hstack([sph, vals])
    tans = np.zeros((m, 1, n))
    tans[:, 0, :2] = dsph
    tans[:, 0, 2:] = dvals
    return VPlusSamples(k, n, rho, pts, tans)


@dataclass(frozen=True)
class ModelBox:
    n: int
    k: int
    rho: float
    s0: float
    eta: float
    v_plus: VPlusSamples
    eta0: float = 0.95

    def __post_init__(self):
        if not (0 < self.eta <= self.eta0):
            raise PreconditionViolation(
                f"eta must lie in (0, eta0={self.eta0}]")
        if self.rho <= 0 or self.s0 <= 0:
            raise PreconditionViolation("rho and s0 must be positive")


def estimate_eta0(n: int, samples: int = 1000, seed: int = 7) -> float:
    """Largest sampled eta with I + eta * (e1 e2^T + e2 e1^T)-type bumps SPD.

    For the flat background the exact threshold is 1; the sampled estimate
    reported here stays a grid step below it.
    """
    etas = np.linspace(0.05, 1.5, samples)
    ok = 0.0
    for eta in etas:
        G = np.eye(n)
        G[0, 1] = G[1, 0] = eta
        if np.linalg.eigvalsh(G)[0] > 0:
            ok = eta
        else:
            break
    return float(ok)


# --- perturbed field and metric ----------------------------------------------

@dataclass(frozen=True)
class PerturbedSystem:
    """Y'0 and g'0 on the model box, in (s, xi, sphere-chart) coordinates."""

    box: ModelBox
    beta: CutoffBeta
    gamma: CutoffGamma

    def bump(self, s: float, xi) -> float:
        return float(self.beta(s)) * float(self.gamma(np.linalg.norm(xi)))

    def field(self, s: float, xi) -> np.ndarray:
        """(ds/dt, dxi/dt) of Y'0; sphere components vanish identically.

        The xi_1 axis is oriented so that the strip crossing displaces by
        +alpha, landing the descending slice at xi = (alpha, 0, ..., 0).
        """
        out = np.zeros(1 + self.box.n - self.box.k)
        out[0] = -1.0
        out[1] += self.bump(s, xi)
        return out

    def inverse_metric(self, s: float, xi) -> np.ndarray:
        G = np.eye(self.box.n)
        G[0, 1] = G[1, 0] = -self.bump(s, xi)
        return G

    def metric(self, s: float, xi) -> np.ndarray:
        G = self.inverse_metric(s, xi)
        if np.linalg.eigvalsh(G)[0] <= 0:
            raise PositivityLost(
                f"perturbed inverse metric indefinite at s={s}")
        return np.linalg.inv(G)

    def minus_grad_h(self, s: float, xi) -> np.ndarray:
        """-grad_{g'} h0 in (s, xi) components; must equal the field."""
        col = self.inverse_metric(s, xi)[:, 0]
        out = np.zeros(1 + self.box.n - self.box.k)
        out[0] = -col[0]
        out[1] = -col[1]
        return out

    def flow_across_strip(self, p_unused=None, xi0=None,
                          rtol: float = 1e-12) -> np.ndarray:
        """Integrate Y'0 from (s0, p, xi0) for time 2 s0; returns final xi."""
        xi0 = np.zeros(self.box.n - self.box.k) if xi0 is None else xi0

        def rhs(_t, state):
            return self.field(state[0], state[1:])

        sol = scipy.integrate.solve_ivp(
            rhs, (0.0, 2.0 * self.box.s0), np.concatenate([[self.box.s0], xi0]),
            method="DOP853", rtol=rtol, atol=1e-14)
        if not sol.success:
            raise PreconditionViolation("strip flow failed to integrate")
        return sol.y[1:, -1]

    def metric_deviation(self, grid: int = 21) -> Tuple[float, float]:
        """Sup of |g' - g| in C0 and a first-difference C1 proxy on a grid."""
        ss = np.linspace(-self.box.s0, self.box.s0, grid)
        xs = np.linspace(-self.box.rho, self.box.rho, grid)
        c0 = 0.0
        c1 = 0.0
        h = 1e-5
        for s in ss:
            for x1 in xs:
                xi = np.zeros(self.box.n - self.box.k)
                xi[0] = x1
                dev = self.metric(s, xi) - np.eye(self.box.n)
                c0 = max(c0, float(np.max(np.abs(dev))))
                dev_s = (self.metric(s + h, xi) - self.metric(s - h, xi)) / (2 * h)
                c1 = max(c1, float(np.max(np.abs(dev_s))))
        return c0, c1


def perturbed_system(box: ModelBox, beta: CutoffBeta,
                     gamma: CutoffGamma) -> PerturbedSystem:
    return PerturbedSystem(box=box, beta=beta, gamma=gamma)


# --- regular values and the certificate ---------------------------------------

def _sphere_tangent_basis(p: np.ndarray) -> np.ndarray:
    """Orthonormal basis of T_p S^{k-1}_|p| inside R^k."""
    k = p.shape[0]
    q, _ = np.linalg.qr(np.column_stack([p] + [e for e in np.eye(k)[:, :-1].T]))
    return q[:, 1:].T  # (k-1, k)


def sard_regular_value(box: ModelBox, bound: float, trials: int,
                       seed: int, sv_floor: float = 1e-6,
                       preimage_radius: Optional[float] = None) -> np.ndarray:
    """A nonzero value a+ of norm <= bound regular for pi : V+ -> R^{n-k}.

    Regularity is checked on the sampled preimage: every sample with
    pi(x) near a+ must have a full-row-rank xi-Jacobian.
    """
    if bound <= 0:
        raise PreconditionViolation("bound must be positive")
    rng = np.random.default_rng(seed)
    nk = box.n - box.k
    xi = box.v_plus.xi()
    jac = box.v_plus.xi_jacobians()
    if preimage_radius is None:
        preimage_radius = max(2.0 * box.v_plus.xi_resolution(), 1e-9)
    best = -math.inf
    for _ in range(trials):
        a = rng.uniform(-bound, bound, size=nk)
        nrm = np.linalg.norm(a)
        if nrm < 1e-3 * bound or nrm > bound:
            continue
        near = np.where(np.linalg.norm(xi - a, axis=1) < preimage_radius)[0]
        if near.size == 0:
            return a
        margin = math.inf
        for i in near:
            M = jac[i]
            if M.shape[0] < nk:
                margin = -1.0
                break
            sv = np.linalg.svd(M, compute_uv=False)
            margin = min(margin, float(sv[nk - 1]))
        best = max(best, margin)
        if margin > sv_floor:
            return a
    raise NoRegularValueFound(
        f"no regular value found in {trials} trials (best margin {best:.3e})",
        best_margin=best)


def transversality_certificate(box: ModelBox, a_plus, tol: float,
                               intersect_tol: Optional[float] = None
                               ) -> Tuple[bool, float]:
    """Check W^-_{Y'0} and V+ meet transversally in the level {-s0}.

    The descending slice is S^{k-1}_rho x {a+}; at every sampled
    intersection the stacked tangent matrix (sphere slice plus V+ tangents)
    must span the (n-1)-dimensional level tangent space; margin is the
    (n-1)-th singular value, +inf when the intersection is empty.
    """
    a_plus = np.asarray(a_plus, dtype=float)
    if intersect_tol is None:
        # resolve against the xi resolution of the V+ sampling
        intersect_tol = max(2.0 * box.v_plus.xi_resolution(), 1e-9)
    xi = box.v_plus.xi()
    hits = np.where(np.linalg.norm(xi - a_plus, axis=1) <= intersect_tol)[0]
    if hits.size == 0:
        return True, math.inf
    margin = math.inf
    need = box.n - 1
    for i in hits:
        p_sph = box.v_plus.points[i, : box.k]
        rows = []
        if box.k > 1:
            sph_rows = np.zeros((box.k - 1, box.n))
            sph_rows[:, : box.k] = _sphere_tangent_basis(p_sph)
            rows.append(sph_rows)
        if box.v_plus.dim > 0:
            rows.append(box.v_plus.tangents[i])
        if not rows:
            return False, 0.0
        M = np.vstack(rows)
        sv = np.linalg.svd(M, compute_uv=False)
        margin = min(margin, float(sv[need - 1]) if sv.size >= need else 0.0)
    return margin > tol, margin
