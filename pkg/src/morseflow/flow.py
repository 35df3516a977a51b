"""Gradient flow Phi_t, rescaled flow Psi_s, closed-form standard-model
flows, and level-set transfer with continuous extension to critical levels.

The rescaled field Y = -X/X(h) satisfies Y(h) = -1, so transferring from
level a to level b is a fixed-span integration of length a - b.  Near
critical points the integration hands off to the closed-form linear model in
the eigenframe chart, which is where the field would otherwise be stiff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import (HitCriticalLevel, PreconditionViolation, SingularTransport,
                     StepUnderflow, StuckOnStableManifold)
from .morse import CriticalPoint, Ladder, MorseSystem
from . import geometry

STICK_TOL = 1e-10
LEVEL_TOL = 1e-9


@dataclass(frozen=True)
class FlowConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-9
    max_step: float = 1.0
    event_tol: float = 1e-10
    # chart handoff factor, in chart norm: stable-manifold entries arrive at
    # chart radius sqrt(2 eps) = r/2 exactly, so the handoff ring must sit
    # strictly outside that
    stop_radius: float = 0.75

    def __post_init__(self):
        if min(self.rel_tol, self.abs_tol, self.max_step, self.event_tol,
               self.stop_radius) <= 0:
            raise PreconditionViolation("flow tolerances must be positive")
        if self.event_tol > self.abs_tol:
            raise PreconditionViolation("event_tol must not exceed abs_tol")


def _solve(rhs, x0, span, cfg: FlowConfig, dense=False):
    sol = scipy.integrate.solve_ivp(
        rhs, span, np.asarray(x0, dtype=float), method="DOP853",
        rtol=cfg.rel_tol, atol=0.1 * cfg.abs_tol, max_step=cfg.max_step,
        dense_output=dense)
    if not sol.success:
        exc = StepUnderflow(f"integrator stalled: {sol.message}")
        exc.last_state = sol.y[:, -1] if sol.y.size else np.asarray(x0)
        raise exc
    return sol


def flow_X(sys: MorseSystem, x, t: float, cfg: FlowConfig = FlowConfig()):
    """Flow of the descending gradient field for time t (either sign)."""
    if t == 0.0:
        return np.asarray(x, dtype=float).copy()
    sol = _solve(lambda _t, p: sys.X(p), x, (0.0, t), cfg)
    return sol.y[:, -1]


def flow_Y(sys: MorseSystem, x, s: float, cfg: FlowConfig = FlowConfig()):
    """Flow of the rescaled field: h(result) = h(x) - s when defined."""
    if s == 0.0:
        return np.asarray(x, dtype=float).copy()
    try:
        sol = _solve(lambda _s, p: sys.Y(p), x, (0.0, s), cfg)
    except StepUnderflow as exc:
        raise HitCriticalLevel(
            "rescaled flow stalled before completing the requested drop "
            "(critical level reached?)", level=None) from exc
    return sol.y[:, -1]


# --- closed-form standard-model flows --------------------------------------

def split(k: int, x):
    x = np.asarray(x, dtype=float)
    return x[:k], x[k:]


def standard_flow(k: int, x, t: float) -> np.ndarray:
    """Phi^(k)_t(x) = (e^t x^-, e^{-t} x^+)."""
    xm, xp = split(k, x)
    return np.concatenate([math.exp(t) * xm, math.exp(-t) * xp])


def standard_rescaled(k: int, z, s: float) -> np.ndarray:
    """Rescaled standard flow Psi^(k)_s, by reparametrizing Phi^(k).

    s(t) = |z^-|^2 (e^{2t}-1)/2 + |z^+|^2 (1-e^{-2t})/2 inverts in closed
    form as a quadratic in e^{2t}.
    """
    zm, zp = split(k, z)
    a = float(zm @ zm)
    b = float(zp @ zp)
    if a == 0.0 and b == 0.0:
        return np.asarray(z, dtype=float).copy()
    if a == 0.0:
        if s >= b / 2.0:
            raise PreconditionViolation(
                f"Psi_s undefined: s={s} beyond existence span {b / 2.0}")
        return math.sqrt(1.0 - 2.0 * s / b) * np.asarray(z, dtype=float)
    disc = (b - a - 2.0 * s) ** 2 + 4.0 * a * b
    E = ((a - b + 2.0 * s) + math.sqrt(disc)) / (2.0 * a)
    t = 0.5 * math.log(E)
    return standard_flow(k, z, t)


def standard_rescaled_to_zero(k: int, z) -> np.ndarray:
    """Continuous extension of Psi^(k) onto the critical level h_k = 0."""
    zm, zp = split(k, z)
    nm, npl = float(np.linalg.norm(zm)), float(np.linalg.norm(zp))
    if nm == 0.0:
        return np.zeros_like(np.asarray(z, dtype=float))
    if npl == 0.0:
        # already strictly below level zero; not in the stated domain
        raise PreconditionViolation("standard_rescaled_to_zero needs h_k(z) > 0")
    r = math.sqrt(npl / nm)
    return np.concatenate([r * zm, zp / r])


# --- anisotropic chart model -------------------------------------------------

def model_flow(z, rates, k: int, t: float) -> np.ndarray:
    """Linearized flow in chart coordinates with rates |lambda_j|."""
    z = np.asarray(z, dtype=float)
    fac = np.concatenate([np.exp(rates[:k] * t), np.exp(-rates[k:] * t)])
    return fac * z


def model_level(z, k: int) -> float:
    z = np.asarray(z, dtype=float)
    return -0.5 * float(z[:k] @ z[:k]) + 0.5 * float(z[k:] @ z[k:])


def model_time_to_level(z, rates, k: int, target: float) -> float:
    """Forward time at which the model flow reaches quadratic level target.

    The level is strictly decreasing along the flow; requires target below
    the current level, and an eventual escape (nonzero unstable part) when
    target is below zero.
    """
    z = np.asarray(z, dtype=float)

    def q(t):
        return model_level(model_flow(z, rates, k, t), k)

    q0 = q(0.0)
    if target > q0 + LEVEL_TOL:
        raise PreconditionViolation("model transfer target above current level")
    if abs(target - q0) <= 1e-15 * max(1.0, abs(q0)):
        return 0.0
    unstable = float(z[:k] @ z[:k])
    if unstable == 0.0 and target <= 0.0:
        raise StuckOnStableManifold(
            "model trajectory converges to the critical point")
    hi = 1.0
    while q(hi) > target:
        hi *= 2.0
        if hi > 1e6:
            raise StuckOnStableManifold(
                "model trajectory cannot reach the target level")
    return float(scipy.optimize.brentq(lambda t: q(t) - target, 0.0, hi,
                                       xtol=1e-15, rtol=8.9e-16))


def model_transport(v: CriticalPoint, t: float) -> np.ndarray:
    """Coordinate-space tangent transport across a chart segment."""
    k = v.index
    rates = v.rates
    fac = np.concatenate([np.exp(rates[:k] * t), np.exp(-rates[k:] * t)])
    return v.chart_map @ np.diag(fac) @ v.chart_inv


# --- level transfer ----------------------------------------------------------

@dataclass
class TransferResult:
    point: np.ndarray
    frame: Optional[np.ndarray] = None
    level_hits: Dict[float, np.ndarray] = field(default_factory=dict)
    samples: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    handoff_residual: float = 0.0
    terminal: Optional[CriticalPoint] = None  # set on continuous extension


def project_to_level(sys: MorseSystem, x, target: float, iters: int = 3):
    x = np.asarray(x, dtype=float).copy()
    for _ in range(iters):
        r = sys.h(x) - target
        if abs(r) < 1e-14:
            break
        x = x + sys.Y(x) * r
    return x


def _renorm_frame(F: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(F)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    diag = np.abs(np.diag(R))
    if diag.min() < 1e-300 or diag.max() / max(diag.min(), 1e-300) > 1e12:
        raise SingularTransport("transported frame numerically rank deficient")
    return Q * d


class _Recorder:
    """Collects level hits and coarse path samples along a transfer."""

    def __init__(self, record_levels, collect, sample_ds):
        self.want = sorted(record_levels, reverse=True)
        self.collect = collect
        self.sample_ds = sample_ds
        self.hits: Dict[float, np.ndarray] = {}
        self.samples: List[Tuple[float, np.ndarray]] = []

    def pending_in(self, lo, hi):
        return [c for c in self.want if lo - LEVEL_TOL < c < hi + LEVEL_TOL
                and c not in self.hits]

    def add_sample(self, level, point):
        if self.collect:
            self.samples.append((float(level), np.array(point)))


def _segment_Y(sys, cfg, x, lev_from, lev_to, frame, rec: _Recorder):
    """Integrate Y from lev_from down (or up) to lev_to; no critical bands inside."""
    span = lev_from - lev_to
    if abs(span) < 1e-15:
        return x, frame
    n = sys.model.dim
    if frame is None:
        sol = _solve(lambda _s, p: sys.Y(p), x, (0.0, span), cfg, dense=True)
        end = sol.y[:, -1]
        F_end = None
    else:
        q = frame.shape[1]

        def rhs(_s, state):
            p = state[:n]
            F = state[n:].reshape(n, q)
            return np.concatenate([sys.Y(p), (sys.jac_Y(p) @ F).ravel()])

        sol = _solve(rhs, np.concatenate([x, frame.ravel()]), (0.0, span), cfg,
                     dense=True)
        end = sol.y[:n, -1]
        F_end = _renorm_frame(sol.y[n:, -1].reshape(n, q))
    for c in rec.pending_in(min(lev_from, lev_to), max(lev_from, lev_to)):
        p = sol.sol(lev_from - c)[:n]
        rec.hits[c] = project_to_level(sys, p, c, iters=2)
    if rec.collect:
        for s in np.linspace(0.0, span, max(2, int(abs(span) / (rec.sample_ds or 0.05)) + 1)):
            rec.add_sample(lev_from - s, sol.sol(s)[:n])
    return project_to_level(sys, end, lev_to), F_end


def _chart_pass(sys, cfg, v: CriticalPoint, lev_c, eps, x, target_level, frame,
                rec: _Recorder, b):
    """Carry the state through the chart of v using the linearized model.

    Returns (point, frame, reached_level) or raises StuckOnStableManifold.
    On b == critical level with a converging trajectory, signals the
    continuous extension by returning v's coordinates.
    """
    z = v.to_chart(sys.model, x)
    k = v.index
    zu = z[:k]
    stick = STICK_TOL * max(1.0, float(np.linalg.norm(z)))
    rel_target = target_level - lev_c
    if float(np.linalg.norm(zu)) < stick:
        if abs(b - lev_c) <= LEVEL_TOL:
            rec.add_sample(lev_c, v.coords)
            return v.coords.copy(), frame, lev_c, True
        raise StuckOnStableManifold(
            f"trajectory converges to {v.id} above target level {b}", point=v)
    t_star = model_time_to_level(z, v.rates, k, rel_target)
    # record requested levels inside the band
    for c in rec.pending_in(min(target_level, lev_c + eps), lev_c + eps):
        tc = model_time_to_level(z, v.rates, k, c - lev_c)
        rec.hits[c] = x + v.chart_map @ (model_flow(z, v.rates, k, tc) - z)
    if rec.collect:
        for t in np.linspace(0.0, t_star, 6)[1:]:
            zt = model_flow(z, v.rates, k, t)
            rec.add_sample(lev_c + model_level(zt, k), x + v.chart_map @ (zt - z))
    z_end = model_flow(z, v.rates, k, t_star)
    point = x + v.chart_map @ (z_end - z)
    if frame is not None:
        frame = _renorm_frame(model_transport(v, t_star) @ frame)
    return point, frame, target_level, False


def level_transfer(sys: MorseSystem, x, b: float, ladder: Ladder,
                   cfg: FlowConfig = FlowConfig(), *, frame=None,
                   record_levels: Sequence[float] = (), collect: bool = False,
                   sample_ds: Optional[float] = None) -> TransferResult:
    """Transfer x from its level to level b along the rescaled flow.

    Passing a critical level is allowed when the trajectory either stays out
    of every standard chart there or traverses one transversally; a
    trajectory converging into a critical point raises StuckOnStableManifold
    unless b equals that critical value, in which case the continuous
    extension (Lemma-style limit) returns the critical point itself.
    Upward transfers (b > level of x) are supported in critical-value-free
    bands only.
    """
    x = np.asarray(x, dtype=float).copy()
    a = float(sys.h(x))
    rec = _Recorder(record_levels, collect, sample_ds)
    res = TransferResult(point=x, frame=frame)
    rec.add_sample(a, x)

    if abs(b - a) <= LEVEL_TOL:
        for c in rec.pending_in(min(a, b), max(a, b)):
            rec.hits[c] = x.copy()
        res.level_hits, res.samples = rec.hits, rec.samples
        return res

    if b > a:
        if ladder.critical_values_between(a - LEVEL_TOL, b + LEVEL_TOL):
            raise PreconditionViolation(
                "upward transfer across a critical level is not defined")
        pt, F = _segment_Y(sys, cfg, x, a, b, frame, rec)
        res.point, res.frame = pt, F
        res.level_hits, res.samples = rec.hits, rec.samples
        return res

    crossings = ladder.critical_values_between(b - LEVEL_TOL, a - LEVEL_TOL)
    cur, cur_level, F = x, a, frame
    for c in crossings:
        j = ladder.level_index(c)
        eps = ladder.levels[j].eps
        band_top, band_bot = c + eps, c - eps
        if b >= band_top - LEVEL_TOL:
            break
        if cur_level > band_top + LEVEL_TOL:
            cur, F = _segment_Y(sys, cfg, cur, cur_level, band_top, F, rec)
            cur_level = band_top
        # chart decision at the top of the band
        near = None
        for cp in ladder.points_at_level(j):
            if np.linalg.norm(cp.to_chart(sys.model, cur)) \
                    <= cfg.stop_radius * cp.chart_radius:
                near = cp
                break
        target = max(band_bot, b)
        if near is None:
            try:
                cur, F = _segment_Y(sys, cfg, cur, cur_level, target, F, rec)
            except StepUnderflow as exc:
                # stall inside the band: the orbit is converging into a
                # critical point that the entry test missed
                last = getattr(exc, "last_state", cur)[: sys.model.dim]
                for cp in ladder.points_at_level(j):
                    if np.linalg.norm(cp.to_chart(sys.model, last)) \
                            <= cp.chart_radius:
                        if abs(b - c) <= LEVEL_TOL:
                            res.point, res.frame, res.terminal = \
                                cp.coords.copy(), None, cp
                            res.level_hits, res.samples = rec.hits, rec.samples
                            return res
                        raise StuckOnStableManifold(
                            f"trajectory converges to {cp.id} above target "
                            f"level {b}", point=cp) from exc
                raise
            cur_level = target
        else:
            cur, F, cur_level, extended = _chart_pass(
                sys, cfg, near, c, eps, cur, target, F, rec, b)
            if extended:
                res.point, res.frame, res.terminal = cur, F, near
                res.level_hits, res.samples = rec.hits, rec.samples
                return res
            res.handoff_residual = max(res.handoff_residual,
                                       abs(float(sys.h(cur)) - cur_level))
            cur = project_to_level(sys, cur, cur_level)
        if cur_level <= b + LEVEL_TOL:
            break
    if cur_level > b + LEVEL_TOL:
        cur, F = _segment_Y(sys, cfg, cur, cur_level, b, F, rec)
    res.point, res.frame = cur, F
    res.level_hits, res.samples = rec.hits, rec.samples
    return res


def rescaled_time_of(sys: MorseSystem, x, s: float, cfg: FlowConfig,
                     num: int = 2001) -> float:
    """tau(s; x): original-flow time of the rescaled endpoint, by quadrature."""
    sol = _solve(lambda _s, p: sys.Y(p), x, (0.0, s), cfg, dense=True)
    ss = np.linspace(0.0, s, num)
    vals = np.array([-1.0 / sys.Xh(sol.sol(t)) for t in ss])
    return float(scipy.integrate.simpson(vals, x=ss))
