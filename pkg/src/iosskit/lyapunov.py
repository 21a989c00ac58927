"""Lyapunov candidates: pointwise dissipation checks and certificate transformations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .comparison import (ComparisonFn, compose, fmax, from_callable, identity, invert, table,
                         tabulate, zero)
from .dynamics import SystemModel, as_rows, fd_gradient
from .report import CheckReport, MarginTracker

__all__ = [
    "LyapCandidate",
    "verify_dissipation",
    "additive_from_gain_margin",
    "rescale_profile",
    "exp_decay_rescale",
    "hji_check",
    "ORIGIN_EXCLUSION",
]

ORIGIN_EXCLUSION = 1e-6


def _gain(g: ComparisonFn | None, r: float) -> float:
    return 0.0 if g is None else float(g(r))


@dataclass(frozen=True, eq=False)
class LyapCandidate:
    """Storage function with sandwich bounds and dissipation gains.

    Parameters
    ----------
    V : callable
        ``x -> V(x) >= 0``.
    grad : callable, optional
        ``x -> grad V(x)``; central differences when omitted.
    alpha1, alpha2 : ComparisonFn
        ``alpha1(|x|) <= V(x) <= alpha2(|x|)``.
    alpha : ComparisonFn, optional
        State decay gain; the dissipation bound is
        ``-alpha(|x|) + sigma1(|u|) + sigma2(|h(x)|)``.
    sigma1, sigma2 : ComparisonFn, optional
        Control and output gains (zero when absent).
    decay : {'state', 'value'}
        ``'value'`` replaces ``-alpha(|x|)`` by ``-V(x)`` (exponential-decay form).
    """

    V: Callable
    alpha1: ComparisonFn
    alpha2: ComparisonFn
    alpha: ComparisonFn | None = None
    sigma1: ComparisonFn | None = None
    sigma2: ComparisonFn | None = None
    grad: Callable | None = None
    decay: str = "state"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decay not in ("state", "value"):
            raise ValueError("decay must be 'state' or 'value'")
        if self.decay == "state" and self.alpha is None:
            raise ValueError("state-decay candidates need alpha")

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float).reshape(x.shape)
        return fd_gradient(lambda z: float(self.V(z)), x)

    def decay_term(self, x) -> float:
        if self.decay == "value":
            return float(self.V(x))
        return float(self.alpha(float(np.linalg.norm(x))))

    def bound(self, x, u_norm: float, y_norm: float) -> float:
        """Right side of the dissipation inequality."""
        return -self.decay_term(x) + _gain(self.sigma1, u_norm) + _gain(self.sigma2, y_norm)

    def check_sandwich(self, states: np.ndarray, rtol: float = 1e-9) -> CheckReport:
        """``alpha1(|x|) <= V(x) <= alpha2(|x|)`` on the given states."""
        tr = MarginTracker()
        for x in np.atleast_2d(states):
            r = float(np.linalg.norm(x))
            v = float(self.V(x))
            a1, a2 = float(self.alpha1(r)), float(self.alpha2(r))
            m = min(v - a1, a2 - v)
            tr.update(m, rtol * max(1.0, abs(v)), lambda: {"x": x.tolist(), "V": v, "alpha1": a1, "alpha2": a2})
        return tr.report({"states": int(len(np.atleast_2d(states)))})

    def check_gradient(self, states: np.ndarray, rtol: float = 1e-4) -> CheckReport:
        """Closed-form gradient against central differences."""
        tr = MarginTracker()
        for x in np.atleast_2d(states):
            g = self.gradient(x)
            gf = fd_gradient(lambda z: float(self.V(z)), x)
            err = float(np.linalg.norm(g - gf))
            scale = max(float(np.linalg.norm(gf)), 1e-8)
            tr.update(rtol * scale - err, 0.0, lambda: {"x": x.tolist(), "grad": g.tolist(), "fd": gf.tolist()})
        return tr.report({"states": int(len(np.atleast_2d(states)))})


def verify_dissipation(sys: SystemModel, cand: LyapCandidate, states, controls=None,
                       disturbances=None, atol: float = 1e-12, rtol: float = 1e-9,
                       exclude: float = ORIGIN_EXCLUSION) -> CheckReport:
    """Pointwise dissipation inequality over ``states x controls x disturbances``.

    Control-free and disturbance-free systems use the matching reduced
    product.  A sample violates the inequality when
    ``lhs > rhs + atol + rtol * (|lhs| + |rhs|)``; states with
    ``|x| < exclude`` are skipped.

    Raises
    ------
    ArithmeticError
        The gradient is not finite at a sample.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if sys.m_u == 0:
        controls = np.zeros((1, 0))
    elif controls is None:
        raise ValueError("controls must be sampled for a system with inputs")
    controls = as_rows(controls, sys.m_u)
    if disturbances is None:
        disturbances = sys.disturbance_samples
    disturbances = as_rows(disturbances, sys.m_w)
    unorm = np.linalg.norm(controls, axis=1)
    s1 = np.array([_gain(cand.sigma1, float(r)) for r in unorm])
    tr = MarginTracker()
    skipped = 0
    n_pts = 0
    for x in states:
        if np.linalg.norm(x) < exclude:
            skipped += 1
            continue
        g = cand.gradient(x)
        if not np.all(np.isfinite(g)):
            raise ArithmeticError(f"gradient evaluation failed at x = {x.tolist()}")
        base = -cand.decay_term(x) + _gain(cand.sigma2, float(np.linalg.norm(sys.output(x))))
        for w in disturbances:
            for j, u in enumerate(controls):
                lhs = float(g @ sys.rhs(x, u, w))
                rhs = base + s1[j]
                n_pts += 1
                tr.update(rhs - lhs, atol + rtol * (abs(lhs) + abs(rhs)),
                          lambda: {"x": x.tolist(), "u": u.tolist(), "w": w.tolist(), "lhs": lhs, "rhs": rhs})
    notes = [f"states with |x| < {exclude:g} excluded"] if skipped else []
    return tr.report({"points": n_pts, "states": int(len(states) - skipped), "skipped": skipped}, notes)


def _ball_samples(dim: int, radius_max: float, n_radii: int, n_dirs: int, rng) -> np.ndarray:
    if dim == 0:
        return np.zeros((1, 0))
    radii = np.linspace(0.0, radius_max, n_radii)
    if dim == 1:
        return np.concatenate([-radii[::-1], radii[1:]])[:, None]
    dirs = rng.normal(size=(n_dirs, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([dirs, np.eye(dim), -np.eye(dim)])
    return np.vstack([np.zeros((1, dim)), (radii[1:, None, None] * dirs[None]).reshape(-1, dim)])


def additive_from_gain_margin(sys: SystemModel, V: Callable, alpha1: ComparisonFn, alpha2: ComparisonFn,
                         alpha3: ComparisonFn, gamma: ComparisonFn | None, chi1: ComparisonFn,
                         r_grid: Sequence[float] | None = None, grad: Callable | None = None,
                         n_state: int = 201, n_control: int = 201, seed: int = 0,
                         return_report: bool = False):
    """Turn a gain-margin dissipation bound into the additive form.

    ``sigma1_hat(r)`` is the max of ``grad V . f(x, u, w) + alpha3(chi1(|u|))``
    over ``|u| <= r``, ``|x| <= chi1(r)`` and sampled ``w``, found on nested
    sample grids with one local refinement pass per radius.  ``sigma1`` is
    its positive part, upper-stepped between radius knots and made strictly
    increasing.  The result keeps ``alpha = alpha3`` and ``sigma2 = gamma``.

    Returns the candidate, or ``(candidate, info)`` when ``return_report``;
    ``info`` carries the flags ``no_control``, ``degenerate_chi1`` and
    ``extrapolation`` plus the sampled maxima.
    """
    rng = np.random.default_rng(seed)
    r = np.asarray(r_grid if r_grid is not None else np.linspace(0.0, 10.0, 41), dtype=float)
    if r[0] != 0.0:
        r = np.concatenate([[0.0], r])
    info = {"no_control": sys.m_u == 0, "degenerate_chi1": False, "extrapolation": False}
    cand_base = dict(V=V, alpha1=alpha1, alpha2=alpha2, alpha=alpha3, sigma2=gamma, grad=grad)
    if sys.m_u == 0:
        cand = LyapCandidate(sigma1=zero(), **cand_base)
        return (cand, info) if return_report else cand
    chi_max = float(chi1(float(r[-1])))
    if chi_max == 0.0:
        info["degenerate_chi1"] = True
        cand = LyapCandidate(sigma1=zero(), **cand_base)
        info["sigma_hat"] = [0.0] * r.size
        return (cand, info) if return_report else cand
    probe = LyapCandidate(alpha=alpha3, **{k: v for k, v in cand_base.items() if k != "alpha"})

    xs = _ball_samples(sys.n, chi_max, n_state, 64, rng)
    us = _ball_samples(sys.m_u, float(r[-1]), n_control, 64, rng)
    xn = np.linalg.norm(xs, axis=1)
    un = np.linalg.norm(us, axis=1)
    # chi1 is only class K: the preimage of |x| is the smallest knot radius reaching it
    chi_r = np.array([float(chi1(float(v))) for v in r])
    x_thr = r[np.minimum(np.searchsorted(chi_r, xn - 1e-12 * (1 + xn), side="left"), r.size - 1)]
    gvals = [probe.gradient(x) for x in xs]
    a3chi = np.array([float(alpha3(float(chi1(float(v))))) for v in un])

    def value(x, g, u, w):
        return float(g @ sys.rhs(x, u, w))

    best = np.full(r.size, -np.inf)
    arg = [None] * r.size
    for i, x in enumerate(xs):
        g = gvals[i]
        for j, u in enumerate(us):
            thr = max(un[j], x_thr[i])
            k0 = int(np.searchsorted(r, thr - 1e-12 * (1 + thr), side="left"))
            if k0 >= r.size:
                continue
            val = max(value(x, g, u, w) for w in sys.disturbance_samples) + a3chi[j]
            upd = val > best[k0:]
            if np.any(upd):
                idx = np.nonzero(upd)[0] + k0
                best[idx] = val
                for k in idx:
                    arg[k] = (x, u)
    # local refinement around each radius' argmax
    dx = chi_max / max(n_state - 1, 1)
    du = float(r[-1]) / max(n_control - 1, 1)
    for k in range(r.size):
        if arg[k] is None:
            continue
        x0, u0 = arg[k]
        for sx in np.linspace(-1.0, 1.0, 5):
            for su in np.linspace(-1.0, 1.0, 5):
                ex = x0 / np.linalg.norm(x0) if np.any(x0) else np.eye(sys.n)[0]
                eu = u0 / np.linalg.norm(u0) if np.any(u0) else np.eye(sys.m_u)[0]
                x = x0 + sx * dx * ex
                u = u0 + su * du * eu
                if np.linalg.norm(u) > r[k] or np.linalg.norm(x) > chi_r[k]:
                    continue
                g = probe.gradient(x)
                val = max(value(x, g, u, w) for w in sys.disturbance_samples) + float(alpha3(float(chi1(float(np.linalg.norm(u))))))
                best[k] = max(best[k], val)
    best = np.maximum.accumulate(np.maximum(best, 0.0))
    info["sigma_hat"] = best.tolist()
    if not np.any(best > 0):
        info["degenerate_chi1"] = True
        cand = LyapCandidate(sigma1=zero(), **cand_base)
        return (cand, info) if return_report else cand
    # upper step: value at r_k is the max over [0, r_{k+1}]
    stepped = np.append(best[1:], best[-1] + (best[-1] - best[-2] if r.size > 2 else best[-1]))
    vals = stepped[1:] + 1e-12 * (1.0 + stepped.max()) * r[1:]
    vals = np.maximum.accumulate(vals)
    vals = vals + 1e-12 * np.arange(1, vals.size + 1) * (1.0 + vals.max())
    slope_end = (best[-1] - best[-2]) / (r[-1] - r[-2]) if r.size > 2 else 0.0
    slope_prev = (best[-2] - best[-3]) / (r[-2] - r[-3]) if r.size > 3 else slope_end
    if slope_end > 1.5 * slope_prev and slope_end > 0:
        info["extrapolation"] = True
    sigma1 = table(r[1:], vals)
    cand = LyapCandidate(sigma1=sigma1, **cand_base)
    return (cand, info) if return_report else cand


def rescale_profile(alpha_v: ComparisonFn, lo: float = 1e-6, hi: float = 1e6, knots: int = 4001,
                    anchor: float = 1.0) -> ComparisonFn:
    """Solution of ``rho' = 2 rho / alpha_v`` with ``rho(anchor) = 1``.

    ``log rho(v) = int_anchor^v 2 / alpha_v(s) ds`` is integrated by the
    trapezoid rule in ``tau = log s`` (integrand ``2 s / alpha_v(s)``) on a
    log-spaced grid through the anchor, and stored as a log-log table.

    Raises
    ------
    OverflowError
        ``rho`` leaves the floating-point range inside ``[lo, hi]``; shrink
        the window or move the anchor.
    """
    if not lo < anchor < hi:
        raise ValueError("anchor must lie strictly inside [lo, hi]")
    tau = np.linspace(math.log(lo), math.log(hi), knots)
    tau = np.unique(np.append(tau, math.log(anchor)))
    s = np.exp(tau)
    a = np.asarray(alpha_v._eval(s), dtype=float)
    if np.any(a <= 0):
        raise ValueError("alpha must be positive away from 0")
    integrand = 2.0 * s / a
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(tau))])
    i0 = int(np.searchsorted(tau, math.log(anchor)))
    log_rho = cum - cum[i0]
    if np.any(log_rho > 700) or np.any(log_rho < -700):
        bad = s[np.argmax(np.abs(log_rho) > 700)]
        raise OverflowError(f"rho leaves the floating-point range near v = {bad:.3g}; adjust the anchor or grid")
    return table(s, np.exp(log_rho), loglog=True)


def exp_decay_rescale(cand: LyapCandidate, lo: float = 1e-6, hi: float = 1e6,
                      knots: int = 4001) -> LyapCandidate:
    """Rescale to ``W = rho o V`` with ``grad W . f <= -W + sigma1_hat + sigma2_hat``.

    With ``alpha_V = alpha o alpha2^{-1}`` the input bound reads
    ``V' <= -alpha_V(V) + sigma1 + sigma2``.  ``rho`` solves
    ``rho' alpha_V / 2 = rho``; where ``sigma1 + sigma2 <= alpha_V(V) / 2``
    this gives ``W' <= -W``, and elsewhere
    ``V <= alpha_V^{-1}(4 max sigma_i)`` bounds ``rho'``, giving
    ``sigma_i_hat(r) = 2 sigma_i(r) R(alpha_V^{-1}(4 sigma_i(r)))`` with
    ``R`` the running max of ``rho'``.
    """
    if cand.decay != "state":
        raise ValueError("candidate is already in exponential-decay form")
    alpha_v = compose(cand.alpha, invert(cand.alpha2))
    rho = rescale_profile(alpha_v, lo, hi, knots)
    s, rv = rho._table_arrays
    drho = np.zeros_like(rv)
    drho[1:] = 2.0 * rv[1:] / alpha_v._eval(s[1:])
    run = np.maximum.accumulate(drho)
    # R is nondecreasing; log-log between knots with linear continuation
    R = table(s[1:], _strict(run[1:]), loglog=True)
    alpha_v_inv = invert(alpha_v)

    def hat(sig: ComparisonFn | None, name: str) -> ComparisonFn | None:
        if sig is None or sig.tag == "zero":
            return sig

        def fn(r, sig=sig):
            v = float(sig(r))
            if v <= 0:
                return 0.0
            return 2.0 * v * float(R(float(alpha_v_inv(4.0 * v))))
        return from_callable(fn, name=name)

    def W(x):
        return float(rho(float(cand.V(x))))

    def gradW(x):
        v = float(cand.V(x))
        if v <= 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        return 2.0 * float(rho(v)) / float(alpha_v(v)) * cand.gradient(x)

    a2 = fmax(compose(rho, cand.alpha2), identity())
    return LyapCandidate(W, compose(rho, cand.alpha1), a2, None, hat(cand.sigma1, "sigma1_hat"),
                         hat(cand.sigma2, "sigma2_hat"), gradW, "value",
                         meta={"rho": rho, "alpha_v": alpha_v, "parent": cand})


def _strict(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float)
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] * (1 + 1e-12) + 1e-300
    return out


def hji_check(sys: SystemModel, V: Callable, sigma1: ComparisonFn | None, sigma2: ComparisonFn | None,
              states, grad: Callable | None = None, u_bound: float = 10.0, n_u: int = 10_000,
              atol: float = 1e-12) -> CheckReport:
    """Hamilton-Jacobi dissipation inequality for control-affine systems.

    The display ``grad V . g0 + 1/4 sum (grad V . g_i)^2 + sigma1(|x|) -
    sigma2(|h(x)|) <= 0`` is evaluated in closed form; independently, the
    inner maximization ``max_u grad V . f(x, u) - |u|^2`` is brute-forced on
    a uniform grid over ``[-u_bound, u_bound]^m`` (``n_u`` points in total)
    and compared with ``grad V . g0 + 1/4 sum (grad V . g_i)^2``.  The
    largest gap is reported as ``extras['max_gap']``.

    Raises
    ------
    ValueError
        The system carries no control-affine structure.
    """
    if not sys.is_affine:
        raise ValueError(f"system {sys.name!r} is not declared control-affine")
    g0, G = sys.affine
    states = np.atleast_2d(np.asarray(states, dtype=float))
    per_axis = max(2, int(round(n_u ** (1.0 / max(sys.m_u, 1)))))
    axis = np.linspace(-u_bound, u_bound, per_axis)
    ugrid = np.array(np.meshgrid(*([axis] * sys.m_u), indexing="ij")).reshape(sys.m_u, -1).T if sys.m_u else np.zeros((1, 0))
    tr = MarginTracker()
    max_gap = 0.0
    over = 0.0
    w0 = np.zeros(sys.m_w)
    for x in states:
        gv = np.asarray(grad(x), dtype=float) if grad is not None else fd_gradient(lambda z: float(V(z)), x)
        drift = float(gv @ np.asarray(g0(x), dtype=float))
        Gx = np.asarray(G(x), dtype=float).reshape(sys.n, sys.m_u)
        lg = gv @ Gx
        closed = drift + 0.25 * float(lg @ lg)
        display = closed + _gain(sigma1, float(np.linalg.norm(x))) - _gain(sigma2, float(np.linalg.norm(sys.output(x))))
        tr.update(-display, atol * (1 + abs(closed)), lambda: {"x": x.tolist(), "display": display})
        # brute force over the grid; f is spot-checked against the affine split
        for u in ugrid[:: max(1, len(ugrid) // 3)]:
            if not np.allclose(sys.rhs(x, u, w0), np.asarray(g0(x)) + Gx @ u, rtol=1e-9, atol=1e-12):
                raise ValueError(f"declared affine structure does not match f at x = {x.tolist()}")
        f_u = drift + ugrid @ lg
        brute = float(np.max(f_u - np.sum(ugrid ** 2, axis=1)))
        max_gap = max(max_gap, abs(brute - closed))
        over = max(over, brute - closed)
    return tr.report({"states": int(len(states)), "u_grid": int(len(ugrid))},
                     extras={"max_gap": max_gap, "brute_over_closed": over,
                             "u_spacing": float(axis[1] - axis[0]) if sys.m_u else 0.0})
