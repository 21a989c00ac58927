"""Scalar norm-estimator driven by the plant's input and output.

Given a storage function with ``grad W . f <= -W + sigma1(|u|) + sigma2(|y|)``,
the filter ``p' = -p + sigma1(|u|) + sigma2(|y|)`` satisfies
``W(x(t)) - p(t) <= e^{-t} (W(xi) - p(0))``, which turns ``p`` into an
upper estimate of ``|x|`` up to a decaying term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .checks import Battery, BatteryItem, EstimateSpec, check_estimate
from .comparison import ComparisonFn, KLFn, compose, invert, linear, scale, zero
from .dynamics import Signal, SystemModel, Trajectory, simulate
from .lyapunov import LyapCandidate
from .report import CheckReport, MarginTracker

__all__ = ["NormEstimator", "EstimatorTrace", "build_estimator", "run_coupled",
           "verify_gap_decay", "verify_estimator_implies_uioss", "uioss_spec"]


@dataclass(frozen=True, eq=False)
class NormEstimator:
    """``p' = -p + sigma1(|u|) + sigma2(|y|)`` with readout ``k(p, y) = p``.

    ``rho_est(r) = alpha1^{-1}(2 r)`` and
    ``beta_est(s, t) = alpha1^{-1}(4 e^{-t} alpha2(s))`` bound the state:
    ``|x(t)| <= beta_est(|xi| + |zeta|, t) + rho_est(|p(t)|)``.
    """

    cand: LyapCandidate
    sigma1: ComparisonFn
    sigma2: ComparisonFn
    rho_est: ComparisonFn
    beta_est: KLFn

    def drive(self, u_norm: float, y_norm: float) -> float:
        s = 0.0
        if self.sigma1.tag != "zero":
            s += float(self.sigma1(u_norm))
        if self.sigma2.tag != "zero":
            s += float(self.sigma2(y_norm))
        return s


def build_estimator(cand: LyapCandidate) -> NormEstimator:
    """Estimator for a candidate already in exponential-decay form.

    Raises
    ------
    ValueError
        The candidate's dissipation bound is not ``-W + ...``; rescale it first.
    """
    if cand.decay != "value":
        raise ValueError("candidate is not in exponential-decay form; run exp_decay_rescale first")
    a1_inv = invert(cand.alpha1)
    rho_est = compose(a1_inv, linear(2.0))
    beta_est = KLFn(compose(a1_inv, linear(4.0)), cand.alpha2, name="beta_est")
    return NormEstimator(cand, cand.sigma1 if cand.sigma1 is not None else zero(),
                         cand.sigma2 if cand.sigma2 is not None else zero(), rho_est, beta_est)


@dataclass(eq=False)
class EstimatorTrace:
    """Per-knot record of a coupled run."""

    times: np.ndarray
    x_norm: np.ndarray
    V: np.ndarray
    p: np.ndarray
    bound: np.ndarray
    step_errors: np.ndarray
    grad_norm: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.V - self.p

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "|x|", "V(x)", "p", "bound"])
            for row in zip(self.times, self.x_norm, self.V, self.p, self.bound):
                wr.writerow([format(float(v), ".17g") for v in row])


def run_coupled(sys: SystemModel, est: NormEstimator, x0, zeta0: float, u: Signal | None = None,
                w: Signal | None = None, horizon: float = 10.0, rtol: float = 1e-9,
                atol: float = 1e-12) -> tuple[Trajectory, EstimatorTrace]:
    """Integrate plant and estimator as one augmented state.

    A plant escape truncates both records at the escape knot.
    """
    n = sys.n
    f, h = sys.f, sys.h
    s1, s2 = est.sigma1, est.sigma2
    has1, has2 = s1.tag != "zero", s2.tag != "zero"

    def F(z, uu, ww):
        x = z[:n]
        dx = np.asarray(f(x, uu, ww), dtype=float)
        drive = 0.0
        if has1:
            drive += float(s1(float(np.linalg.norm(uu))))
        if has2:
            drive += float(s2(float(np.linalg.norm(np.asarray(h(x), dtype=float)))))
        return np.append(dx, drive - z[n])

    aug = SystemModel(n + 1, sys.m_u, sys.m_w, sys.p, F, lambda z: h(z[:n]), name=f"{sys.name}+estimator",
                      disturbance_samples=sys.disturbance_samples, check_zero=False)
    z0 = np.append(np.asarray(x0, dtype=float).reshape(n), float(zeta0))
    tr = simulate(aug, z0, u, w, horizon, rtol=rtol, atol=atol)
    xs = tr.states[:, :n]
    p = tr.states[:, n]
    plant = Trajectory(tr.times, xs, tr.outputs, tr.termination, tr.u, tr.w, tr.step_errors)
    V = np.array([float(est.cand.V(x)) for x in xs])
    gn = np.array([float(np.linalg.norm(est.cand.gradient(x))) for x in xs])
    s0 = float(np.linalg.norm(z0[:n])) + abs(float(zeta0))
    bound = np.asarray(est.beta_est(np.full(tr.times.size, s0), tr.times), dtype=float) + \
        np.asarray(est.rho_est(np.abs(p)), dtype=float)
    return plant, EstimatorTrace(tr.times, plant.x_norm, V, p, bound, tr.step_errors, gn)


def verify_gap_decay(sys: SystemModel, est: NormEstimator, battery, zeta0: float | None = 0.0,
                     err_factor: float = 10.0, floor: float = 1e-12, **sim) -> CheckReport:
    """Discrete gap decay ``g_{k+1} <= g_k e^{-dt} + tol`` along coupled runs.

    ``g = W(x) - p``.  The tolerance at each accepted step is ``err_factor``
    times the local error estimate propagated into ``g``
    (``(1 + |grad W|) * |err|``) plus ``floor * (1 + |W| + |p|)``.  Each run
    also checks the state bound ``|x| <= beta_est + rho_est(|p|)`` (reported
    in ``extras``).  ``zeta0=None`` starts the estimator at ``W(x0)``.
    """
    items = battery.generate(sys) if isinstance(battery, Battery) else list(battery)
    tracker = MarginTracker()
    bound_tracker = MarginTracker()
    steps = 0
    for item in items:
        z0 = float(est.cand.V(item.x0)) if zeta0 is None else float(zeta0)
        plant, tr = run_coupled(sys, est, item.x0, z0, item.u, item.w, item.horizon, **sim)
        g = tr.gap
        dt = np.diff(tr.times)
        pred = g[:-1] * np.exp(-dt)
        slack = pred - g[1:]
        tol = err_factor * (1.0 + tr.grad_norm[1:]) * tr.step_errors + floor * (1.0 + np.abs(tr.V[1:]) + np.abs(tr.p[1:]))
        steps += slack.size
        if slack.size:
            k = int(np.argmin(slack + tol))
            tracker.update(float(slack.min()), float("inf"), lambda: None)
            tracker.update(float(slack[k]), float(tol[k]),
                           lambda: {"item": item.to_dict(), "zeta0": z0, "t": float(tr.times[k + 1]),
                                    "gap_prev": float(g[k]), "gap": float(g[k + 1])})
        bslack = tr.bound - tr.x_norm
        kb = int(np.argmin(bslack))
        bound_tracker.update(float(bslack[kb]), 1e-9 * (1.0 + abs(float(tr.bound[kb]))),
                             lambda: {"item": item.to_dict(), "t": float(tr.times[kb])})
    rep = tracker.report({"runs": len(items), "steps": steps})
    bound_rep = bound_tracker.report({})
    rep.extras["state_bound"] = {"verdict": bound_rep.verdict, "worst_margin": bound_rep.worst_margin}
    return rep


def uioss_spec(est: NormEstimator, gain_scale: float = 1.0) -> EstimateSpec:
    """Composite estimate ``max{2 beta_est, 4 rho_est(sigma1), 4 rho_est(sigma2)}``.

    With zero initial estimator state ``p(t) <= sup sigma1(|u|) + sup
    sigma2(|y|)``, so the input and output gains are ``sigma1`` and
    ``sigma2``; ``gain_scale`` multiplies all three terms.
    """
    c = float(gain_scale)
    beta = est.beta_est.scaled(2.0 * c)
    g1 = scale(4.0 * c, compose(est.rho_est, est.sigma1)) if est.sigma1.tag != "zero" else zero()
    g2 = scale(4.0 * c, compose(est.rho_est, est.sigma2)) if est.sigma2.tag != "zero" else zero()
    return EstimateSpec("UIOSS", {"beta": beta, "gamma1": g1, "gamma2": g2})


def verify_estimator_implies_uioss(sys: SystemModel, est: NormEstimator, battery,
                                   gain_scale: float = 1.0, **kw) -> CheckReport:
    """Check the UIOSS estimate assembled from the estimator bounds."""
    return check_estimate(sys, uioss_spec(est, gain_scale), battery, **kw)
