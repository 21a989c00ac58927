"""System models, input signals and adaptive integration with escape detection.

The integrator is an embedded Dormand-Prince 5(4) pair with a standard
step-size controller.  It integrates between signal switching times so that
piecewise-constant inputs never straddle a step, declares ``FiniteEscape``
once an accepted state exceeds the blowup threshold, and raises
:class:`StiffnessError` when the step size underflows on a bounded state.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .comparison import ComparisonFn

__all__ = [
    "SystemModel",
    "Signal",
    "Trajectory",
    "Termination",
    "StiffnessError",
    "simulate",
    "close_robust_loop",
    "slow_system",
    "default_kappa",
    "smooth_step",
    "fd_gradient",
    "as_rows",
    "default_disturbance_samples",
    "linear_model",
    "reparametrize",
]

BLOWUP = 1e9


class StiffnessError(RuntimeError):
    """Step size underflowed while the state stayed bounded."""


def default_disturbance_samples(m_w: int) -> np.ndarray:
    """Vertices, origin and edge midpoints of ``[-1, 1]^m_w``.

    Edge midpoints are the points with exactly one zero coordinate and the
    remaining coordinates at ``+-1``.
    """
    if m_w == 0:
        return np.zeros((1, 0))
    pts = {tuple(v) for v in itertools.product((-1.0, 1.0), repeat=m_w)}
    pts.add((0.0,) * m_w)
    for i in range(m_w):
        for rest in itertools.product((-1.0, 1.0), repeat=m_w - 1):
            p = list(rest)
            p.insert(i, 0.0)
            pts.add(tuple(p))
    return np.array(sorted(pts))


def as_rows(a, dim: int) -> np.ndarray:
    """Reshape samples to ``(k, dim)``; zero-dimensional spaces get one empty row."""
    if dim == 0:
        return np.zeros((1, 0))
    return np.asarray(a, dtype=float).reshape(-1, dim)


def fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central finite-difference gradient with step ``1e-5 (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    h = 1e-5 * (1.0 + np.linalg.norm(x))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def _psi(t: float) -> float:
    return math.exp(-1.0 / t) if t > 0 else 0.0


def smooth_step(s: float, lo: float, hi: float) -> float:
    """C-infinity step: 0 for ``s <= lo``, 1 for ``s >= hi``."""
    a = _psi(s - lo)
    b = _psi(hi - s)
    return a / (a + b) if a + b > 0 else float(s >= hi)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Nonlinear system ``x' = f(x, u, w)``, ``y = h(x)``.

    Parameters
    ----------
    n, m_u, m_w, p : int
        State, control, disturbance and output dimensions.
    f : callable
        ``f(x, u, w) -> (n,)`` array; ``u`` and ``w`` are 1-D arrays of
        length ``m_u`` and ``m_w`` (possibly empty).
    h : callable
        ``h(x) -> (p,)`` array.
    name : str
        Fixture identity.
    disturbance_samples : ndarray, optional
        Finite subset of ``[-1, 1]^m_w``; defaults to
        :func:`default_disturbance_samples`.
    affine : tuple, optional
        ``(g0, G)`` with ``f(x, u, w) = g0(x) + G(x) u`` for control-affine
        systems; ``G(x)`` is ``(n, m_u)``.
    check_zero : bool
        Verify ``f(0, 0, w) = 0`` and ``h(0) = 0`` at construction.
    meta : dict
        Free-form provenance (linear matrices, parent system, ...).
    """

    n: int
    m_u: int
    m_w: int
    p: int
    f: Callable
    h: Callable
    name: str = "system"
    disturbance_samples: np.ndarray | None = None
    affine: tuple | None = None
    check_zero: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in ("n", "m_u", "m_w", "p"):
            if int(getattr(self, k)) < 0:
                raise ValueError(f"{k} must be nonnegative")
        if self.n < 1:
            raise ValueError("state dimension must be at least 1")
        if self.disturbance_samples is None:
            object.__setattr__(self, "disturbance_samples", default_disturbance_samples(self.m_w))
        ds = np.atleast_2d(np.asarray(self.disturbance_samples, dtype=float))
        if ds.shape[1] != self.m_w:
            raise ValueError("disturbance samples have the wrong dimension")
        if np.any(np.abs(ds) > 1.0):
            raise ValueError("disturbance samples must lie in [-1, 1]^m_w")
        object.__setattr__(self, "disturbance_samples", ds)
        if self.check_zero:
            z = np.zeros(self.n)
            u0 = np.zeros(self.m_u)
            for w in ds:
                fz = np.asarray(self.f(z, u0, w), dtype=float)
                if np.max(np.abs(fz), initial=0.0) > 1e-12:
                    raise ValueError(f"{self.name}: f(0, 0, w) != 0 for w = {w.tolist()}")
            hz = np.asarray(self.h(z), dtype=float)
            if np.max(np.abs(hz), initial=0.0) > 1e-12:
                raise ValueError(f"{self.name}: h(0) != 0")

    @property
    def is_affine(self) -> bool:
        return self.affine is not None

    def output(self, x) -> np.ndarray:
        return np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float).reshape(self.p)

    def rhs(self, x, u=None, w=None) -> np.ndarray:
        u = np.zeros(self.m_u) if u is None else np.asarray(u, dtype=float).reshape(self.m_u)
        w = np.zeros(self.m_w) if w is None else np.asarray(w, dtype=float).reshape(self.m_w)
        return np.asarray(self.f(np.asarray(x, dtype=float), u, w), dtype=float).reshape(self.n)


def linear_model(A, B=None, C=None, name: str = "linear") -> SystemModel:
    """Linear time-invariant model ``x' = Ax + Bu``, ``y = Cx`` (no disturbance)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=float).reshape(n, -1)
    C = np.zeros((0, n)) if C is None else np.asarray(C, dtype=float).reshape(-1, n)
    if A.shape != (n, n):
        raise ValueError("A must be square")

    def f(x, u, w):
        return A @ x + B @ u

    def h(x):
        return C @ x

    return SystemModel(n, B.shape[1], 0, C.shape[0], f, h, name=name,
                       affine=(lambda x: A @ x, lambda x: B),
                       meta={"A": A, "B": B, "C": C})


# -- signals ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Signal:
    """Control or disturbance signal on ``[0, inf)``.

    ``kind`` is ``constant``, ``piecewise`` (right-continuous, value
    ``values[i]`` on ``[knots[i], knots[i+1])`` with ``knots[0] = 0``) or
    ``closure`` (an arbitrary function of time).
    """

    kind: str
    dim: int
    values: np.ndarray | None = None
    knots: np.ndarray | None = None
    fn: Callable | None = None
    bounded: bool = False

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise", "closure"):
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.kind != "closure":
            if self.dim == 0:
                rows = 1 if self.knots is None else len(np.ravel(self.knots))
                vals = np.zeros((rows, 0))
            else:
                vals = np.asarray(self.values, dtype=float).reshape(-1, self.dim)
            object.__setattr__(self, "values", vals)
            if self.bounded and np.any(np.abs(vals) > 1.0):
                raise ValueError("disturbance values must lie in [-1, 1]^m_w")
        if self.kind == "piecewise":
            k = np.asarray(self.knots, dtype=float).ravel()
            if k.size != self.values.shape[0] or k[0] != 0.0 or np.any(np.diff(k) <= 0):
                raise ValueError("piecewise knots must start at 0, increase, and match the values")
            object.__setattr__(self, "knots", k)

    @classmethod
    def zero(cls, dim: int) -> "Signal":
        return cls("constant", dim, np.zeros((1, dim)))

    @classmethod
    def constant(cls, value, bounded: bool = False) -> "Signal":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls("constant", v.size, v.reshape(1, -1), bounded=bounded)

    @classmethod
    def piecewise(cls, knots, values, bounded: bool = False) -> "Signal":
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls("piecewise", vals.shape[1], vals, np.asarray(knots, dtype=float), bounded=bounded)

    @classmethod
    def closure(cls, fn: Callable[[float], Sequence[float]], dim: int) -> "Signal":
        return cls("closure", dim, fn=fn)

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self.values[0]
        if self.kind == "piecewise":
            i = int(np.searchsorted(self.knots, t, side="right")) - 1
            return self.values[max(i, 0)]
        return np.asarray(self.fn(t), dtype=float).reshape(self.dim)

    def breakpoints(self, horizon: float) -> list[float]:
        if self.kind != "piecewise":
            return []
        return [float(k) for k in self.knots[1:] if k < horizon]

    def norms(self, times: np.ndarray) -> np.ndarray:
        """``|s(t)|`` at the given times (right-continuous values)."""
        if self.dim == 0:
            return np.zeros(len(times))
        return np.array([np.linalg.norm(self(t)) for t in times])

    def running_sup(self, times: np.ndarray) -> np.ndarray:
        """Essential sup of ``|s|`` over ``[0, t]`` at each time."""
        times = np.asarray(times, dtype=float)
        if self.dim == 0:
            return np.zeros(times.size)
        if self.kind == "constant":
            return np.full(times.size, float(np.linalg.norm(self.values[0])))
        if self.kind == "piecewise":
            mags = np.linalg.norm(self.values, axis=1)
            run = np.maximum.accumulate(mags)
            # pieces that start strictly before t (piece 0 always counts)
            idx = np.maximum(np.searchsorted(self.knots, times, side="left") - 1, 0)
            return run[idx]
        return np.maximum.accumulate(self.norms(times))

    def running_integral(self, times: np.ndarray, gain: ComparisonFn | Callable) -> np.ndarray:
        """``int_0^t gain(|s(r)|) dr`` at each time."""
        times = np.asarray(times, dtype=float)
        g = gain if callable(gain) else gain
        if self.dim == 0:
            return np.zeros(times.size)
        if self.kind == "constant":
            return float(g(float(np.linalg.norm(self.values[0])))) * times
        if self.kind == "piecewise":
            mags = np.array([float(g(float(m))) for m in np.linalg.norm(self.values, axis=1)])
            k = self.knots
            seg = np.diff(k) * mags[:-1]
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            idx = np.maximum(np.searchsorted(k, times, side="right") - 1, 0)
            return cum[idx] + mags[idx] * (times - k[idx])
        vals = np.array([float(g(float(m))) for m in self.norms(times)])
        return _cumtrapz(vals, times)

    def to_dict(self) -> dict:
        if self.kind == "closure":
            raise TypeError("closure signals cannot be serialized")
        d = {"kind": self.kind, "dim": self.dim, "values": self.values.tolist()}
        if self.kind == "piecewise":
            d["knots"] = self.knots.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, bounded: bool = False) -> "Signal":
        kind = d["kind"]
        if kind == "constant":
            vals = np.asarray(d["values"], dtype=float).reshape(1, -1)
            return cls("constant", int(d.get("dim", vals.shape[1])), vals, bounded=bounded)
        if kind == "piecewise":
            return cls.piecewise(d["knots"], d["values"], bounded=bounded)
        raise ValueError(f"cannot deserialize signal kind {kind!r}")


def _cumtrapz(vals: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.zeros(len(times))
    if len(times) > 1:
        out[1:] = np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(times))
    return out


# -- trajectories -----------------------------------------------------------

@dataclass(frozen=True)
class Termination:
    """Why a simulation stopped: ``HorizonReached``, ``FiniteEscape`` or ``EnteredSet``."""

    kind: str
    t: float
    set_id: str | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "t": float(self.t)}
        if self.set_id is not None:
            d["set_id"] = self.set_id
        return d


@dataclass(eq=False)
class Trajectory:
    """Sampled solution with outputs and the inputs that produced it."""

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    termination: Termination
    u: Signal
    w: Signal
    step_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def x_norm(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    @property
    def y_norm(self) -> np.ndarray:
        if self.outputs.shape[1] == 0:
            return np.zeros(len(self.times))
        return np.linalg.norm(self.outputs, axis=1)

    @property
    def escaped(self) -> bool:
        return self.termination.kind == "FiniteEscape"

    def integral(self, values: np.ndarray) -> np.ndarray:
        """Running trapezoid integral of per-knot ``values``."""
        return _cumtrapz(np.asarray(values, dtype=float), self.times)

    def to_csv(self, path) -> None:
        n, p = self.states.shape[1], self.outputs.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(p)] + ["|x|", "|y|"]
        xn, yn = self.x_norm, self.y_norm
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for k, t in enumerate(self.times):
                row = [t, *self.states[k], *self.outputs[k], xn[k], yn[k]]
                wr.writerow([format(float(v), ".17g") for v in row])


# -- Dormand-Prince 5(4) ----------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _dp_step(rhs, t, x, h, k1):
    k = [k1]
    for i in range(1, 7):
        xi = x + h * sum(a * kj for a, kj in zip(_A[i], k) if a != 0.0)
        k.append(rhs(t + _C[i] * h, xi))
    x_new = x + h * sum(b * kj for b, kj in zip(_B5, k) if b != 0.0)
    err = h * sum(e * kj for e, kj in zip(_E, k))
    return x_new, err, k[6]


def simulate(sys: SystemModel, x0, u: Signal | None = None, w: Signal | None = None,
             horizon: float = 10.0, *, rtol: float = 1e-8, atol: float = 1e-10,
             blowup: float = BLOWUP, stop: Callable[[np.ndarray], bool] | None = None,
             stop_id: str = "target", t_eval: Sequence[float] | None = None,
             h_min: float = 1e-24, max_steps: int = 2_000_000) -> Trajectory:
    """Integrate ``sys`` from ``x0`` under inputs ``u``, ``w`` up to ``horizon``.

    Parameters
    ----------
    rtol, atol : float
        Local error tolerances of the step controller.
    blowup : float
        ``FiniteEscape`` is declared once an accepted state exceeds this norm.
    stop : callable, optional
        Set-membership test; integration ends with ``EnteredSet`` at the first
        accepted knot inside the set, located by bisection on the step.
    t_eval : sequence of float, optional
        Times forced onto the knot grid.

    Raises
    ------
    StiffnessError
        The step size fell below ``h_min`` while the state stayed below the
        blowup threshold.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    x = np.asarray(x0, dtype=float).reshape(sys.n).copy()
    u = Signal.zero(sys.m_u) if u is None else u
    w = Signal.zero(sys.m_w) if w is None else w
    if u.dim != sys.m_u or w.dim != sys.m_w:
        raise ValueError("signal dimensions do not match the system")

    stops = sorted({*u.breakpoints(horizon), *w.breakpoints(horizon),
                    *(float(t) for t in (t_eval or ()) if 0 < t < horizon), float(horizon)})
    frozen = u.kind != "closure" and w.kind != "closure"

    times, states, errs = [0.0], [x.copy()], []
    t = 0.0
    seg_start = 0.0
    termination = None
    f = sys.f

    def make_rhs(t_seg):
        if frozen:
            uv, wv = u(t_seg), w(t_seg)
            return lambda tt, xx: np.asarray(f(xx, uv, wv), dtype=float)
        return lambda tt, xx: np.asarray(f(xx, u(tt), w(tt)), dtype=float)

    k1 = None
    h = None
    steps = 0
    for t_end in stops:
        rhs = make_rhs(seg_start)
        k1 = rhs(t, x)
        if h is None:
            scale = atol + rtol * np.abs(x)
            d0 = np.linalg.norm(x / scale)
            d1 = np.linalg.norm(k1 / scale)
            h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
            h = min(h, t_end - t)
        while t < t_end:
            steps += 1
            if steps > max_steps:
                raise StiffnessError(f"step budget exhausted at t={t:.6g}")
            last = t + h >= t_end
            hh = t_end - t if last else h
            with np.errstate(over="ignore", invalid="ignore"):
                x_new, err, k7 = _dp_step(rhs, t, x, hh, k1)
            if not np.all(np.isfinite(x_new)) or not np.all(np.isfinite(err)):
                h = 0.25 * hh
                if h < h_min:
                    termination = Termination("FiniteEscape", t)
                    break
                continue
            sc = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
            en = math.sqrt(float(np.mean((err / sc) ** 2)))
            if en <= 1.0:
                t_new = t_end if last else t + hh
                if stop is not None and stop(x_new):
                    t_hit, x_hit = _bisect_entry(rhs, t, x, hh, k1, stop)
                    _record(times, states, errs, t_hit, x_hit, float(np.linalg.norm(err)))
                    termination = Termination("EnteredSet", t_hit, stop_id)
                    break
                _record(times, states, errs, t_new, x_new, float(np.linalg.norm(err)))
                t, x, k1 = t_new, x_new, k7
                if float(np.linalg.norm(x)) > blowup:
                    termination = Termination("FiniteEscape", t)
                    break
                fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
                if not last:
                    h = hh * fac
            else:
                h = hh * max(0.2, 0.9 * en ** -0.2)
                if h < h_min:
                    if float(np.linalg.norm(x)) > math.sqrt(blowup):
                        termination = Termination("FiniteEscape", t)
                        break
                    raise StiffnessError(f"stiffness: step size underflow at t={t:.6g}, |x|={np.linalg.norm(x):.3g}")
        if termination is not None:
            break
        seg_start = t_end
    if termination is None:
        termination = Termination("HorizonReached", float(horizon))

    states_arr = np.array(states)
    outputs = np.array([sys.output(s) for s in states_arr]).reshape(len(states_arr), sys.p)
    return Trajectory(np.array(times), states_arr, outputs, termination, u, w, np.array(errs))


def _record(times, states, errs, t, x, e):
    if t > times[-1]:
        times.append(t)
        states.append(x.copy())
        errs.append(e)
    else:
        # time resolution exhausted next to an escape: keep the newest state
        states[-1] = x.copy()
        errs[-1] = max(errs[-1], e) if errs else e


def _bisect_entry(rhs, t, x, h, k1, stop, iters: int = 40):
    lo, hi = 0.0, h
    x_hi, _, _ = _dp_step(rhs, t, x, h, k1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        x_mid, _, _ = _dp_step(rhs, t, x, mid, k1)
        if stop(x_mid):
            hi, x_hi = mid, x_mid
        else:
            lo = mid
    return t + hi, x_hi


# -- model transformations --------------------------------------------------

def close_robust_loop(sys: SystemModel, phi: ComparisonFn) -> SystemModel:
    """Disturbance-only system ``g(x, [d_u, w]) = f(x, d_u phi(|x|), w)``."""
    m_u, m_w = sys.m_u, sys.m_w
    f = sys.f

    def g(x, u, d):
        r = float(np.linalg.norm(x))
        return f(x, np.asarray(d[:m_u]) * float(phi(r)), d[m_u:])

    return SystemModel(sys.n, 0, m_u + m_w, sys.p, g, sys.h, name=f"{sys.name}+margin",
                       check_zero=sys.check_zero, meta={"parent": sys, "phi": phi})


def slow_system(sys: SystemModel, kappa: Callable[[np.ndarray], float]) -> SystemModel:
    """Reparametrized system ``f / (1 + |f|^2 + kappa(x))`` with speed at most 1/2.

    Raises
    ------
    ValueError
        ``sys`` has controls, or ``kappa`` is negative at an evaluated state.
    """
    if sys.m_u != 0:
        raise ValueError("slow_system expects a disturbance-only system")
    f = sys.f

    def fhat(x, u, w):
        v = np.asarray(f(x, u, w), dtype=float)
        k = float(kappa(x))
        if k < 0:
            raise ValueError(f"kappa is negative ({k!r}) at x = {np.asarray(x).tolist()}")
        return v / (1.0 + float(v @ v) + k)

    return SystemModel(sys.n, 0, sys.m_w, sys.p, fhat, sys.h, name=f"{sys.name}+slowed",
                       disturbance_samples=sys.disturbance_samples, check_zero=sys.check_zero,
                       meta={"parent": sys, "kappa": kappa})


def default_kappa(sys: SystemModel, rho: ComparisonFn, safety: float = 1.1) -> Callable[[np.ndarray], float]:
    """Speed penalty dominating ``2 max_d |grad(rho o |h|) . f|`` where ``|h| >= 1``.

    The bound is multiplied by ``safety`` and blended smoothly to zero where
    ``|h| < 1/2``, where ``rho o |h|`` may fail to be differentiable.
    """
    ds = sys.disturbance_samples
    u0 = np.zeros(sys.m_u)

    def rho_h(x):
        return float(rho(float(np.linalg.norm(sys.output(x)))))

    def kappa(x):
        x = np.asarray(x, dtype=float)
        hn = float(np.linalg.norm(sys.output(x)))
        blend = smooth_step(hn, 0.5, 1.0)
        if blend == 0.0:
            return 0.0
        g = fd_gradient(rho_h, x)
        m = max(abs(float(g @ np.asarray(sys.f(x, u0, d), dtype=float))) for d in ds)
        return safety * 2.0 * m * blend

    return kappa


def reparametrize(sys: SystemModel, kappa: Callable[[np.ndarray], float], x0, w: Signal | None = None,
                  horizon: float = 1.0, **opts) -> tuple[Trajectory, np.ndarray]:
    """Fast trajectory together with the clock ``sigma(t) = int (1 + |f|^2 + kappa)``.

    The clock is integrated as an extra state so it stays accurate up to a
    finite escape.
    """
    f = sys.f

    def aug(z, u, d):
        x = z[:-1]
        v = np.asarray(f(x, u, d), dtype=float)
        return np.append(v, 1.0 + float(v @ v) + float(kappa(x)))

    big = SystemModel(sys.n + 1, sys.m_u, sys.m_w, sys.p, aug, lambda z: sys.h(z[:-1]),
                      name=f"{sys.name}+clock", disturbance_samples=sys.disturbance_samples,
                      check_zero=False)
    tr = simulate(big, np.append(np.asarray(x0, dtype=float), 0.0), None, w, horizon,
                  blowup=opts.pop("blowup", BLOWUP), **opts)
    fast = Trajectory(tr.times, tr.states[:, :-1], tr.outputs, tr.termination, tr.u, tr.w, tr.step_errors)
    return fast, tr.states[:, -1]
