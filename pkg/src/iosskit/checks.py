"""Sampling-based verification and falsification of trajectory estimates.

A check simulates a battery of initial states and inputs, evaluates one
estimate at every knot of every trajectory and reduces the slack
``rhs - lhs`` by minimum.  A passing check only means the inequality held on
the samples; a failing one comes with a witness that can be replayed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .comparison import ComparisonFn, KLFn, compose, fmax, identity, invert, linear, scale
from .dynamics import SystemModel, Signal, Trajectory, simulate
from .report import CheckReport, MarginTracker

__all__ = [
    "KINDS",
    "EstimateSpec",
    "Battery",
    "BatteryItem",
    "check_estimate",
    "check_iiuoss",
    "check_incremental",
    "replay_witness",
    "gasmo_margin_from_uoss",
    "stability_margin",
    "evaluate_estimate",
]

# required gain slots per estimate kind; "c" is a nonnegative constant
KINDS = {
    "UIOSS": ("beta", "gamma1", "gamma2"),
    "UOSS": ("beta", "gamma2"),
    "GASMO": ("lam", "rho"),
    "iiUOSS": ("chi", "kappa", "gamma"),
    "UO": ("rho1", "chi1", "chi2", "c"),
    "UiIOSS": ("beta", "gamma", "gamma1", "gamma2"),
    "UiIOSS-sum": ("alpha_x", "beta", "gamma1", "gamma2"),
    "U(iI)OSS": ("alpha_x", "beta", "gamma1", "gamma2"),
    "dUIOSS": ("beta", "gamma1", "gamma2"),
}
_KL_SLOTS = {"beta", "lam"}
_OPTIONAL_FOR_NO_INPUT = {"gamma1"}


@dataclass(frozen=True, eq=False)
class EstimateSpec:
    """An estimate kind together with its comparison functions.

    Gains named by :data:`KINDS` must be present; ``beta``/``lam`` are
    :class:`KLFn`, ``c`` is a float and every other slot a
    :class:`ComparisonFn`.  ``gamma1`` may be omitted for systems without
    controls.
    """

    kind: str
    gains: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimate kind {self.kind!r}; expected one of {sorted(KINDS)}")
        for slot in KINDS[self.kind]:
            if slot not in self.gains:
                if slot in _OPTIONAL_FOR_NO_INPUT:
                    continue
                raise ValueError(f"{self.kind} estimate needs gain {slot!r}")
            g = self.gains[slot]
            if slot == "c":
                if not float(g) >= 0:
                    raise ValueError("constant c must be nonnegative")
            elif slot in _KL_SLOTS:
                if not isinstance(g, KLFn):
                    raise TypeError(f"gain {slot!r} must be a KLFn")
            elif not isinstance(g, ComparisonFn):
                raise TypeError(f"gain {slot!r} must be a ComparisonFn")
        if self.kind == "iiUOSS" and not self.gains["chi"].unbounded:
            raise ValueError("chi must be of class K-infinity")

    def g(self, slot: str):
        return self.gains.get(slot)

    def inflated(self, factor: float) -> "EstimateSpec":
        """Every gain multiplied by ``factor >= 1`` (pointwise larger)."""
        out = {}
        for k, v in self.gains.items():
            if k == "c":
                out[k] = float(v) * factor
            elif isinstance(v, KLFn):
                out[k] = v.scaled(factor)
            elif k == "rho1":
                # a larger rho1 widens the premise, which is not an inflation
                out[k] = v
            else:
                out[k] = scale(factor, v) if v.tag != "zero" else v
        return EstimateSpec(self.kind, out)


# -- batteries --------------------------------------------------------------

@dataclass(frozen=True)
class BatteryItem:
    x0: np.ndarray
    u: Signal
    w: Signal
    horizon: float
    x0b: np.ndarray | None = None
    ub: Signal | None = None

    def to_dict(self) -> dict:
        d = {"x0": np.asarray(self.x0).tolist(), "u": self.u.to_dict(), "w": self.w.to_dict(),
             "horizon": float(self.horizon)}
        if self.x0b is not None:
            d["x0b"] = np.asarray(self.x0b).tolist()
            d["ub"] = self.ub.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BatteryItem":
        x0b = np.asarray(d["x0b"], dtype=float) if "x0b" in d else None
        ub = Signal.from_dict(d["ub"]) if "ub" in d else None
        return cls(np.asarray(d["x0"], dtype=float), Signal.from_dict(d["u"]),
                   Signal.from_dict(d["w"], bounded=True), float(d["horizon"]), x0b, ub)


@dataclass(frozen=True)
class Battery:
    """Seeded sampling plan.

    Initial norms are log-spaced over ``[r_min, r_max]`` (one per run) with
    random directions; controls are piecewise
    constant with 1 to ``max_switches`` switches at random times and values
    of norm at most ``u_max``; disturbances switch between the system's
    disturbance samples.  ``extra_x0`` are appended with zero inputs.
    """

    n_runs: int = 50
    r_min: float = 0.1
    r_max: float = 10.0
    horizon: float = 10.0
    u_max: float = 1.0
    max_switches: int = 4
    seed: int = 0
    paired: bool = False
    extra_x0: tuple = ()
    zero_input_fraction: float = 0.25

    def generate(self, sys: SystemModel) -> list[BatteryItem]:
        rng = np.random.default_rng(self.seed)
        radii = np.geomspace(self.r_min, self.r_max, max(self.n_runs, 1))
        items = []
        for k in range(self.n_runs):
            x0 = _direction(rng, sys.n) * radii[k]
            u = self._control(rng, sys.m_u)
            w = self._disturbance(rng, sys)
            if self.paired:
                x0b = _direction(rng, sys.n) * rng.choice(radii)
                ub = self._control(rng, sys.m_u)
                items.append(BatteryItem(x0, u, w, self.horizon, x0b, ub))
            else:
                items.append(BatteryItem(x0, u, w, self.horizon))
        for x0 in self.extra_x0:
            x0 = np.asarray(x0, dtype=float).reshape(sys.n)
            z, zw = Signal.zero(sys.m_u), Signal.zero(sys.m_w)
            items.append(BatteryItem(x0, z, zw, self.horizon, x0.copy() if self.paired else None,
                                     z if self.paired else None))
        return items

    def _switch_times(self, rng) -> np.ndarray:
        k = int(rng.integers(1, self.max_switches + 1))
        return np.concatenate([[0.0], np.sort(rng.uniform(0.0, self.horizon, k))])

    def _control(self, rng, m: int) -> Signal:
        if m == 0:
            return Signal.zero(0)
        if rng.uniform() < self.zero_input_fraction:
            return Signal.zero(m)
        knots = self._switch_times(rng)
        vals = rng.normal(size=(knots.size, m))
        vals *= (self.u_max * rng.uniform(0.0, 1.0, (knots.size, 1))) / np.maximum(
            np.linalg.norm(vals, axis=1, keepdims=True), 1e-300)
        return Signal.piecewise(_dedupe(knots), vals)

    def _disturbance(self, rng, sys: SystemModel) -> Signal:
        if sys.m_w == 0:
            return Signal.zero(0)
        knots = self._switch_times(rng)
        idx = rng.integers(0, len(sys.disturbance_samples), knots.size)
        return Signal.piecewise(_dedupe(knots), sys.disturbance_samples[idx], bounded=True)


def _dedupe(knots: np.ndarray) -> np.ndarray:
    out = [knots[0]]
    for k in knots[1:]:
        out.append(max(k, np.nextafter(out[-1], np.inf)))
    return np.array(out)


def _direction(rng, n: int) -> np.ndarray:
    if n == 1:
        return np.array([1.0 if rng.uniform() < 0.5 else -1.0])
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


# -- estimate evaluation ----------------------------------------------------

def _ev(g: ComparisonFn | None, v: np.ndarray) -> np.ndarray:
    if g is None or g.tag == "zero":
        return np.zeros_like(v)
    return np.asarray(g(v), dtype=float)


def _running_sup(v: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(v) if v.size else v


def _latched(premise: np.ndarray) -> np.ndarray:
    """True at knot k iff ``premise`` held at every knot up to k."""
    return np.logical_and.accumulate(premise)


def evaluate_estimate(sys: SystemModel, spec: EstimateSpec, tr: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(lhs, rhs, active)`` of the estimate at every knot of ``tr``.

    ``active`` masks knots where the inequality is enforced (premise of the
    implication forms, everything otherwise).
    """
    t = tr.times
    xn = tr.x_norm
    yn = tr.y_norm
    r0 = float(xn[0])
    g = spec.gains
    active = np.ones(t.size, dtype=bool)
    kind = spec.kind
    has_u = sys.m_u > 0
    has_y = sys.p > 0
    if kind in ("UIOSS", "UOSS"):
        lhs = xn
        parts = [np.asarray(g["beta"](np.full_like(t, r0), t), dtype=float)]
        if kind == "UIOSS" and has_u:
            parts.append(_ev(g.get("gamma1"), tr.u.running_sup(t)))
        if has_y:
            parts.append(_ev(g["gamma2"], _running_sup(yn)))
        rhs = np.maximum.reduce(parts)
    elif kind == "GASMO":
        lhs = xn
        rhs = np.asarray(g["lam"](np.full_like(t, r0), t), dtype=float)
        active = _latched(xn >= _ev(g["rho"], yn))
    elif kind == "iiUOSS":
        lhs = tr.integral(_ev(g["chi"], xn))
        rhs = float(g["kappa"](r0)) + tr.integral(_ev(g["gamma"], yn))
    elif kind == "UO":
        lhs = xn
        rhs = _ev(g["chi1"], t) + float(g["chi2"](r0)) + float(g["c"])
        active = _latched(yn <= _ev(g["rho1"], xn))
    elif kind == "UiIOSS":
        lhs = xn
        parts = [np.asarray(g["beta"](np.full_like(t, r0), t), dtype=float)]
        if has_u:
            parts.append(_ev(g["gamma"], tr.u.running_integral(t, _gain_fn(g.get("gamma1")))))
        if has_y:
            parts.append(_ev(g["gamma"], tr.integral(_ev(g["gamma2"], yn))))
        rhs = np.maximum.reduce(parts)
    elif kind == "UiIOSS-sum":
        lhs = _ev(g["alpha_x"], xn)
        rhs = np.asarray(g["beta"](np.full_like(t, r0), t), dtype=float)
        if has_u:
            rhs = rhs + tr.u.running_integral(t, _gain_fn(g.get("gamma1")))
        if has_y:
            rhs = rhs + tr.integral(_ev(g["gamma2"], yn))
    elif kind == "U(iI)OSS":
        lhs = _ev(g["alpha_x"], xn)
        rhs = np.asarray(g["beta"](np.full_like(t, r0), t), dtype=float)
        if has_u:
            rhs = rhs + tr.u.running_integral(t, _gain_fn(g.get("gamma1")))
        if has_y:
            rhs = rhs + _ev(g["gamma2"], _running_sup(yn))
    else:
        raise ValueError(f"{kind} is checked with check_incremental")
    return np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float), active


def _gain_fn(g: ComparisonFn | None):
    if g is None or g.tag == "zero":
        return lambda r: 0.0
    return g


@dataclass(frozen=True)
class _Tol:
    atol: float
    rtol: float
    sim_rtol: float
    sim_atol: float


def _check_item(sys, spec, item: BatteryItem, tol: _Tol):
    tr = simulate(sys, item.x0, item.u, item.w, item.horizon, rtol=tol.sim_rtol, atol=tol.sim_atol)
    if tr.times.size < 2:
        return None, tr
    lhs, rhs, active = evaluate_estimate(sys, spec, tr)
    return (lhs, rhs, active), tr


def check_estimate(sys: SystemModel, spec: EstimateSpec, battery: Battery | Sequence[BatteryItem],
                   *, atol: float = 1e-9, rtol: float = 1e-6, sim_rtol: float = 1e-9,
                   sim_atol: float = 1e-12, n_jobs: int = 1) -> CheckReport:
    """Evaluate ``spec`` along every battery trajectory at every knot.

    A knot violates the estimate when ``lhs > rhs + atol + rtol * |rhs|``;
    the slack covers integration and quadrature error.  Trajectories that
    escape before their first step are skipped with a note.
    """
    if spec.kind == "dUIOSS":
        return check_incremental(sys, spec, battery, atol=atol, rtol=rtol, sim_rtol=sim_rtol, sim_atol=sim_atol)
    items = battery.generate(sys) if isinstance(battery, Battery) else list(battery)
    if not items:
        raise ValueError("battery is empty")
    tol = _Tol(atol, rtol, sim_rtol, sim_atol)
    notes = []
    if spec.kind == "UIOSS" and sys.m_u == 0:
        notes.append("no control input: gamma1 slot unused")
    if spec.kind in ("UIOSS", "UOSS") and sys.p == 0:
        notes.append("no output: gamma2 slot unused")

    def run(item):
        return _check_item(sys, spec, item, tol)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run, items))
    else:
        results = [run(it) for it in items]

    tracker = MarginTracker()
    knots = escaped = skipped = tested = 0
    for item, (res, tr) in zip(items, results):
        escaped += int(tr.escaped)
        if res is None:
            skipped += 1
            notes.append(f"trajectory from {np.asarray(item.x0).tolist()} escaped before its first knot; skipped")
            continue
        lhs, rhs, active = res
        tested += 1
        idx = np.nonzero(active)[0]
        knots += idx.size
        if idx.size == 0:
            continue
        slack = rhs[idx] - lhs[idx]
        tols = atol + rtol * np.abs(rhs[idx])
        k = int(np.argmin(slack + tols))
        kw = int(np.argmin(slack))
        tracker.update(float(slack[kw]), float("inf"), lambda: None)
        tracker.update(float(slack[k]), float(tols[k]),
                       lambda: _witness(spec, item, tr, idx[k], lhs, rhs))
    counts = {"trajectories": tested, "knots": knots, "escaped": escaped, "skipped": skipped}
    return tracker.report(counts, notes)


def _witness(spec, item: BatteryItem, tr: Trajectory, k: int, lhs, rhs) -> dict:
    return {"kind": spec.kind, "item": item.to_dict(), "t": float(tr.times[k]),
            "lhs": float(lhs[k]), "rhs": float(rhs[k]), "x": tr.states[k].tolist()}


def check_iiuoss(sys: SystemModel, chi: ComparisonFn, kappa: ComparisonFn, gamma: ComparisonFn,
                 battery, **kw) -> CheckReport:
    """Integral estimate ``int chi(|x|) <= kappa(|xi|) + int gamma(|y|)``.

    Escaping trajectories are tested at every knot before the escape.
    """
    return check_estimate(sys, EstimateSpec("iiUOSS", {"chi": chi, "kappa": kappa, "gamma": gamma}),
                          battery, **kw)


# -- incremental ------------------------------------------------------------

def _pair_system(sys: SystemModel) -> SystemModel:
    n, m = sys.n, sys.m_u
    f, h = sys.f, sys.h

    def F(z, u, w):
        return np.concatenate([np.asarray(f(z[:n], u[:m], w), dtype=float),
                               np.asarray(f(z[n:], u[m:], w), dtype=float)])

    def H(z):
        return np.concatenate([np.asarray(h(z[:n]), dtype=float), np.asarray(h(z[n:]), dtype=float)])

    return SystemModel(2 * n, 2 * m, sys.m_w, 2 * sys.p, F, H, name=f"{sys.name}x2",
                       disturbance_samples=sys.disturbance_samples, check_zero=False)


def _stack(a: Signal, b: Signal) -> Signal:
    if a.dim + b.dim == 0:
        return Signal.zero(0)
    if a.kind == "closure" or b.kind == "closure":
        return Signal.closure(lambda t: np.concatenate([a(t), b(t)]), a.dim + b.dim)
    ka = a.knots if a.kind == "piecewise" else np.zeros(1)
    kb = b.knots if b.kind == "piecewise" else np.zeros(1)
    knots = np.union1d(ka, kb)
    vals = np.array([np.concatenate([a(t), b(t)]) for t in knots])
    return Signal.piecewise(knots, vals)


def check_incremental(sys: SystemModel, spec: EstimateSpec, battery, *, atol: float = 1e-9,
                      rtol: float = 1e-6, sim_rtol: float = 1e-9, sim_atol: float = 1e-12) -> CheckReport:
    """Incremental estimate on trajectory pairs sharing the disturbance.

    Both copies are integrated as one augmented state so they share a knot
    grid; the estimate compares ``|x1 - x2|`` against
    ``max{beta(|xi1 - xi2|, t), gamma1(sup|u1 - u2|), gamma2(sup|y1 - y2|)}``.
    """
    if spec.kind != "dUIOSS":
        raise ValueError("check_incremental needs a dUIOSS spec")
    if isinstance(battery, Battery):
        if not battery.paired:
            battery = Battery(**{**battery.__dict__, "paired": True})
        items = battery.generate(sys)
    else:
        items = list(battery)
    if not items:
        raise ValueError("battery is empty")
    pair = _pair_system(sys)
    g = spec.gains
    n, m, p = sys.n, sys.m_u, sys.p
    tracker = MarginTracker()
    knots = escaped = 0
    for item in items:
        if item.x0b is None:
            raise ValueError("incremental battery items need a second initial state")
        uu = _stack(item.u, item.ub)
        tr = simulate(pair, np.concatenate([item.x0, item.x0b]), uu, item.w, item.horizon,
                      rtol=sim_rtol, atol=sim_atol)
        escaped += int(tr.escaped)
        t = tr.times
        dx = np.linalg.norm(tr.states[:, :n] - tr.states[:, n:], axis=1)
        r0 = float(dx[0])
        parts = [np.asarray(g["beta"](np.full_like(t, r0), t), dtype=float)]
        if m:
            du = _diff_sup(uu, m, t)
            parts.append(_ev(g.get("gamma1"), du))
        if p:
            dy = np.linalg.norm(tr.outputs[:, :p] - tr.outputs[:, p:], axis=1)
            parts.append(_ev(g["gamma2"], _running_sup(dy)))
        rhs = np.maximum.reduce(parts)
        slack = rhs - dx
        tols = atol + rtol * np.abs(rhs) + 10.0 * sim_rtol * np.abs(tr.x_norm)
        knots += t.size
        k = int(np.argmin(slack + tols))
        tracker.update(float(slack.min()), float("inf"), lambda: None)
        tracker.update(float(slack[k]), float(tols[k]),
                       lambda: {"kind": "dUIOSS", "item": item.to_dict(), "t": float(t[k]),
                                "lhs": float(dx[k]), "rhs": float(rhs[k])})
    return tracker.report({"pairs": len(items), "knots": knots, "escaped": escaped})


def _diff_sup(uu: Signal, m: int, t: np.ndarray) -> np.ndarray:
    if uu.kind == "piecewise":
        d = np.linalg.norm(uu.values[:, :m] - uu.values[:, m:], axis=1)
        run = np.maximum.accumulate(d)
        idx = np.maximum(np.searchsorted(uu.knots, t, side="left") - 1, 0)
        return run[idx]
    v = uu(0.0)
    if uu.kind == "constant":
        return np.full(t.size, float(np.linalg.norm(v[:m] - v[m:])))
    return _running_sup(np.array([np.linalg.norm(uu(s)[:m] - uu(s)[m:]) for s in t]))


def replay_witness(sys: SystemModel, spec: EstimateSpec, witness: dict, factor: float = 10.0,
                   sim_rtol: float = 1e-9, sim_atol: float = 1e-12, **kw) -> CheckReport:
    """Re-simulate a witness with tolerances tightened by ``factor`` and re-check it."""
    item = BatteryItem.from_dict(witness["item"])
    opts = dict(sim_rtol=sim_rtol / factor, sim_atol=sim_atol / factor, **kw)
    if spec.kind == "dUIOSS":
        return check_incremental(sys, spec, [item], **opts)
    return check_estimate(sys, spec, [item], **opts)


# -- margins ----------------------------------------------------------------

def _premajorized_at_zero(beta: KLFn) -> ComparisonFn:
    return fmax(beta.at_zero(), identity())


def gasmo_margin_from_uoss(beta: KLFn, gamma2: ComparisonFn) -> ComparisonFn:
    """``rho(s) = 1.01 theta(4 gamma2(s))`` with ``theta = max{beta(., 0), id}``."""
    return scale(1.01, compose(_premajorized_at_zero(beta), scale(4.0, gamma2)))


def stability_margin(beta: KLFn, gamma1: ComparisonFn) -> ComparisonFn:
    """Feedback bound ``phi(r) = 0.99 gamma1^{-1}(alpha^{-1}(r) / 4)``.

    ``alpha = max{beta(., 0), id}``.  Closing the loop with any feedback of
    norm at most ``phi(|x|)`` keeps the output-to-state estimate.
    """
    alpha = _premajorized_at_zero(beta)
    return scale(0.99, compose(invert(gamma1), compose(linear(0.25), invert(alpha))))
