"""Grid realization of the min-max cost-to-reach value function.

The disturbance player maximizes and an auxiliary bounded control (active
only on a collar around the target set ``D``) minimizes the running cost
``int Xi(|x|) dt`` accumulated before the state reaches ``D``.  The value is
computed by semi-Lagrangian value iteration on a rectangular grid, checked
for bounds and dissipation along trajectories, and smoothed by an exact
discrete inf-convolution (Moreau envelope).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .comparison import ComparisonFn, identity, invert
from .dynamics import Signal, SystemModel, simulate
from .fixtures import bump
from .report import CheckReport, MarginTracker

__all__ = [
    "StateGrid", "GeometrySets", "GridValueFn", "compute_v0", "rollout_oracle",
    "SpanBattery", "check_v0_dissipation", "inf_convolve", "modulus_of_continuity",
    "lower_bound_off_target", "xi_from_mu1",
]

MAX_DIM = 3
COLLAR = 1.5


@dataclass(frozen=True)
class StateGrid:
    """Rectangular node lattice ``lower + i * spacing`` per axis."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        sh = tuple(int(v) for v in np.atleast_1d(self.shape))
        if not (len(lo) == len(hi) == len(sh)):
            raise ValueError("lower, upper and shape must have one entry per axis")
        if len(sh) > MAX_DIM:
            raise ValueError(f"grids are limited to {MAX_DIM} dimensions")
        if any(s < 2 for s in sh) or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("each axis needs at least two nodes and lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "shape", sh)

    @classmethod
    def cube(cls, radius: float, nodes: int, n: int = 1) -> "StateGrid":
        return cls((-radius,) * n, (radius,) * n, (nodes,) * n)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.shape) - 1)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, s) for a, b, s in zip(self.lower, self.upper, self.shape)]

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(size, n)``, C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, pts: np.ndarray, slack: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo, hi = np.array(self.lower), np.array(self.upper)
        pad = slack * (1.0 + np.abs(hi - lo))
        return np.all((pts >= lo - pad) & (pts <= hi + pad), axis=1)

    def stencil(self, pts: np.ndarray):
        """Multilinear interpolation stencil.

        Returns
        -------
        idx : ndarray of int, shape ``(m, 2**n)``
            Flat node indices.
        wts : ndarray, shape ``(m, 2**n)``
            Weights, all zero for points outside the grid.
        inside : ndarray of bool, shape ``(m,)``
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        m, n = pts.shape
        inside = self.contains(pts)
        sh = np.array(self.shape)
        h = self.spacing
        s = (pts - np.array(self.lower)) / h
        base = np.clip(np.floor(s).astype(int), 0, sh - 2)
        frac = np.clip(s - base, 0.0, 1.0)
        strides = np.array([int(np.prod(sh[k + 1:])) for k in range(n)])
        corners = list(itertools.product((0, 1), repeat=n))
        idx = np.empty((m, len(corners)), dtype=np.int64)
        wts = np.empty((m, len(corners)))
        for c, bits in enumerate(corners):
            b = np.array(bits)
            idx[:, c] = (base + b) @ strides
            wts[:, c] = np.prod(np.where(b == 1, frac, 1.0 - frac), axis=1)
        wts[~inside] = 0.0
        return idx, wts, inside

    def interpolate(self, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Multilinear interpolant; NaN outside the grid."""
        idx, wts, inside = self.stencil(pts)
        out = np.sum(wts * values.ravel()[idx], axis=1)
        out[~inside] = np.nan
        return out

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}


@dataclass(frozen=True, eq=False)
class GeometrySets:
    """Target set ``D``, collar ``B``, and ``E``, ``E1`` for a margin ``rho``.

    ``D = {|x| <= rho(|h(x)|)}``, ``B = {rho(|h|) <= |x| <= 1.5 rho(|h|)}``,
    ``E`` is the complement of ``D`` and ``E1 = {|x| > 2 rho(|h|)}``.
    Membership in ``D`` is closed up to ``tol``.
    """

    sys: SystemModel
    rho: ComparisonFn
    grid: StateGrid
    tol: float = 1e-12

    def __post_init__(self):
        if self.grid.n != self.sys.n:
            raise ValueError(f"grid has {self.grid.n} axes but the system has n = {self.sys.n}")

    def margin(self, x) -> float:
        """``rho(|h(x)|)``."""
        hn = float(np.linalg.norm(self.sys.output(x)))
        return float(self.rho(hn)) if hn > 0 else 0.0

    def _pair(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x)), self.margin(x)

    def in_D(self, x) -> bool:
        r, m = self._pair(x)
        return r <= m + self.tol * (1.0 + m)

    def in_B(self, x) -> bool:
        r, m = self._pair(x)
        return m - self.tol * (1.0 + m) <= r <= COLLAR * m + self.tol * (1.0 + m)

    def in_E(self, x) -> bool:
        return not self.in_D(x)

    def in_E1(self, x) -> bool:
        r, m = self._pair(x)
        return r > 2.0 * m

    def collar_weight(self, x) -> float:
        """Smooth ``phi``: 1 on ``D``, 0 off ``D`` union ``B``, bump profile across the collar."""
        r, m = self._pair(x)
        if r <= m:
            return 1.0
        if m <= 0.0 or r >= COLLAR * m:
            return 0.0
        return bump((r / m - 1.0) / (COLLAR - 1.0), 1.0)

    def distance_to_D(self) -> np.ndarray:
        """Distance from each node to the nearest ``D`` node (grid approximation)."""
        nodes = self.grid.nodes
        mask = self.node_masks()["D"]
        d_nodes = nodes[mask]
        if d_nodes.size == 0:
            return np.full(len(nodes), np.inf)
        out = np.empty(len(nodes))
        for k in range(0, len(nodes), 512):
            blk = nodes[k:k + 512]
            out[k:k + 512] = np.min(np.linalg.norm(blk[:, None, :] - d_nodes[None], axis=2), axis=1)
        return out

    def node_masks(self) -> dict:
        nodes = self.grid.nodes
        D = np.array([self.in_D(x) for x in nodes])
        B = np.array([self.in_B(x) for x in nodes]) & ~D
        E1 = np.array([self.in_E1(x) for x in nodes]) & ~D
        return {"D": D, "B": B, "E1": E1, "E": ~D}

    def region_tags(self) -> np.ndarray:
        """One of ``D``, ``B``, ``E1``, ``E`` per node (first match in that order)."""
        m = self.node_masks()
        tags = np.full(self.grid.size, "E", dtype=object)
        tags[m["E1"]] = "E1"
        tags[m["B"]] = "B"
        tags[m["D"]] = "D"
        return tags


def xi_from_mu1(mu1: ComparisonFn) -> ComparisonFn:
    """Running-cost gain ``Xi = mu1^{-1}`` from the outer factor of a KL bound."""
    return invert(mu1)


@dataclass(eq=False)
class GridValueFn:
    """Node values of a value function on a :class:`StateGrid`.

    ``unreached`` marks nodes whose value depends on leaving the window (or
    that did not converge); there the value is a lower bound.
    """

    grid: StateGrid
    values: np.ndarray
    Xi: ComparisonFn | None = None
    geo: GeometrySets | None = None
    provenance: dict = field(default_factory=dict)
    unreached: np.ndarray | None = None
    delta: float | None = None
    sweeps: int = 0
    residual: float = 0.0
    converged: bool = True
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if self.unreached is None:
            self.unreached = np.zeros(self.grid.shape, dtype=bool)

    def __call__(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if pts.shape[1] != self.grid.n:
            pts = pts.reshape(-1, self.grid.n)
        return self.grid.interpolate(self.values, pts)

    def with_values(self, values: np.ndarray) -> "GridValueFn":
        return GridValueFn(self.grid, np.array(values, dtype=float), self.Xi, self.geo, dict(self.provenance),
                           self.unreached.copy(), self.delta, self.sweeps, self.residual, self.converged)

    def summary(self) -> dict:
        return {"grid": self.grid.to_dict(), "delta": self.delta, "sweeps": self.sweeps,
                "residual": self.residual, "converged": self.converged,
                "unreached": int(self.unreached.sum()), "max_value": float(self.values.max()),
                "min_value": float(self.values.min())}

    def to_csv(self, path) -> None:
        """Columns ``x_1..x_n, value, region`` (region empty without geometry)."""
        nodes = self.grid.nodes
        tags = self.geo.region_tags() if self.geo is not None else [""] * len(nodes)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow([f"x_{i + 1}" for i in range(self.grid.n)] + ["value", "region"])
            for x, v, tag in zip(nodes, self.values.ravel(), tags):
                wr.writerow([format(float(c), ".17g") for c in x] + [format(float(v), ".17g"), tag])


def _vertices(sys: SystemModel) -> np.ndarray:
    if sys.m_w == 0:
        return np.zeros((1, 0))
    ds = np.asarray(sys.disturbance_samples, dtype=float)
    vert = ds[np.all(np.isclose(np.abs(ds), 1.0), axis=1)]
    return vert if len(vert) else ds


def _mixtures(n_vert: int) -> np.ndarray:
    """Vertex weights: the vertices, pairwise midpoints and the centroid."""
    rows = [np.eye(n_vert)[i] for i in range(n_vert)]
    for i, j in itertools.combinations(range(n_vert), 2):
        w = np.zeros(n_vert)
        w[[i, j]] = 0.5
        rows.append(w)
    if n_vert > 2:
        rows.append(np.full(n_vert, 1.0 / n_vert))
    return np.array(rows)


def _rk4(F, x, dt):
    k1 = F(x)
    k2 = F(x + 0.5 * dt * k1)
    k3 = F(x + 0.5 * dt * k2)
    k4 = F(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def compute_v0(sys: SystemModel, geo: GeometrySets, Xi: ComparisonFn | None = None,
               delta: float | None = None, tol: float = 1e-6, max_sweeps: int = 10_000,
               mode: str = "vertex", provenance: dict | None = None,
               speed_tol: float = 1e-9) -> GridValueFn:
    """Min-max cost-to-reach ``D`` by semi-Lagrangian value iteration.

    One sweep maps ``V`` to ``max_d min_v [delta * Xi(|x'|) + V(x')]`` where
    ``x'`` is an RK4 step of length ``delta`` of
    ``f(x, d) + 2 phi(x) f0(x) v`` with ``f0(x) = max_d |f(x, d)|``,
    ``v`` over the sign lattice ``{-1, 0, 1}^n`` and ``phi`` the collar
    weight.  ``V`` is held at 0 on ``D`` nodes, successors leaving the window
    continue with 0.  Sweeps are Jacobi (double buffered), so starting from 0
    they increase monotonically to the fixed point.

    Parameters
    ----------
    sys : SystemModel
        Disturbance-only dynamics with speed at most 1 on the grid window.
    Xi : ComparisonFn, optional
        Running-cost gain; identity by default.
    delta : float, optional
        Time step; the smallest grid spacing by default.
    mode : {"vertex", "mixture"}
        ``"mixture"`` adds convex combinations of the vertex vector fields.

    Raises
    ------
    ValueError
        Controls present, no ``D`` node on the grid, or speed above 1.
    """
    if sys.m_u != 0:
        raise ValueError("compute_v0 expects a disturbance-only system")
    if mode not in ("vertex", "mixture"):
        raise ValueError(f"unknown mode {mode!r}")
    Xi = identity() if Xi is None else Xi
    grid = geo.grid
    n = grid.n
    nodes = grid.nodes
    masks = geo.node_masks()
    Dm = masks["D"]
    if not Dm.any():
        raise ValueError("no grid node lies in D; enlarge the window or refine the grid")
    dt = float(np.min(grid.spacing)) if delta is None else float(delta)

    verts = _vertices(sys)
    weights = np.eye(len(verts)) if mode == "vertex" else _mixtures(len(verts))
    u0 = np.zeros(0)

    def field_(w_row):
        active = [(c, d) for c, d in zip(w_row, verts) if c != 0.0]
        return lambda x: sum(c * np.asarray(sys.f(x, u0, d), dtype=float) for c, d in active)

    fields = [field_(w) for w in weights]
    lattice = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n)))
    zero_v = int(np.flatnonzero(np.all(lattice == 0.0, axis=1))[0])

    live = np.flatnonzero(~Dm)
    nd, nv = len(fields), len(lattice)
    corners = 2 ** n
    idx = np.zeros((len(live), nd, nv, corners), dtype=np.int64)
    wts = np.zeros((len(live), nd, nv, corners))
    cost = np.zeros((len(live), nd, nv))
    exits = np.zeros((len(live), nd, nv), dtype=bool)
    has_v = np.zeros(len(live), dtype=bool)
    top_speed = 0.0

    for a, k in enumerate(live):
        x = nodes[k]
        speeds = [float(np.linalg.norm(np.asarray(sys.f(x, u0, d), dtype=float))) for d in verts]
        f0 = max(speeds)
        top_speed = max(top_speed, f0)
        phi = geo.collar_weight(x)
        has_v[a] = phi > 0.0
        for b, F in enumerate(fields):
            v_rows = range(nv) if has_v[a] else [zero_v]
            succ = []
            for c in v_rows:
                push = 2.0 * phi * f0 * lattice[c]
                succ.append(_rk4(lambda z: F(z) + push, x, dt))
            succ = np.array(succ)
            si, sw, inside = grid.stencil(succ)
            sc = dt * np.asarray(Xi(np.linalg.norm(succ, axis=1)), dtype=float)
            if has_v[a]:
                idx[a, b], wts[a, b], cost[a, b], exits[a, b] = si, sw, sc, ~inside
            else:
                # v is inert off the collar: replicate the v = 0 successor
                idx[a, b], wts[a, b], cost[a, b], exits[a, b] = si[0], sw[0], sc[0], ~inside[0]
    if top_speed > 1.0 + speed_tol:
        raise ValueError(f"speed {top_speed:.6g} exceeds 1 on the grid window; slow the system first")

    V = np.zeros(grid.size)
    residual = float("inf")
    sweeps = 0
    while sweeps < max_sweeps:
        Q = cost + np.sum(wts * V[idx], axis=-1)
        new = np.max(np.min(Q, axis=2), axis=1)
        residual = float(np.max(np.abs(new - V[live]))) if len(live) else 0.0
        V[live] = new
        sweeps += 1
        if residual < tol:
            break
    converged = residual < tol

    # nodes whose selected successors lean on a window exit
    Q = cost + np.sum(wts * V[idx], axis=-1)
    vstar = np.argmin(Q, axis=2)
    dstar = np.argmax(np.take_along_axis(Q, vstar[..., None], axis=2)[..., 0], axis=1)
    rows = np.arange(len(live))
    sel_v = vstar[rows, dstar]
    sel_exit = exits[rows, dstar, sel_v]
    sel_idx = idx[rows, dstar, sel_v]
    sel_w = wts[rows, dstar, sel_v]
    tainted = np.zeros(grid.size, dtype=bool)
    tainted[live[sel_exit]] = True
    while True:
        spread = np.any((sel_w > 0) & tainted[sel_idx], axis=1)
        grow = spread & ~tainted[live]
        if not grow.any():
            break
        tainted[live[grow]] = True
    if not converged:
        tainted[live] = True

    prov = {"Xi": Xi.name if hasattr(Xi, "name") else str(Xi)}
    prov.update(provenance or {})
    return GridValueFn(grid, V, Xi, geo, prov, tainted.reshape(grid.shape), dt, sweeps, residual, converged,
                       extras={"mode": mode, "max_speed": top_speed, "collar_nodes": int(has_v.sum())})


def rollout_oracle(sys: SystemModel, geo: GeometrySets, xi, Xi: ComparisonFn | None = None,
                   delta: float = 0.01, horizon: float = 10.0, block: float | None = None,
                   max_sequences: int = 4096, substeps: int = 8) -> float:
    """Worst-case truncated cost by enumerating vertex disturbance sequences.

    Disturbances switch between vertices every ``block`` time units (one
    step of ``delta`` by default), for ``H = ceil(horizon / delta)`` steps.
    Each rollout integrates ``Xi(|x|)`` with RK4 and a trapezoid rule on
    ``substeps`` per step, stopping once the state is within one grid
    spacing of ``D`` or leaves the window.  No auxiliary control is used, so
    the value is meaningful for starts whose paths avoid the collar.
    """
    Xi = identity() if Xi is None else Xi
    verts = _vertices(sys)
    n_steps = int(math.ceil(horizon / delta))
    block = delta if block is None else float(block)
    n_blocks = int(math.ceil(horizon / block))
    n_seq = len(verts) ** n_blocks
    if n_seq > max_sequences:
        raise ValueError(f"{n_seq} disturbance sequences exceed max_sequences={max_sequences}; increase block")
    reach = float(np.max(geo.grid.spacing))
    h = delta / substeps
    u0 = np.zeros(0)
    x_init = np.asarray(xi, dtype=float).reshape(sys.n)
    best = 0.0
    for seq in itertools.product(range(len(verts)), repeat=n_blocks):
        x = x_init.copy()
        total = 0.0
        for k in range(n_steps):
            d = verts[seq[min(int(k * delta / block), n_blocks - 1)]]
            if _near_D(geo, x, reach) or not geo.grid.contains(x[None])[0]:
                break
            for _ in range(substeps):
                c0 = float(Xi(float(np.linalg.norm(x))))
                x = _rk4(lambda z: np.asarray(sys.f(z, u0, d), dtype=float), x, h)
                total += 0.5 * h * (c0 + float(Xi(float(np.linalg.norm(x)))))
        best = max(best, total)
    return best


def _near_D(geo: GeometrySets, x, reach: float) -> bool:
    r, m = geo._pair(x)
    return r <= m + reach


@dataclass
class SpanBattery:
    """Random short spans started in ``E`` off the collar and inside the window."""

    n_spans: int = 50
    span: float = 0.5
    seed: int = 0
    max_switches: int = 2
    inner: float = 0.9
    max_tries: int = 100_000

    def generate(self, geo: GeometrySets) -> list[tuple[np.ndarray, Signal]]:
        rng = np.random.default_rng(self.seed)
        sys = geo.sys
        grid = geo.grid
        lo, hi = np.array(grid.lower), np.array(grid.upper)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * self.inner
        verts = _vertices(sys)
        out = []
        tries = 0
        while len(out) < self.n_spans and tries < self.max_tries:
            tries += 1
            x0 = mid + half * rng.uniform(-1.0, 1.0, size=grid.n)
            if geo.in_D(x0) or geo.in_B(x0):
                continue
            if sys.m_w == 0:
                w = Signal.zero(0)
            else:
                k = int(rng.integers(0, self.max_switches + 1))
                knots = np.sort(rng.uniform(0.0, self.span, size=k))
                vals = verts[rng.integers(0, len(verts), size=k + 1)]
                w = Signal.piecewise(knots, vals, bounded=True)
            out.append((x0, w))
        return out


def check_v0_dissipation(v0: GridValueFn, sys: SystemModel, battery=None, C: float = 1.0,
                         n_eval: int = 101, **sim) -> CheckReport:
    """``V0(x(t)) - V0(x0) <= -int_0^t Xi(|x|) + C * max spacing`` along spans.

    Spans that leave ``E`` minus the collar, or the grid window, at a
    recorded knot are skipped (counted in ``counts["skipped"]``).

    Raises
    ------
    ValueError
        No span qualifies.
    """
    geo = v0.geo
    if geo is None:
        raise ValueError("value function carries no geometry")
    battery = SpanBattery() if battery is None else battery
    spans = battery.generate(geo) if hasattr(battery, "generate") else list(battery)
    span = getattr(battery, "span", None)
    Xi = v0.Xi if v0.Xi is not None else identity()
    tol = C * float(np.max(v0.grid.spacing))
    tracker = MarginTracker()
    used = skipped = 0
    for item in spans:
        x0, w = item[0], item[1]
        T = float(item[2]) if len(item) > 2 else float(span if span is not None else 0.5)
        tr = simulate(sys, x0, None, w, T, t_eval=np.linspace(0.0, T, n_eval)[1:-1].tolist(), **sim)
        ok = geo.grid.contains(tr.states).all() and not any(geo.in_D(x) or geo.in_B(x) for x in tr.states)
        if not ok or tr.termination.kind != "HorizonReached":
            skipped += 1
            continue
        used += 1
        cost = tr.integral(np.asarray(Xi(tr.x_norm), dtype=float))
        vals = v0(tr.states)
        margin = vals[0] - cost - vals
        k = int(np.argmin(margin))
        tracker.update(float(margin[k]), tol,
                       lambda: {"x0": np.asarray(x0).tolist(), "w": w.to_dict(), "t": float(tr.times[k]),
                                "drop": float(vals[0] - vals[k]), "cost": float(cost[k])})
    if used == 0:
        raise ValueError("no span stays in E off the collar; nothing to check")
    return tracker.report({"spans": used, "skipped": skipped}, extras={"tolerance": tol})


def _envelope_1d(f: np.ndarray, pos: np.ndarray, c: float):
    """Lower envelope ``g(p) = min_q f(q) + c (pos_p - pos_q)^2`` in linear time.

    Returns the envelope and the minimizing index per node.
    """
    m = f.size
    g = np.empty(m)
    arg = np.empty(m, dtype=np.int64)
    v = np.empty(m, dtype=np.int64)
    z = np.empty(m + 1)
    key = f + c * pos * pos
    k = 0
    v[0] = 0
    z[0], z[1] = -np.inf, np.inf
    for q in range(1, m):
        s = (key[q] - key[v[k]]) / (2.0 * c * (pos[q] - pos[v[k]]))
        while s <= z[k]:
            k -= 1
            s = (key[q] - key[v[k]]) / (2.0 * c * (pos[q] - pos[v[k]]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for p in range(m):
        while z[k + 1] < pos[p]:
            k += 1
        q = v[k]
        arg[p] = q
        g[p] = f[q] + c * (pos[p] - pos[q]) ** 2
    return g, arg


def inf_convolve(v: GridValueFn, alpha: float) -> GridValueFn:
    """Exact discrete Moreau envelope ``min_y V(y) + |y - x|^2 / (2 alpha^2)`` over nodes.

    One lower-envelope pass per axis; the squared distance separates across
    axes.  ``extras`` holds the minimizer per node (``argmin``), the largest
    displacement ``max |x - y|`` and the Lipschitz bound
    ``max |x - y| / alpha^2``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    grid = v.grid
    c = 1.0 / (2.0 * alpha * alpha)
    vals = v.values.astype(float).copy()
    n = grid.n
    arg = np.stack(np.meshgrid(*[np.arange(s) for s in grid.shape], indexing="ij"), axis=-1)
    for ax, pos in enumerate(grid.axes):
        moved = np.moveaxis(vals, ax, -1)
        moved_arg = np.moveaxis(arg, ax, -2)
        out = np.empty_like(moved)
        out_arg = np.empty_like(moved_arg)
        for line in np.ndindex(moved.shape[:-1]):
            g, a = _envelope_1d(moved[line], pos, c)
            out[line] = g
            out_arg[line] = moved_arg[line][a]
        vals = np.moveaxis(out, -1, ax)
        arg = np.moveaxis(out_arg, -2, ax)
    flat_arg = arg.reshape(-1, n)
    nodes = grid.nodes
    y = np.array(grid.lower) + flat_arg * grid.spacing
    disp = float(np.max(np.linalg.norm(nodes - y, axis=1)))
    res = v.with_values(vals)
    res.provenance["inf_convolution_alpha"] = float(alpha)
    res.extras = {"argmin": flat_arg, "max_displacement": disp, "lipschitz_bound": disp / alpha ** 2}
    return res


def modulus_of_continuity(v: GridValueFn, radius: float) -> float:
    """``max |V(x) - V(y)|`` over node pairs at distance at most ``radius``."""
    grid = v.grid
    h = grid.spacing
    reach = [int(math.floor(radius / hk + 1e-12)) for hk in h]
    vals = v.values
    best = 0.0
    for off in itertools.product(*[range(0, r + 1) if k == 0 else range(-r, r + 1)
                                   for k, r in enumerate(reach)]):
        if float(np.linalg.norm(np.array(off) * h)) > radius + 1e-12 or not any(off):
            continue
        src = tuple(slice(max(0, -o), s - max(0, o)) for o, s in zip(off, grid.shape))
        dst = tuple(slice(max(0, o), s - max(0, -o)) for o, s in zip(off, grid.shape))
        a, b = vals[src], vals[dst]
        if a.size:
            best = max(best, float(np.max(np.abs(a - b))))
    return best


def lower_bound_off_target(v0: GridValueFn) -> np.ndarray:
    """``dist(x, D) / 6 * Xi(|x| - dist(x, D) / 2)`` per node, grid distances to ``D``."""
    geo = v0.geo
    Xi = v0.Xi if v0.Xi is not None else identity()
    dist = geo.distance_to_D()
    r = np.linalg.norm(geo.grid.nodes, axis=1)
    arg = np.maximum(r - dist / 2.0, 0.0)
    return (dist / 6.0 * np.asarray(Xi(arg), dtype=float)).reshape(geo.grid.shape)
