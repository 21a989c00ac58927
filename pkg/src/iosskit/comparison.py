"""Comparison functions: class K / K-infinity gains and KL decay bounds.

A :class:`ComparisonFn` is an immutable expression tree whose leaves are
closed-form primitives (linear, power, saturating exponential, ``r e^{kr}``),
monotone piecewise-linear tables, or opaque callables.  Trees are closed
under composition, pointwise max, sum, positive scaling and inversion, and
serialize to a plain ``{"tag", "params", "children"}`` document.

:class:`KLFn` holds a two-argument decay bound, canonically in factored form
``mu1(mu2(r) * exp(-t))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "ComparisonFn",
    "KLFn",
    "KLConditionError",
    "identity",
    "zero",
    "linear",
    "power",
    "sat_exp",
    "r_exp",
    "table",
    "from_callable",
    "tabulate",
    "compose",
    "fmax",
    "fsum",
    "scale",
    "invert",
    "kl_factorize",
    "kl_majorize",
    "kl_cascade",
]

DEFAULT_KNOTS = 64
DEFAULT_DOMAIN = (1e-4, 1e4)
DEFAULT_RTOL = 1e-3

_LEAVES = {"zero", "linear", "power", "satexp", "rexp", "table", "callable"}
_NODES = {"compose", "max", "sum", "scale"}


class KLConditionError(ValueError):
    """A sampled function fails one of the KL-majorization conditions."""

    def __init__(self, condition: int, witness: tuple[float, float], message: str):
        self.condition = condition
        self.witness = witness
        super().__init__(f"condition {condition} violated at (r, t) = {witness}: {message}")


def _as_array(r):
    arr = np.asarray(r, dtype=float)
    return arr


def _out(arr, like):
    if np.ndim(like) == 0:
        return float(arr)
    return arr


@dataclass(frozen=True, eq=False)
class ComparisonFn:
    """Scalar gain ``R>=0 -> R>=0`` represented as an expression tree.

    Parameters
    ----------
    tag : str
        Node type, one of ``zero, linear, power, satexp, rexp, table,
        callable`` (leaves) or ``compose, max, sum, scale`` (inner nodes).
    params : tuple
        Tag-specific numeric parameters.
    children : tuple of ComparisonFn
        Operands of inner nodes.
    unbounded : bool
        True for class K-infinity, False for bounded class K use.
    """

    tag: str
    params: tuple = ()
    children: tuple = ()
    unbounded: bool = True
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.tag not in _LEAVES | _NODES:
            raise ValueError(f"unknown comparison-function tag {self.tag!r}")

    # -- evaluation -----------------------------------------------------
    def __call__(self, r):
        arr = _as_array(r)
        if np.any(arr < 0):
            raise ValueError("comparison functions are defined on r >= 0")
        return _out(self._eval(arr), r)

    def _eval(self, r: np.ndarray) -> np.ndarray:
        tag, p = self.tag, self.params
        if tag == "zero":
            return np.zeros_like(r)
        if tag == "linear":
            return p[0] * r
        if tag == "power":
            return p[0] * np.power(r, p[1])
        if tag == "satexp":
            return p[0] * (-np.expm1(-p[1] * r))
        if tag == "rexp":
            with np.errstate(over="ignore"):
                return p[0] * r * np.exp(p[1] * r)
        if tag == "table":
            return self._eval_table(r)
        if tag == "callable":
            return np.asarray(np.vectorize(p[0], otypes=[float])(r), dtype=float) if r.ndim else np.asarray(float(p[0](float(r))))
        if tag == "compose":
            f, g = self.children
            return f._eval(g._eval(r))
        if tag == "max":
            out = self.children[0]._eval(r)
            for c in self.children[1:]:
                out = np.maximum(out, c._eval(r))
            return out
        if tag == "sum":
            out = self.children[0]._eval(r)
            for c in self.children[1:]:
                out = out + c._eval(r)
            return out
        if tag == "scale":
            return p[0] * self.children[0]._eval(r)
        raise AssertionError(tag)

    @cached_property
    def _table_arrays(self):
        knots = np.asarray(self.params[0], dtype=float)
        values = np.asarray(self.params[1], dtype=float)
        return knots, values

    def _eval_table(self, r: np.ndarray) -> np.ndarray:
        knots, values = self._table_arrays
        loglog = bool(self.params[2])
        if loglog:
            # knots[0] == 0 is the anchor; power-law pieces elsewhere
            lk, lv = np.log(knots[1:]), np.log(values[1:])
            out = np.zeros_like(r)
            pos = r > 0
            lr = np.log(r[pos]) if np.any(pos) else np.empty(0)
            res = np.interp(lr, lk, lv)
            s0 = (lv[1] - lv[0]) / (lk[1] - lk[0])
            s1 = (lv[-1] - lv[-2]) / (lk[-1] - lk[-2])
            lo, hi = lr < lk[0], lr > lk[-1]
            res[lo] = lv[0] + s0 * (lr[lo] - lk[0])
            if self.unbounded:
                res[hi] = lv[-1] + s1 * (lr[hi] - lk[-1])
            out[pos] = np.exp(res)
            return out
        out = np.interp(r, knots, values)
        hi = r > knots[-1]
        if np.any(hi) and self.unbounded:
            slope = (values[-1] - values[-2]) / (knots[-1] - knots[-2])
            out[hi] = values[-1] + slope * (r[hi] - knots[-1])
        return out

    # -- algebra sugar --------------------------------------------------
    def __matmul__(self, other: "ComparisonFn") -> "ComparisonFn":
        return compose(self, other)

    def inverse(self, **kwargs) -> "ComparisonFn":
        return invert(self, **kwargs)

    @property
    def serializable(self) -> bool:
        if self.tag == "callable":
            return False
        return all(c.serializable for c in self.children)

    def check_class_k(self, grid: Sequence[float] | None = None, strict: bool = True) -> None:
        """Raise ``ValueError`` unless ``f(0) = 0`` and ``f`` increases on ``grid``."""
        if self.tag == "zero":
            if strict:
                raise ValueError("the zero function is not of class K")
            return
        if grid is None:
            grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 241)])
        g = np.unique(np.asarray(grid, dtype=float))
        v = self._eval(g)
        if g[0] == 0.0 and abs(v[0]) > 1e-12:
            raise ValueError(f"f(0) = {v[0]!r}, expected 0")
        d = np.diff(v)
        bad = np.nonzero(d <= 0 if strict else d < 0)[0]
        if bad.size:
            i = bad[0]
            raise ValueError(f"not increasing between r={g[i]!r} and r={g[i + 1]!r}")

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        if self.tag == "callable":
            raise TypeError(f"callable leaf {self.params[1]!r} cannot be serialized")
        params: list[Any]
        if self.tag == "table":
            params = [list(map(float, self.params[0])), list(map(float, self.params[1])),
                      bool(self.params[2]), float(self.params[3])]
        else:
            params = [float(x) for x in self.params]
        d = {"tag": self.tag, "params": params, "unbounded": bool(self.unbounded)}
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonFn":
        if not isinstance(d, dict) or "tag" not in d:
            raise ValueError(f"expected a mapping with a 'tag' key, got {d!r}")
        tag = d["tag"]
        if tag in ("identity", "id"):
            return identity()
        params = d.get("params", [])
        children = tuple(cls.from_dict(c) for c in d.get("children", []))
        unbounded = bool(d.get("unbounded", tag not in ("satexp",)))
        if tag == "table":
            knots, values = params[0], params[1]
            loglog = bool(params[2]) if len(params) > 2 else False
            rtol = float(params[3]) if len(params) > 3 else float("nan")
            return table(knots, values, unbounded=unbounded, loglog=loglog, rtol=rtol)
        if tag == "callable":
            raise ValueError("callable leaves cannot be deserialized")
        if tag not in _LEAVES | _NODES:
            raise ValueError(f"unknown comparison-function tag {tag!r}")
        return cls(tag, tuple(float(x) for x in params), children, unbounded)

    def __repr__(self) -> str:
        if self.tag == "callable":
            return f"ComparisonFn(callable {self.params[1]!r})"
        if self.tag == "table":
            return f"ComparisonFn(table, {len(self.params[0])} knots)"
        if self.children:
            inner = ", ".join(repr(c) for c in self.children)
            extra = f"{self.params[0]!r}, " if self.params else ""
            return f"ComparisonFn({self.tag}: {extra}{inner})"
        return f"ComparisonFn({self.tag}{list(self.params)})"


# -- constructors -----------------------------------------------------------

def zero() -> ComparisonFn:
    """The zero gain; used for absent input/output channels (not class K)."""
    return ComparisonFn("zero", (), (), True)


def linear(c: float, unbounded: bool = True) -> ComparisonFn:
    if c <= 0:
        raise ValueError("linear gain needs c > 0")
    return ComparisonFn("linear", (float(c),), (), unbounded)


def identity() -> ComparisonFn:
    return linear(1.0)


def power(c: float, p: float) -> ComparisonFn:
    if c <= 0 or p <= 0:
        raise ValueError("power gain needs c > 0 and p > 0")
    if p == 1.0:
        return linear(c)
    return ComparisonFn("power", (float(c), float(p)), (), True)


def sat_exp(c: float, k: float) -> ComparisonFn:
    """Bounded class-K gain ``c (1 - exp(-k r))``."""
    if c <= 0 or k <= 0:
        raise ValueError("sat_exp needs c > 0 and k > 0")
    return ComparisonFn("satexp", (float(c), float(k)), (), False)


def r_exp(c: float, k: float) -> ComparisonFn:
    """K-infinity gain ``c r exp(k r)`` (``k >= 0``)."""
    if c <= 0 or k < 0:
        raise ValueError("r_exp needs c > 0 and k >= 0")
    if k == 0:
        return linear(c)
    return ComparisonFn("rexp", (float(c), float(k)), (), True)


def table(knots, values, unbounded: bool = True, loglog: bool = False,
          rtol: float = float("nan")) -> ComparisonFn:
    """Monotone piecewise-linear (or log-log) table through ``(knots, values)``.

    A knot at ``r = 0`` with value 0 is prepended when missing.
    """
    k = np.asarray(knots, dtype=float).ravel()
    v = np.asarray(values, dtype=float).ravel()
    if k.shape != v.shape or k.size < 1:
        raise ValueError("knots and values must be equal-length 1-D sequences")
    if k[0] != 0.0:
        k = np.concatenate([[0.0], k])
        v = np.concatenate([[0.0], v])
    if v[0] != 0.0:
        raise ValueError("table must vanish at r = 0")
    if np.any(np.diff(k) <= 0):
        raise ValueError("table knots must be strictly increasing")
    if np.any(np.diff(v) <= 0):
        i = int(np.nonzero(np.diff(v) <= 0)[0][0])
        raise ValueError(f"table values not strictly increasing at knot r={k[i + 1]!r}")
    if loglog and k.size < 3:
        raise ValueError("log-log tables need at least two positive knots")
    return ComparisonFn("table", (tuple(k.tolist()), tuple(v.tolist()), bool(loglog), float(rtol)),
                        (), unbounded)


def from_callable(fn: Callable[[float], float], unbounded: bool = True,
                  name: str = "") -> ComparisonFn:
    """Wrap an arbitrary scalar function as a leaf (not serializable)."""
    return ComparisonFn("callable", (fn, name or getattr(fn, "__name__", "fn")), (), unbounded)


def tabulate(f: Callable | ComparisonFn, lo: float = DEFAULT_DOMAIN[0],
             hi: float = DEFAULT_DOMAIN[1], knots: int = DEFAULT_KNOTS,
             rtol: float = DEFAULT_RTOL, loglog: bool = False,
             unbounded: bool = True, max_knots: int = 1 << 15) -> ComparisonFn:
    """Sample ``f`` on log-spaced knots in ``[lo, hi]`` (plus 0) into a table.

    The knot count is doubled until the interpolant matches ``f`` at every
    cell midpoint to ``rtol`` relative accuracy (floored at ``rtol * f(lo)``);
    the achieved ``rtol`` is recorded on the table.
    """
    fv = f._eval if isinstance(f, ComparisonFn) else np.vectorize(f, otypes=[float])
    n = max(int(knots), 3)
    while True:
        k = np.geomspace(lo, hi, n)
        with np.errstate(over="ignore", invalid="ignore"):
            v = np.asarray(fv(k), dtype=float)
        # fast-growing gains overflow before hi; keep the finite prefix
        keep = np.isfinite(v) & (v < 1e300)
        if not keep.all():
            cut = int(np.argmin(keep))
            if cut < 3:
                raise OverflowError(f"function is not finite beyond r = {k[cut]:.3g}")
            k, v = k[:cut], v[:cut]
        v = _strictly_increasing(v)
        t = table(k, v, unbounded=unbounded, loglog=loglog, rtol=rtol)
        mid = np.sqrt(k[:-1] * k[1:]) if loglog else 0.5 * (k[:-1] + k[1:])
        exact = np.asarray(fv(mid), dtype=float)
        approx = t._eval(mid)
        floor = abs(v[0])
        err = np.abs(approx - exact) / np.maximum(np.abs(exact), floor)
        if np.all(err <= rtol) or n >= max_knots:
            return t
        n = 2 * n - 1


def _strictly_increasing(v: np.ndarray, rel: float = 1e-12) -> np.ndarray:
    out = np.array(v, dtype=float)
    if out[0] <= 0:
        out[0] = max(out[0], np.finfo(float).tiny * 1e10)
    for i in range(1, out.size):
        lim = out[i - 1] * (1 + rel) + 1e-300
        if out[i] <= out[i - 1]:
            out[i] = lim
    return out


# -- combinators ------------------------------------------------------------

def compose(f: ComparisonFn, g: ComparisonFn) -> ComparisonFn:
    """``(f o g)(r) = f(g(r))``, simplified for linear/power operands."""
    unb = f.unbounded and g.unbounded
    if f.tag == "zero" or g.tag == "zero":
        return zero()
    if f.tag == "linear" and f.params[0] == 1.0 and f.unbounded:
        return g
    if g.tag == "linear" and g.params[0] == 1.0 and g.unbounded:
        return f
    if f.tag == "linear" and g.tag in ("linear", "power"):
        if g.tag == "linear":
            return linear(f.params[0] * g.params[0], unbounded=unb)
        return power(f.params[0] * g.params[0], g.params[1])
    if f.tag == "power" and g.tag in ("linear", "power"):
        c, p = f.params
        if g.tag == "linear":
            return power(c * g.params[0] ** p, p)
        return power(c * g.params[0] ** p, p * g.params[1])
    return ComparisonFn("compose", (), (f, g), unb)


def fmax(*fs: ComparisonFn) -> ComparisonFn:
    fs = tuple(f for f in fs if f.tag != "zero") or (zero(),)
    if len(fs) == 1:
        return fs[0]
    if all(f.tag == "linear" for f in fs):
        return linear(max(f.params[0] for f in fs))
    return ComparisonFn("max", (), fs, any(f.unbounded for f in fs))


def fsum(*fs: ComparisonFn) -> ComparisonFn:
    fs = tuple(f for f in fs if f.tag != "zero") or (zero(),)
    if len(fs) == 1:
        return fs[0]
    if all(f.tag == "linear" for f in fs):
        return linear(sum(f.params[0] for f in fs))
    return ComparisonFn("sum", (), fs, any(f.unbounded for f in fs))


def scale(c: float, f: ComparisonFn) -> ComparisonFn:
    if c <= 0:
        raise ValueError("scale factor must be positive")
    if f.tag == "zero" or c == 1.0:
        return f
    if f.tag == "linear":
        return linear(c * f.params[0], unbounded=f.unbounded)
    if f.tag == "power":
        return power(c * f.params[0], f.params[1])
    if f.tag == "scale":
        return scale(c * f.params[0], f.children[0])
    return ComparisonFn("scale", (float(c),), (f,), f.unbounded)


def invert(f: ComparisonFn, range_cap: float | None = None,
           lo: float = DEFAULT_DOMAIN[0], hi: float = DEFAULT_DOMAIN[1],
           knots: int = DEFAULT_KNOTS, rtol: float = DEFAULT_RTOL) -> ComparisonFn:
    """Inverse of a class-K-infinity function.

    Closed-form leaves invert symbolically; everything else is tabulated on
    ``[lo, hi]`` and the table axes are swapped.  A bounded (class K) input
    is only invertible on ``[0, range_cap]``.
    """
    if f.tag == "zero":
        raise ValueError("the zero function has no inverse")
    if not f.unbounded:
        if range_cap is None:
            raise ValueError("inverting a bounded class-K function requires range_cap")
        if f.tag == "satexp" and range_cap >= f.params[0]:
            raise ValueError("range_cap exceeds the supremum of the function")
    tag, p = f.tag, f.params
    if tag == "linear":
        return linear(1.0 / p[0], unbounded=f.unbounded)
    if tag == "power":
        return power(p[0] ** (-1.0 / p[1]), 1.0 / p[1])
    if tag == "satexp":
        c, k = p
        return from_callable(lambda y: -math.log1p(-y / c) / k, unbounded=False,
                             name=f"satexp^-1({c},{k})")
    if tag == "scale":
        return compose(invert(f.children[0], range_cap=None if range_cap is None else range_cap / p[0],
                              lo=lo, hi=hi, knots=knots, rtol=rtol),
                       linear(1.0 / p[0], unbounded=f.unbounded))
    if tag == "compose":
        outer, inner = f.children
        return compose(invert(inner, lo=lo, hi=hi, knots=knots, rtol=rtol),
                       invert(outer, range_cap=range_cap, lo=lo, hi=hi, knots=knots, rtol=rtol))
    if tag == "table":
        k, v = f._table_arrays
        return table(v, k, unbounded=f.unbounded, loglog=bool(p[2]), rtol=p[3])
    if not f.unbounded and range_cap is not None:
        # tabulate only as far as needed to cover [0, range_cap]
        hi_r = _preimage_bound(f, range_cap, lo)
        t = tabulate(f, lo=lo, hi=hi_r, knots=knots, rtol=rtol, unbounded=False)
    else:
        t = tabulate(f, lo=lo, hi=hi, knots=knots, rtol=rtol)
    k, v = t._table_arrays
    return table(v, k, unbounded=f.unbounded, loglog=False, rtol=t.params[3])


def _preimage_bound(f: ComparisonFn, y: float, lo: float) -> float:
    r = max(lo, 1.0)
    for _ in range(200):
        if f._eval(np.asarray(r)) >= y:
            return r
        r *= 2.0
    raise ValueError("range_cap is not attained by the function")


# -- KL functions -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KLFn:
    """Two-argument decay bound ``beta(r, t)``.

    Either factored, ``mu1(mu2(r) * exp(-t))`` with both ``mu`` of class
    K-infinity, or ``raw``: a vectorized callable ``(r, t) -> value`` for
    bounds that are not given in factored form.
    """

    mu1: ComparisonFn | None = None
    mu2: ComparisonFn | None = None
    raw: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if self.raw is None and (self.mu1 is None or self.mu2 is None):
            raise ValueError("KLFn needs (mu1, mu2) or a raw callable")

    @property
    def factored(self) -> bool:
        return self.raw is None

    def __call__(self, r, t):
        ra = np.asarray(r, dtype=float)
        ta = np.asarray(t, dtype=float)
        if self.raw is not None:
            out = np.asarray(self.raw(ra, ta), dtype=float)
        else:
            s = self.mu2._eval(np.atleast_1d(ra).astype(float)).reshape(np.shape(ra)) * np.exp(-ta)
            out = self.mu1._eval(np.atleast_1d(np.asarray(s, dtype=float))).reshape(np.shape(s))
        if out.ndim == 0:
            return float(out)
        return out

    def at_zero(self) -> ComparisonFn:
        """The class-K function ``r -> beta(r, 0)``."""
        if self.factored:
            return compose(self.mu1, self.mu2)
        raw = self.raw
        return from_callable(lambda r: float(raw(np.asarray(r), np.asarray(0.0))),
                             name=f"{self.name or 'beta'}(.,0)")

    def scaled(self, c: float) -> "KLFn":
        """``c * beta``."""
        if self.factored:
            return KLFn(scale(c, self.mu1), self.mu2, name=self.name)
        raw = self.raw
        return KLFn(raw=lambda r, t: c * np.asarray(raw(r, t)), name=self.name)

    def to_dict(self) -> dict:
        if not self.factored:
            raise TypeError("only factored KL functions serialize")
        return {"mu1": self.mu1.to_dict(), "mu2": self.mu2.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "KLFn":
        if "mu1" not in d or "mu2" not in d:
            raise ValueError("KL function needs 'mu1' and 'mu2' entries")
        return cls(ComparisonFn.from_dict(d["mu1"]), ComparisonFn.from_dict(d["mu2"]))

    @classmethod
    def exponential(cls, gain: float = 1.0, rate: float = 1.0) -> "KLFn":
        """``gain * r * exp(-rate * t)`` in factored form."""
        # mu1(s) = gain * s**rate, mu2(r) = r**(1/rate)
        return cls(power(gain, rate), power(1.0, 1.0 / rate), name=f"{gain}*r*exp(-{rate}t)")


def _check_grid(r, t, values):
    r = np.asarray(r, dtype=float).ravel()
    t = np.asarray(t, dtype=float).ravel()
    v = np.asarray(values, dtype=float)
    if v.shape != (r.size, t.size):
        raise ValueError(f"grid values have shape {v.shape}, expected {(r.size, t.size)}")
    if np.any(np.diff(r) <= 0) or r[0] < 0:
        raise ValueError("r knots must be nonnegative and strictly increasing")
    if np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValueError("t knots must be nonnegative and strictly increasing")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("grid values must be finite and nonnegative")
    return r, t, v


def kl_factorize(r, t, values) -> KLFn:
    """Factored KL bound dominating a sampled KL grid at every knot.

    ``mu2(r_i) = max_j values[i, j] * exp(t_j)`` (made strictly increasing);
    ``mu1`` is the monotone envelope ``s -> max{values[i, j] : mu2(r_i) e^{-t_j} <= s}``
    which never exceeds the identity.

    Raises
    ------
    ValueError
        If the grid is not nondecreasing in ``r`` and nonincreasing in ``t``.
    """
    r, t, v = _check_grid(r, t, values)
    tol = 1e-12 * max(1.0, float(v.max(initial=0.0)))
    dr = np.diff(v, axis=0)
    if np.any(dr < -tol):
        i, j = np.argwhere(dr < -tol)[0]
        raise ValueError(f"grid decreases in r at (r, t) = ({r[i + 1]}, {t[j]})")
    dt = np.diff(v, axis=1)
    if np.any(dt > tol):
        i, j = np.argwhere(dt > tol)[0]
        raise ValueError(f"grid increases in t at (r, t) = ({r[i]}, {t[j + 1]})")
    if r[0] == 0.0:
        if np.any(v[0] > tol):
            raise ValueError("grid must vanish at r = 0")
        r, v = r[1:], v[1:]
    if r.size == 0 or not np.any(v > 0):
        return KLFn(identity(), identity(), name="factored")

    m = np.max(v * np.exp(t)[None, :], axis=1)
    m = np.maximum.accumulate(np.maximum(m, 1e-12 * r))
    m = _strictly_increasing(m, rel=1e-9)
    mu2 = table(r, m)

    s = (m[:, None] * np.exp(-t)[None, :]).ravel()
    order = np.argsort(s, kind="stable")
    s_sorted, v_sorted = s[order], v.ravel()[order]
    uniq, first = np.unique(s_sorted, return_index=True)
    last = np.append(first[1:], s_sorted.size) - 1
    env = np.maximum.accumulate(v_sorted)[last]
    env = np.maximum(env, 1e-12 * uniq)
    env = _strictly_increasing(env, rel=1e-9)
    # unit-slope tail keeps mu1 unbounded
    knots = np.append(uniq, 2.0 * uniq[-1])
    vals = np.append(env, env[-1] + uniq[-1])
    mu1 = table(knots, vals)
    return KLFn(mu1, mu2, name="factored")


def kl_majorize(r, t, values, tail_ratio: float = 0.1, small_ratio: float = 0.1) -> KLFn:
    """KL function dominating a sampled map ``Phi(r, t)`` on its knots.

    The two sufficient conditions for KL-majorizability are checked on the
    knots first: the last time column must have decayed to ``tail_ratio`` of
    each row's peak (uniform eventual smallness), and the smallest-radius
    row's peak must be at most ``small_ratio`` of the largest row peak
    (smallness near ``r = 0``).

    Raises
    ------
    KLConditionError
        Naming the violated condition and a witness knot.
    """
    r, t, v = _check_grid(r, t, values)
    peaks = v.max(axis=1)
    for i in range(r.size):
        if peaks[i] > 0 and v[i, -1] > tail_ratio * peaks[i]:
            raise KLConditionError(1, (float(r[i]), float(t[-1])),
                                   f"value {v[i, -1]:.6g} has not decayed below "
                                   f"{tail_ratio} x peak {peaks[i]:.6g}")
    if r[0] == 0.0 and peaks[0] > 0:
        raise KLConditionError(2, (0.0, float(t[int(np.argmax(v[0]))])), "nonzero at r = 0")
    i0 = 1 if r[0] == 0.0 and r.size > 1 else 0
    if peaks.max() > 0 and peaks[i0] > small_ratio * peaks.max():
        raise KLConditionError(2, (float(r[i0]), float(t[int(np.argmax(v[i0]))])),
                               f"peak {peaks[i0]:.6g} at the smallest radius is not small")
    # monotone envelope: max over r' <= r and t' >= t
    env = np.flip(np.maximum.accumulate(np.flip(v, axis=1), axis=1), axis=1)
    env = np.maximum.accumulate(env, axis=0)
    return kl_factorize(r, t, env)


def kl_cascade(beta_hat: KLFn, r_knots: Sequence[float] | None = None,
               knots: int = DEFAULT_KNOTS) -> tuple[KLFn, ComparisonFn]:
    """Cascade bound for sequences that halve or follow ``beta_hat``.

    Returns ``(beta, nu)`` such that any continuous ``mu`` satisfying
    ``mu(t2) <= max{beta_hat(mu(t1), t2 - t1), mu(t1)/2, C}`` for all
    ``t1 < t2 <= tau`` obeys ``mu(tau) <= max{beta(mu(0), tau), nu(C)}``.

    ``beta_hat`` is premajorized to
    ``max{beta_hat(r, t), max{beta_hat(r, 0), r} e^{-t}}``; ``beta`` is the
    restart function built from the halving times, made nonincreasing in
    ``t`` exactly and nondecreasing in ``r`` over ``r_knots`` (log-spaced
    on the default domain when omitted, ``knots`` of them).
    """
    b0 = fmax(beta_hat.at_zero(), identity())

    def btilde(r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        return np.maximum(np.asarray(beta_hat(r, t), dtype=float), b0._eval(np.atleast_1d(r)).reshape(r.shape) * np.exp(-t))

    @lru_cache(maxsize=65536)
    def halving_time(r: float) -> float:
        if r <= 0:
            return math.log(2.0)
        target = 0.5 * r
        lo, hi = 0.0, math.log(2.0)
        while float(btilde(r, hi)) > target:
            lo, hi = hi, 2.0 * hi
            if hi > 1e12:
                raise ValueError(f"beta_hat({r}, t) does not decay to r/2")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(btilde(r, mid)) > target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(1.0, hi):
                break
        return hi

    def restart(r: float, t: float) -> float:
        if r <= 0:
            return 0.0
        start, k, rk = 0.0, 0, r
        while True:
            tk = halving_time(rk)
            if t < start + tk or rk < 1e-300:
                break
            start += tk
            k += 1
            rk = r / 2.0 ** k
        phi = float(btilde(rk, t - start))
        # sup over later pieces, each bounded by its starting value
        tail = float(b0(rk / 2.0))
        return max(phi, tail)

    grid = np.asarray(r_knots, dtype=float) if r_knots is not None else np.geomspace(*DEFAULT_DOMAIN, knots)

    def beta(r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        rb, tb = np.broadcast_arrays(r, t)
        out = np.empty(rb.shape, dtype=float)
        for idx in np.ndindex(rb.shape):
            ri, ti = float(rb[idx]), float(tb[idx])
            val = restart(ri, ti)
            for rk in grid[grid <= ri]:
                val = max(val, restart(float(rk), ti))
            out[idx] = val
        return out

    nu = compose(b0, linear(2.0))
    return KLFn(raw=beta, name="cascade"), nu
