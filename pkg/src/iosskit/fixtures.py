"""Named reference systems addressable from configs and the CLI."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .dynamics import SystemModel, linear_model, smooth_step

__all__ = ["bump", "get_fixture", "list_fixtures", "register", "ESCAPE_EPS", "EPS_F", "EPS_H"]

ESCAPE_EPS = 0.2
EPS_F = 0.1
EPS_H = 0.3 * (1.0 - EPS_F) * math.exp(-1.0)

_REGISTRY: dict[str, Callable[[], SystemModel]] = {}


def register(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory
    return deco


def get_fixture(name: str) -> SystemModel:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {sorted(_REGISTRY)}") from None


def list_fixtures() -> list[str]:
    return sorted(_REGISTRY)


def bump(s: float, eps: float) -> float:
    """Smooth bump ``exp(-s^2 / (eps^2 - s^2))`` on ``|s| < eps``, zero outside."""
    s2 = s * s
    e2 = eps * eps
    return math.exp(-s2 / (e2 - s2)) if s2 < e2 else 0.0


def _gate(x: float, eps: float) -> float:
    """Shared switching pattern: 1 outside (-1, 1) damped near +-1, minus the inner decay."""
    if x >= 1.0:
        return 1.0 - bump(x - 1.0, eps)
    if x <= -1.0:
        return 1.0 - bump(x + 1.0, eps)
    return -(1.0 - bump(x + 1.0, eps)) * (1.0 - bump(x - 1.0, eps))


@register("remark-3-10")
def _escape_fixture() -> SystemModel:
    eps = ESCAPE_EPS

    def f(x, u, w):
        s = x[0]
        g = _gate(s, eps)
        # cubic growth outside [-1, 1], linear decay inside
        return np.array([s ** 3 * g if abs(s) >= 1.0 else s * g])

    def h(x):
        s = x[0]
        return np.array([s * (1.0 - smooth_step(abs(s), 2.0, 3.0))])

    return SystemModel(1, 0, 0, 1, f, h, name="remark-3-10", meta={"eps": eps})


@register("example-6-3-sigma1")
def _sigma1() -> SystemModel:
    ef, eh = EPS_F, EPS_H

    def f(x, u, w):
        return np.array([x[0] * _gate(x[0], ef)])

    def h(x):
        return np.array([1.0 - bump(x[0], eh)])

    return SystemModel(1, 0, 0, 1, f, h, name="example-6-3-sigma1", meta={"eps_f": ef, "eps_h": eh})


@register("example-6-3-sigma2")
def _sigma2() -> SystemModel:
    # h(0) = 1 by construction, so the zero-output check is skipped
    return SystemModel(1, 0, 0, 1, lambda x, u, w: np.array([x[0]]), lambda x: np.array([1.0]),
                       name="example-6-3-sigma2", check_zero=False)


@register("linear-double-integrator")
def _double_integrator() -> SystemModel:
    return linear_model([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]],
                        name="linear-double-integrator")


@register("scalar-decay")
def _scalar_decay() -> SystemModel:
    return linear_model([[-1.0]], [[1.0]], [[1.0]], name="scalar-decay")


@register("decay-observed")
def _decay_observed() -> SystemModel:
    return linear_model([[-1.0]], None, [[1.0]], name="decay-observed")


@register("decay-blind")
def _decay_blind() -> SystemModel:
    return SystemModel(1, 0, 0, 1, lambda x, u, w: -x, lambda x: np.zeros(1), name="decay-blind",
                       affine=(lambda x: -x, lambda x: np.zeros((1, 0))))


@register("frozen")
def _frozen() -> SystemModel:
    return SystemModel(1, 0, 0, 1, lambda x, u, w: np.zeros(1), lambda x: np.zeros(1), name="frozen")
