"""Command-line front end: one YAML config in, a JSON report and CSV files out.

Exit status is 0 when the task succeeds (or the checked property holds on
the samples), 2 when a check is falsified (a witness is written) and 1 on
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import checks, comparison, dynamics, fixtures, linear, lyapunov, observer, valuefn
from .comparison import ComparisonFn, KLFn
from .report import CheckReport, dumps

TASKS = ("simulate", "check", "lyapunov", "linear", "observe", "valuefn")
EXIT_OK, EXIT_ERROR, EXIT_FALSIFIED = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration value at ``path`` (dotted key path)."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class _Cfg:
    """Mapping view that remembers its key path for error messages."""

    def __init__(self, data: Any, path: str = ""):
        self.data = {} if data is None else data
        self.path = path
        if not isinstance(self.data, dict):
            raise ConfigError(path or "<root>", f"expected a mapping, got {type(self.data).__name__}")

    def _p(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def sub(self, key: str, required: bool = False) -> "_Cfg":
        if key not in self.data:
            if required:
                raise ConfigError(self._p(key), "missing required section")
            return _Cfg({}, self._p(key))
        return _Cfg(self.data[key], self._p(key))

    def get(self, key: str, default: Any = None, kind: type | tuple | None = None, required: bool = False):
        if key not in self.data:
            if required:
                raise ConfigError(self._p(key), "missing required key")
            return default
        v = self.data[key]
        if kind is float:
            try:
                return float(v)
            except (TypeError, ValueError):
                raise ConfigError(self._p(key), f"expected a number, got {v!r}") from None
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(self._p(key), f"expected an integer, got {v!r}")
            return v
        if kind is bool and not isinstance(v, bool):
            raise ConfigError(self._p(key), f"expected true/false, got {v!r}")
        if kind is str and not isinstance(v, str):
            raise ConfigError(self._p(key), f"expected a string, got {v!r}")
        return v

    def array(self, key: str, default=None, required: bool = False, ndim: int | None = None) -> np.ndarray | None:
        v = self.get(key, default, required=required)
        if v is None:
            return None
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(self._p(key), f"expected a numeric array, got {v!r}") from None
        if ndim is not None and arr.ndim != ndim:
            raise ConfigError(self._p(key), f"expected a {ndim}-d array, got shape {arr.shape}")
        return arr

    def fn(self, key: str, required: bool = False) -> ComparisonFn | None:
        if key not in self.data:
            if required:
                raise ConfigError(self._p(key), "missing required gain")
            return None
        return parse_gain(self.data[key], self._p(key))

    def kl(self, key: str, required: bool = False) -> KLFn | None:
        if key not in self.data:
            if required:
                raise ConfigError(self._p(key), "missing required KL function")
            return None
        return parse_kl(self.data[key], self._p(key))


def parse_gain(spec: Any, path: str) -> ComparisonFn:
    """Comparison function from a config value.

    Accepts a number ``c`` (meaning ``c r``), ``"id"``, ``"zero"``, or a
    mapping in the serialized tree format (``tag``, ``params``,
    ``children``).
    """
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return comparison.linear(float(spec))
    if spec in ("id", "identity"):
        return comparison.identity()
    if spec == "zero":
        return comparison.zero()
    try:
        return ComparisonFn.from_dict(spec)
    except (ValueError, TypeError, KeyError, IndexError) as exc:
        raise ConfigError(path, f"invalid comparison function: {exc}") from None


def parse_kl(spec: Any, path: str) -> KLFn:
    """KL function: ``{exponential: {gain, rate}}`` or ``{mu1: ..., mu2: ...}``."""
    if not isinstance(spec, dict):
        raise ConfigError(path, f"expected a mapping, got {spec!r}")
    if "exponential" in spec:
        e = _Cfg(spec["exponential"], f"{path}.exponential")
        return KLFn.exponential(e.get("gain", 1.0, float), e.get("rate", 1.0, float))
    if "mu1" not in spec or "mu2" not in spec:
        raise ConfigError(path, "KL function needs 'exponential' or both 'mu1' and 'mu2'")
    return KLFn(parse_gain(spec["mu1"], f"{path}.mu1"), parse_gain(spec["mu2"], f"{path}.mu2"))


def parse_system(cfg: _Cfg) -> dynamics.SystemModel:
    """``system`` is a fixture name or an inline ``{A, B, C}`` linear system."""
    if not cfg.has("system"):
        raise ConfigError("system", "missing required key")
    spec = cfg.data["system"]
    if isinstance(spec, str):
        try:
            return fixtures.get_fixture(spec)
        except KeyError:
            raise ConfigError("system", f"unknown fixture {spec!r}; known: {fixtures.list_fixtures()}") from None
    s = _Cfg(spec, "system")
    A = s.array("A", required=True, ndim=2)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError("system.A", f"must be square, got shape {A.shape}")
    B = s.array("B", np.zeros((n, 0)))
    C = s.array("C", np.zeros((0, n)))
    B = B.reshape(n, -1) if B.size else np.zeros((n, 0))
    C = C.reshape(-1, n) if C.size else np.zeros((0, n))
    try:
        return dynamics.linear_model(A, B, C, name=s.get("name", "inline-linear", str))
    except ValueError as exc:
        raise ConfigError("system", str(exc)) from None


def parse_signal(spec: Any, dim: int, path: str, bounded: bool = False) -> dynamics.Signal:
    """``{constant: [...]}``, ``{knots: [...], values: [[...]]}`` or absent (zero)."""
    if spec is None:
        return dynamics.Signal.zero(dim)
    s = _Cfg(spec, path)
    if s.has("constant"):
        v = s.array("constant").reshape(-1)
        if v.size != dim:
            raise ConfigError(f"{path}.constant", f"expected {dim} entries, got {v.size}")
        return dynamics.Signal.constant(v, bounded=bounded)
    knots = s.array("knots", required=True, ndim=1)
    vals = s.array("values", required=True).reshape(len(knots), -1) if dim else np.zeros((len(knots), 0))
    if vals.shape[1] != dim:
        raise ConfigError(f"{path}.values", f"expected rows of {dim} entries")
    return dynamics.Signal.piecewise(knots, vals, bounded=bounded)


def parse_battery(cfg: _Cfg, seed: int, paired: bool = False) -> checks.Battery:
    return checks.Battery(
        n_runs=cfg.get("n_runs", 50, int), r_min=cfg.get("r_min", 0.1, float),
        r_max=cfg.get("r_max", 10.0, float), horizon=cfg.get("horizon", 10.0, float),
        u_max=cfg.get("u_max", 1.0, float), max_switches=cfg.get("max_switches", 4, int),
        seed=seed, paired=paired,
        extra_x0=tuple(tuple(np.atleast_1d(x).tolist()) for x in cfg.get("extra_x0", []) or []),
        zero_input_fraction=cfg.get("zero_input_fraction", 0.25, float))


def parse_estimate(cfg: _Cfg) -> checks.EstimateSpec:
    kind = cfg.get("kind", required=True, kind=str)
    if kind not in checks.KINDS:
        raise ConfigError(cfg._p("kind"), f"unknown kind {kind!r}; expected one of {sorted(checks.KINDS)}")
    g = cfg.sub("gains", required=True)
    gains: dict = {}
    for slot in checks.KINDS[kind]:
        if not g.has(slot):
            continue
        if slot in ("beta", "lam"):
            gains[slot] = g.kl(slot)
        elif slot == "c":
            gains[slot] = g.get(slot, kind=float)
        else:
            gains[slot] = g.fn(slot)
    for extra in g.data:
        if extra not in checks.KINDS[kind]:
            raise ConfigError(g._p(extra), f"not a gain of {kind}; expected {list(checks.KINDS[kind])}")
    try:
        return checks.EstimateSpec(kind, gains)
    except (TypeError, ValueError) as exc:
        raise ConfigError(g.path, str(exc)) from None


def _ball(n: int, radius: float, count: int, rng) -> np.ndarray:
    d = rng.normal(size=(count, n))
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
    return d * rng.uniform(0.0, radius, (count, 1))


# -- tasks ------------------------------------------------------------------

def task_simulate(cfg: _Cfg, sys, out: Path, seed: int, tol: float | None) -> tuple[dict, int]:
    s = cfg.sub("simulate")
    x0 = s.array("x0", required=True).reshape(-1)
    if x0.size != sys.n:
        raise ConfigError("simulate.x0", f"expected {sys.n} entries, got {x0.size}")
    u = parse_signal(s.get("u"), sys.m_u, "simulate.u")
    w = parse_signal(s.get("w"), sys.m_w, "simulate.w", bounded=True)
    horizon = s.get("horizon", 10.0, float)
    tr = dynamics.simulate(sys, x0, u, w, horizon, rtol=s.get("rtol", 1e-10, float),
                           atol=s.get("atol", 1e-12, float) if tol is None else tol)
    tr.to_csv(out / "trajectory.csv")
    integral = tr.integral(tr.x_norm)
    return {"task": "simulate", "system": sys.name, "termination": tr.termination.to_dict(),
            "t_end": float(tr.times[-1]), "knots": int(tr.times.size),
            "integral_state_norm": float(integral[-1]), "final_state": tr.states[-1].tolist()}, EXIT_OK


def _write_witness(out: Path, sys, rep: CheckReport, sim_rtol: float, sim_atol: float) -> None:
    (out / "witness.json").write_text(dumps(rep.witness))
    item = rep.witness.get("item") if isinstance(rep.witness, dict) else None
    if item is not None:
        it = checks.BatteryItem.from_dict(item)
        tr = dynamics.simulate(sys, it.x0, it.u, it.w, it.horizon, rtol=sim_rtol, atol=sim_atol)
        tr.to_csv(out / "witness.csv")


def task_check(cfg: _Cfg, sys, out: Path, seed: int, tol: float | None) -> tuple[dict, int]:
    c = cfg.sub("check", required=True)
    spec = parse_estimate(c)
    bat = parse_battery(c.sub("battery"), seed, paired=spec.kind == "dUIOSS")
    atol = c.get("atol", 1e-9, float) if tol is None else tol
    sim_rtol, sim_atol = c.get("sim_rtol", 1e-9, float), c.get("sim_atol", 1e-12, float)
    rep = checks.check_estimate(sys, spec, bat, atol=atol, rtol=c.get("rtol", 1e-6, float),
                                sim_rtol=sim_rtol, sim_atol=sim_atol)
    code = EXIT_OK
    if rep.falsified:
        _write_witness(out, sys, rep, sim_rtol, sim_atol)
        code = EXIT_FALSIFIED
    return {"task": "check", "system": sys.name, "kind": spec.kind, "seed": seed, "report": rep}, code


def task_replay(cfg: _Cfg, sys, out: Path, seed: int, tol: float | None, witness_path: str) -> tuple[dict, int]:
    c = cfg.sub("check", required=True)
    spec = parse_estimate(c)
    try:
        witness = json.loads(Path(witness_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("--witness", f"cannot read witness file: {exc}") from None
    if not isinstance(witness, dict) or "item" not in witness:
        raise ConfigError("--witness", "file holds no witness item")
    atol = c.get("atol", 1e-9, float) if tol is None else tol
    rep = checks.replay_witness(sys, spec, witness, atol=atol, rtol=c.get("rtol", 1e-6, float))
    return ({"task": "replay", "system": sys.name, "kind": spec.kind, "report": rep},
            EXIT_FALSIFIED if rep.falsified else EXIT_OK)


def _require_linear(sys, path: str = "system") -> linear.LinearSystem:
    try:
        return linear.LinearSystem.from_model(sys)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(path, f"task needs a linear system: {exc}") from None


def task_linear(cfg: _Cfg, sys, out: Path, seed: int, tol: float | None) -> tuple[dict, int]:
    c = cfg.sub("linear")
    lin = _require_linear(sys)
    L = c.array("L")
    det = linear.detectability_check(lin, L)
    result: dict = {"task": "linear", "system": sys.name,
                    "detectable": bool(det.detectable), "reason": det.reason}
    if not det.detectable:
        return result, EXIT_FALSIFIED
    cert = linear.synthesize_certificate(lin, det.L)
    result["certificate"] = cert.to_dict()
    rng = np.random.default_rng(seed)
    radius = c.get("radius", 10.0, float)
    states = _ball(sys.n, radius, c.get("states", 200, int), rng)
    controls = _ball(sys.m_u, radius, c.get("controls", 50, int), rng) if sys.m_u else None
    rep = lyapunov.verify_dissipation(sys, cert.candidate(), states, controls, atol=1e-9 if tol is None else tol)
    result["dissipation"] = rep
    return result, EXIT_FALSIFIED if rep.falsified else EXIT_OK


def task_lyapunov(cfg: _Cfg, sys, out: Path, seed: int, tol: float | None) -> tuple[dict, int]:
    """Quadratic candidate ``x'Px`` with configured gains; optional exponential-decay rescale."""
    c = cfg.sub("lyapunov", required=True)
    P = c.array("P", required=True, ndim=2)
    if P.shape != (sys.n, sys.n):
        raise ConfigError("lyapunov.P", f"expected shape {(sys.n, sys.n)}, got {P.shape}")
    P = 0.5 * (P + P.T)
    lam = np.linalg.eigvalsh(P)
    if lam[0] <= 0:
        raise ConfigError("lyapunov.P", "must be positive definite")
    cand = lyapunov.LyapCandidate(lambda x: float(x @ P @ x), comparison.power(float(lam[0]), 2.0),
                                  comparison.power(float(lam[-1]), 2.0), c.fn("alpha", required=True),
                                  c.fn("sigma1"), c.fn("sigma2"), lambda x: 2.0 * P @ x)
    rng = np.random.default_rng(seed)
    radius = c.get("radius", 5.0, float)
    states = _ball(sys.n, radius, c.get("states", 500, int), rng)
    controls = _ball(sys.m_u, radius, c.get("controls", 20, int), rng) if sys.m_u else None
    atol = 1e-9 if tol is None else tol
    rep = lyapunov.verify_dissipation(sys, cand, states, controls, atol=atol)
    result: dict = {"task": "lyapunov", "system": sys.name, "dissipation": rep}
    code = EXIT_FALSIFIED if rep.falsified else EXIT_OK
    if c.get("rescale", False, bool):
        w = lyapunov.exp_decay_rescale(cand)
        rrep = lyapunov.verify_dissipation(sys, w, states, controls, atol=atol)
        result["rescaled_dissipation"] = rrep
        rho = w.meta["rho"]
        probe = np.geomspace(0.01, 10.0, 9)
        result["rho_samples"] = {"r": probe.tolist(), "rho": [float(rho(float(r))) for r in probe]}
        if rrep.falsified:
            code = EXIT_FALSIFIED
    if c.get("hji", False, bool):
        hrep = lyapunov.hji_check(sys, cand.V, c.fn("hji_sigma1"), c.fn("hji_sigma2"),
                                  states[: c.get("hji_states", 201, int)], grad=cand.grad)
        result["hji"] = hrep
        if hrep.falsified:
            code = EXIT_FALSIFIED
    return result, code


def task_observe(cfg: _Cfg, sys, out: Path, seed: int, tol: float | None) -> tuple[dict, int]:
    c = cfg.sub("observe")
    lin = _require_linear(sys)
    det = linear.detectability_check(lin, c.array("L"))
    if not det.detectable:
        raise ConfigError("observe.L", f"no detectable injection: {det.reason}")
    cert = linear.synthesize_certificate(lin, det.L)
    est = observer.build_estimator(lyapunov.exp_decay_rescale(cert.candidate()))
    bat = parse_battery(c.sub("battery"), seed)
    items = bat.generate(sys)
    gap = observer.verify_gap_decay(sys, est, items)
    uioss = observer.verify_estimator_implies_uioss(sys, est, items)
    first = items[0]
    _, trace = observer.run_coupled(sys, est, first.x0, 0.0, first.u, first.w, first.horizon)
    trace.to_csv(out / "estimator.csv")
    code = EXIT_FALSIFIED if (gap.falsified or uioss.falsified) else EXIT_OK
    return {"task": "observe", "system": sys.name, "L": det.L.tolist(), "gap_decay": gap,
            "uioss": uioss}, code


def task_valuefn(cfg: _Cfg, sys, out: Path, seed: int, tol: float | None) -> tuple[dict, int]:
    c = cfg.sub("valuefn")
    rho = c.fn("rho") or comparison.linear(2.0)
    radius = c.get("radius", 1.0, float)
    nodes = c.get("nodes", 401, int)
    grid = valuefn.StateGrid.cube(radius, nodes, sys.n)
    geo = valuefn.GeometrySets(sys, rho, grid)
    mu1 = c.fn("mu1") or comparison.identity()
    mu2 = c.fn("mu2") or comparison.identity()
    Xi = valuefn.xi_from_mu1(mu1)
    try:
        v0 = valuefn.compute_v0(sys, geo, Xi, tol=c.get("tol", 1e-6, float) if tol is None else tol,
                                max_sweeps=c.get("max_sweeps", 10_000, int), mode=c.get("mode", "vertex", str),
                                provenance={"mu1": mu1.to_dict(), "mu2": mu2.to_dict()})
    except ValueError as exc:
        raise ConfigError("valuefn", str(exc)) from None
    v0.to_csv(out / "value_grid.csv")
    vals = v0.values.ravel()
    r = np.linalg.norm(grid.nodes, axis=1)
    upper_margin = float(np.min(np.asarray(mu2(r), dtype=float) - vals))
    result: dict = {"task": "valuefn", "system": sys.name, "value": v0.summary(),
                    "bounds": {"min_value": float(vals.min()), "upper_margin": upper_margin}}
    code = EXIT_OK
    if c.get("dissipation", True, bool):
        try:
            rep = valuefn.check_v0_dissipation(v0, sys, valuefn.SpanBattery(
                n_spans=c.get("spans", 50, int), span=c.get("span", 0.5, float), seed=seed))
        except ValueError as exc:
            rep = None
            result["dissipation"] = {"skipped": str(exc)}
        if rep is not None:
            result["dissipation"] = rep
            if rep.falsified:
                code = EXIT_FALSIFIED
    if c.has("alpha"):
        alpha = c.get("alpha", kind=float)
        env = valuefn.inf_convolve(v0, alpha)
        gap = vals - env.values.ravel()
        om = valuefn.modulus_of_continuity(v0, alpha * np.sqrt(2.0 * max(vals.max(), 0.0)))
        result["inf_convolution"] = {"alpha": alpha, "min_gap": float(gap.min()), "max_gap": float(gap.max()),
                                     "modulus": om, "lipschitz_bound": env.extras["lipschitz_bound"]}
    return result, code


_HANDLERS = {"simulate": task_simulate, "check": task_check, "lyapunov": task_lyapunov,
             "linear": task_linear, "observe": task_observe, "valuefn": task_valuefn}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iosskit", description="Stability-estimate checks from a YAML config.")
    p.add_argument("command", choices=TASKS + ("replay",))
    p.add_argument("--config", required=True, help="YAML configuration file")
    p.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--tolerance", type=float, default=None, help="absolute check tolerance override")
    p.add_argument("--witness", default=None, help="witness.json to replay (replay only)")
    return p


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            raw = yaml.safe_load(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"YAML parse error: {exc}") from None
        cfg = _Cfg(raw)
        task = cfg.get("task", None, str)
        cmd = args.command
        if cmd == "replay":
            if task not in (None, "check"):
                raise ConfigError("task", "replay needs a check configuration")
            if not args.witness:
                raise ConfigError("--witness", "replay needs --witness PATH")
        elif task is not None and task != cmd:
            raise ConfigError("task", f"config is for {task!r} but the command is {cmd!r}")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0, int)
        sysm = parse_system(cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if cmd == "replay":
            result, code = task_replay(cfg, sysm, out, seed, args.tolerance, args.witness)
        else:
            result, code = _HANDLERS[cmd](cfg, sysm, out, seed, args.tolerance)
    except ConfigError as exc:
        print(f"error: invalid configuration at {exc.path}: {exc.message}", file=_sys.stderr)
        return EXIT_ERROR
    result["exit_status"] = code
    text = dumps(result)
    (out / "report.json").write_text(text)
    print(text, end="")
    return code


def main() -> None:
    _sys.exit(run())


if __name__ == "__main__":
    main()
