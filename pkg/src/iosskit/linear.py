"""Detectability and quadratic IOSS certificates for LTI systems.

Hurwitz testing goes through the Lyapunov equation ``M'P + PM = -I``: the
solve succeeds with ``P`` positive definite exactly when ``M`` is Hurwitz,
so no eigensolver is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .comparison import ComparisonFn, KLFn, linear as lin_gain, power, zero
from .dynamics import SystemModel, linear_model
from .lyapunov import LyapCandidate

__all__ = [
    "LinearSystem",
    "HurwitzResult",
    "QuadraticCertificate",
    "DetectabilityResult",
    "lyapunov_solve",
    "is_hurwitz",
    "spectral_norm",
    "synthesize_certificate",
    "detectability_check",
    "MAX_DIM",
]

MAX_DIM = 32
_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``x' = Ax + Bu``, ``y = Cx``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, -1) if np.size(self.B) else np.zeros((n, 0))
        C = np.asarray(self.C, dtype=float).reshape(-1, n) if np.size(self.C) else np.zeros((0, n))
        for name, M in (("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_model(cls, sys: SystemModel) -> "LinearSystem":
        if "A" not in sys.meta:
            raise ValueError(f"system {sys.name!r} carries no linear realization")
        return cls(sys.meta["A"], sys.meta["B"], sys.meta["C"])

    def to_model(self, name: str = "linear") -> SystemModel:
        return linear_model(self.A, self.B, self.C, name=name)


@dataclass(frozen=True, eq=False)
class HurwitzResult:
    """Verdict of the Lyapunov-equation Hurwitz test.

    ``degenerate`` marks a singular Lyapunov operator, i.e. some pair of
    eigenvalues sums to zero (this includes eigenvalues on the imaginary axis).
    """

    hurwitz: bool
    P: np.ndarray | None
    residual: float
    degenerate: bool = False
    reason: str = ""

    def __bool__(self) -> bool:
        return self.hurwitz


def _sym_index(n):
    idx = {}
    k = 0
    for i in range(n):
        for j in range(i, n):
            idx[(i, j)] = k
            k += 1
    return idx


def lyapunov_solve(M: np.ndarray, Q: np.ndarray | None = None) -> tuple[np.ndarray | None, float]:
    """Solve ``M'P + PM = -Q`` over symmetric ``P``.

    Returns ``(P, cond)``; ``P`` is None when the symmetric operator is
    numerically singular.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > MAX_DIM:
        raise ValueError(f"dense Lyapunov solve limited to n <= {MAX_DIM}")
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    idx = _sym_index(n)
    m = len(idx)
    K = np.zeros((m, m))
    rhs = np.zeros(m)
    # entry (i, j) of M'P + PM is sum_k M[k,i] P[k,j] + P[i,k] M[k,j]
    for (i, j), row in idx.items():
        rhs[row] = -Q[i, j]
        for k in range(n):
            K[row, idx[(min(k, j), max(k, j))]] += M[k, i]
            K[row, idx[(min(i, k), max(i, k))]] += M[k, j]
    cond = float(np.linalg.cond(K))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        return None, cond
    sol = np.linalg.solve(K, rhs)
    P = np.empty((n, n))
    for (i, j), row in idx.items():
        P[i, j] = P[j, i] = sol[row]
    return P, cond


def is_hurwitz(M) -> HurwitzResult:
    """Hurwitz test via solvability and definiteness of ``M'P + PM = -I``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    P, cond = lyapunov_solve(M)
    if P is None:
        return HurwitzResult(False, None, float("inf"), True,
                             "eigenvalue on imaginary axis or solver degeneracy "
                             f"(operator condition {cond:.3g})")
    res = float(np.max(np.abs(M.T @ P + P @ M + np.eye(M.shape[0]))))
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return HurwitzResult(False, P, res, False, "Lyapunov solution is not positive definite")
    return HurwitzResult(True, P, res)


def spectral_norm(M, iters: int = 500, tol: float = 1e-15) -> float:
    """Largest singular value by power iteration on ``M'M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 or not np.any(M):
        return 0.0
    G = M.T @ M
    v = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    # a fixed start can be orthogonal to the top eigenvector
    v = v + 1e-3 * np.arange(1, G.shape[0] + 1)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        lam_new = float(v @ G @ v)
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(lam))


@dataclass(frozen=True, eq=False)
class QuadraticCertificate:
    """Quadratic storage ``V(x) = x'Px`` for ``A + LC`` with its gains.

    ``sigma1_coef`` and ``sigma2_coef`` are the coefficients ``c`` of the
    quadratic gains ``c r^2``; the state term is ``-|x|^2 / 2``.  ``(K,
    delta)`` bound ``|exp(t(A+LC))| <= K exp(-delta t)`` on ``time_grid``.
    """

    system: LinearSystem
    P: np.ndarray
    L: np.ndarray
    residual: float
    norm_P: float
    norm_B: float
    norm_L: float
    K: float
    delta: float
    time_grid: np.ndarray = field(repr=False)

    @property
    def sigma1_coef(self) -> float:
        return 4.0 * self.norm_P ** 2 * self.norm_B ** 2

    @property
    def sigma2_coef(self) -> float:
        return 4.0 * self.norm_P ** 2 * self.norm_L ** 2

    def V(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def gradV(self, x) -> np.ndarray:
        return 2.0 * self.P @ np.asarray(x, dtype=float)

    def gains(self) -> dict[str, ComparisonFn]:
        """``alpha, sigma1, sigma2`` of the dissipation inequality."""
        out = {"alpha": power(0.5, 2.0)}
        out["sigma1"] = power(self.sigma1_coef, 2.0) if self.sigma1_coef > 0 else zero()
        out["sigma2"] = power(self.sigma2_coef, 2.0) if self.sigma2_coef > 0 else zero()
        return out

    def ioss_gains(self, form: str = "max") -> tuple[KLFn, ComparisonFn, ComparisonFn]:
        """Decay and gain functions of the trajectory estimate.

        ``form='sum'`` gives ``K e^{-delta t} r``, ``K|B|/delta r`` and
        ``K|L|/delta r`` for the additive bound; ``form='max'`` scales each
        by 3 so that the pointwise maximum dominates the sum.
        """
        if form not in ("max", "sum"):
            raise ValueError("form must be 'max' or 'sum'")
        c = 3.0 if form == "max" else 1.0
        beta = KLFn(power(c * self.K, self.delta), power(1.0, 1.0 / self.delta), name="K exp(-delta t) r")
        g1 = lin_gain(c * self.K * self.norm_B / self.delta) if self.norm_B > 0 else zero()
        g2 = lin_gain(c * self.K * self.norm_L / self.delta) if self.norm_L > 0 else zero()
        return beta, g1, g2

    def candidate(self):
        """:class:`LyapCandidate` with ``lambda_min(P) r^2 <= V <= lambda_max(P) r^2``."""
        lam = np.linalg.eigvalsh(self.P)
        g = self.gains()
        return LyapCandidate(self.V, power(float(lam[0]), 2.0), power(float(lam[-1]), 2.0), g["alpha"],
                             g["sigma1"], g["sigma2"], self.gradV, meta={"certificate": self})

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "L": self.L.tolist(),
            "residual": self.residual,
            "sigma1_coef": self.sigma1_coef,
            "sigma2_coef": self.sigma2_coef,
            "alpha": "r^2/2",
            "K": self.K,
            "delta": self.delta,
            "time_grid": [float(self.time_grid[0]), float(self.time_grid[-1]), int(self.time_grid.size)],
        }


def synthesize_certificate(sys: LinearSystem, L, n_times: int = 2001) -> QuadraticCertificate:
    """Quadratic certificate for ``A + LC``.

    Raises
    ------
    ValueError
        ``A + LC`` is not Hurwitz.
    """
    L = np.asarray(L, dtype=float).reshape(sys.n, -1) if np.size(L) else np.zeros((sys.n, sys.C.shape[0]))
    if L.shape[1] != sys.C.shape[0]:
        raise ValueError(f"L must be {sys.n} x {sys.C.shape[0]}")
    M = sys.A + L @ sys.C
    hz = is_hurwitz(M)
    if not hz:
        raise ValueError(f"A + LC is not Hurwitz: {hz.reason}")
    P = hz.P
    nP = spectral_norm(P)
    lam_min = 1.0 / spectral_norm(np.linalg.inv(P))
    # V' = -|x|^2 <= -V/|P| gives decay rate 1/(2|P|) for |x|
    delta = 1.0 / (2.0 * nP)
    T = 20.0 / delta
    grid = np.linspace(0.0, T, n_times)
    E = expm(M * (grid[1] - grid[0]))
    Phi = np.eye(sys.n)
    K = 1.0
    for t in grid[1:]:
        Phi = E @ Phi
        K = max(K, spectral_norm(Phi) * np.exp(delta * t))
    if K > np.sqrt(nP / lam_min) * (1.0 + 1e-6):
        raise ArithmeticError("sampled transition envelope exceeds the Lyapunov bound")
    return QuadraticCertificate(sys, P, L, hz.residual, nP, spectral_norm(sys.B), spectral_norm(L),
                                float(K), float(delta), grid)


@dataclass(frozen=True, eq=False)
class DetectabilityResult:
    detectable: bool
    L: np.ndarray | None
    reason: str = ""
    observable_dim: int = 0

    def __bool__(self) -> bool:
        return self.detectable


def _obsv(A, C):
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def detectability_check(sys: LinearSystem, L=None, rank_tol: float = 1e-9) -> DetectabilityResult:
    """Detectability verdict, constructing an injection gain when none is given.

    The state is split into the unobservable subspace (kernel of the
    observability matrix, which is ``A``-invariant) and its orthogonal
    complement.  The unobservable block must be Hurwitz; the observable
    block gets a gain placing its spectrum at ``-1`` through Ackermann's
    formula applied to one scalar combination of the outputs.
    """
    A, C = sys.A, sys.C
    n, p = sys.n, C.shape[0]
    if L is not None:
        L = np.asarray(L, dtype=float).reshape(n, p)
        hz = is_hurwitz(A + L @ C)
        return DetectabilityResult(hz.hurwitz, L, hz.reason or "A + LC is Hurwitz")
    if p == 0 or not np.any(C):
        hz = is_hurwitz(A)
        return DetectabilityResult(hz.hurwitz, np.zeros((n, p)),
                                   "no output: detectable iff A is Hurwitz" + ("" if hz else f"; {hz.reason}"))
    O = _obsv(A, C)
    _, s, Vt = np.linalg.svd(O)
    r = int(np.sum(s > rank_tol * max(1.0, s[0])))
    T_o, T_u = Vt[:r].T, Vt[r:].T
    if r < n:
        A_uu = T_u.T @ A @ T_u
        hz = is_hurwitz(A_uu)
        if not hz:
            return DetectabilityResult(False, None, f"unobservable block is not Hurwitz ({hz.reason})", r)
    A_oo = T_o.T @ A @ T_o
    C_o = C @ T_o
    target = np.poly(-np.ones(r))  # coefficients of (s+1)^r
    candidates = [np.eye(p)[i] for i in range(p)] + [np.ones(p), np.arange(1.0, p + 1)]
    for v in candidates:
        c = v @ C_o
        Oc = _obsv(A_oo, c.reshape(1, -1))
        if np.linalg.cond(Oc) > 1e10:
            continue
        pA = np.zeros_like(A_oo)
        for coef in target:
            pA = pA @ A_oo + coef * np.eye(r)
        e = np.zeros(r)
        e[-1] = 1.0
        l = -pA @ np.linalg.solve(Oc, e)
        L_full = T_o @ np.outer(l, v)
        hz = is_hurwitz(A + L_full @ C)
        if hz:
            return DetectabilityResult(True, L_full, "constructed gain places the observable spectrum at -1", r)
    return DetectabilityResult(False, None, "gain placement failed on ill-conditioned data; supply L", r)
