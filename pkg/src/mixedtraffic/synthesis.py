"""Structured H2 state-feedback synthesis for the CAV.

The CAV applies ``u = -K x`` with ``K`` restricted to the vehicles it can
observe.  The convex relaxation is

    min  Tr(Q X) + R Y
    s.t. A X + X A^T - B Z - Z^T B^T + H H^T <= 0,
         [[Y, Z], [Z^T, X]] >= 0,  X > 0,
         Z in Sparse(T),  X in Sparse(S),

with ``K = Z X^{-1}``.  Because ``rho_0^T A = rho_0^T B = rho_0^T H = 0`` the
Lyapunov LMI is always singular along ``rho_0``.  It is therefore imposed
strictly on the orthogonal complement of ``rho_0`` together with the exact
linear equalities ``(A X - B Z) rho_0 = 0`` that the singular direction
forces anyway.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from . import sdp
from .controllability import pbh_analysis, ring_mode
from .errors import (DomainError, NumericalFailureError, ParameterError,
                     StructuredInfeasibleError, TopologyError, UnboundedNormError)
from .traffic import RingModel

logger = logging.getLogger(__name__)

EPS_PD = 1e-6
EPS_LMI = 1e-6
GAIN_ZERO_TOL = 1e-12
DEFLATION_TOL = 1e-8


@dataclass(frozen=True)
class PerformanceWeights:
    """Square-root weights on spacing error, velocity error and input.

    ``per_vehicle`` optionally overrides ``(gamma_s, gamma_v)`` vehicle by
    vehicle as an ``(n, 2)`` array.
    """

    gamma_s: float = 0.03
    gamma_v: float = 0.15
    gamma_u: float = 1.0
    per_vehicle: tuple | None = None

    def __post_init__(self):
        for name in ("gamma_s", "gamma_v", "gamma_u"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ParameterError(f"{name} must be strictly positive, got {val}")
        if self.per_vehicle is not None:
            pv = np.asarray(self.per_vehicle, dtype=float)
            if pv.ndim != 2 or pv.shape[1] != 2:
                raise ParameterError("per_vehicle must have shape (n, 2)")
            if not np.all(np.isfinite(pv)) or np.any(pv <= 0):
                raise ParameterError("per-vehicle weights must be strictly positive")
            object.__setattr__(self, "per_vehicle", tuple(map(tuple, pv)))


def build_performance(w: PerformanceWeights, n: int):
    """Return ``(Q, R)`` with ``Q = diag(gamma_s^2, gamma_v^2, ...)`` and ``R = gamma_u^2``."""
    if n < 1:
        raise DomainError("n must be positive")
    if w.per_vehicle is not None:
        pv = np.asarray(w.per_vehicle, dtype=float)
        if pv.shape[0] != n:
            raise ParameterError(f"per_vehicle has {pv.shape[0]} rows, expected {n}")
        diag = pv.ravel()
    else:
        diag = np.tile([w.gamma_s, w.gamma_v], n)
    Q = np.diag(diag ** 2)
    R = np.array([[w.gamma_u ** 2]])
    return Q, R


@dataclass(frozen=True)
class SparsityPattern:
    """Admissible structure of ``K`` and the matching ``(T, S_star)`` pair."""

    mask: np.ndarray
    T: np.ndarray
    S_star: np.ndarray

    @property
    def n(self) -> int:
        return self.mask.shape[1] // 2

    @property
    def is_full(self) -> bool:
        return bool(np.all(self.mask))

    @property
    def vehicles(self) -> list[int]:
        """1-based vehicle indices whose states the CAV uses."""
        return [i + 1 for i in range(self.n) if self.mask[0, 2 * i]]

    def to_dict(self) -> dict:
        return {"vehicles": self.vehicles, "mask": self.mask.astype(int).ravel().tolist()}


def invariance_matrix(T: np.ndarray) -> np.ndarray:
    """Largest symmetric ``S`` with ``Z X^{-1} in Sparse(T)`` whenever ``Z in Sparse(T)``, ``X in Sparse(S)``.

    First ``S_ij = 0`` whenever some row of ``T`` has ``T_ki = 1`` and
    ``T_kj = 0``; then ``S`` is intersected with its transpose.
    """
    T = np.atleast_2d(np.asarray(T)).astype(bool)
    # S1_ij is false when some row k has T_ki and not T_kj.
    S1 = ~np.any(T[:, :, None] & ~T[:, None, :], axis=0)
    S = S1 & S1.T
    return S


def topology_to_pattern(ecf: Iterable[int], n: int) -> SparsityPattern:
    """Pattern for a CAV that observes vehicles ``ecf`` (1-based, CAV is 1)."""
    ecf = set(int(i) for i in ecf)
    if 1 not in ecf:
        raise TopologyError("the CAV must observe its own state (1 not in topology)")
    bad = [i for i in ecf if not 1 <= i <= n]
    if bad:
        raise TopologyError(f"vehicle indices out of range 1..{n}: {sorted(bad)}")
    mask = np.zeros((1, 2 * n), dtype=bool)
    for i in ecf:
        mask[0, 2 * (i - 1): 2 * i] = True
    T = mask.copy()
    S = invariance_matrix(T)
    for a in (mask, T, S):
        a.setflags(write=False)
    return SparsityPattern(mask=mask, T=T, S_star=S)


def ring_topology(n: int, ahead: int, behind: int) -> set[int]:
    """Vehicles within ``ahead`` positions in front and ``behind`` positions behind the CAV.

    Vehicle ``n`` drives directly ahead of the CAV and vehicle 2 directly behind.
    """
    if ahead < 0 or behind < 0:
        raise TopologyError("ahead/behind must be nonnegative")
    out = {1}
    for d in range(1, min(ahead, n - 1) + 1):
        out.add(n + 1 - d)
    for d in range(1, min(behind, n - 1) + 1):
        out.add(1 + d)
    return out


def full_topology(n: int) -> set[int]:
    return set(range(1, n + 1))


def in_pattern(K: np.ndarray, pat: SparsityPattern) -> bool:
    return bool(np.all(np.asarray(K)[~pat.mask] == 0))


@dataclass
class SynthesisResult:
    K: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    certified_cost: float
    structured: bool
    pattern: SparsityPattern | None = None
    solver: dict = field(default_factory=dict)

    def closed_loop(self, m: RingModel) -> np.ndarray:
        return m.A - m.B @ self.K

    def to_dict(self) -> dict:
        return {
            "K": self.K.ravel().tolist(),
            "certified_cost": self.certified_cost,
            "structured": self.structured,
            "pattern": self.pattern.to_dict() if self.pattern is not None else None,
            "Y": self.Y.tolist(),
            "Z": self.Z.ravel().tolist(),
            "X": self.X.tolist(),
            "solver": self.solver,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisResult":
        K = np.asarray(d["K"], dtype=float).reshape(1, -1)
        n = K.shape[1] // 2
        pat = None
        if d.get("pattern"):
            pat = topology_to_pattern(d["pattern"]["vehicles"], n)
        return cls(K=K, X=np.asarray(d["X"], dtype=float), Y=np.atleast_2d(d["Y"]),
                   Z=np.asarray(d["Z"], dtype=float).reshape(1, -1),
                   certified_cost=float(d["certified_cost"]),
                   structured=bool(d["structured"]), pattern=pat,
                   solver=dict(d.get("solver", {})))


def complement_basis(rho: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of ``rho``."""
    rho = np.asarray(rho, dtype=float).ravel()
    return linalg.null_space(rho[None, :])


def build_program(m: RingModel, w: PerformanceWeights, pat: SparsityPattern,
                  eps_pd: float = EPS_PD, eps_lmi: float = EPS_LMI) -> sdp.ConicProgram:
    n2 = 2 * m.n
    if pat.mask.shape != (1, n2):
        raise TopologyError(f"pattern is for {pat.n} vehicles, model has {m.n}")
    A, B, H = np.asarray(m.A), np.asarray(m.B), np.asarray(m.H)
    Q, R = build_performance(w, m.n)
    rho = ring_mode(m.n)
    U = complement_basis(rho)
    HH = H @ H.T
    I_r = np.eye(U.shape[1])

    p = sdp.ConicProgram()
    p.add_variable("X", n2, symmetric=True)
    p.add_variable("Z", (1, n2))
    p.add_variable("Y", 1, symmetric=True)
    p.minimize(lambda v: np.sum(Q * v["X"]) + float(R[0, 0] * v["Y"][0, 0]))

    def lyap(v):
        AXBZ = A @ v["X"] - B @ v["Z"]
        return AXBZ + AXBZ.T + HH

    p.add_psd(lambda v: -(U.T @ lyap(v) @ U) - eps_lmi * I_r, name="lyapunov")
    p.add_equality(lambda v: (A @ v["X"] - B @ v["Z"]) @ rho, name="ring-direction")
    p.add_psd(lambda v: np.block([[v["Y"], v["Z"]], [v["Z"].T, v["X"]]]), name="schur")
    p.add_psd(lambda v: v["X"] - eps_pd * np.eye(n2), name="pd")

    zero_z = np.flatnonzero(~pat.T[0])
    if zero_z.size:
        p.add_equality(lambda v: v["Z"][0, zero_z], name="sparse-Z")
    iu = np.triu_indices(n2, 1)
    off = ~pat.S_star[iu]
    if np.any(off):
        rows, cols = iu[0][off], iu[1][off]
        p.add_equality(lambda v: v["X"][rows, cols], name="sparse-X")
    return p


def solve_structured_h2(m: RingModel, w: PerformanceWeights, pat: SparsityPattern, *,
                        eps_pd: float = EPS_PD, eps_lmi: float = EPS_LMI,
                        feas_tol: float = 1e-8, gap_tol: float = 1e-8,
                        max_iters: int = 100, check_stabilizable: bool = True,
                        log_path: str | None = None) -> SynthesisResult:
    """Solve the relaxed structured H2 problem and recover ``K = Z X^{-1}``."""
    if check_stabilizable:
        rep = pbh_analysis(m)
        if not rep.is_stabilizable:
            raise DomainError("model is not stabilizable; synthesis is meaningless")
    prog = build_program(m, w, pat, eps_pd, eps_lmi)
    out = sdp.solve(prog, feas_tol=feas_tol, gap_tol=gap_tol, max_iters=max_iters,
                    log_path=log_path)
    diag = {"status": out.status, "iterations": out.iterations, "objective": out.objective,
            "gap": out.gap, "max_violation": out.max_violation,
            "primal_residual": out.primal_residual, "dual_residual": out.dual_residual,
            "feas_tol": feas_tol, "gap_tol": gap_tol, "eps_pd": eps_pd, "eps_lmi": eps_lmi}
    if out.status in (sdp.INFEASIBLE, sdp.UNBOUNDED):
        raise StructuredInfeasibleError(
            f"structured relaxation has no solution ({out.status}); try a larger topology",
            certificate=out.certificate)
    if out.status != sdp.OPTIMAL:
        raise NumericalFailureError(f"SDP solver did not converge: {out.message}", diag)

    X = out.values["X"]
    Z = out.values["Z"]
    Y = out.values["Y"]
    K = linalg.solve(X, Z.T, assume_a="sym").T
    leak = np.abs(K[~pat.mask]).max(initial=0.0)
    if leak > GAIN_ZERO_TOL * max(1.0, np.abs(K).max()):
        raise NumericalFailureError(f"gain leaks outside the pattern ({leak:.3g})", diag)
    K[~pat.mask] = 0.0
    Q, R = build_performance(w, m.n)
    cost = float(np.sum(Q * X) + R[0, 0] * Y[0, 0])
    return SynthesisResult(K=K, X=X, Y=Y, Z=Z, certified_cost=cost,
                           structured=not pat.is_full, pattern=pat, solver=diag)


def performance_output(Q: np.ndarray, R: np.ndarray, K: np.ndarray) -> np.ndarray:
    """``C`` such that ``z = C x`` stacks ``Q^{1/2} x`` and ``-R^{1/2} K x``."""
    Qh = linalg.sqrtm(Q).real if not _is_diag(Q) else np.diag(np.sqrt(np.diag(Q)))
    Rh = np.sqrt(R) if _is_diag(R) else linalg.sqrtm(R).real
    return np.vstack([Qh, -Rh @ np.atleast_2d(K)])


def _is_diag(M):
    M = np.atleast_2d(M)
    return np.count_nonzero(M - np.diag(np.diag(M))) == 0


def left_null_vector(M: np.ndarray, tol: float = DEFLATION_TOL):
    """Unit left null vector of ``M`` or ``None`` when ``M`` is nonsingular."""
    _, sv, vh = np.linalg.svd(np.asarray(M).T)
    if sv[-1] > tol * max(1.0, sv[0]):
        return None
    return vh[-1]


def h2_norm(A_cl: np.ndarray, H: np.ndarray, C: np.ndarray, tol: float = DEFLATION_TOL) -> float:
    """H2 norm of ``(A_cl, H, C)`` after deflating a structural zero mode."""
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if H.shape[0] != A_cl.shape[0]:
        H = H.reshape(A_cl.shape[0], -1)
    if C.shape[1] != A_cl.shape[0]:
        C = C.reshape(-1, A_cl.shape[0])
    rho = left_null_vector(A_cl, tol)
    if rho is None:
        Ar, Hr, Cr = A_cl, H, C
    else:
        excite = np.linalg.norm(rho @ H)
        if excite > tol * max(1.0, np.linalg.norm(H)):
            raise UnboundedNormError(f"disturbance excites the zero mode (|rho^T H| = {excite:.3g})")
        U = complement_basis(rho)
        Ar, Hr, Cr = U.T @ A_cl @ U, U.T @ H, C @ U
    eig = np.linalg.eigvals(Ar)
    scale = max(1.0, np.abs(eig).max(initial=0.0))
    if eig.size and eig.real.max() >= -tol * scale:
        raise UnboundedNormError(
            f"closed loop has an eigenvalue with Re = {eig.real.max():.3g} besides the zero mode")
    P = sdp.lyapunov_solve(Ar, Hr @ Hr.T)
    return float(np.sqrt(max(np.trace(Cr @ P @ Cr.T), 0.0)))


def closed_loop_h2(m: RingModel, K: np.ndarray, w: PerformanceWeights) -> float:
    Q, R = build_performance(w, m.n)
    return h2_norm(m.A - m.B @ np.atleast_2d(K), m.H, performance_output(Q, R, K))


def riccati_optimum(m: RingModel, w: PerformanceWeights):
    """Unstructured optimal ``(K, H2^2)`` from the Riccati equation on the deflated ring."""
    Q, R = build_performance(w, m.n)
    U = complement_basis(ring_mode(m.n))
    Ar, Br, Hr = U.T @ m.A @ U, U.T @ m.B, U.T @ m.H
    P = linalg.solve_continuous_are(Ar, Br, U.T @ Q @ U, R)
    Kr = linalg.solve(R, Br.T @ P)
    return Kr @ U.T, float(np.trace(Hr.T @ P @ Hr))


def sparsity_invariance_holds(pat: SparsityPattern, rng: np.random.Generator,
                              draws: int = 1) -> bool:
    """Check ``Z X^{-1} in Sparse(T)`` for random admissible ``Z`` and diagonally dominant ``X``."""
    N = pat.T.shape[1]
    for _ in range(draws):
        Z = rng.standard_normal(pat.T.shape) * pat.T
        X = rng.standard_normal((N, N))
        X = (X + X.T) * pat.S_star
        X += np.diag(np.abs(X).sum(axis=1) + 1.0)
        K = linalg.solve(X, Z.T).T
        if np.abs(K[~pat.T.astype(bool)]).max(initial=0.0) > 1e-12:
            return False
    return True
