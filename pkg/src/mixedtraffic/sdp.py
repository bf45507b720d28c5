"""A small dense semidefinite-programming engine.

Programs are stated over named variable blocks (general or symmetric
matrices) with a linear objective, affine equalities and affine
positive-semidefinite constraints.  Affine maps are given as Python
callables on a ``{name: ndarray}`` dict; :meth:`ConicProgram.compile`
extracts their coefficients by evaluating them on basis vectors.

Symmetric variables are stored in ``svec`` form: the upper triangle in
row-major order with off-diagonal entries multiplied by ``sqrt(2)``, so
that ``svec(A) @ svec(B) == trace(A @ B)``.

The solver is an infeasible-start primal-dual path-following method on
the inequality form ``min c^T w  s.t.  F0 + sum_j w_j F_j >= 0`` with
Nesterov-Todd scaling and a Mehrotra predictor-corrector.  Equalities
are removed beforehand: single-variable equalities fix that variable
exactly, the rest are eliminated through an orthonormal null-space basis.
Infeasibility is only declared from an explicitly verified Farkas-type
certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import SpectrumError

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


def svec(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    k = M.shape[-1]
    iu = np.triu_indices(k)
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return M[..., iu[0], iu[1]] * scale


def smat(v: np.ndarray, k: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if k is None:
        k = int(round((np.sqrt(8 * v.shape[-1] + 1) - 1) / 2))
    if v.shape[-1] != k * (k + 1) // 2:
        raise ValueError("length is not a triangular number")
    iu = np.triu_indices(k)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / SQRT2)
    out = np.zeros(v.shape[:-1] + (k, k))
    out[..., iu[0], iu[1]] = v * scale
    out[..., iu[1], iu[0]] = v * scale
    return out


@dataclass
class _VarBlock:
    name: str
    shape: tuple[int, int]
    symmetric: bool
    offset: int

    @property
    def size(self) -> int:
        r, c = self.shape
        return r * (r + 1) // 2 if self.symmetric else r * c


class ConicProgram:
    """Container for a linear conic program over matrix variables."""

    def __init__(self):
        self._vars: dict[str, _VarBlock] = {}
        self.nvar = 0
        self._objective: Callable | None = None
        self._equalities: list[tuple[str, Callable]] = []
        self._psd: list[tuple[str, Callable]] = []

    def add_variable(self, name: str, shape, symmetric: bool = False) -> str:
        if name in self._vars:
            raise ValueError(f"duplicate variable {name!r}")
        if isinstance(shape, int):
            shape = (shape, shape) if symmetric else (shape, 1)
        shape = tuple(int(s) for s in shape)
        if symmetric and shape[0] != shape[1]:
            raise ValueError("symmetric variables must be square")
        blk = _VarBlock(name, shape, symmetric, self.nvar)
        self._vars[name] = blk
        self.nvar += blk.size
        return name

    @property
    def variables(self):
        return dict(self._vars)

    def unpack(self, y: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for b in self._vars.values():
            seg = y[b.offset:b.offset + b.size]
            out[b.name] = smat(seg, b.shape[0]) if b.symmetric else seg.reshape(b.shape)
        return out

    def pack(self, values: dict[str, np.ndarray]) -> np.ndarray:
        y = np.zeros(self.nvar)
        for b in self._vars.values():
            v = np.asarray(values[b.name], dtype=float).reshape(b.shape)
            y[b.offset:b.offset + b.size] = svec(v) if b.symmetric else v.ravel()
        return y

    def minimize(self, fn: Callable[[dict], float]):
        self._objective = fn

    def add_equality(self, fn: Callable[[dict], np.ndarray], name: str | None = None):
        """Require ``fn(values) == 0`` (vector-valued, affine)."""
        self._equalities.append((name or f"eq{len(self._equalities)}", fn))

    def add_psd(self, fn: Callable[[dict], np.ndarray], name: str | None = None):
        """Require the symmetric matrix ``fn(values)`` to be PSD (affine)."""
        self._psd.append((name or f"psd{len(self._psd)}", fn))

    def _coefficients(self, fn, kind):
        zero = self.unpack(np.zeros(self.nvar))
        base = np.atleast_1d(np.asarray(fn(zero), dtype=float))
        cols = np.empty((self.nvar,) + base.shape)
        e = np.zeros(self.nvar)
        for i in range(self.nvar):
            e[i] = 1.0
            cols[i] = np.asarray(fn(self.unpack(e)), dtype=float).reshape(base.shape) - base
            e[i] = 0.0
        # Affinity spot check at a fixed pseudo-random point.
        probe = np.random.default_rng(12345).standard_normal(self.nvar)
        lhs = np.asarray(fn(self.unpack(probe)), dtype=float).reshape(base.shape)
        rhs = base + np.tensordot(probe, cols, axes=1)
        if not np.allclose(lhs, rhs, rtol=1e-8, atol=1e-8 * (1 + np.abs(lhs).max(initial=0))):
            raise ValueError(f"{kind} expression is not affine in the variables")
        return base, cols

    def compile(self) -> "CompiledProgram":
        if self._objective is None:
            c0, c = 0.0, np.zeros(self.nvar)
        else:
            base, cols = self._coefficients(lambda v: np.atleast_1d(self._objective(v)), "objective")
            c0, c = float(base[0]), cols[:, 0].copy()
        E_rows, f = [], []
        for _, fn in self._equalities:
            base, cols = self._coefficients(lambda v, fn=fn: np.ravel(fn(v)), "equality")
            E_rows.append(cols.T)
            f.append(-base)
        E = np.vstack(E_rows) if E_rows else np.zeros((0, self.nvar))
        f = np.concatenate(f) if f else np.zeros(0)
        blocks = []
        for name, fn in self._psd:
            base, cols = self._coefficients(fn, "psd")
            if base.ndim != 2 or base.shape[0] != base.shape[1]:
                raise ValueError(f"psd constraint {name!r} must be a square matrix")
            asym = max(np.abs(base - base.T).max(),
                       np.abs(cols - cols.transpose(0, 2, 1)).max(initial=0.0))
            if asym > 1e-10 * (1 + np.abs(base).max() + np.abs(cols).max(initial=0.0)):
                raise ValueError(f"psd constraint {name!r} is not symmetric")
            blocks.append(_PsdBlock(name, svec(base), svec(cols), base.shape[0]))
        return CompiledProgram(c=c, c0=c0, E=E, f=f, blocks=blocks, program=self)


@dataclass
class _PsdBlock:
    name: str
    F0: np.ndarray      # svec of the constant term
    F: np.ndarray       # (nvar, k(k+1)/2) svec of each coefficient
    k: int


@dataclass
class CompiledProgram:
    c: np.ndarray
    c0: float
    E: np.ndarray
    f: np.ndarray
    blocks: list[_PsdBlock]
    program: ConicProgram | None = None


@dataclass
class SolveOutcome:
    status: str
    values: dict[str, np.ndarray]
    objective: float
    max_violation: float
    gap: float
    iterations: int = 0
    dual_objective: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    duals: dict[str, np.ndarray] = field(default_factory=dict)
    certificate: dict | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def solve(program: ConicProgram | CompiledProgram, feas_tol: float = 1e-8,
          gap_tol: float = 1e-8, max_iters: int = 100, verbose: bool = False,
          log_path: str | None = None) -> SolveOutcome:
    """Solve ``program`` and report status, primal values and quality measures.

    ``feas_tol`` bounds the relative primal/dual residuals and ``gap_tol``
    the relative duality gap ``|p - d| / (1 + |p| + |d|)``.
    """
    if feas_tol <= 0 or gap_tol <= 0 or max_iters <= 0:
        raise ValueError("tolerances and max_iters must be positive")
    cp = program.compile() if isinstance(program, ConicProgram) else program
    prog = cp.program
    log = _IterLog(verbose, log_path)
    try:
        return _solve_compiled(cp, prog, feas_tol, gap_tol, max_iters, log)
    finally:
        log.close()


class _IterLog:
    def __init__(self, verbose, path):
        self.verbose = verbose
        self.fh = open(path, "w") if path else None

    def __call__(self, msg):
        if self.verbose:
            logger.info(msg)
        if self.fh:
            self.fh.write(msg + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


@dataclass
class _Reduced:
    """``y = y_base + N w`` together with the transformed data."""

    y_base: np.ndarray
    N: np.ndarray
    c: np.ndarray
    c0: float
    F0: list[np.ndarray]      # full symmetric matrices
    F: list[np.ndarray]       # (p, k, k)


def _presolve(cp: CompiledProgram, tol: float):
    n = cp.c.size
    E, f = cp.E.copy(), cp.f.copy()
    fixed = np.zeros(n, dtype=bool)
    y_fix = np.zeros(n)
    scale = 1.0 + (np.abs(f).max() if f.size else 0.0)
    if E.shape[0]:
        nnz = np.count_nonzero(E, axis=1)
        single = nnz == 1
        for r in np.flatnonzero(single):
            j = int(np.flatnonzero(E[r])[0])
            val = f[r] / E[r, j]
            if fixed[j] and abs(y_fix[j] - val) > tol * scale:
                return None, "conflicting fixed-variable equalities"
            fixed[j] = True
            y_fix[j] = val
        E_rest = E[~single]
        f_rest = f[~single] - E_rest[:, fixed] @ y_fix[fixed]
        for r in np.flatnonzero(np.all(E_rest[:, ~fixed] == 0, axis=1)):
            if abs(f_rest[r]) > tol * scale:
                return None, "inconsistent equalities"
        E_rest = E_rest[:, ~fixed]
    else:
        E_rest = np.zeros((0, n))
        f_rest = np.zeros(0)
    free = np.flatnonzero(~fixed)
    if E_rest.shape[0]:
        u, sv, vh = np.linalg.svd(E_rest)
        rank = int(np.sum(sv > 1e-12 * max(1.0, sv[0]))) if sv.size else 0
        y_part = vh[:rank].T @ ((u[:, :rank].T @ f_rest) / sv[:rank])
        resid = np.linalg.norm(E_rest @ y_part - f_rest)
        if resid > tol * (1.0 + np.linalg.norm(f_rest)):
            return None, f"inconsistent equalities (residual {resid:.3g})"
        N_free = vh[rank:].T
    else:
        y_part = np.zeros(free.size)
        N_free = np.eye(free.size)
    y_base = y_fix.copy()
    y_base[free] = y_part
    N = np.zeros((n, N_free.shape[1]))
    N[free] = N_free
    c = N.T @ cp.c
    c0 = cp.c0 + cp.c @ y_base
    F0, F = [], []
    for b in cp.blocks:
        F0.append(smat(b.F0 + y_base @ b.F, b.k))
        F.append(smat(N.T @ b.F, b.k))
    return _Reduced(y_base, N, c, c0, F0, F), ""


def _nt_scaling(S, Z):
    """``G`` with ``G^T Z G = G^{-1} S G^{-T} = diag(lam)``."""
    Ls = np.linalg.cholesky(S)
    Lz = np.linalg.cholesky(Z)
    U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
    G = Ls @ Vt.T / np.sqrt(lam)
    Ginv = (np.sqrt(lam)[:, None] * Vt) @ linalg.solve_triangular(Ls, np.eye(len(lam)), lower=True)
    return G, Ginv, lam


def _congruence_batch(Ginv, F):
    """``Ginv @ F_j @ Ginv.T`` for each slice of ``F``."""
    p, k, _ = F.shape
    T = (F.reshape(p * k, k) @ Ginv.T).reshape(p, k, k)
    out = (T.transpose(0, 2, 1).reshape(p * k, k) @ Ginv.T).reshape(p, k, k)
    return out


def _schur_solver(Ftv):
    """Solver for ``(Ftv Ftv^T) x = r`` via the R factor of ``Ftv^T``.

    Seminormal equations with one step of refinement against ``Ftv`` itself
    keep the accuracy close to that of a QR least-squares solve.
    """
    p = Ftv.shape[0]
    Rf = linalg.qr(Ftv.T, mode="r", check_finite=False)[0][:p]
    d = np.abs(np.diag(Rf))
    floor = 1e-15 * max(d.max(initial=0.0), 1.0)
    if np.any(d <= floor):
        Rf = Rf.copy()
        idx = np.flatnonzero(d <= floor)
        Rf[idx, idx] = np.where(Rf[idx, idx] < 0, -floor, floor)

    def once(r):
        y = linalg.solve_triangular(Rf, r, trans="T", check_finite=False)
        return linalg.solve_triangular(Rf, y, check_finite=False)

    def solve(r):
        x = once(r)
        x += once(r - Ftv @ (Ftv.T @ x))
        return x

    return solve


def _restore(old, new):
    """Use ``new`` when every block is positive definite, else keep ``old``."""
    try:
        for M in new:
            np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return old
    return [_sym(M) for M in new]


def _scaled_projection(Z, F, r):
    """``Z + dZ`` with ``adj(dZ) = r`` and ``||L^-1 dZ L^-T||_F`` minimal, ``Z = L L^T``.

    The correction is small relative to ``Z`` itself, so it keeps positive
    definiteness when the unscaled projection would not.
    """
    try:
        Ls = [np.linalg.cholesky(Zb) for Zb in Z]
    except np.linalg.LinAlgError:
        return Z
    Ft = [_congruence_batch(L.T, Fb) for L, Fb in zip(Ls, F)]
    y = _schur_solver(np.hstack([svec(Fb) for Fb in Ft]))(r)
    return [Zb + L @ np.tensordot(y, Fb, axes=1) @ L.T for Zb, L, Fb in zip(Z, Ls, Ft)]


def _max_step(lam, D):
    """Largest ``a`` with ``diag(lam) + a D >= 0`` (inf when unbounded)."""
    r = 1.0 / np.sqrt(lam)
    ev = np.linalg.eigvalsh(r[:, None] * D * r[None, :])
    lo = ev[0]
    return np.inf if lo >= 0 else -1.0 / lo


def _jordan_div(lam, R):
    """Solve ``(diag(lam) M + M diag(lam)) / 2 = R`` for ``M``."""
    return 2.0 * R / (lam[:, None] + lam[None, :])


def _sym(M):
    return 0.5 * (M + M.T)


def _solve_compiled(cp: CompiledProgram, prog, feas_tol, gap_tol, max_iters, log):
    red, msg = _presolve(cp, tol=max(feas_tol, 1e-12))
    if red is None:
        return SolveOutcome(INFEASIBLE, {}, np.inf, np.inf, np.nan, message=msg,
                            certificate={"kind": "equalities", "detail": msg})
    p = red.c.size
    nb = len(red.F0)

    def finish(status, w, S=None, Z=None, it=0, extra_msg="", cert=None, pr=np.nan, dr=np.nan,
               dobj=np.nan):
        y = red.y_base + red.N @ w
        viol = 0.0
        for F0, F in zip(red.F0, red.F):
            Fw = F0 + np.tensordot(w, F, axes=1) if p else F0
            viol = max(viol, max(0.0, -np.linalg.eigvalsh(_sym(Fw))[0]))
        pobj = float(cp.c @ y + cp.c0)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj)) if np.isfinite(dobj) else np.nan
        values = prog.unpack(y) if prog is not None else {"y": y}
        duals = {}
        if Z is not None:
            duals = {b.name: Zb for b, Zb in zip(cp.blocks, Z)}
        return SolveOutcome(status, values, pobj, viol, gap, it, dobj, pr, dr, duals, cert,
                            extra_msg)

    if nb == 0:
        if p == 0 or np.linalg.norm(red.c) <= feas_tol * (1 + np.linalg.norm(cp.c)):
            return finish(OPTIMAL, np.zeros(p), dobj=red.c0)
        return finish(UNBOUNDED, np.zeros(p), extra_msg="no conic constraints and nonzero cost")

    # Directions that touch no constraint: unbounded if they carry cost, else pinned to 0.
    col_norm = np.zeros(p)
    for F in red.F:
        col_norm += np.einsum("jab,jab->j", F, F)
    dead = col_norm <= 1e-24 * max(1.0, col_norm.max(initial=0.0))
    if np.any(np.abs(red.c[dead]) > 1e-12 * (1 + np.abs(red.c).max())):
        return finish(UNBOUNDED, np.zeros(p), extra_msg="cost on a constraint-free direction")
    if np.any(dead):
        keep = ~dead
        red.N = red.N[:, keep]
        red.c = red.c[keep]
        red.F = [F[keep] for F in red.F]
        p = int(keep.sum())

    ks = [F0.shape[0] for F0 in red.F0]
    norm_F0 = np.sqrt(sum(np.sum(F0 ** 2) for F0 in red.F0))
    norm_c = np.linalg.norm(red.c)
    Fn = np.sqrt(sum(np.einsum("jab,jab->j", F, F) for F in red.F)) if p else np.zeros(0)

    # Starting point in the spirit of SDPT3's default.
    S, Z = [], []
    for k, F0, F in zip(ks, red.F0, red.F):
        fmax = np.sqrt(np.einsum("jab,jab->j", F, F)).max(initial=0.0)
        eta = max(10.0, np.sqrt(k), np.linalg.norm(F0), fmax)
        ratio = ((1 + np.abs(red.c)) / (1 + Fn)).max(initial=1.0)
        xi = max(10.0, np.sqrt(k), k * ratio)
        S.append(eta * np.eye(k))
        Z.append(xi * np.eye(k))
    w = np.zeros(p)
    total_k = sum(ks)
    # Unscaled data, used to restore exact feasibility after each step.
    Fall = np.hstack([svec(F) for F in red.F]) if p else None
    splits = np.cumsum([k * (k + 1) // 2 for k in ks])[:-1]
    solve_gram = _schur_solver(Fall) if p else None

    def F_of(w):
        return [F0 + np.tensordot(w, F, axes=1) for F0, F in zip(red.F0, red.F)]

    def adj(Zs):
        out = np.zeros(p)
        for F, Zb in zip(red.F, Zs):
            out += np.einsum("jab,ab->j", F, Zb)
        return out

    best = None
    stall = 0
    it = 0
    for it in range(1, max_iters + 1):
        Fw = F_of(w)
        rp = [Sb - Fb for Sb, Fb in zip(S, Fw)]
        rd = red.c - adj(Z)
        gapSZ = sum(np.sum(Sb * Zb) for Sb, Zb in zip(S, Z))
        mu = gapSZ / total_k
        pobj = float(red.c @ w + red.c0)
        dobj = float(-sum(np.sum(F0 * Zb) for F0, Zb in zip(red.F0, Z)) + red.c0)
        pres = np.sqrt(sum(np.sum(r ** 2) for r in rp)) / (1 + norm_F0)
        dres = np.linalg.norm(rd) / (1 + norm_c)
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        relgap = max(relgap, gapSZ / (1 + abs(pobj) + abs(dobj)))
        log(f"it={it:3d} pobj={pobj:+.10e} dobj={dobj:+.10e} pres={pres:.2e} "
            f"dres={dres:.2e} gap={relgap:.2e} mu={mu:.2e}")
        score = max(pres / feas_tol, dres / feas_tol, relgap / gap_tol)
        if best is None or score < best[0]:
            best = (score, w.copy(), [s.copy() for s in S], [z.copy() for z in Z], pres, dres, dobj)
        if pres <= feas_tol and dres <= feas_tol and relgap <= gap_tol:
            return finish(OPTIMAL, w, S, Z, it, pr=pres, dr=dres, dobj=dobj)

        cert = _check_certificates(red, w, Z, feas_tol)
        if cert is not None:
            status = INFEASIBLE if cert["kind"] == "primal-infeasible" else UNBOUNDED
            return finish(status, w, S, Z, it, cert=cert, extra_msg=cert["kind"], pr=pres,
                          dr=dres, dobj=dobj)

        try:
            scal = [_nt_scaling(_sym(Sb), _sym(Zb)) for Sb, Zb in zip(S, Z)]
        except np.linalg.LinAlgError:
            break
        Ft = [_congruence_batch(Ginv, F) for (G, Ginv, lam), F in zip(scal, red.F)]
        Ftv = np.hstack([svec(F) for F in Ft]) if p else np.zeros((0, 0))
        rpt = [Ginv @ r @ Ginv.T for (G, Ginv, lam), r in zip(scal, rp)]
        solveH = _schur_solver(Ftv)
        def direction(Ms):
            rhs = -rd.copy()
            for Ftb, Mb, rptb in zip(Ft, Ms, rpt):
                rhs += np.einsum("jab,ab->j", Ftb, Mb + rptb)
            dw = solveH(rhs)
            ds = [np.tensordot(dw, Ftb, axes=1) - rptb for Ftb, rptb in zip(Ft, rpt)]
            dz = [Mb - dsb for Mb, dsb in zip(Ms, ds)]
            return dw, [_sym(d) for d in ds], [_sym(d) for d in dz]

        def steps(ds, dz):
            ap = min(_max_step(lam, d) for (G, Ginv, lam), d in zip(scal, ds))
            ad = min(_max_step(lam, d) for (G, Ginv, lam), d in zip(scal, dz))
            return ap, ad

        # Predictor.
        M_aff = [np.diag(-lam) for (G, Ginv, lam) in scal]
        dw_a, ds_a, dz_a = direction(M_aff)
        ap, ad = steps(ds_a, dz_a)
        ap, ad = min(1.0, ap), min(1.0, ad)
        new_gap = sum(np.sum((np.diag(lam) + ap * dsb) * (np.diag(lam) + ad * dzb))
                      for (G, Ginv, lam), dsb, dzb in zip(scal, ds_a, dz_a))
        sigma = min(1.0, max(0.0, new_gap / gapSZ)) ** 3
        # Corrector.
        Ms = []
        for (G, Ginv, lam), dsb, dzb in zip(scal, ds_a, dz_a):
            R = sigma * mu * np.eye(len(lam)) - np.diag(lam ** 2) - _sym(dsb @ dzb)
            Ms.append(_jordan_div(lam, R))
        dw, ds, dz = direction(Ms)
        ap, ad = steps(ds, dz)
        gamma = 0.9 + 0.09 * min(1.0, ap, ad)
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)
        if ap < 1e-10 and ad < 1e-10:
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
        w = w + ap * dw
        S = [_sym(G @ (np.diag(lam) + ap * dsb) @ G.T) for (G, Ginv, lam), dsb in zip(scal, ds)]
        Z = [_sym(Ginv.T @ (np.diag(lam) + ad * dzb) @ Ginv) for (G, Ginv, lam), dzb in zip(scal, dz)]
        S = _restore(S, F_of(w))
        if p:
            rd_new = red.c - adj(Z)
            corr = np.split(solve_gram(rd_new) @ Fall, splits)
            cand = [Zb + smat(cb, k) for Zb, cb, k in zip(Z, corr, ks)]
            Z_new = _restore(None, cand)
            Z = Z_new if Z_new is not None else _restore(Z, _scaled_projection(Z, red.F, rd_new))

    _, w, S, Z, pres, dres, dobj = best
    return finish(NUMERICAL_FAILURE, w, S, Z, it, extra_msg="no convergence; best iterate returned",
                  pr=pres, dr=dres, dobj=dobj)


def _check_certificates(red: _Reduced, w, Z, tol):
    """Return a verified infeasibility/unboundedness certificate, or None."""
    # Primal infeasible: Z >= 0 with F_j . Z = 0 for all j and F0 . Z < 0.
    t = -sum(np.sum(F0 * Zb) for F0, Zb in zip(red.F0, Z))
    if t > 0:
        Zn = [Zb / t for Zb in Z]
        a = np.zeros(red.c.size)
        for F, Zb in zip(red.F, Zn):
            a += np.einsum("jab,ab->j", F, Zb)
        fscale = max(1.0, max(np.abs(F).max(initial=0.0) for F in red.F))
        if np.linalg.norm(a) <= tol * fscale and all(np.linalg.eigvalsh(Zb)[0] >= -tol for Zb in Zn):
            return {"kind": "primal-infeasible", "Z": Zn,
                    "residual": float(np.linalg.norm(a))}
    # Dual infeasible (primal unbounded): F_lin(d) >= 0 with c^T d < 0.
    t = -float(red.c @ w)
    if t > 0 and red.c.size:
        d = w / t
        lam_min = min(np.linalg.eigvalsh(np.tensordot(d, F, axes=1))[0] for F in red.F)
        if lam_min >= -tol and np.linalg.norm(d) * tol < 1 and t > 1.0 / tol:
            return {"kind": "dual-infeasible", "direction": red.N @ d,
                    "min_eig": float(lam_min)}
    return None


def lyapunov_solve(M: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Solve ``M P + P M^T + W = 0`` for Hurwitz ``M`` (Bartels-Stewart)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    eig = np.linalg.eigvals(M)
    if np.max(eig.real) >= 0:
        raise SpectrumError(f"matrix is not Hurwitz (max Re lambda = {np.max(eig.real):.3g})")
    P = linalg.solve_continuous_lyapunov(M, -W)
    return _sym(P)
