"""Controllability and stabilizability analysis of the ring model.

All rank decisions use singular values with the threshold ``tol * sigma_max``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericalFailureError
from .traffic import LinearHdvCoeffs, RingModel

DEFAULT_TOL = 1e-8
CLUSTER_TOL = 1e-7
CONDITION_RTOL = 1e-12
EIGEN_CONDITION_ATOL = 1e-10


def ring_mode(n: int) -> np.ndarray:
    """``rho_0 = (1, 0, 1, 0, ...)``: the left null vector encoding sum(s_i) = L."""
    rho = np.zeros(2 * n)
    rho[0::2] = 1.0
    return rho


def hat_gain(n: int, cav_coeffs: LinearHdvCoeffs) -> np.ndarray:
    """Row ``[a11, -a12, 0, ..., 0, a13]`` that makes the CAV act like an HDV."""
    k = np.zeros((1, 2 * n))
    k[0, 0] = cav_coeffs.a1
    k[0, 1] = -cav_coeffs.a2
    k[0, -1] = cav_coeffs.a3
    return k


def transform_to_hat(m: RingModel, cav_coeffs: LinearHdvCoeffs | None = None) -> np.ndarray:
    """All-HDV ring matrix with the CAV replaced by a fictitious driver.

    The fictitious acceleration ``K_hat x`` is fed through the input so that
    the CAV block row reads ``[A_11 | 0 ... 0 | A_12]``.
    """
    if cav_coeffs is None:
        cav_coeffs = LinearHdvCoeffs.mean(m.coeffs)
    return m.A + m.B @ hat_gain(m.n, cav_coeffs)


def numerical_rank(M: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def kernel_dimension(M: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    return M.shape[1] - numerical_rank(M, tol)


def kernel_basis(M: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    _, sv, vh = np.linalg.svd(M)
    r = int(np.sum(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0
    return vh[r:].conj().T


def cluster_eigenvalues(eigs: np.ndarray, tol: float = CLUSTER_TOL) -> list[tuple[complex, int]]:
    """Group eigenvalues closer than ``tol``; return (centroid, count) pairs."""
    remaining = list(np.asarray(eigs, dtype=complex))
    clusters = []
    while remaining:
        seed = remaining.pop(0)
        members = [seed]
        changed = True
        while changed:
            changed = False
            for lam in list(remaining):
                if min(abs(lam - mu) for mu in members) <= tol:
                    members.append(lam)
                    remaining.remove(lam)
                    changed = True
        clusters.append((complex(np.mean(members)), len(members)))
    return clusters


def zero_mode_jordan(A_hat: np.ndarray, tol: float = DEFAULT_TOL):
    """Jordan data of the zero eigenvalue from kernel dimensions of powers.

    Returns ``(dim_ker, dim_ker_sq, multiplicity)``.  The number of Jordan
    blocks of size k is ``2 d_k - d_{k+1} - d_{k-1}`` with ``d_k = dim ker A^k``;
    the algebraic multiplicity is the value at which ``d_k`` stops growing.
    """
    N = A_hat.shape[0]
    dims = [0]
    power = np.eye(N)
    for _ in range(N):
        power = power @ A_hat
        dims.append(kernel_dimension(power, tol))
        if dims[-1] == dims[-2]:
            break
    d1 = dims[1]
    if len(dims) > 2:
        d2 = dims[2]
    else:
        d2 = kernel_dimension(A_hat @ A_hat, tol)
    return d1, d2, dims[-1]


def analytic_zero_mode_is_simple(coeffs: Sequence[LinearHdvCoeffs]) -> bool:
    """Sign argument that forces ker(A_hat^2) = ker(A_hat).

    With every driver satisfying a2 > a3 the sum of (a3 - a2)/a1 is strictly
    negative, which only admits the trivial Jordan chain.
    """
    return sum((c.a3 - c.a2) / c.a1 for c in coeffs) < 0


@dataclass
class PbhReport:
    eigenvalues: np.ndarray
    uncontrollable_modes: list[tuple[complex, np.ndarray]]
    is_controllable: bool
    is_stabilizable: bool
    zero_mode_multiplicity: int
    dim_ker: int = 0
    dim_ker_sq: int = 0
    pairwise_condition: bool | None = None
    verdict_source: str = "pbh"
    tol: float = DEFAULT_TOL
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "uncontrollable_modes": [
                {"eigenvalue": [float(lam.real), float(lam.imag)],
                 "stable": bool(_mode_is_stable(lam, self.zero_mode_multiplicity, self.tol)),
                 "left_vector_real": np.real(vec).tolist(),
                 "left_vector_imag": np.imag(vec).tolist()}
                for lam, vec in self.uncontrollable_modes],
            "is_controllable": self.is_controllable,
            "is_stabilizable": self.is_stabilizable,
            "zero_mode_multiplicity": self.zero_mode_multiplicity,
            "dim_ker": self.dim_ker,
            "dim_ker_squared": self.dim_ker_sq,
            "pairwise_condition": self.pairwise_condition,
            "verdict_source": self.verdict_source,
            "tol": self.tol,
            "notes": list(self.notes),
        }

    def summary(self) -> str:
        modes = ", ".join(
            f"λ={_format_eig(lam, self.tol)}, "
            f"{'stable' if _mode_is_stable(lam, self.zero_mode_multiplicity, self.tol) else 'unstable'}"
            for lam, _ in self.uncontrollable_modes)
        return (f"stabilizable: {str(self.is_stabilizable).lower()}; "
                f"uncontrollable modes: {len(self.uncontrollable_modes)}"
                + (f" ({modes})" if modes else ""))


def _format_eig(lam: complex, tol: float) -> str:
    re = 0.0 if abs(lam.real) < tol else lam.real
    im = 0.0 if abs(lam.imag) < tol else lam.imag
    if im == 0.0:
        return f"{re:.4g}"
    return f"{re:.4g}{im:+.4g}j"


def _mode_is_stable(lam: complex, zero_multiplicity: int, tol: float) -> bool:
    if lam.real < -tol:
        return True
    # A marginal zero mode is Lyapunov stable when it has a single 1x1 block.
    return abs(lam) <= max(tol, CLUSTER_TOL) and zero_multiplicity == 1


def pbh_analysis(m: RingModel, cav_coeffs: LinearHdvCoeffs | None = None,
                 tol: float = DEFAULT_TOL) -> PbhReport:
    """PBH test on ``(A_hat, B)``; uncontrollable modes are shared with ``(A, B)``."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    if cav_coeffs is None:
        cav_coeffs = LinearHdvCoeffs.mean(m.coeffs)
    A_hat = transform_to_hat(m, cav_coeffs)
    B = np.asarray(m.B)
    N = A_hat.shape[0]
    try:
        eigs = np.linalg.eigvals(A_hat)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(
            "eigenvalue computation failed",
            {"cond": float(np.linalg.cond(A_hat)), "norm": float(np.linalg.norm(A_hat))}) from exc
    if not np.all(np.isfinite(eigs)):
        raise NumericalFailureError("non-finite eigenvalues",
                                    {"norm": float(np.linalg.norm(A_hat))})

    scale = max(1.0, np.linalg.norm(A_hat, 2))
    modes = []
    for lam, _count in cluster_eigenvalues(eigs):
        if abs(lam.imag) <= CLUSTER_TOL * scale:
            lam = complex(lam.real, 0.0)
        pencil = np.hstack([lam * np.eye(N) - A_hat, B])
        u, sv, _ = np.linalg.svd(pencil)
        rank = int(np.sum(sv > tol * sv[0]))
        for k in range(rank, N):
            rho = u[:, k].conj()  # rho^T pencil = 0
            rho = rho / np.linalg.norm(rho)
            if np.isrealobj(pencil) or abs(lam.imag) == 0:
                rho = _realify(rho)
            modes.append((lam, rho))

    dim1, dim2, mult = zero_mode_jordan(A_hat, tol)
    notes = []
    all_coeffs = [cav_coeffs, *m.coeffs]
    if dim2 != dim1 and analytic_zero_mode_is_simple(all_coeffs):
        # Numerically ambiguous A_hat^2: fall back to the sign argument.
        notes.append("dim ker(A_hat^2) decided analytically (ill-conditioned A_hat^2)")
        dim2 = dim1
        mult = dim1
    cond = check_stabilizability_condition(all_coeffs)
    stabilizable_numeric = all(_mode_is_stable(lam, mult, tol) for lam, _ in modes)
    if cond:
        source = "pairwise-condition+pbh"
    else:
        source = "pbh"
        notes.append("pairwise coefficient condition failed; verdict rests on the numeric PBH test")
    return PbhReport(
        eigenvalues=eigs, uncontrollable_modes=modes, is_controllable=not modes,
        is_stabilizable=stabilizable_numeric, zero_mode_multiplicity=mult,
        dim_ker=dim1, dim_ker_sq=dim2, pairwise_condition=cond, verdict_source=source,
        tol=tol, notes=notes)


def _realify(v: np.ndarray) -> np.ndarray:
    """Rotate a complex vector with a real direction onto the real axis."""
    k = int(np.argmax(np.abs(v)))
    v = v * np.exp(-1j * np.angle(v[k]))
    if np.max(np.abs(v.imag)) < 1e-10:
        return v.real.copy()
    return v


def check_stabilizability_condition(all_coeffs: Sequence[LinearHdvCoeffs],
                                    rtol: float = CONDITION_RTOL) -> bool:
    """Sufficient stabilizability test over every ordered pair ``(i, j)``.

    ``a_j1^2 - a_i2 a_j1 a_j3 + a_i1 a_j3^2`` must be nonzero; "zero" means
    below ``rtol`` times the sum of the absolute values of the three terms.
    """
    if len(all_coeffs) < 2:
        raise DomainError("need at least two coefficient sets")
    c = np.array([x.as_tuple() for x in all_coeffs])
    a1, a2, a3 = c[:, 0], c[:, 1], c[:, 2]
    t1 = (a1 ** 2)[None, :]
    t2 = a2[:, None] * (a1 * a3)[None, :]
    t3 = a1[:, None] * (a3 ** 2)[None, :]
    expr = t1 - t2 + t3
    scale = np.abs(t1) + np.abs(t2) + np.abs(t3)
    return bool(np.all(np.abs(expr) > rtol * scale))


def verify_eigenvalue_condition(m: RingModel, lam: complex,
                                cav_coeffs: LinearHdvCoeffs | None = None,
                                atol: float = EIGEN_CONDITION_ATOL) -> bool:
    """Check ``lam^2 + a_i2 lam + a_i1 != 0`` and ``a_i3 lam + a_i2 != 0`` for all i."""
    if lam == 0:
        raise DomainError("condition is only defined for non-zero eigenvalues")
    if cav_coeffs is None:
        cav_coeffs = LinearHdvCoeffs.mean(m.coeffs)
    for c in (cav_coeffs, *m.coeffs):
        if abs(lam * lam + c.a2 * lam + c.a1) <= atol:
            return False
        if abs(c.a3 * lam + c.a2) <= atol:
            return False
    return True


def kalman_rank(A: np.ndarray, B: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    """Rank of ``[B, AB, ..., A^{N-1} B]`` (only sensible for small N)."""
    N = A.shape[0]
    blocks = [B]
    for _ in range(N - 1):
        blocks.append(A @ blocks[-1])
    return numerical_rank(np.hstack(blocks), tol)


def zero_kernel_vector(coeffs: Sequence[LinearHdvCoeffs]) -> np.ndarray:
    """Right null vector of ``A_hat``: ``p_i = ((a_i2 - a_i3) / a_i1, 1)``."""
    p = np.empty(2 * len(coeffs))
    for i, c in enumerate(coeffs):
        p[2 * i] = (c.a2 - c.a3) / c.a1
        p[2 * i + 1] = 1.0
    return p
