"""Car-following laws, equilibria, linearization and the ring-road state-space model.

Indexing convention used throughout the package: vehicle ``i - 1`` drives
immediately ahead of vehicle ``i`` and vehicle ``n`` is ahead of vehicle 1
(the CAV).  Python code uses 0-based positions, so the CAV is position 0 and
its leader is position ``n - 1``.  The global error state is ordered
``x = (s~_1, v~_1, s~_2, v~_2, ..., s~_n, v~_n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import (
    DegenerateLinearizationError,
    DomainError,
    InfeasibleEquilibriumError,
    ParameterError,
    ReachabilityError,
)

FD_STEP = 1e-6
BISECTION_XTOL = 1e-10


class CarFollowingLaw:
    """Interface for a car-following law ``dv/dt = F(s, s_dot, v)``.

    Subclasses must provide :meth:`acceleration` and :attr:`v_max`.  The
    partial derivatives default to central finite differences and the
    equilibrium spacing defaults to bisection on ``F(s, 0, v) = 0`` over
    :meth:`spacing_bracket`, which assumes ``F(s, 0, v)`` is nondecreasing
    in ``s``.
    """

    v_max: float

    def acceleration(self, s, s_dot, v):
        raise NotImplementedError

    def partials(self, s: float, s_dot: float, v: float) -> tuple[float, float, float]:
        """Return ``(dF/ds, dF/ds_dot, dF/dv)`` at the given point."""
        h = FD_STEP
        f = self.acceleration
        d_s = (f(s + h, s_dot, v) - f(s - h, s_dot, v)) / (2 * h)
        d_sdot = (f(s, s_dot + h, v) - f(s, s_dot - h, v)) / (2 * h)
        d_v = (f(s, s_dot, v + h) - f(s, s_dot, v - h)) / (2 * h)
        return float(d_s), float(d_sdot), float(d_v)

    def spacing_bracket(self) -> tuple[float, float]:
        return 0.0, 1e3

    def equilibrium_spacing(self, v_star: float) -> float:
        return bisect_equilibrium_spacing(self, v_star)


def bisect_equilibrium_spacing(law: CarFollowingLaw, v_star: float,
                               xtol: float = BISECTION_XTOL) -> float:
    """Smallest-bracket root of ``F(s, 0, v_star) = 0`` found by bisection."""
    if not 0.0 <= v_star <= law.v_max:
        raise DomainError(f"v_star={v_star} outside [0, {law.v_max}]")
    lo, hi = law.spacing_bracket()
    f_lo = law.acceleration(lo, 0.0, v_star)
    f_hi = law.acceleration(hi, 0.0, v_star)
    if f_lo == 0.0:
        return float(lo)
    if f_hi == 0.0:
        return float(hi)
    if f_lo > 0 or f_hi < 0:
        raise DomainError(f"no equilibrium spacing bracketed for v_star={v_star}")
    # F(s, 0, v*) is flat on plateaus of V; bisect towards the smallest root.
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if law.acceleration(mid, 0.0, v_star) < 0:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


@dataclass(frozen=True)
class OvmParams(CarFollowingLaw):
    """Optimal velocity model with the cosine desired-velocity profile.

    ``F(s, s_dot, v) = alpha (V(s) - v) + beta s_dot`` where ``V`` is 0 below
    ``s_st``, ``v_max`` above ``s_go`` and a half cosine wave in between.
    """

    alpha: float = 0.6
    beta: float = 0.9
    v_max: float = 30.0
    s_st: float = 5.0
    s_go: float = 35.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.v_max > 0):
            raise ParameterError(
                f"alpha, beta, v_max must be positive, got "
                f"{self.alpha}, {self.beta}, {self.v_max}")
        if not self.s_st < self.s_go:
            raise ParameterError(f"need s_st < s_go, got {self.s_st} >= {self.s_go}")

    def desired_velocity(self, s):
        s = np.asarray(s, dtype=float)
        frac = np.clip((s - self.s_st) / (self.s_go - self.s_st), 0.0, 1.0)
        out = 0.5 * self.v_max * (1.0 - np.cos(np.pi * frac))
        return out if out.ndim else float(out)

    def desired_velocity_slope(self, s):
        s = np.asarray(s, dtype=float)
        width = self.s_go - self.s_st
        inside = (s > self.s_st) & (s < self.s_go)
        out = np.where(inside, 0.5 * self.v_max * np.pi / width
                       * np.sin(np.pi * (s - self.s_st) / width), 0.0)
        return out if out.ndim else float(out)

    def acceleration(self, s, s_dot, v):
        return self.alpha * (self.desired_velocity(s) - v) + self.beta * s_dot

    def partials(self, s, s_dot, v):
        return (self.alpha * float(self.desired_velocity_slope(s)), self.beta, -self.alpha)

    def spacing_bracket(self):
        return self.s_st, self.s_go

    def equilibrium_spacing(self, v_star):
        if not 0.0 <= v_star <= self.v_max:
            raise DomainError(f"v_star={v_star} outside [0, {self.v_max}]")
        ratio = min(max(1.0 - 2.0 * v_star / self.v_max, -1.0), 1.0)
        return self.s_st + (self.s_go - self.s_st) / math.pi * math.acos(ratio)


def ovm_acceleration(p: OvmParams, s, s_dot, v):
    return p.acceleration(s, s_dot, v)


def equilibrium_spacing(law: CarFollowingLaw, v_star: float) -> float:
    """Equilibrium spacing ``s*`` with ``F(s*, 0, v_star) = 0``."""
    return law.equilibrium_spacing(v_star)


@dataclass(frozen=True)
class LinearHdvCoeffs:
    """Linearized HDV coefficients ``(alpha_1, alpha_2, alpha_3)``.

    ``dv~/dt = a1 s~ - a2 v~ + a3 v~_leader``.
    """

    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > self.a3 > 0):
            raise ParameterError(
                f"need a1 > 0 and a2 > a3 > 0, got a1={self.a1}, a2={self.a2}, a3={self.a3}")

    def as_tuple(self):
        return (self.a1, self.a2, self.a3)

    @staticmethod
    def mean(coeffs: Sequence["LinearHdvCoeffs"]) -> "LinearHdvCoeffs":
        arr = np.array([c.as_tuple() for c in coeffs])
        return LinearHdvCoeffs(*map(float, arr.mean(axis=0)))


def linearize_hdv(law: CarFollowingLaw, v_star: float) -> LinearHdvCoeffs:
    if not 0.0 <= v_star <= law.v_max:
        raise DomainError(f"v_star={v_star} outside [0, {law.v_max}]")
    s_star = law.equilibrium_spacing(v_star)
    d_s, d_sdot, d_v = law.partials(s_star, 0.0, v_star)
    if d_s <= 0:
        raise DegenerateLinearizationError(
            f"dF/ds = {d_s} at v_star={v_star}, s*={s_star}: equilibrium on a flat part of V")
    return LinearHdvCoeffs(d_s, d_sdot - d_v, d_sdot)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RingModel:
    """Linearized mixed-traffic ring: ``dx/dt = A x + B u + H w``."""

    n: int
    circumference: float
    v_star: float
    s_star: np.ndarray
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    coeffs: tuple[LinearHdvCoeffs, ...]
    laws: tuple[CarFollowingLaw, ...] = field(default=(), repr=False, compare=False)

    @property
    def s_star_cav(self) -> float:
        return float(self.s_star[0])

    @property
    def x_star(self) -> np.ndarray:
        """Equilibrium (s_i*, v*) stacked in state order."""
        out = np.empty(2 * self.n)
        out[0::2] = self.s_star
        out[1::2] = self.v_star
        return out


def ring_matrices(coeffs: Sequence[LinearHdvCoeffs]):
    """Return ``(A, B, H)`` for one CAV followed by ``len(coeffs)`` HDVs."""
    n = len(coeffs) + 1
    if n < 2:
        raise DomainError("need at least one HDV")
    A = np.zeros((2 * n, 2 * n))
    # CAV spacing follows vehicle n.
    A[0, 2 * (n - 1) + 1] = 1.0
    A[0, 1] = -1.0
    for j, c in enumerate(coeffs, start=1):
        lead_v = 2 * (j - 1) + 1
        A[2 * j, lead_v] = 1.0
        A[2 * j, 2 * j + 1] = -1.0
        A[2 * j + 1, 2 * j] = c.a1
        A[2 * j + 1, 2 * j + 1] = -c.a2
        A[2 * j + 1, lead_v] = c.a3
    B = np.zeros((2 * n, 1))
    B[1, 0] = 1.0
    H = np.zeros((2 * n, n))
    H[np.arange(1, 2 * n, 2), np.arange(n)] = 1.0
    return A, B, H


def assemble_ring_model(coeffs: Sequence[LinearHdvCoeffs], v_star: float,
                        circumference: float,
                        hdv_laws: Sequence[CarFollowingLaw] | None = None,
                        hdv_spacings: Sequence[float] | None = None) -> RingModel:
    """Assemble the global linear model.

    HDV equilibrium spacings come from ``hdv_laws`` (or are given directly
    through ``hdv_spacings``); the CAV takes whatever is left of the ring.
    """
    coeffs = tuple(coeffs)
    for c in coeffs:
        if not isinstance(c, LinearHdvCoeffs):
            raise TypeError("coeffs must be LinearHdvCoeffs")
    if hdv_spacings is None:
        if hdv_laws is None:
            raise ValueError("need hdv_laws or hdv_spacings")
        hdv_spacings = [law.equilibrium_spacing(v_star) for law in hdv_laws]
    hdv_spacings = np.asarray(hdv_spacings, dtype=float)
    if len(hdv_spacings) != len(coeffs):
        raise ValueError("one spacing per HDV required")
    s1 = cav_equilibrium_spacing(hdv_spacings, circumference)
    if s1 <= 0:
        raise InfeasibleEquilibriumError(
            f"CAV equilibrium spacing {s1:.6g} m <= 0: HDVs need "
            f"{hdv_spacings.sum():.6g} m of a {circumference} m ring")
    A, B, H = ring_matrices(coeffs)
    return RingModel(
        n=len(coeffs) + 1, circumference=float(circumference), v_star=float(v_star),
        s_star=_readonly(np.concatenate([[s1], hdv_spacings])),
        A=_readonly(A), B=_readonly(B), H=_readonly(H), coeffs=coeffs,
        laws=tuple(hdv_laws) if hdv_laws is not None else ())


def linearized_ring_model(hdv_laws: Sequence[CarFollowingLaw], v_star: float,
                          circumference: float) -> RingModel:
    """Linearize every HDV law at ``v_star`` and assemble the ring."""
    coeffs = [linearize_hdv(law, v_star) for law in hdv_laws]
    return assemble_ring_model(coeffs, v_star, circumference, hdv_laws=hdv_laws)


def cav_equilibrium_spacing(hdv_spacings, circumference: float) -> float:
    """Desired CAV spacing that makes the ring constraint consistent."""
    return float(circumference - np.sum(hdv_spacings))


def max_reachable_velocity(hdv_laws: Sequence[CarFollowingLaw], circumference: float,
                           xtol: float = 1e-8) -> float:
    """Velocity at which the HDV equilibrium spacings fill the whole ring.

    Returns ``min(v_max)`` when even free-flow spacings leave room for the CAV.
    """
    top = min(law.v_max for law in hdv_laws)

    def excess(v):
        return sum(law.equilibrium_spacing(v) for law in hdv_laws) - circumference

    if excess(0.0) >= 0:
        return 0.0
    if excess(top) < 0:
        return top
    return float(optimize.bisect(excess, 0.0, top, xtol=xtol, maxiter=200))


def homogeneous_max_velocity(p: OvmParams, n: int, circumference: float) -> float:
    """Closed-form inverse of the OVM equilibrium map at ``L / (n - 1)``."""
    return float(p.desired_velocity(circumference / (n - 1)))


def check_reachable(hdv_laws: Sequence[CarFollowingLaw], v_star: float,
                    circumference: float) -> float:
    """Raise :class:`ReachabilityError` unless ``0 <= v_star < v_max*``."""
    v_top = max_reachable_velocity(hdv_laws, circumference)
    if not 0.0 <= v_star < v_top:
        raise ReachabilityError(
            f"v_star={v_star} m/s is not reachable: maximum reachable velocity "
            f"is {v_top:.8g} m/s")
    return v_top


HETEROGENEITY_DEFAULTS = dict(alpha=(0.6, 0.1), beta=(0.9, 0.1), s_go=(35.0, 5.0))


def sample_ovm_fleet(n: int, seed: int = 0, *, alpha=(0.6, 0.1), beta=(0.9, 0.1),
                     s_go=(35.0, 5.0), v_max: float = 30.0, s_st: float = 5.0) -> list[OvmParams]:
    """Draw ``n`` heterogeneous OVM drivers, ``center + U[-spread, spread]``.

    Draw order is alpha, beta, s_go (each a length-``n`` vector), so a given
    seed always yields the same fleet.  Entry 0 is the human behaviour of
    vehicle 1 (used when its controller is off).
    """
    rng = np.random.default_rng(seed)
    a = alpha[0] + rng.uniform(-alpha[1], alpha[1], n)
    b = beta[0] + rng.uniform(-beta[1], beta[1], n)
    g = s_go[0] + rng.uniform(-s_go[1], s_go[1], n)
    return [OvmParams(alpha=float(a[i]), beta=float(b[i]), v_max=v_max, s_st=s_st,
                      s_go=float(g[i])) for i in range(n)]
