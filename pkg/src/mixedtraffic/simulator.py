"""Nonlinear ring-road simulation with one controlled vehicle.

Vehicle ``i - 1`` drives directly ahead of vehicle ``i`` and vehicle ``n``
ahead of vehicle 1 (the CAV).  Positions are kept unwrapped internally so
that ``s_1 = p_n - p_1 + L`` and the spacings always sum to ``L``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ParameterError
from .synthesis import PerformanceWeights, build_performance
from .traffic import CarFollowingLaw, OvmParams

logger = logging.getLogger(__name__)

A_MIN = -5.0
A_MAX = 2.0
KP_COMMAND = 0.6
NOISE_REF_DT = 0.01
SETTLE_THRESHOLD = 0.1
TRACE_FORMAT_VERSION = 1


class LinearFeedback:
    """``u = -K (x - x*)`` in error coordinates around ``(s_i*, v*)``."""

    def __init__(self, K, s_star, v_star: float):
        self.K = np.asarray(K, dtype=float).reshape(-1)
        self.s_star = np.asarray(s_star, dtype=float)
        self.v_star = float(v_star)
        if self.K.size != 2 * self.s_star.size:
            raise ParameterError("gain and equilibrium sizes disagree")
        self._Ks = self.K[0::2]
        self._Kv = self.K[1::2]

    def __call__(self, t, s, v):
        return -(self._Ks @ (s - self.s_star) + self._Kv @ (v - self.v_star))


class CommandVelocityController:
    """Lower-level proportional loop ``u = kp (v_cmd - v_1)`` for command-velocity strategies."""

    def __init__(self, v_cmd: Callable[[float, np.ndarray, np.ndarray], float], kp: float = KP_COMMAND):
        self.v_cmd = v_cmd
        self.kp = kp

    def __call__(self, t, s, v):
        return self.kp * (self.v_cmd(t, s, v) - v[0])


@dataclass(frozen=True)
class Perturbation:
    vehicle: int            # 1-based
    start: float = 20.0
    deceleration: float = -3.0
    duration: float = 3.0

    def active(self, t: float) -> bool:
        # Grid times like 400 * 0.01 may round just below the switch time.
        eps = 1e-9
        return self.start - eps <= t < self.start + self.duration - eps


@dataclass
class Scenario:
    """Everything needed for one deterministic run.

    ``laws[0]`` is the CAV's behaviour when its controller is switched off.
    ``schedule`` holds ``(time, on)`` toggles applied in time order.
    """

    laws: Sequence[CarFollowingLaw]
    circumference: float
    p0: np.ndarray
    v0: np.ndarray
    controller: Callable | None = None
    controller_on: bool = True
    schedule: Sequence[tuple[float, bool]] = ()
    duration: float = 100.0
    dt: float = 0.01
    noise_std: float = 0.0
    perturbation: Perturbation | None = None
    rng_seed: int = 0
    a_min: float = A_MIN
    a_max: float = A_MAX
    sample_every: int = 1
    s_star: np.ndarray | None = None
    v_star: float | None = None

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        n = len(self.laws)
        if self.p0.shape != (n,) or self.v0.shape != (n,):
            raise ParameterError("initial state must have one entry per vehicle")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.duration < self.dt:
            raise ParameterError("duration must be at least one step")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be nonnegative")
        if self.perturbation is not None and not 1 <= self.perturbation.vehicle <= n:
            raise ParameterError(f"perturbed vehicle must be in 1..{n}")
        if self.sample_every < 1:
            raise ParameterError("sample_every must be >= 1")
        if np.any(spacings(self.p0, self.circumference) <= 0):
            raise DomainError("initial spacings must be positive")

    @property
    def n(self) -> int:
        return len(self.laws)


def spacings(p: np.ndarray, L: float) -> np.ndarray:
    s = np.empty_like(p)
    s[1:] = p[:-1] - p[1:]
    s[0] = p[-1] - p[0] + L
    return s


def positions_from_spacings(s: Sequence[float]) -> np.ndarray:
    """Unwrapped positions with the CAV at 0 and vehicle ``i`` a distance ``s_i`` behind ``i - 1``."""
    s = np.asarray(s, dtype=float)
    p = np.zeros_like(s)
    p[1:] = -np.cumsum(s[1:])
    return p


def emergency_brake(s, v_follow, v_lead, a_min: float = A_MIN):
    """True where closing speed requires full braking: ``(v_i^2 - v_{i-1}^2) / (2 s_i) >= |a_min|``."""
    return (np.square(v_follow) - np.square(v_lead)) / (2.0 * s) >= abs(a_min)


class _Dynamics:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.L = sc.circumference
        laws = list(sc.laws)
        self.vectorized = all(isinstance(l, OvmParams) for l in laws)
        if self.vectorized:
            self.alpha = np.array([l.alpha for l in laws])
            self.beta = np.array([l.beta for l in laws])
            self.vmax = np.array([l.v_max for l in laws])
            self.sst = np.array([l.s_st for l in laws])
            self.sgo = np.array([l.s_go for l in laws])
        self.laws = laws

    def human(self, s, v):
        v_lead = np.roll(v, 1)
        if self.vectorized:
            x = np.clip((s - self.sst) / (self.sgo - self.sst), 0.0, 1.0)
            V = 0.5 * self.vmax * (1.0 - np.cos(np.pi * x))
            return self.alpha * (V - v) + self.beta * (v_lead - v)
        return np.array([law.acceleration(si, vl - vi, vi)
                         for law, si, vi, vl in zip(self.laws, s, v, v_lead)])

    def accel(self, t, p, v, ctrl_on, noise):
        """Applied accelerations, the CAV's applied input and the braking mask."""
        sc = self.sc
        s = spacings(p, self.L)
        a = self.human(s, v)
        if ctrl_on and sc.controller is not None:
            a[0] = float(sc.controller(t, s, v))
        if noise is not None:
            a = a + noise
        if sc.perturbation is not None and sc.perturbation.active(t):
            a[sc.perturbation.vehicle - 1] = sc.perturbation.deceleration
        a = np.clip(a, sc.a_min, sc.a_max)
        brake = emergency_brake(s, v, np.roll(v, 1), sc.a_min)
        a[brake] = sc.a_min
        # Vehicles do not reverse.
        a[(v <= 0) & (a < 0)] = 0.0
        return a, float(a[0]), brake


def step(p, v, scenario: Scenario, t: float, dt: float, ctrl_on: bool = True,
         noise: np.ndarray | None = None, dyn: _Dynamics | None = None):
    """Advance ``(p, v)`` by one fixed step; returns ``(p, v, u, braking)``.

    Noiseless steps use classical RK4; with ``noise`` an explicit Euler step
    with the noise held over the step.  Time-dependent inputs (perturbation)
    are sampled at ``t`` and held for the whole step.
    """
    dyn = dyn or _Dynamics(scenario)
    a1, u, brake = dyn.accel(t, p, v, ctrl_on, noise)
    if noise is not None:
        v_new = np.maximum(v + dt * a1, 0.0)
        p_new = p + dt * v
        return p_new, v_new, u, brake
    a2, _, b2 = dyn.accel(t, p + dt / 2 * v, np.maximum(v + dt / 2 * a1, 0.0), ctrl_on, None)
    v2 = np.maximum(v + dt / 2 * a1, 0.0)
    a3, _, b3 = dyn.accel(t, p + dt / 2 * v2, np.maximum(v + dt / 2 * a2, 0.0), ctrl_on, None)
    v3 = np.maximum(v + dt / 2 * a2, 0.0)
    v4 = np.maximum(v + dt * a3, 0.0)
    a4, _, b4 = dyn.accel(t, p + dt * v3, v4, ctrl_on, None)
    # Braking that switches on inside the step counts as braking in this step.
    brake = brake | b2 | b3 | b4
    p_new = p + dt / 6 * (v + 2 * v2 + 2 * v3 + v4)
    v_new = np.maximum(v + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4), 0.0)
    return p_new, v_new, u, brake


@dataclass
class SimTrace:
    times: np.ndarray
    positions: np.ndarray        # unwrapped, (T, n)
    velocities: np.ndarray
    spacings: np.ndarray
    u: np.ndarray
    circumference: float
    s_star: np.ndarray | None = None
    v_star: float | None = None
    events: list = field(default_factory=list)
    collision: bool = False

    @property
    def n(self) -> int:
        return self.velocities.shape[1]

    @property
    def positions_mod(self) -> np.ndarray:
        return np.mod(self.positions, self.circumference)

    def error_state(self) -> np.ndarray:
        """Samples of ``x - x*`` in the interleaved (s, v) ordering."""
        if self.s_star is None or self.v_star is None:
            raise ParameterError("trace has no equilibrium reference")
        T, n = self.spacings.shape
        x = np.empty((T, 2 * n))
        x[:, 0::2] = self.spacings - self.s_star
        x[:, 1::2] = self.velocities - self.v_star
        return x

    def window(self, t0: float, t1: float) -> np.ndarray:
        return (self.times >= t0) & (self.times <= t1)

    def to_csv(self, path):
        n = self.n
        header = ["t"] + [f"{k}_{i}" for i in range(1, n + 1) for k in ("p", "v", "s")] + ["u"]
        data = np.empty((self.times.size, 3 * n + 2))
        data[:, 0] = self.times
        data[:, 1:-1:3] = self.positions_mod
        data[:, 2:-1:3] = self.velocities
        data[:, 3:-1:3] = self.spacings
        data[:, -1] = self.u
        with open(path, "w", newline="") as fh:
            fh.write(f"# mixedtraffic trace v{TRACE_FORMAT_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in data:
                w.writerow([repr(float(x)) for x in row])


@dataclass
class Metrics:
    lq_cost: float | None
    max_cav_spacing: float
    settle_time: float | None
    velocity_std_profile: np.ndarray
    collision: bool = False

    def to_dict(self, include_profile: bool = True) -> dict:
        d = {"format_version": TRACE_FORMAT_VERSION, "lq_cost": self.lq_cost,
             "max_cav_spacing": self.max_cav_spacing, "settle_time": self.settle_time,
             "collision": self.collision}
        if include_profile:
            d["velocity_std_profile"] = self.velocity_std_profile.tolist()
        return d

    def to_json(self, path, **kw):
        with open(path, "w") as fh:
            json.dump(self.to_dict(**kw), fh, indent=1)


def lq_cost(trace: SimTrace, Q: np.ndarray, R: np.ndarray) -> float:
    """Trapezoidal integral of ``x^T Q x + u^T R u`` in error coordinates."""
    x = trace.error_state()
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    integrand = np.einsum("ti,ij,tj->t", x, Q, x) + R[0, 0] * np.square(trace.u)
    if trace.times.size < 2:
        return 0.0
    return float(np.trapezoid(integrand, trace.times))


def settle_time(trace: SimTrace, threshold: float = SETTLE_THRESHOLD, after: float = 0.0):
    """First sample time after which ``max_i |v_i - v*| < threshold`` holds for the rest of the trace."""
    dev = np.abs(trace.velocities - trace.v_star).max(axis=1)
    bad = np.flatnonzero((dev >= threshold) & (trace.times >= after))
    if bad.size == 0:
        return float(max(after, trace.times[0]))
    if bad[-1] + 1 >= trace.times.size:
        return None
    return float(trace.times[bad[-1] + 1])


def compute_metrics(trace: SimTrace, Q=None, R=None, threshold: float = SETTLE_THRESHOLD) -> Metrics:
    """Metrics of ``trace``; ``Q``, ``R`` default to the standard performance weights."""
    if Q is None or R is None:
        Q, R = build_performance(PerformanceWeights(), trace.n)
    cost = lq_cost(trace, Q, R) if trace.s_star is not None else None
    settle = settle_time(trace, threshold) if trace.v_star is not None else None
    return Metrics(lq_cost=cost, max_cav_spacing=float(trace.spacings[:, 0].max()),
                   settle_time=settle, velocity_std_profile=trace.velocities.std(axis=1),
                   collision=trace.collision)


def _schedule_state(sc: Scenario, t: float) -> bool:
    on = sc.controller_on
    for when, state in sorted(sc.schedule, key=lambda e: e[0]):
        if t >= when:
            on = bool(state)
    return on


def run(sc: Scenario, Q=None, R=None) -> tuple[SimTrace, Metrics]:
    """Integrate ``sc`` over its horizon and compute metrics."""
    dyn = _Dynamics(sc)
    rng = np.random.default_rng(sc.rng_seed)
    nsteps = int(round(sc.duration / sc.dt))
    nsamp = nsteps // sc.sample_every + 1
    n = sc.n
    T = np.empty(nsamp)
    P = np.empty((nsamp, n))
    V = np.empty((nsamp, n))
    S = np.empty((nsamp, n))
    U = np.empty(nsamp)
    events = []
    noise_scale = sc.noise_std * np.sqrt(NOISE_REF_DT / sc.dt)

    p, v = sc.p0.copy(), sc.v0.copy()
    on = _schedule_state(sc, 0.0)
    if sc.schedule:
        events.append({"t": 0.0, "event": "controller-on" if on else "controller-off"})
    T[0], P[0], V[0], S[0] = 0.0, p, v, spacings(p, sc.circumference)
    k = 1
    braking = np.zeros(n, dtype=bool)
    collision = False
    for i in range(nsteps):
        t = i * sc.dt
        now_on = _schedule_state(sc, t)
        if now_on != on:
            events.append({"t": t, "event": "controller-on" if now_on else "controller-off"})
            on = now_on
        noise = rng.normal(0.0, noise_scale, n) if sc.noise_std > 0 else None
        p, v, u, brake = step(p, v, sc, t, sc.dt, on, noise, dyn)
        if i % sc.sample_every == 0:
            # Input applied from the sample state onwards.
            U[i // sc.sample_every] = u
        started = brake & ~braking
        for j in np.flatnonzero(started):
            events.append({"t": t, "event": "emergency-brake", "vehicle": int(j + 1)})
        braking = brake
        s = spacings(p, sc.circumference)
        last = np.any(s <= 0)
        if last:
            collision = True
            events.append({"t": t + sc.dt, "event": "collision",
                           "vehicles": [int(j + 1) for j in np.flatnonzero(s <= 0)]})
        if last or (i + 1) % sc.sample_every == 0:
            T[k], P[k], V[k], S[k] = (i + 1) * sc.dt, p, v, s
            k += 1
        if last:
            break
    _, U[k - 1], _ = dyn.accel(T[k - 1], P[k - 1], V[k - 1], _schedule_state(sc, T[k - 1]), None)
    trace = SimTrace(T[:k], P[:k], V[:k], S[:k], U[:k], sc.circumference,
                     s_star=None if sc.s_star is None else np.asarray(sc.s_star, dtype=float),
                     v_star=sc.v_star, events=events, collision=collision)
    if collision:
        logger.warning("collision at t=%.2f s; trace truncated", trace.times[-1])
    return trace, compute_metrics(trace, Q, R)


def equilibrium_initial_state(s_star, v_star: float):
    s_star = np.asarray(s_star, dtype=float)
    return positions_from_spacings(s_star), np.full(s_star.size, float(v_star))


def randomized_initial_state(s0, v_mean: float, spread: float, rng: np.random.Generator):
    """Positions from spacings ``s0`` and velocities ``v_mean + U[-spread, spread]``."""
    s0 = np.asarray(s0, dtype=float)
    v0 = v_mean + rng.uniform(-spread, spread, s0.size)
    return positions_from_spacings(s0), v0


def matched_human_law(law: OvmParams, s_target: float, v_star: float) -> OvmParams:
    """Copy of ``law`` shifted in spacing so that its equilibrium spacing at ``v_star`` is ``s_target``."""
    shift = s_target - law.equilibrium_spacing(v_star)
    return replace(law, s_st=law.s_st + shift, s_go=law.s_go + shift)
