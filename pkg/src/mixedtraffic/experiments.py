"""Canned scenario families: reachability (A), wave dissipation (B) and braking perturbation (C)."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .synthesis import (PerformanceWeights, SynthesisResult, build_performance,
                        ring_topology, solve_structured_h2, topology_to_pattern)
from .simulator import (LinearFeedback, Perturbation, Scenario, equilibrium_initial_state,
                        matched_human_law, randomized_initial_state, run)
from .traffic import OvmParams, RingModel, linearized_ring_model, sample_ovm_fleet

logger = logging.getLogger(__name__)


@dataclass
class Setup:
    """Shared fleet, target and controller design inputs.

    ``fleet[0]`` is the CAV's own human behaviour, used whenever its
    controller is off.
    """

    fleet: Sequence[OvmParams]
    circumference: float = 400.0
    v_star: float = 15.0
    weights: PerformanceWeights = field(default_factory=PerformanceWeights)
    topology: set | None = None
    dt: float = 0.01
    s1_override: float | None = None
    sample_every: int = 10

    @property
    def n(self) -> int:
        return len(self.fleet)

    def topology_set(self) -> set:
        return self.topology if self.topology is not None else ring_topology(self.n, 5, 5)

    @classmethod
    def default(cls, n: int = 20, seed: int = 0, **kw) -> "Setup":
        return cls(fleet=sample_ovm_fleet(n, seed), **kw)


@dataclass
class Design:
    model: RingModel
    result: SynthesisResult
    s_star: np.ndarray          # targets used by the controller (s_1* possibly overridden)

    def controller(self, s1_offset: float = 0.0) -> LinearFeedback:
        s = self.s_star.copy()
        s[0] += s1_offset
        return LinearFeedback(self.result.K, s, self.model.v_star)


def design(setup: Setup, v_star: float | None = None, **solve_kw) -> Design:
    v = setup.v_star if v_star is None else v_star
    m = linearized_ring_model(setup.fleet[1:], v, setup.circumference)
    pat = topology_to_pattern(setup.topology_set(), setup.n)
    res = solve_structured_h2(m, setup.weights, pat, **solve_kw)
    s_star = np.array(m.s_star, dtype=float)
    if setup.s1_override is not None:
        s_star[0] = setup.s1_override
    return Design(m, res, s_star)


@dataclass
class RunRecord:
    label: str
    params: dict
    trace: object
    metrics: object


def _baseline_laws(setup: Setup, s_star: np.ndarray, v_star: float):
    laws = list(setup.fleet)
    laws[0] = matched_human_law(setup.fleet[0], float(s_star[0]), v_star)
    return laws


def experiment_a(setup: Setup, seed: int = 0, v_stars=(14.0, 15.0, 16.0),
                 s1_offsets=(0.0, 5.0, -5.0), duration: float = 100.0,
                 v_mean: float = 15.0, spread: float = 4.0, designs: dict | None = None):
    """Random initial velocities ``v_mean + U[-spread, spread]`` steered to each ``v*``.

    Vehicles start from the equilibrium spacings at ``v_mean``; only the
    velocities are randomized.  ``s1_offsets`` shift the CAV's target spacing
    away from the consistent value while keeping the gain fixed.
    """
    Q, R = build_performance(setup.weights, setup.n)
    base = linearized_ring_model(setup.fleet[1:], v_mean, setup.circumference)
    out = []
    for v_star in v_stars:
        d = (designs or {}).get(v_star) or design(setup, v_star)
        for off in s1_offsets:
            rng = np.random.default_rng(seed)
            p0, v0 = randomized_initial_state(base.s_star, v_mean, spread, rng)
            sc = Scenario(laws=_baseline_laws(setup, d.s_star, v_star),
                          circumference=setup.circumference, p0=p0, v0=v0,
                          controller=d.controller(off), duration=duration, dt=setup.dt,
                          rng_seed=seed, s_star=d.s_star, v_star=v_star,
                          sample_every=setup.sample_every)
            tr, met = run(sc, Q, R)
            out.append(RunRecord(f"A-v{v_star:g}-ds{off:+g}",
                                 {"v_star": v_star, "s1_offset": off, "seed": seed}, tr, met))
    return out


B_SCHEDULE = ((0.0, False), (300.0, True), (450.0, False))


def experiment_b(setup: Setup, seed: int = 0, schedule=B_SCHEDULE, duration: float = 700.0,
                 noise_std: float = 0.2, d: Design | None = None):
    """Noisy ring with the controller toggled by ``schedule``, starting at equilibrium."""
    d = d or design(setup)
    v = d.model.v_star
    Q, R = build_performance(setup.weights, setup.n)
    p0, v0 = equilibrium_initial_state(d.s_star, v)
    sc = Scenario(laws=_baseline_laws(setup, d.s_star, v), circumference=setup.circumference,
                  p0=p0, v0=v0, controller=d.controller(), schedule=tuple(schedule),
                  duration=duration, dt=setup.dt, noise_std=noise_std, rng_seed=seed,
                  s_star=d.s_star, v_star=v, sample_every=setup.sample_every)
    tr, met = run(sc, Q, R)
    return RunRecord(f"B-seed{seed}", {"seed": seed, "noise_std": noise_std,
                                       "schedule": [list(e) for e in schedule]}, tr, met)


def window_std(trace, t0: float, t1: float) -> float:
    """Time-averaged across-vehicle velocity standard deviation on ``[t0, t1]``."""
    mask = trace.window(t0, t1)
    return float(trace.velocities[mask].std(axis=1).mean())


def _run_c(args):
    setup, d, vehicle, controlled, start, decel, length, duration = args
    v = d.model.v_star
    Q, R = build_performance(setup.weights, setup.n)
    p0, v0 = equilibrium_initial_state(d.s_star, v)
    sc = Scenario(laws=_baseline_laws(setup, d.s_star, v), circumference=setup.circumference,
                  p0=p0, v0=v0, controller=d.controller() if controlled else None,
                  controller_on=controlled, duration=duration, dt=setup.dt,
                  perturbation=Perturbation(vehicle, start, decel, length),
                  s_star=d.s_star, v_star=v, sample_every=setup.sample_every)
    return run(sc, Q, R)


def experiment_c(setup: Setup, vehicles: Sequence[int] | None = None, start: float = 20.0,
                 deceleration: float = -3.0, length: float = 3.0, duration: float = 100.0,
                 d: Design | None = None, workers: int = 1):
    """Brake one HDV at a time, with the structured controller and with an all-HDV ring.

    Returns a list of per-position rows and the underlying run records.
    """
    d = d or design(setup)
    vehicles = list(vehicles) if vehicles is not None else list(range(2, setup.n + 1))
    jobs = [(setup, d, j, ctrl, start, deceleration, length, duration)
            for j in vehicles for ctrl in (True, False)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_c, jobs))
    else:
        results = [_run_c(j) for j in jobs]
    rows, records = [], []
    end = start + length
    for (_, _, j, ctrl, *_), (tr, met) in zip(jobs, results):
        dev = np.abs(tr.velocities - d.model.v_star).max(axis=1)
        late = np.flatnonzero((dev >= 0.5) & (tr.times >= end))
        recover = float(tr.times[late[-1] + 1] - end) if late.size and late[-1] + 1 < tr.times.size \
            else (None if late.size else 0.0)
        label = "controlled" if ctrl else "all-hdv"
        records.append(RunRecord(f"C-veh{j}-{label}", {"vehicle": j, "controller": label}, tr, met))
        rows.append({"vehicle": j, "controller": label, "lq_cost": met.lq_cost,
                     "max_cav_spacing": met.max_cav_spacing, "recovery_time": recover,
                     "collision": tr.collision})
    return rows, records
