"""Command-line front end.

Subcommands run the design pipeline stage by stage::

    mixedtraffic analyze     --config ring.ini
    mixedtraffic reach       --config ring.ini
    mixedtraffic synthesize  --config ring.ini --out results/
    mixedtraffic simulate    --config ring.ini --seed 3 --dt 0.01
    mixedtraffic experiment  B --config ring.ini

Exit codes: 0 success, 2 configuration error, 3 infeasible or unreachable,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .config import ExperimentConfig, load_config
from .controllability import check_stabilizability_condition, pbh_analysis
from .errors import (ConfigError, DomainError, InfeasibleEquilibriumError, NumericalFailureError,
                     ParameterError, StructuredInfeasibleError, TopologyError)
from .simulator import (LinearFeedback, Perturbation, Scenario, equilibrium_initial_state,
                        matched_human_law, randomized_initial_state, run)
from .synthesis import (SynthesisResult, build_performance, closed_loop_h2, solve_structured_h2,
                        topology_to_pattern)
from .traffic import (LinearHdvCoeffs, cav_equilibrium_spacing, check_reachable,
                      homogeneous_max_velocity, linearized_ring_model, max_reachable_velocity)

logger = logging.getLogger("mixedtraffic")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4


def _write_json(path, doc):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def _out_dir(cfg: ExperimentConfig, args) -> str:
    d = args.out or cfg.get("output", "directory")
    os.makedirs(d, exist_ok=True)
    return d


def _reach_guard(cfg: ExperimentConfig, allow: bool):
    if cfg.get("model", "law") != "ovm" or allow:
        return
    check_reachable(cfg.fleet()[1:], cfg.get("target", "v_star_mps"), cfg.get("model", "circumference_m"))


def cmd_analyze(cfg: ExperimentConfig, args) -> dict:
    _reach_guard(cfg, args.allow_unreachable)
    m = cfg.ring_model()
    rep = pbh_analysis(m)
    cav = LinearHdvCoeffs.mean(m.coeffs)
    doc = {"kind": "analysis", **cfg.stamp(), "summary": rep.summary(), "report": rep.to_dict(),
           "pairwise_condition": check_stabilizability_condition([cav, *m.coeffs])}
    print(rep.summary())
    return doc


def cmd_reach(cfg: ExperimentConfig, args) -> dict:
    L = cfg.get("model", "circumference_m")
    v = cfg.get("target", "v_star_mps")
    n = cfg.get("model", "n")
    doc = {"kind": "reachability", **cfg.stamp(), "v_star_mps": v}
    if cfg.get("model", "law") == "ovm":
        laws = cfg.fleet()[1:]
        vmax = max_reachable_velocity(laws, L)
        doc["v_star_max_mps"] = vmax
        if all(l == laws[0] for l in laws):
            doc["v_star_max_closed_form_mps"] = homogeneous_max_velocity(laws[0], n, L)
        doc["reachable"] = bool(0 <= v < vmax)
        spacing = [l.equilibrium_spacing(v) for l in laws]
    else:
        _, spacing, _ = cfg.linear_coeffs(v)
    s1 = cav_equilibrium_spacing(spacing, L)
    doc["s1_star_m"] = s1
    doc["hdv_spacings_m"] = list(map(float, spacing))
    print(f"s1* = {s1:.6f} m" + (f"; v*_max = {doc['v_star_max_mps']:.8f} m/s"
                                 if "v_star_max_mps" in doc else ""))
    if "reachable" in doc and not doc["reachable"] and not args.allow_unreachable:
        _reach_guard(cfg, False)
    if s1 <= 0:
        raise InfeasibleEquilibriumError(f"CAV equilibrium spacing {s1:.6g} m <= 0")
    return doc


def _synthesize(cfg: ExperimentConfig, args):
    _reach_guard(cfg, args.allow_unreachable)
    m = cfg.ring_model()
    rep = pbh_analysis(m)
    if not rep.is_stabilizable:
        raise StructuredInfeasibleError("analysis verdict: not stabilizable")
    c = cfg["controller"]
    pat = topology_to_pattern(cfg.topology(), m.n)
    res = solve_structured_h2(m, cfg.weights(), pat, feas_tol=c["feas_tol"], gap_tol=c["gap_tol"],
                              max_iters=c["max_iters"], check_stabilizable=False)
    return m, res


def cmd_synthesize(cfg: ExperimentConfig, args) -> dict:
    m, res = _synthesize(cfg, args)
    doc = {"kind": "synthesis", **cfg.stamp(), **res.to_dict(),
           "v_star_mps": m.v_star, "s_star_m": m.s_star.tolist(),
           "h2_norm_squared": closed_loop_h2(m, res.K, cfg.weights()) ** 2}
    blocks = int(np.count_nonzero(np.any(res.K.reshape(-1, 2) != 0, axis=1)))
    print(f"certified cost {res.certified_cost:.6g}; nonzero gain blocks {blocks}")
    return doc


def _controller(cfg: ExperimentConfig, args, m):
    if cfg.get("controller", "type") == "none":
        return None, None
    path = cfg.get("controller", "gain_file")
    if path:
        with open(path) as fh:
            d = json.load(fh)
        if "config_sha256" in d and d.get("config", {}).get("model") != cfg.canonical()["model"]:
            logger.warning("gain file was synthesized for a different model section")
        res = SynthesisResult.from_dict(d)
    else:
        _, res = _synthesize(cfg, args)
    s_star = np.array(m.s_star, dtype=float)
    s1 = cfg.get("target", "s1_star_m")
    if s1 is not None:
        s_star[0] = s1
    return LinearFeedback(res.K, s_star, m.v_star), s_star


def build_scenario(cfg: ExperimentConfig, args) -> Scenario:
    _reach_guard(cfg, args.allow_unreachable)
    fleet = cfg.fleet()
    m = linearized_ring_model(fleet[1:], cfg.get("target", "v_star_mps"), cfg.get("model", "circumference_m"))
    ctrl, s_star = _controller(cfg, args, m)
    if s_star is None:
        s_star = np.array(m.s_star, dtype=float)
    sc = cfg["scenario"]
    laws = list(fleet)
    laws[0] = matched_human_law(fleet[0], float(s_star[0]), m.v_star)
    if sc["initial_state"] == "randomized":
        rng = np.random.default_rng(sc["seed"])
        base = linearized_ring_model(fleet[1:], sc["initial_velocity_mean_mps"], m.circumference)
        p0, v0 = randomized_initial_state(base.s_star, sc["initial_velocity_mean_mps"],
                                          sc["initial_velocity_spread_mps"], rng)
    else:
        p0, v0 = equilibrium_initial_state(s_star, m.v_star)
    pert = None
    if sc.get("perturbation_vehicle") is not None:
        pert = Perturbation(sc["perturbation_vehicle"], sc["perturbation_start_s"],
                            sc["perturbation_decel_mps2"], sc["perturbation_duration_s"])
    return Scenario(laws=laws, circumference=m.circumference, p0=p0, v0=v0, controller=ctrl,
                    controller_on=sc["controller_on"] and ctrl is not None,
                    schedule=tuple(cfg.schedule()), duration=sc["duration_s"], dt=sc["dt_s"],
                    noise_std=sc["noise_std_mps2"], perturbation=pert, rng_seed=sc["seed"],
                    sample_every=max(1, int(round(sc["sample_interval_s"] / sc["dt_s"]))),
                    s_star=s_star, v_star=m.v_star)


def _export_run(cfg, out, label, trace, metrics):
    if cfg.get("output", "trace_csv"):
        trace.to_csv(os.path.join(out, f"{label}.csv"))
    doc = {"kind": "metrics", "label": label, **cfg.stamp(),
           **metrics.to_dict(include_profile=cfg.get("output", "include_profile")),
           "events": trace.events}
    _write_json(os.path.join(out, f"{label}.metrics.json"), doc)
    return doc


def cmd_simulate(cfg: ExperimentConfig, args) -> dict:
    sc = build_scenario(cfg, args)
    Q, R = build_performance(cfg.weights(), sc.n)
    trace, metrics = run(sc, Q, R)
    out = _out_dir(cfg, args)
    doc = _export_run(cfg, out, "simulation", trace, metrics)
    print(f"lq cost {metrics.lq_cost:.6g}; max CAV spacing {metrics.max_cav_spacing:.3f} m; "
          f"collision {trace.collision}")
    return {"kind": "simulation", **cfg.stamp(), "collision": trace.collision,
            "metrics": metrics.to_dict(include_profile=False)}


def _setup(cfg: ExperimentConfig) -> ex.Setup:
    sc = cfg["scenario"]
    return ex.Setup(fleet=cfg.fleet(), circumference=cfg.get("model", "circumference_m"),
                    v_star=cfg.get("target", "v_star_mps"), weights=cfg.weights(),
                    topology=cfg.topology(), dt=sc["dt_s"], s1_override=cfg.get("target", "s1_star_m"),
                    sample_every=max(1, int(round(sc["sample_interval_s"] / sc["dt_s"]))))


def cmd_experiment(cfg: ExperimentConfig, args) -> dict:
    _reach_guard(cfg, args.allow_unreachable)
    setup = _setup(cfg)
    sc = cfg["scenario"]
    out = _out_dir(cfg, args)
    which = args.which.upper()
    doc = {"kind": f"experiment-{which}", **cfg.stamp()}
    if which == "A":
        recs = ex.experiment_a(setup, seed=sc["seed"], duration=sc["duration_s"],
                               v_mean=sc["initial_velocity_mean_mps"],
                               spread=sc["initial_velocity_spread_mps"])
        doc["runs"] = [{**r.params, "label": r.label,
                        "final_velocity_mean": float(r.trace.velocities[-1].mean()),
                        "final_max_deviation": float(np.abs(r.trace.velocities[-1] - r.params["v_star"]).max()),
                        **r.metrics.to_dict(include_profile=False)} for r in recs]
    elif which == "B":
        noise = sc["noise_std_mps2"] or 0.2
        schedule = cfg.schedule() or ex.B_SCHEDULE
        duration = max(sc["duration_s"], 700.0) if not cfg.schedule() else sc["duration_s"]
        d = ex.design(setup)
        recs = [ex.experiment_b(setup, seed=sc["seed"] + k, schedule=schedule, duration=duration,
                                noise_std=noise, d=d) for k in range(sc["seeds"])]
        doc["runs"] = [{**r.params, "label": r.label, "collision": r.trace.collision,
                        **r.metrics.to_dict(include_profile=False)} for r in recs]
    elif which == "C":
        rows, recs = ex.experiment_c(setup, start=sc["perturbation_start_s"],
                                     deceleration=sc["perturbation_decel_mps2"],
                                     length=sc["perturbation_duration_s"], duration=sc["duration_s"],
                                     workers=sc["workers"])
        doc["table"] = rows
    else:
        raise ConfigError(f"unknown experiment {args.which!r}; choose A, B or C")
    for r in recs:
        _export_run(cfg, out, r.label, r.trace, r.metrics)
    print(f"experiment {which}: {len(recs)} runs written to {out}")
    return doc


COMMANDS = {"analyze": cmd_analyze, "reach": cmd_reach, "synthesize": cmd_synthesize,
            "simulate": cmd_simulate, "experiment": cmd_experiment}

OUTPUT_NAMES = {"analyze": "analysis.json", "reach": "reach.json", "synthesize": "gain.json",
                "simulate": "simulation.json", "experiment": "experiment-{which}.json"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixedtraffic", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", type=int, help="override model and scenario seeds")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [output] directory)")
    common.add_argument("--allow-unreachable", action="store_true",
                        help="skip the maximum-reachable-velocity check")
    common.add_argument("--dt", type=float, metavar="SECONDS", help="override the simulation step")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("analyze", "reach", "synthesize", "simulate"):
        sub.add_parser(name, parents=[common])
    e = sub.add_parser("experiment", parents=[common])
    e.add_argument("which", choices=["A", "B", "C", "a", "b", "c"])
    return p


def _apply_overrides(cfg: ExperimentConfig, args):
    if args.seed is not None:
        cfg.values["model"]["seed"] = args.seed
        cfg.values["scenario"]["seed"] = args.seed
    if args.dt is not None:
        if args.dt <= 0:
            raise ConfigError("--dt must be positive")
        cfg.values["scenario"]["dt_s"] = args.dt
        cfg.values["scenario"]["sample_interval_s"] = max(cfg.values["scenario"]["sample_interval_s"], args.dt)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        doc = COMMANDS[args.command](cfg, args)
        name = OUTPUT_NAMES[args.command].format(which=getattr(args, "which", "").upper())
        _write_json(os.path.join(_out_dir(cfg, args), name), doc)
        return EXIT_OK
    except (ConfigError, ParameterError, TopologyError, DomainError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleEquilibriumError, StructuredInfeasibleError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalFailureError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
