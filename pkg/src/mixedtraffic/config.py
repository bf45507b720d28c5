"""INI experiment configuration: parsing, validation and model construction.

Sections mirror the design pipeline: ``[model]``, ``[target]``,
``[controller]``, ``[scenario]`` and ``[output]``.  Keys carry their units
(``_m``, ``_mps``, ``_s``, ...) and unknown keys are rejected.  Per-vehicle
values are comma-separated lists with one entry per vehicle (vehicle 1
first); a single value applies to every vehicle.

Example::

    [model]
    n = 20
    circumference_m = 400
    heterogeneous = true
    seed = 0

    [target]
    v_star_mps = 15

    [controller]
    ahead = 5
    behind = 5
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError
from .synthesis import PerformanceWeights, full_topology, ring_topology
from .traffic import (HETEROGENEITY_DEFAULTS, LinearHdvCoeffs, OvmParams, assemble_ring_model,
                      linearize_hdv, sample_ovm_fleet)

SCHEMA = {
    "model": {
        "n": "int", "circumference_m": "float", "law": "str", "heterogeneous": "bool",
        "seed": "int", "alpha_per_s": "floats", "beta_per_s": "floats", "v_max_mps": "floats",
        "s_st_m": "floats", "s_go_m": "floats", "alpha_spread_per_s": "float",
        "beta_spread_per_s": "float", "s_go_spread_m": "float",
        "a1_per_s2": "floats", "a2_per_s": "floats", "a3_per_s": "floats",
        "hdv_spacing_m": "floats",
    },
    "target": {"v_star_mps": "float", "s1_star_m": "float"},
    "controller": {
        "type": "str", "gamma_s": "float", "gamma_v": "float", "gamma_u": "float",
        "ahead": "int", "behind": "int", "vehicles": "str", "gain_file": "str",
        "gap_tol": "float", "feas_tol": "float", "max_iters": "int",
    },
    "scenario": {
        "duration_s": "float", "dt_s": "float", "noise_std_mps2": "float",
        "perturbation_vehicle": "int", "perturbation_start_s": "float",
        "perturbation_decel_mps2": "float", "perturbation_duration_s": "float",
        "initial_state": "str", "initial_velocity_mean_mps": "float",
        "initial_velocity_spread_mps": "float", "controller_on": "bool", "schedule": "str",
        "seed": "int", "sample_interval_s": "float", "seeds": "int", "workers": "int",
    },
    "output": {"directory": "str", "trace_csv": "bool", "include_profile": "bool"},
}

DEFAULTS = {
    "model": {"n": 20, "circumference_m": 400.0, "law": "ovm", "heterogeneous": False, "seed": 0,
              "alpha_per_s": [0.6], "beta_per_s": [0.9], "v_max_mps": [30.0], "s_st_m": [5.0],
              "s_go_m": [35.0], "alpha_spread_per_s": HETEROGENEITY_DEFAULTS["alpha"][1],
              "beta_spread_per_s": HETEROGENEITY_DEFAULTS["beta"][1],
              "s_go_spread_m": HETEROGENEITY_DEFAULTS["s_go"][1]},
    "target": {"v_star_mps": 15.0},
    "controller": {"type": "structured", "gamma_s": 0.03, "gamma_v": 0.15, "gamma_u": 1.0,
                   "ahead": 5, "behind": 5, "gap_tol": 1e-8, "feas_tol": 1e-8, "max_iters": 100},
    "scenario": {"duration_s": 100.0, "dt_s": 0.01, "noise_std_mps2": 0.0,
                 "perturbation_start_s": 20.0, "perturbation_decel_mps2": -3.0,
                 "perturbation_duration_s": 3.0, "initial_state": "equilibrium",
                 "initial_velocity_mean_mps": 15.0, "initial_velocity_spread_mps": 4.0,
                 "controller_on": True, "schedule": "", "seed": 0, "sample_interval_s": 0.1,
                 "seeds": 10, "workers": 1},
    "output": {"directory": "out", "trace_csv": True, "include_profile": True},
}


def _convert(kind, raw, where):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return [float(x) for x in raw.split(",") if x.strip()]
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None


@dataclass
class ExperimentConfig:
    values: dict
    source: str = "<memory>"
    lines: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)

    def canonical(self) -> dict:
        return {s: {k: self.values[s][k] for k in sorted(self.values[s])} for s in sorted(self.values)}

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()

    def stamp(self) -> dict:
        return {"config_sha256": self.digest(), "config": self.canonical()}

    def to_ini(self) -> str:
        out = []
        for s in sorted(self.values):
            out.append(f"[{s}]")
            for k in sorted(self.values[s]):
                v = self.values[s][k]
                if isinstance(v, list):
                    v = ", ".join(repr(float(x)) for x in v)
                elif isinstance(v, bool):
                    v = str(v).lower()
                elif isinstance(v, float):
                    v = repr(v)
                out.append(f"{k} = {v}")
            out.append("")
        return "\n".join(out)

    # ----- derived objects -----------------------------------------------

    def fleet(self) -> list[OvmParams]:
        m = self.values["model"]
        n = m["n"]
        if m["law"] != "ovm":
            raise ConfigError("model.law = linear has no nonlinear fleet; simulation needs law = ovm")
        if m["heterogeneous"]:
            return sample_ovm_fleet(
                n, m["seed"],
                alpha=(self._scalar("alpha_per_s"), m["alpha_spread_per_s"]),
                beta=(self._scalar("beta_per_s"), m["beta_spread_per_s"]),
                s_go=(self._scalar("s_go_m"), m["s_go_spread_m"]),
                v_max=self._scalar("v_max_mps"), s_st=self._scalar("s_st_m"))
        cols = {k: self._per_vehicle(k) for k in
                ("alpha_per_s", "beta_per_s", "v_max_mps", "s_st_m", "s_go_m")}
        return [OvmParams(alpha=cols["alpha_per_s"][i], beta=cols["beta_per_s"][i],
                          v_max=cols["v_max_mps"][i], s_st=cols["s_st_m"][i],
                          s_go=cols["s_go_m"][i]) for i in range(n)]

    def _scalar(self, key):
        vals = self.values["model"][key]
        if len(vals) != 1:
            raise ConfigError(f"model.{key}: heterogeneous sampling takes a single center value")
        return vals[0]

    def _per_vehicle(self, key, count=None):
        n = count or self.values["model"]["n"]
        vals = self.values["model"][key]
        if len(vals) == 1:
            return vals * n
        if len(vals) != n:
            raise ConfigError(f"model.{key}: expected 1 or {n} values, got {len(vals)}")
        return vals

    def linear_coeffs(self, v_star: float):
        """Linearized HDV coefficients (vehicles 2..n) and their equilibrium spacings."""
        m = self.values["model"]
        if m["law"] == "linear":
            n = m["n"]
            try:
                cols = [self._per_vehicle(k, n - 1) for k in ("a1_per_s2", "a2_per_s", "a3_per_s")]
                spacing = self._per_vehicle("hdv_spacing_m", n - 1)
            except KeyError as e:
                raise ConfigError(f"model.law = linear requires {e.args[0]}") from None
            coeffs = [LinearHdvCoeffs(a, b, c) for a, b, c in zip(*cols)]
            return coeffs, spacing, None
        laws = self.fleet()[1:]
        return [linearize_hdv(l, v_star) for l in laws], [l.equilibrium_spacing(v_star) for l in laws], laws

    def ring_model(self, v_star: float | None = None):
        v = self.values["target"]["v_star_mps"] if v_star is None else v_star
        coeffs, spacing, laws = self.linear_coeffs(v)
        return assemble_ring_model(coeffs, v, self.values["model"]["circumference_m"],
                                   hdv_laws=laws, hdv_spacings=spacing)

    def weights(self) -> PerformanceWeights:
        c = self.values["controller"]
        return PerformanceWeights(c["gamma_s"], c["gamma_v"], c["gamma_u"])

    def topology(self) -> set[int]:
        c = self.values["controller"]
        n = self.values["model"]["n"]
        spec = c.get("vehicles")
        if spec:
            if spec.strip().lower() == "all":
                return full_topology(n)
            try:
                return {int(x) for x in spec.split(",") if x.strip()}
            except ValueError:
                raise ConfigError(f"controller.vehicles: bad index list {spec!r}") from None
        return ring_topology(n, c["ahead"], c["behind"])

    def schedule(self):
        raw = self.values["scenario"]["schedule"]
        out = []
        for item in filter(None, (x.strip() for x in raw.split(","))):
            try:
                t, state = item.split(":")
                out.append((float(t), {"on": True, "off": False}[state.strip().lower()]))
            except (ValueError, KeyError):
                raise ConfigError(f"scenario.schedule: bad entry {item!r}, expected TIME:on|off") from None
        return out


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    line_of = _line_index(text)
    values = {s: dict(d) for s, d in DEFAULTS.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{line_of.get((section, None), '?')}: unknown section [{section}]")
        for key, raw in cp.items(section):
            where = f"{source}:{line_of.get((section, key), '?')}: {section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key")
            values[section][key] = _convert(SCHEMA[section][key], raw, where)
    cfg = ExperimentConfig(values, source, line_of)
    validate(cfg)
    return cfg


def _line_index(text):
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out[(section, None)] = no
        elif "=" in s and section and not s.startswith(("#", ";")):
            out[(section, s.split("=", 1)[0].strip())] = no
    return out


def validate(cfg: ExperimentConfig):
    m, t, c, s = cfg["model"], cfg["target"], cfg["controller"], cfg["scenario"]

    def fail(section, key, msg):
        raise ConfigError(f"{cfg.source}:{cfg.lines.get((section, key), '?')}: {section}.{key}: {msg}")

    if m["n"] < 2:
        fail("model", "n", "need at least 2 vehicles")
    if m["circumference_m"] <= 0:
        fail("model", "circumference_m", "must be positive")
    if m["law"] not in ("ovm", "linear"):
        fail("model", "law", "must be 'ovm' or 'linear'")
    if c["type"] not in ("structured", "none"):
        fail("controller", "type", "must be 'structured' or 'none'")
    if s["dt_s"] <= 0:
        fail("scenario", "dt_s", "must be positive")
    if s["duration_s"] < s["dt_s"]:
        fail("scenario", "duration_s", "must be at least one step")
    if s["noise_std_mps2"] < 0:
        fail("scenario", "noise_std_mps2", "must be nonnegative")
    if s["initial_state"] not in ("equilibrium", "randomized"):
        fail("scenario", "initial_state", "must be 'equilibrium' or 'randomized'")
    if s["sample_interval_s"] < s["dt_s"]:
        fail("scenario", "sample_interval_s", "must be at least dt_s")
    pv = s.get("perturbation_vehicle")
    if pv is not None and not 1 <= pv <= m["n"]:
        fail("scenario", "perturbation_vehicle", f"must be in 1..{m['n']}")
    if t["v_star_mps"] < 0:
        fail("target", "v_star_mps", "must be nonnegative")
    cfg.schedule()
