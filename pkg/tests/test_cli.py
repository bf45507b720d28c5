import json

import numpy as np
import pytest

from mixedtraffic.cli import main
from mixedtraffic.config import parse_config
from mixedtraffic.errors import ConfigError

RING = """
[model]
n = 20
circumference_m = 400

[target]
v_star_mps = 15
"""

SMALL = """
[model]
n = 6
circumference_m = 120

[target]
v_star_mps = 15

[controller]
ahead = 5
behind = 5

[scenario]
duration_s = 20
perturbation_start_s = 2
"""


def run_cli(tmp_path, text, *args, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    out = tmp_path / "out"
    code = main([args[0], "--config", str(path), "--out", str(out), *args[1:]])
    return code, out


def load(out, name):
    return json.loads((out / name).read_text())


class TestAnalyze:
    def test_homogeneous(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, RING, "analyze")
        assert code == 0
        assert capsys.readouterr().out.strip() == \
            "stabilizable: true; uncontrollable modes: 1 (λ=0, stable)"
        doc = load(out, "analysis.json")
        assert doc["report"]["is_stabilizable"] and doc["pairwise_condition"]
        assert len(doc["config_sha256"]) == 64

    def test_two_vehicles(self, tmp_path):
        code, out = run_cli(tmp_path, RING.replace("n = 20", "n = 2").replace("400", "40"), "analyze")
        assert code == 0
        assert len(load(out, "analysis.json")["report"]["eigenvalues"]) == 4

    def test_bad_linear_coefficients(self, tmp_path, capsys):
        text = """
[model]
n = 4
circumference_m = 100
law = linear
a1_per_s2 = 0.9
a2_per_s = 0.8
a3_per_s = 0.9
hdv_spacing_m = 20
"""
        code, _ = run_cli(tmp_path, text, "analyze")
        assert code == 2
        assert "a2 > a3" in capsys.readouterr().err

    def test_negative_sensitivity(self, tmp_path):
        code, _ = run_cli(tmp_path, RING.replace("n = 20", "n = 20\nalpha_per_s = -0.6"), "analyze")
        assert code == 2

    def test_unknown_key_reports_line(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, RING.replace("v_star_mps", "v_star_kmh"), "analyze")
        assert code == 2
        err = capsys.readouterr().err
        assert "cfg.ini:7" in err and "unknown key" in err


class TestReach:
    def test_values(self, tmp_path):
        code, out = run_cli(tmp_path, RING, "reach")
        doc = load(out, "reach.json")
        assert code == 0
        assert doc["s1_star_m"] == pytest.approx(20.0)
        assert doc["v_star_max_mps"] == pytest.approx(16.65, abs=5e-3)
        assert abs(doc["v_star_max_mps"] - doc["v_star_max_closed_form_mps"]) <= 1e-6

    def test_standstill(self, tmp_path):
        code, out = run_cli(tmp_path, RING.replace("v_star_mps = 15", "v_star_mps = 0"), "reach")
        assert code == 0 and load(out, "reach.json")["s1_star_m"] == pytest.approx(305.0)

    def test_unreachable(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, RING.replace("v_star_mps = 15", "v_star_mps = 16.8"), "reach")
        assert code == 3
        assert "16.65" in capsys.readouterr().err

    def test_allow_unreachable(self, tmp_path):
        text = RING.replace("v_star_mps = 15", "v_star_mps = 16.7")
        code, _ = run_cli(tmp_path, text, "reach", "--allow-unreachable")
        assert code == 3  # CAV spacing would be negative


class TestSynthesizeAndSimulate:
    def test_pipeline(self, tmp_path):
        code, out = run_cli(tmp_path, SMALL, "analyze")
        a = load(out, "analysis.json")
        code, out = run_cli(tmp_path, SMALL, "synthesize")
        assert code == 0
        g = load(out, "gain.json")
        assert g["config_sha256"] == a["config_sha256"]
        K = np.array(g["K"]).reshape(-1, 2)
        assert np.count_nonzero(np.any(K != 0, axis=1)) == 6
        assert g["h2_norm_squared"] <= g["certified_cost"] * (1 + 1e-4)

        text = SMALL + f"\n[output]\ndirectory = {out}\n"
        text = text.replace("[controller]", f"[controller]\ngain_file = {out / 'gain.json'}")
        text = text.replace("perturbation_start_s = 2", "perturbation_start_s = 2\nperturbation_vehicle = 3")
        code, out2 = run_cli(tmp_path, text, "simulate", name="sim.ini")
        assert code == 0
        m = load(out2, "simulation.metrics.json")
        assert m["lq_cost"] > 0 and not m["collision"]
        assert (out2 / "simulation.csv").exists()

    def test_full_topology_not_worse(self, tmp_path):
        _, out = run_cli(tmp_path, SMALL.replace("ahead = 5", "ahead = 1").replace("behind = 5", "behind = 1"),
                         "synthesize", name="r.ini")
        restricted = load(out, "gain.json")["certified_cost"]
        _, out = run_cli(tmp_path, SMALL, "synthesize", name="f.ini")
        assert load(out, "gain.json")["certified_cost"] <= restricted * (1 + 1e-8)

    def test_infeasible_topology(self, tmp_path, capsys):
        text = """
[model]
n = 5
circumference_m = 100
law = linear
a1_per_s2 = 2.0
a2_per_s = 0.3
a3_per_s = 0.2
hdv_spacing_m = 20

[target]
v_star_mps = 10

[controller]
vehicles = 1
"""
        code, _ = run_cli(tmp_path, text, "synthesize")
        assert code == 3
        assert "structured relaxation has no solution" in capsys.readouterr().err

    def test_round_trip_reproduces_trace(self, tmp_path):
        text = SMALL.replace("duration_s = 20", "duration_s = 20\nnoise_std_mps2 = 0.2")
        code, out = run_cli(tmp_path, text, "simulate", "--seed", "7", name="a.ini")
        assert code == 0
        first = (out / "simulation.csv").read_bytes()
        cfg = parse_config(text)
        cfg.values["model"]["seed"] = cfg.values["scenario"]["seed"] = 7
        (tmp_path / "b.ini").write_text(cfg.to_ini())
        code = main(["simulate", "--config", str(tmp_path / "b.ini"), "--out", str(tmp_path / "o2")])
        assert code == 0
        assert (tmp_path / "o2" / "simulation.csv").read_bytes() == first


class TestExperiments:
    def test_experiment_c_table(self, tmp_path):
        text = SMALL.replace("duration_s = 20", "duration_s = 40")
        code, out = run_cli(tmp_path, text, "experiment", "C")
        assert code == 0
        doc = load(out, "experiment-C.json")
        assert sorted({r["vehicle"] for r in doc["table"]}) == [2, 3, 4, 5, 6]
        assert {"max_cav_spacing", "lq_cost"} <= set(doc["table"][0])

    def test_experiment_b_small(self, tmp_path):
        text = SMALL.replace("duration_s = 20", "duration_s = 30\nseeds = 2\nschedule = 0:off, 10:on, 20:off\n"
                                                "noise_std_mps2 = 0.2")
        code, out = run_cli(tmp_path, text, "experiment", "B")
        assert code == 0
        assert len(load(out, "experiment-B.json")["runs"]) == 2


class TestConfig:
    def test_defaults_and_digest(self):
        a, b = parse_config(RING), parse_config(RING + "\n[output]\ninclude_profile = true\n")
        assert a.digest() == b.digest()
        assert a.digest() != parse_config(RING.replace("15", "14")).digest()

    def test_ini_round_trip(self):
        cfg = parse_config(SMALL)
        assert parse_config(cfg.to_ini()).canonical() == cfg.canonical()

    @pytest.mark.parametrize("text", [
        "[nonsense]\nx = 1\n",
        "[model]\nn = 1\n",
        "[scenario]\ndt_s = -1\n",
        "[scenario]\nschedule = 10:maybe\n",
        "[model]\nn = twenty\n",
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)
