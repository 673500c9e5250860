import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from orisvlc.cli import build_parser, main
from orisvlc.config import ConfigError, load_config, parse_config

FIXTURES = Path(__file__).parent / "fixtures"
TINY = FIXTURES / "tiny_scene.json"
SMALL = {"oris_cols": 3, "oris_rows": 1, "wall_cell_size": 1.0, "jobs": 1}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


class TestParseConfig:
    def test_empty_document_defaults(self):
        cfg = parse_config({}).experiment
        scene, rx, b = cfg.scene, cfg.scene.receiver, cfg.budget
        assert (scene.room.width, scene.room.depth, scene.room.height) == (4.0, 4.0, 3.0)
        assert scene.room.ap_positions == ((1, 1, 3), (1, 3, 3), (3, 1, 3), (3, 3, 3))
        assert math.degrees(scene.room.half_power_angle) == pytest.approx(80.0)
        assert scene.wall_reflectivity == 0.4 and scene.oris_reflectivity == 0.95
        assert rx.responsivity == 0.4 and b.responsivity == 0.4 and rx.pd_area == 1e-4
        assert b.bandwidth == 20e6 and b.noise_psd == 2.5e-20
        assert scene.oris_cols * scene.oris_rows == 150
        assert parse_config("").experiment == cfg

    def test_negative_fov(self):
        with pytest.raises(ConfigError) as exc:
            parse_config({"fov_deg": -5})
        assert exc.value.key == "fov_deg"

    def test_subcarrier_override(self):
        b = parse_config({"n_subcarriers": 256}).experiment.budget
        assert b.subcarrier_power == pytest.approx(1.0 / math.sqrt(254), rel=1e-15)

    @pytest.mark.parametrize("doc, key", [
        ({"room_widht": 4}, "room_widht"),
        ({"room_width": -1}, "room_width"),
        ({"noise_psd": 0}, "noise_psd"),
        ({"tiers": [5]}, "tiers"),
        ({"oris": "yes"}, "oris"),
        ({"solver": "cplex"}, "solver"),
        ({"n_subcarriers": 63}, "n_subcarriers"),
        ({"ap_positions": [[1, 1, 3, 4]]}, "ap_positions"),
        ({"ap_positions": [[9, 1]]}, "ap_positions"),
        ({"trials": 0}, "trials"),
        ({"device_height": 3.5}, "device_height"),
    ])
    def test_errors_name_key(self, doc, key):
        with pytest.raises(ConfigError) as exc:
            parse_config(doc)
        assert exc.value.key == key

    def test_two_dimensional_aps_sit_on_ceiling(self):
        cfg = parse_config({"room_height": 2.5, "ap_positions": [[2, 2]]}).experiment
        assert cfg.scene.room.ap_positions == ((2.0, 2.0, 2.5),)

    def test_resolved_round_trip(self):
        run = parse_config({"fov_deg": [15, 75], "seed": 9, "oris_cols": 2})
        again = parse_config({k: v for k, v in run.resolved.items()})
        assert again.experiment == run.experiment

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError):
            load_config(bad)


class TestMain:
    def test_help_lists_everything(self, capsys):
        assert main(["--help"]) == 0
        text = capsys.readouterr().out
        for cmd in ("cdf", "heatmap", "usage", "sum-rate", "solve"):
            assert cmd in text
        assert main(["cdf", "--help"]) == 0
        text = capsys.readouterr().out
        for flag in ("--config", "--seed", "--trials", "--fov", "--tiers", "--no-oris",
                     "--no-blockage", "--solver", "--jobs", "--out"):
            assert flag in text

    def test_every_flag_has_config_key(self):
        from orisvlc.config import KEYS
        mapping = {"seed": "seed", "trials": "trials", "fov": "fov_deg", "tiers": "tiers",
                   "no_oris": "oris", "no_blockage": "blockage", "solver": "solver",
                   "jobs": "jobs"}
        sub = build_parser()._subparsers._group_actions[0].choices["cdf"]
        dests = {a.dest for a in sub._actions} - {"help", "config", "out"}
        assert dests == set(mapping) and set(mapping.values()) <= KEYS

    def test_usage_errors_exit_2(self, capsys):
        assert main(["cdf", "--bogus"]) == 2
        assert main(["fly"]) == 2
        assert main([]) == 2

    def test_runtime_error_exit_1(self, tmp_path, capsys):
        assert main(["cdf", "--config", str(tmp_path / "nope.json")]) == 1
        assert main(["cdf", "--fov", "-5", "--out", str(tmp_path / "x.csv")]) == 1
        assert "fov_deg" in capsys.readouterr().err

    def test_cdf_deterministic(self, tmp_path, small_config, capsys):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["cdf", "--config", str(small_config), "--trials", "10", "--seed", "7",
                         "--tiers", "1", "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        lines = capsys.readouterr().out.splitlines()
        assert any(line.startswith("fov=45deg tier=1 oris=True") for line in lines)

    def test_flags_override_file_and_sidecar_echo(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({**SMALL, "seed": 1, "trials": 50, "fov_deg": [15]}))
        out = tmp_path / "u.csv"
        assert main(["usage", "--config", str(path), "--trials", "2", "--tiers", "0",
                     "--out", str(out)]) == 0
        config = json.loads((tmp_path / "u.csv.json").read_text())["config"]
        assert config["trials"] == 2 and config["seed"] == 1 and config["fov_deg"] == [15.0]

    def test_seed_env_fallback(self, tmp_path, small_config, monkeypatch):
        monkeypatch.setenv("ORISVLC_SEED", "123")
        out = tmp_path / "s.csv"
        assert main(["usage", "--config", str(small_config), "--trials", "1", "--tiers", "0",
                     "--out", str(out)]) == 0
        assert json.loads((tmp_path / "s.csv.json").read_text())["seed"] == 123

    def test_sum_rate_no_oris(self, tmp_path, small_config):
        out = tmp_path / "r.csv"
        assert main(["sum-rate", "--config", str(small_config), "--trials", "2", "--no-oris",
                     "--out", str(out)]) == 0
        rows = out.read_text().splitlines()[1:]
        assert rows and all(r.split(",")[2] == "false" for r in rows)

    def test_solve_matches_bundled_oracle(self, tmp_path):
        expected = json.loads((FIXTURES / "tiny_scene_expected.json").read_text())
        out = tmp_path / "solve.json"
        assert main(["solve", "--config", str(TINY), "--solver", "exact", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["result"]["objective"] == expected["objective"]
        assert doc["result"]["selected_photodiode"] == expected["selected_photodiode"]
        assert doc["verified"] and doc["violations"] == []

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "orisvlc", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "sum-rate" in proc.stdout
