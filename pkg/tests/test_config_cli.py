import csv
import json
import math
import subprocess
import sys

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from photoiso import cli
from photoiso.config import ConfigError, RunConfig, SweepSpec, format_time, load_config, parse_time, save_config
from photoiso.runner import OutputConflict, run_single, run_sweep

BASE = {
    "schema_version": 1,
    "basis": {"n_rotor_max": 24, "n_ho": 8, "energy_cutoff": 3.0},
    "baths": [
        {"channel": "tuning_x", "eta": 0.1, "omega_c": 0.2},
        {"channel": "torsion_phi", "eta": 0.1, "omega_c": 0.2},
    ],
    "mode": "secular",
    "t_record": "1 ps",
}


def cfg(**over):
    d = json.loads(json.dumps(BASE))
    d.update(over)
    return RunConfig.from_dict(d)


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(BASE))
    return p


class TestTimes:
    @pytest.mark.parametrize("text,ps", [("10 ns", 1e4), ("500 fs", 0.5), ("2.5ps", 2.5), ("1e-3 ns", 1.0)])
    def test_parse(self, text, ps):
        assert parse_time(text) == pytest.approx(ps)

    @pytest.mark.parametrize("bad", ["10", 10.0, "10 s", "ps", "-1 ps", "1e999 ns"])
    def test_suffix_required(self, bad):
        with pytest.raises(ConfigError):
            parse_time(bad)

    @given(st.floats(1e-6, 1e7))
    def test_format_round_trip(self, t):
        assert parse_time(format_time(t)) == pytest.approx(t, rel=1e-12)


class TestConfig:
    def test_round_trip(self, tmp_path):
        c = cfg(sweep={"parameter": "E1", "values": [-0.05, 0.0, 0.05]})
        p = save_config(c, tmp_path / "c.yaml")
        back = load_config(p)
        assert back == c
        assert back.hash() == c.hash()

    def test_hash_ignores_outputs_only(self):
        a = cfg()
        assert a.hash() == cfg(outputs={"directory": "elsewhere"}).hash()
        assert a.hash() != cfg(rtol=1e-9).hash()

    @pytest.mark.parametrize("key", ["eta", "omega_c"])
    def test_bath_parameters_required(self, key):
        d = json.loads(json.dumps(BASE))
        del d["baths"][1][key]
        with pytest.raises(ConfigError) as exc:
            RunConfig.from_dict(d)
        assert exc.value.field == f"baths[1].{key}"
        assert "explicitly" in str(exc.value)

    @pytest.mark.parametrize(
        "change,field",
        [
            ({"mode": "fast"}, "mode"),
            ({"basis": {"n_rotr_max": 3}}, "basis.n_rotr_max"),
            ({"bogus": 1}, "bogus"),
            ({"schema_version": 2}, "schema_version"),
            ({"t_record": 100}, "t_record"),
            ({"baths": []}, "baths"),
            ({"sweep": {"parameter": "m_inv", "values": [1.0, 1.02, 1.01]}}, "sweep.values"),
            ({"sweep": {"parameter": "mass", "values": [1.0]}}, "sweep.parameter"),
        ],
    )
    def test_rejections_name_the_field(self, change, field):
        with pytest.raises(ConfigError) as exc:
            cfg(**change)
        assert exc.value.field == field

    def test_monotone_grids(self):
        assert SweepSpec("m_inv", (1.02, 1.0, 0.98)).values == (1.02, 1.0, 0.98)
        with pytest.raises(ConfigError):
            SweepSpec("m_inv", (1.0, 1.0))
        with pytest.raises(ConfigError):
            SweepSpec("m_inv", ())
        g = SweepSpec.linspace("omega", 0.9, 1.1, 5)
        assert g.values == (0.9, 0.95, 1.0, 1.05, 1.1)
        assert SweepSpec("E1", (0.1,)).identity.value == 0.0

    def test_invalid_yaml(self, tmp_path):
        p = tmp_path / "x.yaml"
        p.write_text("model: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_sector_parities(self):
        assert cfg().parities == (1,)
        assert cfg(sector="both").parities == (1, -1)


class TestRuns:
    def test_single_run_is_idempotent(self, tmp_path):
        c = cfg()
        first = run_single(c, tmp_path)
        files = {p.name: p.stat().st_mtime_ns for p in tmp_path.iterdir()}
        again = run_single(c, tmp_path)
        assert again.skipped and not first.skipped
        assert again.data["qy"] == first.data["qy"]
        assert {p.name: p.stat().st_mtime_ns for p in tmp_path.iterdir()} == files
        assert not any(p.name.startswith(".staging") for p in tmp_path.iterdir())

    def test_conflicting_config_refused(self, tmp_path):
        run_single(cfg(), tmp_path)
        other = cfg(rtol=1e-9)
        with pytest.raises(OutputConflict):
            run_single(other, tmp_path)
        res = run_single(other, tmp_path, force=True)
        assert not res.skipped

    def test_outputs(self, tmp_path):
        res = run_single(cfg(), tmp_path)
        h = res.manifest["config_hash"]
        with (tmp_path / "trajectory.csv").open() as fh:
            text = fh.read()
        assert h in text
        with (tmp_path / "rates.csv").open() as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        assert rows[0] == ["source", "target", "rate_ev"]
        assert all(float(r[2]) > 0 for r in rows[1:])
        qy = json.loads((tmp_path / "qy.json").read_text())
        assert 0 <= qy["qy"] <= 1
        assert sorted(res.manifest["outputs"]) == sorted(
            ["eigensystem.csv", "eigensystem.npz", "qy.json", "rates.csv", "trajectory.csv"]
        )


class TestSweep:
    def test_single_point_matches_single_run(self, tmp_path):
        c = cfg(sweep={"parameter": "m_inv", "values": [1.0]})
        sw = run_sweep(c, tmp_path / "sw")
        one = run_single(cfg(), tmp_path / "one")
        (row,) = sw.data["rows"]
        assert row["status"] == "ok"
        assert row["qy_secular"] == one.data["qy"]
        assert math.isnan(row["qy_nonsecular"])
        assert row["qy_transient_max_dev"] == 0.0

    def test_e1_sweep_keeps_crossing_energy(self, tmp_path):
        c = cfg(sweep={"parameter": "E1", "values": [-0.02, 0.02]})
        rows = run_sweep(c, tmp_path).data["rows"]
        assert [r["E1"] for r in rows] == pytest.approx([2.56, 2.60])
        for r in rows:
            assert r["E1_plus_V1"] == pytest.approx(2.58 + 1.19, abs=1e-12)
        text = (tmp_path / "sweep.csv").read_text().splitlines()
        assert text[0].startswith("# photoiso sweep")
        assert text[3].split(",")[0] == "value"

    def test_failed_point_is_isolated(self, tmp_path):
        # a large torsional barrier shift pushes the Franck-Condon state above the cutoff
        c = cfg(sweep={"parameter": "E1", "values": [0.0, 5.0]})
        res = run_sweep(c, tmp_path)
        rows = res.data["rows"]
        assert rows[0]["status"] == "ok"
        assert rows[1]["status"] == "failed" and rows[1]["error"]
        assert res.manifest["n_failed"] == 1

    def test_requires_sweep_block(self, tmp_path):
        with pytest.raises(ValueError):
            run_sweep(cfg(), tmp_path)


class TestCli:
    def test_eigen_does_not_load_propagation(self, config_file, tmp_path):
        code = (
            "import sys; from photoiso import cli; "
            f"rc = cli.main(['eigen', '--config', {str(config_file)!r}, '--out', {str(tmp_path / 'e')!r}]); "
            "assert rc == 0; assert 'photoiso.propagation' not in sys.modules, 'loaded'; print('ok')"
        )
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, timeout=300)
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip().endswith("ok")

    def test_propagate_and_rerun(self, config_file, tmp_path, capsys):
        args = ["propagate", "--config", str(config_file), "--out", str(tmp_path)]
        assert cli.main(args) == 0
        assert "done" in capsys.readouterr().out
        assert cli.main(args) == 0
        assert "up to date" in capsys.readouterr().out
        assert cli.main(args + ["--t-record", "2 ps"]) == 1
        assert "different config" in capsys.readouterr().err

    def test_nnsd_and_tree(self, config_file, tmp_path):
        assert cli.main(["nnsd", "--config", str(config_file), "--out", str(tmp_path / "n"),
                         "--band", "0:1.5", "--band", "1.5:3", "--k", "1"]) == 0
        doc = json.loads((tmp_path / "n" / "nnsd_report.json").read_text())
        assert [b["band"] for b in doc["bands"]] == [[0.0, 1.5], [1.5, 3.0]]
        assert cli.main(["tree", "--config", str(config_file), "--out", str(tmp_path / "t"),
                         "--compare", str(config_file)]) == 0
        assert (tmp_path / "t" / "overlay.dot").exists()
        assert json.loads((tmp_path / "t" / "tree.json").read_text())["schema"] == "photoiso.tree/1"

    def test_config_error_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        d = json.loads(json.dumps(BASE))
        del d["baths"][0]["eta"]
        p.write_text(yaml.safe_dump(d))
        assert cli.main(["eigen", "--config", str(p), "--out", str(tmp_path)]) == 2
        assert "baths[0].eta" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "argv",
        [
            ["eigen"],
            ["eigen", "--config", "x.yaml", "--bogus"],
            ["nnsd", "--config", "x.yaml", "--band", "3:1"],
            ["propagate", "--config", "x.yaml", "--t-record", "10"],
            ["teleport", "--config", "x.yaml"],
        ],
    )
    def test_bad_arguments(self, argv):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 2

    def test_console_script(self):
        out = subprocess.run(["photoiso", "--help"], capture_output=True, text=True, timeout=60)
        assert out.returncode == 0
        for sub in ("eigen", "propagate", "sweep", "nnsd", "tree"):
            assert sub in out.stdout


@pytest.mark.parametrize("name", ["default", "sweep_m_inv", "spectrum"])
def test_shipped_configs_load(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.yaml"
    c = load_config(path)
    assert c.baths and all(b.eta > 0 for b in c.baths)
