import json
import subprocess
import sys

import yaml

from cfvbjed import cli


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "cfvbjed.cli", *args],
                          capture_output=True, text=True, timeout=600)


TINY = {
    "num_aps": 2, "antennas_per_ap": 2, "num_users": 2,
    "pilot_len": 4, "data_len": 8, "snr_db": 12.0, "cavi_iters": 5,
    "sweep_var": "snr_db", "grid": [8.0, 12.0],
    "methods": ["lmmse_pfl", "vb_qe:2"], "trials": 2,
}


class TestRun:
    def test_yaml_config(self, tmp_path):
        cfgfile = tmp_path / "exp.yaml"
        cfgfile.write_text(yaml.safe_dump(TINY))
        out = tmp_path / "res.csv"
        proc = run_cli("run", "--config", str(cfgfile), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        lines = out.read_text().splitlines()
        assert lines[0].startswith("sweep_var,")
        assert len(lines) == 1 + 2 * 2   # header + points x methods

    def test_json_config(self, tmp_path):
        cfgfile = tmp_path / "exp.json"
        cfgfile.write_text(json.dumps(TINY))
        proc = run_cli("run", "--config", str(cfgfile))
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.startswith("sweep_var,")

    def test_missing_config_file(self):
        assert run_cli("run", "--config", "/nonexistent.yaml").returncode == 2

    def test_invalid_config_values(self, tmp_path):
        bad = dict(TINY, num_users=100)   # K > M*L
        cfgfile = tmp_path / "bad.yaml"
        cfgfile.write_text(yaml.safe_dump(bad))
        proc = run_cli("run", "--config", str(cfgfile))
        assert proc.returncode == 2
        assert "error" in proc.stderr

    def test_unknown_keys_rejected(self, tmp_path):
        cfgfile = tmp_path / "bad.yaml"
        cfgfile.write_text(yaml.safe_dump(dict(TINY, warp_factor=9)))
        assert run_cli("run", "--config", str(cfgfile)).returncode == 2

    def test_unknown_method_rejected(self, tmp_path):
        cfgfile = tmp_path / "bad.yaml"
        cfgfile.write_text(yaml.safe_dump(dict(TINY, methods=["gamp_pfl"])))
        assert run_cli("run", "--config", str(cfgfile)).returncode == 2


class TestFigure:
    def test_overhead(self):
        proc = run_cli("figure", "--name", "overhead")
        assert proc.returncode == 0
        assert "pfl,10,51200" in proc.stdout
        assert "qe,3,15360" in proc.stdout
        assert "eq,3,13824" in proc.stdout

    def test_unknown_figure(self):
        assert run_cli("figure", "--name", "ser-vs-moon").returncode == 2

    def test_seed_changes_output(self, tmp_path):
        outs = []
        for seed in ("1", "2"):
            out = tmp_path / f"s{seed}.csv"
            proc = run_cli("figure", "--name", "ser-vs-l", "--seed", seed,
                           "--trials", "1", "--iters", "3", "--out", str(out))
            assert proc.returncode == 0, proc.stderr
            outs.append(out.read_text())
        assert outs[0] != outs[1]

    def test_repeat_run_byte_identical(self, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            proc = run_cli("figure", "--name", "nmse-vs-tp", "--seed", "5",
                           "--trials", "1", "--iters", "3", "--out", str(out))
            assert proc.returncode == 0, proc.stderr
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def test_exit_code_on_widespread_numeric_failure(tmp_path, monkeypatch):
    # force every trial to fail and check the dedicated exit code
    import cfvbjed.experiments as ex

    def boom(cfg, method, trial_index):
        return ex.TrialResult(method, trial_index, 0, 1, float("nan"), 0.0,
                              failed=True, error="NumericsError: forced")

    monkeypatch.setattr(ex, "run_trial", boom)
    monkeypatch.setattr(ex, "_run_task",
                        lambda t: boom(t[4], t[3], t[5]))
    rc = cli.main(["figure", "--name", "ser-vs-l", "--trials", "1",
                   "--out", str(tmp_path / "x.csv")])
    assert rc == 3
