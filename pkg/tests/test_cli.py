import json

import pytest

from kflip.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, resolve, run_command

BASE = ["--n", "40", "--beta", "1.9", "--gamma", "0.8"]


def run(argv, capsys):
    code = run_command(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_potential_csv(tmp_path, capsys):
    out = tmp_path / "v.csv"
    code, stdout, _ = run(["potential", *BASE, "--k", "1,10,40", "--out", str(out)], capsys)
    assert code == EXIT_OK
    assert stdout.startswith("potential:") and stdout.count("\n") == 1
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "k,i,phi,V"
    assert len(lines) == 1 + 3 * 41
    assert {line.split(",")[0] for line in lines[1:]} == {"1", "10", "40"}


def test_hitting_csv_to_stdout(capsys):
    code, out, err = run(["hitting", *BASE, "--trajectory", "meta", "--k", "1,2,20,40"], capsys)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "k,rho,T_mean,T_var,r_tau,r_sigma"
    assert lines[1].split(",")[4] == "1"
    assert err.startswith("hitting:")


def test_hitting_default_covers_all_k(tmp_path, capsys):
    out = tmp_path / "h.csv"
    assert run(["hitting", "--n", "12", "--beta", "1.9", "--gamma", "0.8", "--trajectory", "unstable", "--out", str(out)], capsys)[0] == 0
    assert len(out.read_text().splitlines()) == 13


def test_simulate_byte_identical(tmp_path, capsys):
    argv = ["simulate", "--n", "60", "--beta", "1.9", "--gamma", "0.8", "--k", "5", "--samples", "200", "--seed", "42"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run([*argv, "--out", str(a)], capsys)[0] == EXIT_OK
    assert run([*argv, "--out", str(b), "--threads", "3"], capsys)[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    assert data["n"] + data["n_censored"] == 200 and data["seed"] == 42


def test_simulate_samples_dump(tmp_path, capsys):
    raw = tmp_path / "raw.txt"
    argv = ["simulate", "--n", "30", "--beta", "1.9", "--gamma", "0.8", "--k", "3", "--samples", "20", "--samples-out", str(raw)]
    code, out, _ = run(argv, capsys)
    assert code == EXIT_OK
    values = [int(x) for x in raw.read_text().split()]
    assert len(values) == 20 and all(v >= 1 for v in values)
    assert json.loads(out)["n"] == 20


def test_phase_grid(tmp_path, capsys):
    out = tmp_path / "p.csv"
    argv = ["phase", "--plane", "beta-gamma", "--n", "20", "--beta-range", "1.5:3:3", "--gamma-range", "0.7:0.95:2", "--out", str(out)]
    code, stdout, _ = run(argv, capsys)
    assert code == EXIT_OK and stdout.startswith("phase: 6 cells")
    lines = out.read_text().splitlines()
    assert lines[0] == "beta,gamma,log_ratio" and len(lines) == 7


def test_phase_over_n(capsys):
    code, out, _ = run(["phase", "--plane", "beta-n", "--n-range", "10:20:2", "--beta-range", "1.8:2:2"], capsys)
    assert code == EXIT_OK
    assert out.splitlines()[0] == "beta,N,log_ratio"


def test_rhomin_and_equilibria(capsys):
    code, out, _ = run(["rhomin", "--n", "30", "--gamma", "0.8", "--beta", "2,2.5"], capsys)
    assert code == EXIT_OK
    assert out.splitlines()[0] == "beta,phi_mid,k_min_estimated,rho_min_estimated,k_min_exact,rho_min_exact"
    assert len(out.splitlines()) == 3
    code, out, _ = run(["equilibria", *BASE], capsys)
    data = json.loads(out)
    assert code == EXIT_OK and data["regime"] == "low_temperature_hysteresis"
    assert data["endpoints"]["unstable"] == 20


def test_matrix_dump(capsys):
    code, out, _ = run(["matrix-dump", "--n", "4", "--k", "2", "--beta", "1.0", "--h", "0.1"], capsys)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "i,j,prob"
    assert abs(sum(float(l.split(",")[2]) for l in lines[1:] if l.startswith("0,")) - 1) < 1e-12


def test_config_file_equals_flags(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 40, "beta": 1.9, "gamma": 0.8, "k": [1, 10, 40], "trajectory": "meta"}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["hitting", "--config", str(cfg), "--out", str(a)], capsys)[0] == EXIT_OK
    assert run(["hitting", *BASE, "--k", "1,10,40", "--out", str(b)], capsys)[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 40, "beta": 1.9, "h": 0.1, "max-steps": 77}))
    spec = resolve(["simulate", "--config", str(cfg), "--gamma", "0.5", "--k", "2", "--n", "50"])
    assert spec.base["n"] == 50
    assert spec.base["gamma"] == 0.5 and spec.base["h"] is None
    assert spec.extra["max_steps"] == 77


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("KFLIP_THREADS", "3")
    assert resolve(["equilibria", *BASE]).threads == 3
    assert resolve(["equilibria", *BASE, "--threads", "2"]).threads == 2


@pytest.mark.parametrize(
    "argv,flag",
    [
        (["hitting", *BASE, "--h", "0.1"], "--gamma"),
        (["hitting", "--n", "40", "--beta", "1.9"], "--gamma"),
        (["hitting", "--beta", "1.9", "--gamma", "0.8"], "--n"),
        (["hitting", *BASE, "--k", "0,3"], "--k"),
        (["simulate", *BASE, "--k", "1,2"], "--k"),
        (["simulate", *BASE, "--k", "2", "--seed", "-1"], "--seed"),
        (["simulate", *BASE, "--k", "2", "--samples", "0"], "--samples"),
        (["phase", "--beta-range", "1:2:1"], "--beta-range"),
        (["phase", "--gamma-range", "0.5:1.2:4"], "--gamma-range"),
        (["phase", "--plane", "beta-n"], "--n-range"),
        (["rhomin", "--n", "30", "--gamma", "0.8"], "--beta"),
        (["hitting", *BASE, "--threads", "0"], "--threads"),
        (["hitting", *BASE, "--noise", "cauchy"], "--noise"),
        (["hitting", *BASE, "--bogus"], "--bogus"),
        (["nothing"], "nothing"),
    ],
)
def test_usage_errors(argv, flag, capsys):
    code, _, err = run(argv, capsys)
    assert code == EXIT_USAGE
    assert flag in err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 40, "temperature": 3}))
    code, _, err = run(["equilibria", "--config", str(cfg)], capsys)
    assert code == EXIT_USAGE and "temperature" in err


def test_numerical_error_exit(capsys):
    code, _, err = run(["hitting", "--n", "40", "--beta", "0.5", "--gamma", "0.8"], capsys)
    assert code == EXIT_NUMERIC
    assert "SubcriticalTemperature" in err
    code, _, err = run(["hitting", "--n", "40", "--beta", "1.9", "--gamma", "1.5"], capsys)
    assert code == EXIT_NUMERIC and "NoMetastableState" in err


def test_console_entry_point(tmp_path):
    import subprocess

    res = subprocess.run(["kflip", "equilibria", *BASE], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["beta"] == 1.9
    res = subprocess.run(["kflip", "equilibria"], capture_output=True, text=True)
    assert res.returncode == 1


def test_documented_examples(tmp_path, capsys):
    v = tmp_path / "v.csv"
    argv = ["potential", "--n", "150", "--beta", "1.9", "--gamma", "0.8", "--k", "1,10,50,100,150", "--out", str(v)]
    assert run(argv, capsys)[0] == EXIT_OK
    assert len(v.read_text().splitlines()) == 1 + 5 * 151
    h = tmp_path / "h.csv"
    argv = ["hitting", "--n", "150", "--beta", "1.9", "--gamma", "0.8", "--trajectory", "meta", "--out", str(h)]
    code, out, _ = run(argv, capsys)
    assert code == EXIT_OK and "at k=57" in out
    assert len(h.read_text().splitlines()) == 151


@pytest.mark.slow
def test_default_phase_grid(tmp_path, capsys):
    out = tmp_path / "p.csv"
    code, stdout, _ = run(["phase", "--plane", "beta-gamma", "--n", "80", "--out", str(out)], capsys)
    assert code == EXIT_OK
    assert stdout.startswith("phase: 1600 cells")
    assert "0 missing" in stdout
