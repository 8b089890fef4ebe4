import json

import pytest

from cylex import __version__
from cylex.cli import ExperimentConfig, load_config, main
from cylex.cylinder import CylinderConfig
from cylex.errors import ConfigError

SMALL_RUN = """
[run]
lambdas = [1.0]
n_min = 1
n_max = 3
replicas = 64
N = 12
particles = 40
burn_in = 4
depth = 6
memory = [1, 2]
T_max = 8
traces = 12
steps = 6
h_depth = 6
h_target = -2
h_replicas = 500
from_level = -5
to_level = -1
audit_n = 3
audit_T = 8
"""


def write_config(tmp_path, d=2, L=3, p=0.75, seed=5, run=SMALL_RUN, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(f"[cylinder]\nd = {d}\nL = {L}\np = {p}\nseed = {seed}\n{run}")
    return str(path)


def run_cli(cmd, cfg, out, *extra):
    return main([cmd, "--config", cfg, "--out", str(out), *extra])


@pytest.mark.parametrize("cmd, files", [
    ("exponent-direct", ["exponent_direct.csv", "exponent_direct.json"]),
    ("exponent-resample", ["exponent_resample.csv", "exponent_resample.json"]),
    ("spectrum", ["spectrum.csv", "eigenfunction.csv", "spectrum.json"]),
    ("couple", ["sigma_traces.csv", "couple.json"]),
    ("hmeasure", ["hitting_measure.csv", "hmeasure.json"]),
])
def test_subcommand_outputs_are_reproducible(tmp_path, cmd, files):
    cfg = write_config(tmp_path)
    assert run_cli(cmd, cfg, tmp_path / "a") == 0
    assert run_cli(cmd, cfg, tmp_path / "b") == 0
    h = load_config(cfg, None, None).hash()
    for f in files:
        a = (tmp_path / "a" / f).read_bytes()
        assert a == (tmp_path / "b" / f).read_bytes(), f
        text = a.decode()
        if f.endswith(".csv"):
            first = text.splitlines()[0]
            assert first == f"# cylex {__version__} command={cmd} config_hash={h} seed=5"
        else:
            doc = json.loads(text)
            assert doc["config_hash"] == h and doc["seed"] == 5 and doc["version"] == __version__


def test_audit_on_ladder(tmp_path):
    cfg = write_config(tmp_path, L=2)
    assert run_cli("audit", cfg, tmp_path / "o") == 0
    doc = json.loads((tmp_path / "o" / "audit.json").read_text())
    rep = doc["result"]["reports"][0]
    assert rep["violations"] == [] and rep["qbar_violations"] == []
    assert rep["checks"] == 3


def test_spectrum_increment_diagnostic(tmp_path):
    run = SMALL_RUN.replace("memory = [1, 2]", "memory = [1, 2, 3]")
    cfg = write_config(tmp_path, run=run)
    assert run_cli("spectrum", cfg, tmp_path / "o") == 0
    diag = json.loads((tmp_path / "o" / "spectrum.json").read_text())["result"]["diagnostics"][0]
    assert len(diag["rho"]) == 3 and len(diag["increments"]) == 2 and len(diag["increment_ratios"]) == 1
    assert diag["geometric"]


def test_seed_flag_changes_hash_and_output(tmp_path):
    cfg = write_config(tmp_path)
    assert run_cli("exponent-direct", cfg, tmp_path / "a") == 0
    assert run_cli("exponent-direct", cfg, tmp_path / "b", "--seed", "6") == 0
    a = (tmp_path / "a" / "exponent_direct.csv").read_text()
    b = (tmp_path / "b" / "exponent_direct.csv").read_text()
    assert a.splitlines()[0] != b.splitlines()[0]
    assert "seed=6" in b.splitlines()[0]


def test_workers_do_not_change_results(tmp_path):
    cfg = write_config(tmp_path, run=SMALL_RUN.replace("replicas = 64", "replicas = 300"))
    assert run_cli("exponent-direct", cfg, tmp_path / "a") == 0
    assert run_cli("exponent-direct", cfg, tmp_path / "b", "--workers", "2") == 0
    assert (tmp_path / "a" / "exponent_direct.csv").read_bytes() == (tmp_path / "b" / "exponent_direct.csv").read_bytes()


def test_snapshot_and_resume(tmp_path):
    full = write_config(tmp_path, name="full.toml")
    half = write_config(tmp_path, run=SMALL_RUN.replace("N = 12", "N = 6"), name="half.toml")
    snap = tmp_path / "snap.txt"
    assert run_cli("exponent-resample", full, tmp_path / "full", "--snapshot", str(tmp_path / "unused.txt")) == 0
    assert run_cli("exponent-resample", half, tmp_path / "half", "--snapshot", str(snap)) == 0
    assert run_cli("exponent-resample", full, tmp_path / "res", "--resume", str(snap)) == 0
    body = lambda p: (p / "exponent_resample.csv").read_text().splitlines()[2:]
    assert body(tmp_path / "res") == body(tmp_path / "full")


def test_window_file(tmp_path):
    from cylex.paths import straight_window, window_to_text
    wfile = tmp_path / "w.txt"
    wfile.write_text(window_to_text(straight_window(CylinderConfig(2, 3, 0.75), 6)))
    cfg = write_config(tmp_path, run=SMALL_RUN + f'window = "{wfile}"\n')
    assert run_cli("hmeasure", cfg, tmp_path / "o") == 0
    missing = write_config(tmp_path, run=SMALL_RUN + 'window = "/nonexistent/w.txt"\n', name="m.toml")
    assert run_cli("hmeasure", missing, tmp_path / "o2") == 1


@pytest.mark.parametrize("bad", [
    "p = 0.4",
    "lambdas = [0.0]",
    "bogus_key = 1",
    "burn_in = 20",
    "memory = [0]",
    "h_target = -9",
])
def test_config_errors_exit_1(tmp_path, bad, capsys):
    if bad.startswith("p ="):
        cfg = write_config(tmp_path, p=0.4)
    else:
        key = bad.split("=")[0].strip()
        lines = [l for l in SMALL_RUN.splitlines() if not l.startswith(key + " ")]
        cfg = write_config(tmp_path, run="\n".join(lines) + "\n" + bad + "\n")
    assert run_cli("spectrum", cfg, tmp_path / "o") == 1
    assert "configuration error" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    assert main(["no-such-command"]) == 1
    assert main(["spectrum", "--config", str(tmp_path / "missing.toml")]) == 1
    assert main(["spectrum", "--workers", "0"]) == 1
    assert main(["spectrum", "--seed", "-1"]) == 1
    (tmp_path / "broken.toml").write_text("[cylinder\n")
    assert main(["spectrum", "--config", str(tmp_path / "broken.toml")]) == 1


def test_runtime_error_exit_2(tmp_path, capsys):
    run = SMALL_RUN.replace("n_max = 3", "n_max = 40").replace("replicas = 64", "replicas = 4")
    cfg = write_config(tmp_path, L=2, run=run)
    assert run_cli("exponent-direct", cfg, tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "cylex.errors.DegenerateEstimateError" in err


def test_config_hash_is_stable():
    a = ExperimentConfig(CylinderConfig(2, 3, 0.75), 1, {"x": 1})
    b = ExperimentConfig(CylinderConfig(2, 3, 0.75), 1, {"x": 1})
    assert a.hash() == b.hash() and len(a.hash()) == 16
    assert a.hash() != ExperimentConfig(CylinderConfig(2, 3, 0.75), 2, {"x": 1}).hash()
    with pytest.raises(ConfigError):
        load_config(None, 2**64, None)
