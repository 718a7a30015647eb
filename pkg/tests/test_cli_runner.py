import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from vortex_lattice.cli_runner import (
    EXIT_INPUT, EXIT_OK, EXIT_SOLVER, SWEEP_COLUMNS, ConfigError, RunConfig, config_from_args, main,
    parse_config_file, run, validate_outputs,
)
from vortex_lattice.vortex_profile import first_critical_field

SMALL = ["--grid", "24", "--R", "8", "--mesh-size", "1000"]


def _only_dir(root):
    dirs = [p for p in root.iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def test_profile_mode(tmp_path):
    assert main(["--mode", "profile", "--n", "1", "--kappa", "1.0", "--out", str(tmp_path)]) == EXIT_OK
    d = _only_dir(tmp_path)
    lines = (d / "profile_n1_k1.csv").read_text().splitlines()
    assert lines[0] == "r,f,a,df,da"
    r0, f0 = map(float, lines[1].split(",")[:2])
    assert r0 == 0.0 and f0 == 0.0
    sc = json.loads((d / "scalars_n1_k1.json").read_text())
    assert sc["kind"] == "profile_scalars" and abs(sc["flux"] - 2 * math.pi) < 1e-6
    man = json.loads((d / "manifest.json").read_text())
    assert man["status"] == "complete" and validate_outputs(d) == []


def test_solve_mode_with_gibbs(tmp_path):
    h = 1.05 * first_critical_field(1.5)
    rc = main(["--mode", "solve", "--kappa", "1.5", "--R", "12", "--grid", "48", "--h", str(h), "--out", str(tmp_path)])
    assert rc == EXIT_OK
    d = _only_dir(tmp_path)
    doc = json.loads(next(d.glob("solve_*.json")).read_text())
    assert doc["report"]["converged"]
    assert doc["gibbs"]["G_lattice"] < doc["gibbs"]["G_vortex_free"] and doc["gibbs"]["lattice_below"]
    assert abs(doc["flux"] - 2 * math.pi) < 1e-9
    assert len(list(d.glob("field_*.dat"))) == 1 and len(list(d.glob("tiled_*.dat"))) == 1


def test_spectrum_mode(tmp_path):
    rc = main(["--mode", "spectrum", "--kappa", "1.5", "--out", str(tmp_path), *SMALL])
    assert rc == EXIT_OK
    d = _only_dir(tmp_path)
    assert len(list(d.glob("fiber_*.json"))) == 5
    lat = json.loads(next(d.glob("lattice_*.json")).read_text())
    assert lat["operator"] == "L deflated" and "zero_modes" in lat["notes"]


def test_sweep_mode_default_shapes(tmp_path):
    rc = main(["--mode", "sweep", "--kappa", "1.5", "--R", "10", "--grid", "40", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    rows = list(csv.DictReader(open(_only_dir(tmp_path) / "sweep.csv")))
    assert len(rows) == 2
    assert list(rows[0].keys()) == SWEEP_COLUMNS
    taus = {(float(r["tau_re"]), round(float(r["tau_im"]), 12)) for r in rows}
    assert taus == {(0.0, 1.0), (0.5, round(math.sqrt(3) / 2, 12))}
    assert all(r["converged"] == "1" for r in rows)


@pytest.mark.parametrize("argv", [
    ["--mode", "profile", "--n", "2"],
    ["--mode", "profile", "--kappa", "-1"],
    ["--mode", "solve", "--R", "4"],
    ["--mode", "solve", "--grid", "25"],
    ["--mode", "solve", "--tau-im", "-1", "--tau-re", "0"],
])
def test_invalid_input_exit_code(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == EXIT_INPUT
    assert not any(tmp_path.iterdir())


def test_unknown_mode_rejected_by_parser():
    with pytest.raises(SystemExit) as err:
        main(["--mode", "bogus"])
    assert err.value.code == 2


def test_solver_failure_exit_code(tmp_path):
    rc = main(["--mode", "solve", "--max-iter", "1", "--tol", "1e-12", "--out", str(tmp_path), *SMALL])
    assert rc == EXIT_SOLVER
    man = json.loads((_only_dir(tmp_path) / "manifest.json").read_text())
    assert man["status"] == "partial" and man["artifacts"]


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nmode = solve\nkappa = 0.5, 1.5\nR = 8\ngrid = 32\nseed = 3\n")
    vals = parse_config_file(cfg_file)
    assert vals["kappa"] == [0.5, 1.5] and vals["grid"] == 32
    cfg, _ = config_from_args(["--config", str(cfg_file), "--grid", "24", "--kappa", "2.0"])
    assert cfg.mode == "solve" and cfg.grid == 24 and cfg.kappa == [2.0] and cfg.seed == 3


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("mode solve\n")
    with pytest.raises(ConfigError):
        parse_config_file(bad)
    bad.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        parse_config_file(bad)
    bad.write_text("grid = many\n")
    assert main(["--config", str(bad)]) == EXIT_INPUT


def test_run_directory_hash():
    a = RunConfig(mode="solve", kappa=[1.5], out="x")
    b = RunConfig(mode="solve", kappa=[1.5], out="y", threads=4)
    c = RunConfig(mode="solve", kappa=[1.6], out="x")
    assert a.digest() == b.digest() != c.digest()
    assert a.run_dir().name == f"solve-{a.digest()}"


def test_reruns_are_bit_identical(tmp_path):
    argv = ["--mode", "solve", "--kappa", "1.5", *SMALL]
    assert main([*argv, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main([*argv, "--out", str(tmp_path / "b")]) == EXIT_OK
    da, db = _only_dir(tmp_path / "a"), _only_dir(tmp_path / "b")
    assert da.name == db.name
    names = sorted(p.name for p in da.iterdir())
    assert names == sorted(p.name for p in db.iterdir())
    for name in names:
        a, b = (da / name).read_bytes(), (db / name).read_bytes()
        if name == "config.txt":
            # the recorded output directory is the only permitted difference
            a, b = ([l for l in x.splitlines() if not l.startswith(b"out=")] for x in (a, b))
        assert a == b, name


def test_validation_flags_truncated_sweep(tmp_path):
    cfg = RunConfig(mode="sweep", kappa=[1.5], tau_re=[0.0], tau_im=[1.0], R=[8.0], grid=24, out=str(tmp_path))
    rc, d = run(cfg)
    assert rc == EXIT_OK and validate_outputs(d) == []
    text = (d / "sweep.csv").read_text()
    (d / "sweep.csv").write_text(text[: len(text) - 20])
    problems = validate_outputs(d)
    assert any("sweep.csv" in p for p in problems)


def test_validation_flags_doctored_flux(tmp_path):
    cfg = RunConfig(mode="solve", kappa=[1.5], R=[8.0], grid=24, out=str(tmp_path))
    rc, d = run(cfg)
    assert rc == EXIT_OK
    path = next(d.glob("solve_*.json"))
    doc = json.loads(path.read_text())
    doc["flux"] *= 1.001
    path.write_text(json.dumps(doc))
    problems = validate_outputs(d)
    assert any("flux" in p for p in problems)


def test_validation_flags_truncated_dump(tmp_path):
    cfg = RunConfig(mode="solve", kappa=[1.5], R=[8.0], grid=24, out=str(tmp_path))
    rc, d = run(cfg)
    path = next(d.glob("field_*.dat"))
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-5]) + "\n")
    assert any(path.name in p for p in validate_outputs(d))


def test_artifacts_round_trip(tmp_path):
    from vortex_lattice.cell_discretization import read_field_dump
    from vortex_lattice.ls_solver import SolveReport

    cfg = RunConfig(mode="solve", kappa=[1.5], R=[8.0], grid=24, out=str(tmp_path))
    rc, d = run(cfg)
    doc = json.loads(next(d.glob("solve_*.json")).read_text())
    rep = SolveReport(**doc["report"])
    assert rep.converged
    meta, table = read_field_dump(next(d.glob("tiled_*.dat")))
    assert table.shape[0] == 4 * 24 * 24 and np.all(np.isfinite(table))
    assert meta["n"] == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "vortex_lattice", "--mode", "profile", "--kappa", "0.5", "--mesh-size", "600",
         "--out", str(tmp_path)],
        capture_output=True, text=True, timeout=120,
    )
    assert out.returncode == 0, out.stderr
    assert "profile-" in out.stdout
