"""Command-line orchestration: profile, solve, spectrum and sweep workflows.

Every run writes into <out>/<mode>-<hash>, where the hash is taken over the
canonical JSON form of the configuration.  A manifest.json lists the
artifacts and the run status; validate_outputs re-parses all of them.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger("vortex_lattice")

MODES = ("profile", "solve", "spectrum", "sweep")
SWEEP_COLUMNS = [
    "kappa", "n", "tau_re", "tau_im", "R", "N", "energy_per_area", "gibbs", "residual_v",
    "w_norm", "final_residual", "lowest_deflated_eig", "converged",
]
EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VALIDATION = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class RunFailure(RuntimeError):
    def __init__(self, message: str, artifacts: Sequence[str] = ()):
        super().__init__(message)
        self.artifacts = list(artifacts)


@dataclass
class RunConfig:
    mode: str = "profile"
    kappa: list = field(default_factory=lambda: [1.0])
    n: list = field(default_factory=lambda: [1])
    tau_re: list = field(default_factory=lambda: [0.0])
    tau_im: list = field(default_factory=lambda: [1.0])
    R: list = field(default_factory=lambda: [10.0])
    grid: int = 48
    tol: float = 1e-8
    max_iter: int = 50
    h: Optional[float] = None
    out: str = "runs"
    seed: int = 0
    threads: int = 1
    r_max: float = 25.0
    mesh_size: int = 2000

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if any(not (k > 0 and math.isfinite(k)) for k in self.kappa):
            raise ConfigError("kappa must be positive")
        if any(int(n) != n or n == 0 or n % 2 == 0 for n in self.n):
            raise ConfigError("n must be an odd nonzero integer")
        if len(self.tau_re) != len(self.tau_im):
            raise ConfigError("tau-re and tau-im must be given the same number of times")
        if any(t <= 0 for t in self.tau_im):
            raise ConfigError("Im tau must be positive")
        if any(r < 5 for r in self.R):
            raise ConfigError("R must be at least 5")
        if self.grid % 2 or self.grid < 16:
            raise ConfigError("grid N must be an even integer >= 16")
        if not (0 < self.tol < 1):
            raise ConfigError("tol must lie in (0, 1)")
        if self.max_iter < 1 or self.threads < 1:
            raise ConfigError("max-iter and threads must be positive")
        if self.r_max < 15 or self.mesh_size < 500:
            raise ConfigError("profile needs r_max >= 15 and mesh_size >= 500")
        if self.h is not None and not math.isfinite(self.h):
            raise ConfigError("h must be finite")
        return self

    @property
    def taus(self) -> list[complex]:
        return [complex(a, b) for a, b in zip(self.tau_re, self.tau_im)]

    def canonical(self) -> str:
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return json.dumps(d, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def run_dir(self) -> Path:
        return Path(self.out) / f"{self.mode}-{self.digest()}"


_LIST_KEYS = {"kappa": float, "n": int, "tau_re": float, "tau_im": float, "R": float}
_SCALAR_KEYS = {
    "mode": str, "grid": int, "tol": float, "max_iter": int, "h": float, "out": str,
    "seed": int, "threads": int, "r_max": float, "mesh_size": int,
}


def _convert(key: str, text: str):
    text = text.strip()
    try:
        if key in _LIST_KEYS:
            return [_LIST_KEYS[key](t) for t in text.split(",") if t.strip()]
        if key in _SCALAR_KEYS:
            if key == "h" and text.lower() in ("", "none"):
                return None
            return _SCALAR_KEYS[key](text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        k = k.strip().replace("-", "_")
        out[k] = _convert(k, v)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vortex-lattice", description="Vortex profiles and vortex lattice solutions.")
    ap.add_argument("--config", help="key=value file; flags override it")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--kappa", type=float, action="append")
    ap.add_argument("--n", type=int, action="append")
    ap.add_argument("--tau-re", type=float, action="append")
    ap.add_argument("--tau-im", type=float, action="append")
    ap.add_argument("--R", type=float, action="append")
    ap.add_argument("--grid", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--max-iter", type=int)
    ap.add_argument("--h", type=float)
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--r-max", type=float)
    ap.add_argument("--mesh-size", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(argv: Optional[Sequence[str]] = None) -> tuple[RunConfig, argparse.Namespace]:
    args = build_parser().parse_args(argv)
    values = parse_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    cfg = RunConfig(**values)
    if cfg.mode == "sweep" and "tau_re" not in values and "tau_im" not in values:
        cfg.tau_re, cfg.tau_im = [0.0, 0.5], [1.0, math.sqrt(3) / 2]
    return cfg.validate(), args


# ---------------------------------------------------------------- workflows

def _profile(cfg: RunConfig, n: int, kappa: float):
    from .vortex_profile import solve_profile

    return solve_profile(n, kappa, r_max=cfg.r_max, mesh_size=cfg.mesh_size, tol=1e-9)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_profile(cfg: RunConfig, d: Path) -> list[str]:
    from .vortex_profile import profile_scalars, write_profile_csv

    arts = []
    for n in cfg.n:
        for kappa in cfg.kappa:
            p = _profile(cfg, n, kappa)
            tag = f"n{n}_k{kappa:g}"
            write_profile_csv(p, d / f"profile_{tag}.csv")
            sc = profile_scalars(p)
            _write_json(d / f"scalars_{tag}.json", {"kind": "profile_scalars", "n": n, "kappa": kappa, **sc.as_dict()})
            arts += [f"profile_{tag}.csv", f"scalars_{tag}.json"]
    return arts


def _solve_case(cfg: RunConfig, n: int, kappa: float, tau: complex, R: float, profile=None):
    from .cell_discretization import FieldState, build_approximate_solution, build_grid
    from .gl_operator import DiscreteGL
    from .lattice_geometry import LatticeShape, normalize_shape
    from .ls_solver import solve_corrector

    tau_n = normalize_shape(tau)
    shape = LatticeShape(tau_n, R, equal_sides=abs(abs(tau_n) - 1) < 1e-12)
    p = profile if profile is not None else _profile(cfg, n, kappa)
    v = build_approximate_solution(p, build_grid(shape, cfg.grid))
    w, rep = solve_corrector(v, kappa, tol=cfg.tol, max_iter=cfg.max_iter)
    u = FieldState.from_vector(v.background, v.as_vector() + w)
    gl = DiscreteGL(v.background, kappa)
    return shape, v, u, rep, gl


def run_solve(cfg: RunConfig, d: Path) -> list[str]:
    from .cell_discretization import write_field_dump
    from .ls_solver import tile_solution
    from .vortex_profile import critical_field_from, profile_energy, profile_flux

    arts, failed = [], []
    for n in cfg.n:
        for kappa in cfg.kappa:
            p = _profile(cfg, n, kappa)
            for tau in cfg.taus:
                for R in cfg.R:
                    shape, v, u, rep, gl = _solve_case(cfg, n, kappa, tau, R, p)
                    x = u.as_vector()
                    tag = f"n{n}_k{kappa:g}_t{shape.tau.real:.4f}_{shape.tau.imag:.4f}_R{R:g}"
                    flux = gl.flux(x)
                    doc = {
                        "kind": "solve_report", "n": n, "kappa": kappa, "R": R, "N": cfg.grid,
                        "tau_re": shape.tau.real, "tau_im": shape.tau.imag,
                        "cell_area": shape.cell_area, "flux": flux, "mean_field": flux / shape.cell_area,
                        "energy": gl.energy(x), "residual_v": gl.norm(gl.residual(v.as_vector())),
                        "report": json.loads(rep.to_json()),
                    }
                    if cfg.h is not None:
                        e1 = profile_energy(p)
                        doc["gibbs"] = {
                            "h": cfg.h, "h_c1": critical_field_from(e1, profile_flux(p)),
                            "G_lattice": gl.energy(x) - cfg.h * flux, "G_vortex_free": 0.0,
                        }
                        doc["gibbs"]["lattice_below"] = doc["gibbs"]["G_lattice"] < 0.0
                    _write_json(d / f"solve_{tag}.json", doc)
                    write_field_dump(d / f"field_{tag}.dat", u, kappa)
                    tile_solution(u, 2, kappa, path=d / f"tiled_{tag}.dat")
                    arts += [f"solve_{tag}.json", f"field_{tag}.dat", f"tiled_{tag}.dat"]
                    if not rep.converged:
                        failed.append(tag)
    if failed:
        raise RunFailure(f"corrector did not converge for {', '.join(failed)}", arts)
    return arts


def run_spectrum(cfg: RunConfig, d: Path) -> list[str]:
    from .spectral import fiber_block, fiber_spectrum, lattice_coercivity, lattice_zero_mode_residuals

    arts = []
    for n in cfg.n:
        for kappa in cfg.kappa:
            p = _profile(cfg, n, kappa)
            for m in range(-2, 3):
                rep, _ = fiber_spectrum(fiber_block(p, m), k=4)
                name = f"fiber_n{n}_k{kappa:g}_m{m}.json"
                (d / name).write_text(rep.to_json() + "\n")
                arts.append(name)
            for tau in cfg.taus:
                for R in cfg.R:
                    shape, v, u, srep, gl = _solve_case(cfg, n, kappa, tau, R, p)
                    if not srep.converged:
                        raise RunFailure(f"corrector did not converge at R={R:g}", arts)
                    rep = lattice_coercivity(u, kappa, k=4)
                    rep.notes["zero_modes"] = lattice_zero_mode_residuals(u, kappa)
                    name = f"lattice_n{n}_k{kappa:g}_t{shape.tau.real:.4f}_{shape.tau.imag:.4f}_R{R:g}.json"
                    (d / name).write_text(rep.to_json() + "\n")
                    arts.append(name)
    return arts


def sweep_row(cfg: RunConfig, n: int, kappa: float, tau: complex, R: float) -> dict:
    from .spectral import lattice_coercivity

    shape, v, u, rep, gl = _solve_case(cfg, n, kappa, tau, R)
    x = u.as_vector()
    lowest = float("nan")
    if rep.converged:
        lowest = lattice_coercivity(u, kappa, k=1).eigenvalues[0]
    energy = gl.energy(x)
    return {
        "kappa": kappa, "n": n, "tau_re": shape.tau.real, "tau_im": shape.tau.imag, "R": R, "N": cfg.grid,
        "energy_per_area": energy / shape.cell_area,
        "gibbs": energy - cfg.h * gl.flux(x) if cfg.h is not None else float("nan"),
        "residual_v": gl.norm(gl.residual(v.as_vector())), "w_norm": rep.w_norm,
        "final_residual": rep.final_residual, "lowest_deflated_eig": lowest, "converged": int(rep.converged),
    }


def _sweep_job(args):
    cfg, n, kappa, tau, R = args
    return sweep_row(cfg, n, kappa, tau, R)


def run_sweep(cfg: RunConfig, d: Path) -> list[str]:
    jobs = [(cfg, n, k, t, R) for k in cfg.kappa for t in cfg.taus for R in cfg.R for n in cfg.n]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    with open(d / "sweep.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    if not all(r["converged"] for r in rows):
        raise RunFailure("some sweep entries did not converge", ["sweep.csv"])
    return ["sweep.csv"]


_RUNNERS = {"profile": run_profile, "solve": run_solve, "spectrum": run_spectrum, "sweep": run_sweep}


def run(cfg: RunConfig) -> tuple[int, Path]:
    """Execute one configuration; returns (exit code, run directory)."""
    from .ls_solver import SolverError
    from .spectral import SpectralError
    from .vortex_profile import ProfileError

    cfg.validate()
    np.random.seed(cfg.seed)
    d = cfg.run_dir()
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(
        "".join(f"{k}={','.join(map(repr, v)) if isinstance(v, list) else v}\n" for k, v in asdict(cfg).items())
    )
    manifest = {"config": json.loads(cfg.canonical()), "hash": cfg.digest(), "status": "complete", "artifacts": []}
    code = EXIT_OK
    try:
        manifest["artifacts"] = _RUNNERS[cfg.mode](cfg, d)
    except RunFailure as exc:
        manifest["status"] = "partial"
        manifest["error"] = str(exc)
        manifest["artifacts"] = exc.artifacts
        code = EXIT_SOLVER
    except (SolverError, SpectralError, ProfileError) as exc:
        manifest["status"] = "partial"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_SOLVER
    _write_json(d / "manifest.json", manifest)
    if code == EXIT_OK:
        problems = validate_outputs(d)
        if problems:
            for p in problems:
                log.error("validation: %s", p)
            code = EXIT_VALIDATION
    return code, d


# ---------------------------------------------------------------- validation

def _check_profile_csv(path: Path) -> list[str]:
    errs = []
    with open(path) as fh:
        head = fh.readline().strip()
        if head != "r,f,a,df,da":
            return [f"{path.name}: bad header {head!r}"]
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            return [f"{path.name}: parse error ({exc})"]
    if data.shape[1] != 5 or data.shape[0] < 2:
        return [f"{path.name}: expected 5 columns and at least 2 rows"]
    if data[0, 0] != 0 or data[0, 1] != 0:
        errs.append(f"{path.name}: first row is not r=0, f=0")
    if np.any(np.diff(data[:, 0]) <= 0):
        errs.append(f"{path.name}: radii not increasing")
    return errs


def _check_sweep_csv(path: Path) -> list[str]:
    errs = []
    text = path.read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != SWEEP_COLUMNS:
        return [f"{path.name}: bad header"]
    if not text.endswith("\n"):
        errs.append(f"{path.name}: truncated (no final newline)")
    for i, row in enumerate(rows[1:], 2):
        if len(row) != len(SWEEP_COLUMNS):
            errs.append(f"{path.name}:{i}: expected {len(SWEEP_COLUMNS)} fields, got {len(row)}")
            continue
        try:
            vals = dict(zip(SWEEP_COLUMNS, map(float, row)))
        except ValueError:
            errs.append(f"{path.name}:{i}: non-numeric field")
            continue
        if vals["converged"] not in (0.0, 1.0):
            errs.append(f"{path.name}:{i}: converged must be 0 or 1")
    return errs


def _check_json(path: Path, dumps: dict) -> list[str]:
    from .ls_solver import SolveReport
    from .spectral import SpectralReport

    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        return [f"{path.name}: parse error ({exc})"]
    errs = []
    name = path.name
    if name == "manifest.json":
        for a in doc.get("artifacts", []):
            if not (path.parent / a).exists():
                errs.append(f"manifest lists missing artifact {a}")
        return errs
    kind = doc.get("kind")
    if kind == "profile_scalars":
        n = doc["n"]
        if not doc["energy"] > 0:
            errs.append(f"{name}: energy not positive")
        if abs(doc["flux"] - 2 * math.pi * n) > 1e-6 * abs(2 * math.pi * n):
            errs.append(f"{name}: flux {doc['flux']} differs from 2 pi n")
        return errs
    if kind == "solve_report":
        try:
            SolveReport(**doc["report"])
        except TypeError as exc:
            return [f"{name}: bad solve report ({exc})"]
        n = doc["n"]
        if abs(doc["flux"] - 2 * math.pi * n) > 1e-9:
            errs.append(f"{name}: flux {doc['flux']} differs from 2 pi n")
        area = doc["cell_area"]
        if abs(doc["mean_field"] - 2 * math.pi * n / area) > 1e-9 * (1 + abs(doc["mean_field"])):
            errs.append(f"{name}: mean field inconsistent with flux per cell area")
        dump = dumps.get(name.replace("solve_", "field_").replace(".json", ".dat"))
        if dump is not None:
            meta = dump
            if meta["n"] != n or abs(meta["R"] - doc["R"]) > 1e-12 or abs(meta["kappa"] - doc["kappa"]) > 1e-12:
                errs.append(f"{name}: parameters differ from the field dump")
            from .lattice_geometry import LatticeShape

            sh = LatticeShape(complex(meta["tau_re"], meta["tau_im"]), meta["R"],
                              equal_sides=abs(abs(complex(meta["tau_re"], meta["tau_im"])) - 1) < 1e-12)
            if abs(sh.cell_area - area) > 1e-9 * area:
                errs.append(f"{name}: cell area differs from the field dump geometry")
        return errs
    try:
        SpectralReport.from_json(path.read_text())
    except TypeError as exc:
        return [f"{name}: not a known report ({exc})"]
    return errs


def validate_outputs(directory) -> list[str]:
    """Re-parse all artifacts; returns a list of problems (empty when everything checks out)."""
    from .cell_discretization import read_field_dump

    d = Path(directory)
    if not d.is_dir():
        return [f"{d} is not a directory"]
    errs: list[str] = []
    dumps = {}
    for path in sorted(d.glob("*.dat")):
        try:
            meta, table = read_field_dump(path)
        except (ValueError, OSError) as exc:
            errs.append(f"{path.name}: {exc}")
            continue
        dumps[path.name] = meta
        if not np.all(np.isfinite(table)):
            errs.append(f"{path.name}: non-finite values")
    for path in sorted(d.glob("*.csv")):
        with open(path) as fh:
            head = fh.readline().strip()
        errs += _check_sweep_csv(path) if head.startswith("kappa,") else _check_profile_csv(path)
    for path in sorted(d.glob("*.json")):
        errs += _check_json(path, dumps)
    if not (d / "manifest.json").exists():
        errs.append("manifest.json missing")
    return errs


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg, args = config_from_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    code, d = run(cfg)
    print(d)
    return code


if __name__ == "__main__":
    sys.exit(main())
