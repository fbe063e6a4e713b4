"""Command-line front end: ``manigrad spectrum|simulate|fit|gradient``.

Every subcommand takes a JSON run configuration::

    {
      "manifold": {"source": "ply", "path": "bunny.ply"}
                | {"source": "bunny"} | {"source": "sphere-analytic"}
                | {"source": "circle-analytic"},
      "kernel": {"family": "spectral-matern", "nu": 2.0},
      "truncation": 200,
      "simulate": {"n": 1000, "tau2": 1.0},
      "priors": {...},
      "sampler": {"iters": 2000, "burn_in": 500, "thin": 5},
      "seed": 0,
      "grid": {"fps": 400} | {"chart": [30, 30]} | {"circle": 50},
      "field": {"type": "reference", "vector": [1, 0, 0]} | {"type": "rotational"}
             | {"type": "circle", "V": 1.0, "U": 1.0, "curvature": true},
      "output": "runs/bunny",
      "export_ply": false,
      "smoothing": null
    }

Files written to the output directory: ``spectrum-<checksum>-T<T>.npz`` and
``spectrum_report.json``, ``data.csv``, ``draws.csv`` and ``fit_report.json``,
``predictive.csv`` (plus ``curvature.csv`` on the circle and optionally
``predictive.ply``).

Exit codes: 0 success, 2 configuration, 3 data, 4 numerical, 5 convergence.
Set ``MANIGRAD_THREADS`` to cap BLAS threads.
"""

import os

if os.environ.get("MANIGRAD_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = os.environ["MANIGRAD_THREADS"]

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import dataclass, field, replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import experiments as ex  # noqa: E402
from .errors import (ContractError, ConvergenceError, DegenerateFaceError,  # noqa: E402
                     DegenerateFieldError, FactorizationError, MeshValidationError,
                     PLYFormatError)
from .geometry import read_samples_csv, scatter_and_smooth, write_samples_csv  # noqa: E402
from .inference import (CirclePredictor, Dataset, PosteriorDraws, Priors,  # noqa: E402
                        SamplerConfig, coverage_report, geweke_z, mesh_gradient_predictor,
                        mh_sample, predictive_draws, sphere_gradient_predictor, summarize)
from .kernels import KernelSpec  # noqa: E402
from .mesh_core import assemble_laplacian, load_ply, save_ply  # noqa: E402
from .spectral import (analytic_circle_spectrum, compute_spectrum, eigen_residuals,  # noqa: E402
                       load_spectrum, orthonormality_error, save_spectrum, weyl_diagnostic)

log = logging.getLogger("manigrad")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_CONVERGENCE = 5

SOURCES = ("ply", "bunny", "sphere-analytic", "circle-analytic")
TOP_KEYS = {"manifold", "kernel", "truncation", "simulate", "priors", "sampler", "seed", "grid",
            "field", "output", "export_ply", "smoothing"}


class ConfigError(ContractError):
    """Invalid or inconsistent run configuration."""


class DataError(ContractError):
    """Missing or malformed input data."""


@dataclass
class RunConfig:
    """Validated run configuration."""

    source: str
    path: str
    kernel: KernelSpec
    truncation: int
    seed: int
    output: Path
    n: int = 1000
    tau2: float = 1.0
    priors: dict = None
    sampler: SamplerConfig = None
    grid: dict = field(default_factory=dict)
    field: dict = field(default_factory=dict)
    export_ply: bool = False
    smoothing: float = None

    @property
    def is_mesh(self):
        return self.source in ("ply", "bunny")


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def parse_config(raw, out=None, seed=None, base_dir="."):
    """Validate a configuration mapping into a :class:`RunConfig`.

    Raises ``ConfigError`` on any problem, before any expensive work.
    """
    _require(isinstance(raw, dict), "configuration must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    _require(not unknown, f"unknown configuration keys {sorted(unknown)}")
    man = raw.get("manifold")
    _require(isinstance(man, dict) and man.get("source") in SOURCES,
             f"manifold.source must be one of {SOURCES}")
    source = man["source"]
    path = ""
    if source == "ply":
        _require("path" in man, "manifold.path is required for a PLY source")
        path = str(Path(base_dir) / man["path"])
        _require(Path(path).is_file(), f"mesh file {path} does not exist")
    elif source == "bunny":
        path = str(ex.bunny_path())

    kdict = dict(raw.get("kernel") or {})
    if source == "sphere-analytic":
        kdict.setdefault("family", "sphere-catalog")
        kdict.setdefault("name", "truncated-legendre-matern")
    else:
        kdict.setdefault("family", "spectral-matern")
    _require("truncation" in raw, "truncation is required")
    T = raw["truncation"]
    _require(isinstance(T, int) and T >= 1, "truncation must be a positive integer")
    if source == "sphere-analytic":
        kdict.setdefault("truncation", T)
    try:
        kernel = KernelSpec.from_dict(kdict)
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"kernel: {exc}") from exc
    if source == "sphere-analytic":
        _require(kernel.family == "sphere-catalog" and kernel.name in (
            "legendre-matern", "truncated-legendre-matern"),
            "the sphere pipeline needs a (truncated) Legendre-Matérn kernel")
    else:
        _require(kernel.family in ("spectral-matern", "spectral-rbf"),
                 "mesh and circle pipelines need a spectral kernel")

    _require("seed" in raw or seed is not None, "an explicit seed is required")
    seed = int(raw["seed"] if seed is None else seed)
    _require(0 <= seed < 2 ** 64, "seed must be a 64-bit unsigned integer")

    sim = raw.get("simulate") or {}
    n = sim.get("n", 1000)
    tau2 = sim.get("tau2", 1.0)
    _require(isinstance(n, int) and n >= 0, "simulate.n must be a nonnegative integer")
    _require(isinstance(tau2, (int, float)) and tau2 >= 0, "simulate.tau2 must be >= 0")

    priors = raw.get("priors")
    if priors is not None:
        try:
            Priors.from_dict(priors)
        except (ContractError, TypeError) as exc:
            raise ConfigError(f"priors: {exc}") from exc
    try:
        sampler = SamplerConfig.from_dict({**(raw.get("sampler") or {}), "seed": seed})
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"sampler: {exc}") from exc

    grid = dict(raw.get("grid") or {})
    fld = dict(raw.get("field") or {})
    if source in ("ply", "bunny"):
        grid.setdefault("fps", 400)
        fld.setdefault("type", "reference")
        fld.setdefault("vector", [1.0, 0.0, 0.0])
        _require(isinstance(grid["fps"], int) and grid["fps"] >= 1, "grid.fps must be >= 1")
        _require(fld["type"] == "reference", "meshes use a projected reference field")
        vec = np.asarray(fld["vector"], dtype=float)
        _require(vec.shape == (3,) and np.linalg.norm(vec) > 0, "field.vector must be a nonzero 3-vector")
    elif source == "sphere-analytic":
        grid.setdefault("chart", [30, 30])
        fld.setdefault("type", "rotational")
        _require(len(grid["chart"]) == 2 and min(grid["chart"]) >= 1, "grid.chart must be [n_theta, n_phi]")
        _require(fld["type"] == "rotational", "the sphere uses the rotational field")
    else:
        grid.setdefault("circle", 50)
        fld.setdefault("type", "circle")
        fld.setdefault("V", 1.0)
        fld.setdefault("U", 1.0)
        fld.setdefault("curvature", True)
        _require(isinstance(grid["circle"], int) and grid["circle"] >= 1, "grid.circle must be >= 1")

    smoothing = raw.get("smoothing")
    _require(smoothing is None or (isinstance(smoothing, (int, float)) and smoothing >= 0),
             "smoothing must be a nonnegative number")
    output = Path(out if out is not None else raw.get("output", "manigrad-out"))
    return RunConfig(source, path, kernel, T, seed, output, n, float(tau2), priors, sampler,
                     grid, fld, bool(raw.get("export_ply", False)), smoothing)


def load_config(path, out=None, seed=None):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file {path} does not exist")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_config(raw, out, seed, base_dir=p.parent)


# ---------------------------------------------------------------- helpers

def _write_json(path, obj):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _mesh(cfg):
    try:
        return load_ply(cfg.path)
    except (PLYFormatError, MeshValidationError, DegenerateFaceError) as exc:
        raise type(exc)(f"{cfg.path}: {exc}") from exc


def _spectrum_file(cfg, mesh):
    return cfg.output / f"spectrum-{mesh.checksum()[:16]}-T{cfg.truncation}.npz"


def _load_cached_spectrum(cfg, mesh):
    path = _spectrum_file(cfg, mesh)
    if not path.is_file():
        raise DataError(f"no spectrum cache at {path}; run 'manigrad spectrum' first")
    spec = load_spectrum(path)
    if spec.meta.get("checksum") != mesh.checksum():
        raise DataError(f"{path} was computed for a different mesh")
    return spec


def _spectrum(cfg):
    if cfg.source == "circle-analytic":
        return analytic_circle_spectrum(cfg.truncation + 1)
    if cfg.is_mesh:
        return _load_cached_spectrum(cfg, _mesh(cfg))
    return None


def _priors(cfg, y, diameter):
    if cfg.priors is not None:
        return Priors.from_dict(cfg.priors)
    return Priors.weakly_informative(y, 5.0 / diameter)


# ------------------------------------------------------------ subcommands

def cmd_spectrum(cfg):
    """Compute (or reuse) the spectrum cache and write a diagnostics report."""
    cfg.output.mkdir(parents=True, exist_ok=True)
    report = {"source": cfg.source, "truncation": cfg.truncation}
    if cfg.is_mesh:
        mesh = _mesh(cfg)
        if cfg.truncation > mesh.n_vertices:
            raise ConfigError(f"truncation {cfg.truncation} exceeds the vertex count {mesh.n_vertices}")
        path = _spectrum_file(cfg, mesh)
        lap = assemble_laplacian(mesh)
        hit = False
        if path.is_file():
            cached = load_spectrum(path)
            hit = cached.meta.get("checksum") == mesh.checksum() and cached.size == cfg.truncation
        if hit:
            spectrum = cached
            log.info("spectrum cache hit: %s", path)
        else:
            t0 = time.perf_counter()
            spectrum = compute_spectrum(lap, cfg.truncation)
            save_spectrum(path, spectrum, {"checksum": mesh.checksum()})
            log.info("computed %d eigenpairs in %.2f s", spectrum.size, time.perf_counter() - t0)
        report.update({
            "cache": path.name, "checksum": mesh.checksum(), "vertices": mesh.n_vertices,
            "faces": mesh.n_faces, "pairs": spectrum.size,
            "max_eigen_residual": float(eigen_residuals(lap, spectrum).max()),
            "orthonormality_error": orthonormality_error(spectrum),
            "eigenvalues_head": spectrum.eigenvalues[:10].tolist(),
        })
    elif cfg.source == "circle-analytic":
        spectrum = analytic_circle_spectrum(cfg.truncation + 1)
        report.update({"pairs": spectrum.size, "eigenvalues_head": spectrum.eigenvalues[:10].tolist()})
    else:
        report.update({"pairs": cfg.truncation + 1, "note": "closed-form Legendre kernel, no cache"})
        spectrum = None
    if spectrum is not None and spectrum.size > 20:
        w = weyl_diagnostic(spectrum, spectrum.dim)
        report["weyl"] = {"slope": w.slope, "expected": w.expected_slope,
                          "relative_error": w.relative_error}
    _write_json(cfg.output / "spectrum_report.json", report)
    return report


def cmd_simulate(cfg):
    """Simulate noisy observations of the configured truth into ``data.csv``."""
    cfg.output.mkdir(parents=True, exist_ok=True)
    path = cfg.output / "data.csv"
    if cfg.is_mesh:
        mesh = _mesh(cfg)
        d = ex.simulate_mesh(mesh, cfg.n, cfg.tau2, cfg.seed)
        write_samples_csv(path, d.points, d.y, {"x": d.xyz[:, 0], "y": d.xyz[:, 1],
                                               "z": d.xyz[:, 2], "truth": d.truth})
    else:
        if cfg.source == "sphere-analytic":
            d = ex.simulate_sphere(cfg.n, cfg.tau2, cfg.seed)
            cols = {"x": d.xyz[:, 0], "y": d.xyz[:, 1], "z": d.xyz[:, 2],
                    "theta": d.chart[:, 0], "phi": d.chart[:, 1]}
        else:
            d = ex.simulate_circle(cfg.n, cfg.tau2, cfg.seed)
            cols = {"theta": d.points}
        cols.update({"value": d.y, "truth": d.truth})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(cols))
            for i in range(len(d.y)):
                w.writerow([repr(float(c[i])) for c in cols.values()])
    return {"rows": len(d.y), "path": str(path)}


def _read_data(cfg, mesh=None):
    path = cfg.output / "data.csv"
    if not path.is_file():
        raise DataError(f"{path} not found; run 'manigrad simulate' or provide data.csv")
    if cfg.is_mesh:
        pts, y, _ = read_samples_csv(path, mesh)
        return Dataset(pts, y, mesh)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        cols = {k: np.array([float(r[k]) for r in rows]) for k in (rows[0] if rows else [])}
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: malformed rows") from exc
    if not rows:
        return Dataset(np.zeros((0, 3)) if cfg.source == "sphere-analytic" else np.zeros(0), [])
    if "value" not in cols:
        raise DataError(f"{path}: missing 'value' column")
    if cfg.source == "sphere-analytic":
        X = np.column_stack([cols["x"], cols["y"], cols["z"]])
        return Dataset(X / np.linalg.norm(X, axis=1, keepdims=True), cols["value"])
    return Dataset(cols["theta"] % 1.0, cols["value"])


def _diameter(cfg, mesh):
    if mesh is not None:
        return mesh.diameter
    return 2.0 if cfg.source == "sphere-analytic" else 0.5


def cmd_fit(cfg):
    """Run the sampler on ``data.csv``; writes ``draws.csv`` and ``fit_report.json``."""
    mesh = _mesh(cfg) if cfg.is_mesh else None
    spectrum = _spectrum(cfg)
    if spectrum is not None and cfg.is_mesh:
        spectrum = spectrum.truncate(cfg.truncation - 1)
    data = _read_data(cfg, mesh)
    if len(data) == 0:
        raise DataError("data.csv holds no observations")
    priors = _priors(cfg, data.y, _diameter(cfg, mesh))
    draws = mh_sample(priors, cfg.kernel, spectrum, data, cfg.sampler)
    draws.to_csv(cfg.output / "draws.csv")
    flags = []
    geweke = {}
    if len(draws) >= 20:
        for name in ("sigma2", "tau2", "alpha"):
            z = geweke_z(getattr(draws, name))
            geweke[name] = z
            if abs(z) >= 3:
                flags.append(f"Geweke |z| >= 3 for {name}")
    for name, rate in draws.acceptance.items():
        if rate == rate and not 0.05 <= rate <= 0.8:
            flags.append(f"acceptance rate {rate:.3f} for {name}")
    report = {
        "n": len(data), "draws": len(draws), "seed": cfg.seed,
        "acceptance": draws.acceptance, "step_sizes": list(draws.step_sizes),
        "quantiles": {k: dict(zip(("q025", "q500", "q975"), v.tolist()))
                      for k, v in draws.quantiles().items()},
        "geweke_z": geweke, "flags": flags, "priors": priors.to_dict(),
        "loglik_trace": draws.loglik.tolist(),
    }
    _write_json(cfg.output / "fit_report.json", report)
    return report


def cmd_gradient(cfg):
    """Predict ``D_V Z`` (and curvature on the circle) on the configured grid."""
    mesh = _mesh(cfg) if cfg.is_mesh else None
    spectrum = _spectrum(cfg)
    if spectrum is not None and cfg.is_mesh:
        spectrum = spectrum.truncate(cfg.truncation - 1)
    data = _read_data(cfg, mesh)
    dpath = cfg.output / "draws.csv"
    if not dpath.is_file():
        raise DataError(f"{dpath} not found; run 'manigrad fit' first")
    draws = PosteriorDraws.from_csv(dpath, nu=cfg.kernel.nu)
    result = {}
    if cfg.is_mesh:
        grid = ex.mesh_grid(mesh, cfg.grid["fps"], cfg.field["vector"], cfg.seed)
        for gid, msg in grid.errors.items():
            log.warning("grid point %d skipped: %s", gid, msg)
        pred = mesh_gradient_predictor(cfg.kernel, spectrum, mesh, data.points, grid.points, grid.vectors)
    elif cfg.source == "sphere-analytic":
        grid = ex.sphere_grid(*cfg.grid["chart"])
        pred = sphere_gradient_predictor(cfg.kernel, data.points, grid.points, grid.vectors)
    else:
        theta = np.arange(cfg.grid["circle"]) / cfg.grid["circle"]
        truth = cfg.field["V"] * 2 * np.pi * np.cos(2 * np.pi * theta)
        grid = ex.Grid(theta, theta[:, None], np.ones((len(theta), 1)), truth)
        pred = CirclePredictor(cfg.kernel, spectrum, data.points, theta, cfg.field["V"],
                               cfg.field["U"], cfg.field["curvature"])
    samples = predictive_draws(draws, pred, data.y, seed=cfg.seed)
    summary = summarize(samples[:, :, 0], grid.truth)
    summary.errors.update(grid.errors)
    summary.to_csv(cfg.output / "predictive.csv")
    result["grid"] = len(grid)
    result["skipped"] = len(grid.errors)
    if grid.truth is not None:
        result["coverage"] = coverage_report(summary, grid.truth)
    if samples.shape[2] > 1:
        summarize(samples[:, :, 1]).to_csv(cfg.output / "curvature.csv")
    if cfg.export_ply and mesh is not None:
        lap = assemble_laplacian(mesh)
        mean = scatter_and_smooth(mesh, lap, grid.points, summary.mean, cfg.smoothing)
        var = scatter_and_smooth(mesh, lap, grid.points, summary.var, cfg.smoothing)
        save_ply(cfg.output / "predictive.ply", mesh, {"mean": mean, "var": var})
    return result


COMMANDS = {"spectrum": cmd_spectrum, "simulate": cmd_simulate, "fit": cmd_fit,
            "gradient": cmd_gradient}


def build_parser():
    ap = argparse.ArgumentParser(prog="manigrad", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="seed (overrides the config)")
    sub.choices["gradient"].add_argument(
        "--smoothing", type=float, help="PLY export smoothing penalty (default 1e-3 * total area)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.out, args.seed)
        if getattr(args, "smoothing", None) is not None:
            if args.smoothing < 0:
                raise ConfigError("--smoothing must be nonnegative")
            cfg = replace(cfg, smoothing=float(args.smoothing))
        result = COMMANDS[args.command](cfg)
    except (ConfigError, PLYFormatError, MeshValidationError, DegenerateFaceError,
            DegenerateFieldError, DataError, FileNotFoundError, ContractError) as exc:
        code = EXIT_CONFIG if type(exc) in (ConfigError, ContractError) else EXIT_DATA
        print(f"manigrad {args.command}: {exc}", file=sys.stderr)
        return code
    except FactorizationError as exc:
        print(f"manigrad {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConvergenceError as exc:
        print(f"manigrad {args.command}: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    print(json.dumps({k: v for k, v in result.items() if k != "loglik_trace"},
                     sort_keys=True, default=_jsonable))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
