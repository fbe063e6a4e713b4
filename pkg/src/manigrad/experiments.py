"""Simulation studies on the sphere, a mesh and the circle.

Each driver simulates noisy observations of a known mean, fits the
hierarchical model by MCMC and scores the predictive derivative intervals
against the analytic derivative of the mean.
"""

import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ContractError, DegenerateFieldError
from .geometry import (BaryPoints, farthest_point_sample, interpolate_tangent_field,
                       project_reference_field, rotational_field, sample_barycentric, sphere_chart)
from .inference import (Dataset, Priors, SamplerConfig, coverage_report, mesh_gradient_predictor,
                        mh_sample, predictive_curvature_circle, predictive_gradient,
                        sphere_gradient_predictor)
from .kernels import KernelSpec
from .mesh_core import assemble_laplacian, load_ply
from .spectral import analytic_circle_spectrum, compute_spectrum

DENSE_GRID_SAMPLES = 20000


def bunny_path():
    """Path of the bundled 453-vertex bunny."""
    return resources.files("manigrad") / "data" / "bunny_453.ply"


def load_bunny():
    return load_ply(str(bunny_path()))


# ----------------------------------------------------------------- truths

def sphere_truth(theta, phi):
    """``2 (sin 3 pi theta + cos 3 pi phi)`` in the (polar, azimuth) chart."""
    return 2 * (np.sin(3 * np.pi * theta) + np.cos(3 * np.pi * phi))


def sphere_truth_derivative(theta, phi):
    """Derivative of :func:`sphere_truth` along the rotational field ``d/dphi``."""
    return -6 * np.pi * np.sin(3 * np.pi * np.asarray(phi)) + 0 * np.asarray(theta)


def mesh_truth(xyz):
    """``10 sum_i sin(3 pi x_i)`` in ambient coordinates."""
    return 10 * np.sin(3 * np.pi * np.asarray(xyz)).sum(axis=-1)


def mesh_truth_gradient(xyz):
    """Ambient gradient of :func:`mesh_truth`."""
    return 30 * np.pi * np.cos(3 * np.pi * np.asarray(xyz))


@dataclass
class SimulatedData:
    """Simulated observations with the noise-free truth kept for scoring.

    ``points`` is what the model consumes (barycentric points, unit vectors
    or angles); ``xyz`` are ambient coordinates.
    """

    points: object
    xyz: np.ndarray
    truth: np.ndarray
    y: np.ndarray
    chart: np.ndarray = None
    mesh: object = None

    def dataset(self):
        return Dataset(self.points, self.y, self.mesh)


def _noise(rng, n, tau2):
    if tau2 < 0:
        raise ContractError("tau2 must be >= 0")
    return np.sqrt(tau2) * rng.standard_normal(n) if tau2 > 0 else np.zeros(n)


SPHERE_CONVENTIONS = ("rotational", "meridian")


def _embed(theta, phi, convention):
    if convention == "rotational":
        return sphere_chart(theta, phi)
    if convention == "meridian":
        return sphere_chart(phi, theta)
    raise ContractError(f"convention must be one of {SPHERE_CONVENTIONS}")


def simulate_sphere(n, tau2, seed, convention="rotational"):
    """Chart-uniform locations with noisy truth.

    With ``convention="rotational"`` theta is the polar angle on ``(0, pi)``
    and phi the azimuth on ``(0, 2 pi)``, so the rotational field is
    ``d/dphi``.  ``"meridian"`` swaps the roles (phi polar, theta azimuth),
    making ``d/dphi`` the unit meridian field.
    """
    rng = np.random.default_rng(seed)
    if convention == "rotational":
        theta = rng.uniform(0, np.pi, n)
        phi = rng.uniform(0, 2 * np.pi, n)
    else:
        theta = rng.uniform(0, 2 * np.pi, n)
        phi = rng.uniform(0, np.pi, n)
    X = _embed(theta, phi, convention)
    truth = sphere_truth(theta, phi)
    return SimulatedData(X, X, truth, truth + _noise(rng, n, tau2), np.column_stack([theta, phi]))


def simulate_mesh(mesh, n, tau2, seed, truth=mesh_truth):
    """Area-uniform barycentric locations with noisy ambient truth."""
    rng = np.random.default_rng(seed)
    pts = sample_barycentric(mesh, n, rng)
    xyz = pts.ambient(mesh)
    mu = truth(xyz)
    return SimulatedData(pts, xyz, mu, mu + _noise(rng, n, tau2), mesh=mesh)


def simulate_circle(n, tau2, seed, truth=lambda t: np.sin(2 * np.pi * t)):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 1, n)
    mu = truth(theta)
    xyz = np.column_stack([np.cos(2 * np.pi * theta), np.sin(2 * np.pi * theta)])
    return SimulatedData(theta, xyz, mu, mu + _noise(rng, n, tau2))


# ------------------------------------------------------------------ grids

@dataclass
class Grid:
    """Prediction locations with their tangent vectors and truths."""

    points: object
    xyz: np.ndarray
    vectors: np.ndarray
    truth: np.ndarray = None
    chart: np.ndarray = None
    errors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.xyz)


def sphere_grid(n_theta=30, n_phi=30, convention="rotational"):
    """Equally spaced chart grid: polar ``(i + 1/2) pi / n``, azimuth ``2 pi j / n``.

    The field is ``d/dphi``: the rotational field ``(-x2, x1, 0)`` or, for
    ``convention="meridian"``, the unit meridian field.
    """
    polar = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    azim = 2 * np.pi * np.arange(n_phi) / n_phi
    if convention == "rotational":
        T, P = np.meshgrid(polar, azim, indexing="ij")
    else:
        P, T = np.meshgrid(polar, azim, indexing="ij")
    T, P = T.ravel(), P.ravel()
    X = _embed(T, P, convention)
    if convention == "rotational":
        V = rotational_field(X)
    else:
        V = np.stack([np.cos(P) * np.cos(T), np.cos(P) * np.sin(T), -np.sin(P)], axis=-1)
    return Grid(X, X, V, sphere_truth_derivative(T, P), np.column_stack([T, P]))


def mesh_grid(mesh, n_grid, reference=(1.0, 0.0, 0.0), seed=0, n_dense=DENSE_GRID_SAMPLES,
              truth_gradient=mesh_truth_gradient):
    """FPS grid of ``n_grid`` points from a dense area-uniform sample.

    Vectors come from projecting ``reference`` onto vertex tangent planes and
    interpolating; points whose field is degenerate are dropped and listed in
    ``errors``.
    """
    dense = sample_barycentric(mesh, max(n_dense, n_grid), seed)
    idx = farthest_point_sample(dense.ambient(mesh), n_grid)
    pts = dense[idx]
    fld = project_reference_field(mesh, reference)
    keep, vecs, errors = [], [], {}
    for i in range(len(pts)):
        try:
            vecs.append(interpolate_tangent_field(mesh, fld, pts[i]))
            keep.append(i)
        except DegenerateFieldError as exc:
            errors[int(idx[i])] = str(exc)
    keep = np.asarray(keep, dtype=int)
    pts = BaryPoints(pts.faces[keep], pts.coords[keep])
    xyz = pts.ambient(mesh)
    V = np.asarray(vecs).reshape(-1, 3)
    truth = None
    if truth_gradient is not None:
        truth = np.einsum("ij,ij->i", truth_gradient(xyz), V)
    return Grid(pts, xyz, V, truth, errors=errors)


# ------------------------------------------------------------ experiments

@dataclass
class ExperimentResult:
    data: SimulatedData
    grid: Grid
    draws: object
    summary: object
    coverage: float
    timings: dict
    extra: dict = field(default_factory=dict)


def _alpha_center(diameter):
    # inverse length scale whose length is a fifth of the diameter
    return 5.0 / diameter


def run_sphere_experiment(n=1000, tau2=1.0, T=20, nu=2.0, grid_size=30, sampler=None, seed=0,
                          priors=None, convention="rotational"):
    """Legendre-Matérn fit on the unit sphere and coverage of ``D_V mu``."""
    t0 = time.perf_counter()
    sampler = sampler or SamplerConfig(seed=seed)
    data = simulate_sphere(n, tau2, seed, convention)
    spec = KernelSpec("sphere-catalog", name="truncated-legendre-matern", alpha=1.0, nu=nu,
                      truncation=T)
    priors = priors or Priors.weakly_informative(data.y, _alpha_center(2.0))
    draws = mh_sample(priors, spec, None, data.dataset(), sampler)
    t1 = time.perf_counter()
    grid = sphere_grid(grid_size, grid_size, convention)
    pred = sphere_gradient_predictor(spec, data.points, grid.points, grid.vectors)
    summary = predictive_gradient(draws, pred, data.y, seed=seed, truth=grid.truth)
    t2 = time.perf_counter()
    return ExperimentResult(data, grid, draws, summary, coverage_report(summary, grid.truth),
                            {"fit": t1 - t0, "predict": t2 - t1})


def run_mesh_experiment(mesh=None, n=1000, tau2=1.0, T=200, nu=2.0, n_grid=400,
                        reference=(1.0, 0.0, 0.0), sampler=None, seed=0, spectrum=None,
                        priors=None, data=None):
    """Spectral Matérn fit on a mesh and coverage of the projected-field derivative.

    ``T`` is the number of eigenpairs used.
    """
    t0 = time.perf_counter()
    mesh = mesh if mesh is not None else load_bunny()
    sampler = sampler or SamplerConfig(seed=seed)
    if spectrum is None or spectrum.size < T:
        spectrum = compute_spectrum(assemble_laplacian(mesh), T)
    spectrum = spectrum.truncate(T - 1)
    data = data or simulate_mesh(mesh, n, tau2, seed)
    spec = KernelSpec("spectral-matern", alpha=1.0, nu=nu)
    priors = priors or Priors.weakly_informative(data.y, _alpha_center(mesh.diameter))
    t1 = time.perf_counter()
    draws = mh_sample(priors, spec, spectrum, data.dataset(), sampler)
    t2 = time.perf_counter()
    grid = mesh_grid(mesh, n_grid, reference, seed)
    pred = mesh_gradient_predictor(spec, spectrum, mesh, data.points, grid.points, grid.vectors)
    summary = predictive_gradient(draws, pred, data.y, seed=seed, truth=grid.truth)
    summary.errors.update(grid.errors)
    t3 = time.perf_counter()
    return ExperimentResult(data, grid, draws, summary, coverage_report(summary, grid.truth),
                            {"spectrum": t1 - t0, "fit": t2 - t1, "predict": t3 - t2},
                            {"spectrum": spectrum})


def run_circle_experiment(n=200, tau2=0.01, count=41, nu=2.0, n_grid=50, sampler=None, seed=0):
    """Single-harmonic truth on the circle; scores ``D_V`` and ``D^2_{U,V}`` coverage."""
    t0 = time.perf_counter()
    sampler = sampler or SamplerConfig(seed=seed)
    data = simulate_circle(n, tau2, seed)
    spectrum = analytic_circle_spectrum(count)
    spec = KernelSpec("spectral-matern", alpha=1.0, nu=nu)
    priors = Priors.weakly_informative(data.y, _alpha_center(0.5))
    draws = mh_sample(priors, spec, spectrum, data.dataset(), sampler)
    grid_theta = np.arange(n_grid) / n_grid
    dv_truth = 2 * np.pi * np.cos(2 * np.pi * grid_theta)
    duv_truth = -(2 * np.pi) ** 2 * np.sin(2 * np.pi * grid_theta)
    dv, duv = predictive_curvature_circle(draws, spec, spectrum, data.dataset(), grid_theta,
                                          seed=seed, truth_dv=dv_truth, truth_duv=duv_truth)
    grid = Grid(grid_theta, np.column_stack([np.cos(2 * np.pi * grid_theta),
                                             np.sin(2 * np.pi * grid_theta)]),
                np.ones((n_grid, 1)), dv_truth)
    return ExperimentResult(data, grid, draws, dv, coverage_report(dv, dv_truth),
                            {"total": time.perf_counter() - t0},
                            {"curvature": duv, "curvature_coverage": coverage_report(duv, duv_truth)})
