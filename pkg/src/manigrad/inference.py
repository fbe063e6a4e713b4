"""Bayesian inference for the process and its differential processes.

Model::

    y_i = beta0 + Z(x_i) + eps_i,   Z ~ GP(0, sigma2 R_alpha),  eps_i ~ N(0, tau2)

Integrating ``Z`` out gives the collapsed likelihood
``y - beta0 ~ N(0, v (rho R + (1 - rho) I))`` with ``v = sigma2 + tau2`` and
``rho = sigma2 / v``.  Priors are ``v ~ IG``, ``rho ~ Beta``, ``alpha ~ IG``
and either a flat or a normal prior on ``beta0``; ``nu`` is held fixed.

Hyperparameters are sampled by componentwise adaptive random-walk
Metropolis on ``(log v, logit rho, log alpha)`` with ``beta0`` drawn from its
Gaussian full conditional.  Each retained draw then yields one draw of the
derivative (or curvature) process at every grid point.
"""

import csv
import math
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, special

from .diffcov import LegendreKernel, spectral_gradient_features
from .errors import ContractError, ConvergenceError, FactorizationError
from .geometry import as_bary_points, eigenfunction_values
from .kernels import (SPECTRAL_FAMILIES, basis_at, cholesky_with_jitter, circle_matern_eval,
                      legendre_series, sphere_angles, sphere_catalog_eval, spectral_truncation,
                      spectral_weights)

LOG2PI = math.log(2 * math.pi)


# ------------------------------------------------------------ parameters

@dataclass(frozen=True)
class HyperParams:
    """``sigma2 > 0``, ``alpha > 0``, ``tau2 >= 0``, fixed ``nu`` and mean ``beta0``."""

    sigma2: float
    alpha: float
    tau2: float
    nu: float = 2.0
    beta0: float = 0.0

    def __post_init__(self):
        if not self.sigma2 > 0 or not self.alpha > 0 or not self.tau2 >= 0:
            raise ContractError("need sigma2 > 0, alpha > 0 and tau2 >= 0")

    @property
    def v(self):
        return self.sigma2 + self.tau2

    @property
    def rho(self):
        return self.sigma2 / (self.sigma2 + self.tau2)

    @classmethod
    def from_v_rho(cls, v, rho, alpha, nu=2.0, beta0=0.0):
        if not v > 0 or not 0 < rho <= 1:
            raise ContractError("need v > 0 and rho in (0, 1]")
        return cls(sigma2=rho * v, alpha=alpha, tau2=(1 - rho) * v, nu=nu, beta0=beta0)


def _log_inv_gamma(x, a, b):
    return a * math.log(b) - special.gammaln(a) - (a + 1) * math.log(x) - b / x


def _log_beta(x, a, b):
    return ((a - 1) * math.log(x) + (b - 1) * math.log1p(-x)
            - (special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b)))


@dataclass(frozen=True)
class Priors:
    """Prior hyperparameters.

    ``v ~ IG(a_v, b_v)``, ``rho ~ Beta(a_rho, b_rho)``, ``alpha ~ IG(a_alpha, b_alpha)``.
    ``beta_mean``/``beta_var`` give a normal prior on ``beta0``; if both are
    ``None`` the prior is flat.  ``beta0_fixed`` pins ``beta0`` instead.
    """

    a_v: float = 2.0
    b_v: float = 1.0
    a_rho: float = 1.0
    b_rho: float = 1.0
    a_alpha: float = 2.0
    b_alpha: float = 1.0
    beta_mean: float = None
    beta_var: float = None
    beta0_fixed: float = None

    def __post_init__(self):
        for name in ("a_v", "b_v", "a_rho", "b_rho", "a_alpha", "b_alpha"):
            if not getattr(self, name) > 0:
                raise ContractError(f"prior hyperparameter {name} must be > 0")
        if (self.beta_mean is None) != (self.beta_var is None):
            raise ContractError("beta_mean and beta_var must be given together")
        if self.beta_var is not None and not self.beta_var > 0:
            raise ContractError("beta_var must be > 0")

    @classmethod
    def weakly_informative(cls, y, alpha_center, **kw):
        """Shape-2 inverse gammas with means ``var(y)`` (v) and ``alpha_center`` (alpha)."""
        var = float(np.var(y)) if len(y) > 1 else 1.0
        return cls(a_v=2.0, b_v=max(var, 1e-12), a_alpha=2.0, b_alpha=float(alpha_center), **kw)

    def log_density(self, v, rho, alpha, beta0=0.0):
        if not (v > 0 and 0 < rho < 1 and alpha > 0):
            return -np.inf
        out = (_log_inv_gamma(v, self.a_v, self.b_v) + _log_beta(rho, self.a_rho, self.b_rho)
               + _log_inv_gamma(alpha, self.a_alpha, self.b_alpha))
        if self.beta_var is not None:
            out += -0.5 * (LOG2PI + math.log(self.beta_var)
                           + (beta0 - self.beta_mean) ** 2 / self.beta_var)
        return out

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown prior fields {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------- models

@dataclass
class Dataset:
    """Observation locations and values.

    ``points`` are barycentric points (with ``mesh``), vertex indices, circle
    angles, or unit 3-vectors, matching the kernel family.
    """

    points: object
    y: np.ndarray
    mesh: object = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if len(self.y) != _npoints(self.points):
            raise ContractError("one observation per location is required")

    def __len__(self):
        return len(self.y)


def _npoints(points):
    if points is None:
        return 0
    if hasattr(points, "faces"):
        return len(points)
    return len(points)


class CorrelationModel:
    """Correlation matrix ``R_alpha`` of the data locations, cached per ``alpha``.

    Spectral kernels use their configured normalization (pointwise by
    default, which makes ``R`` a correlation matrix).
    """

    def __init__(self, spec, spectrum, data, cache_size=4):
        self.spec = spec.with_params(sigma2=1.0)
        self.spectrum = spectrum
        self.data = data
        self._cache = OrderedDict()
        self._cache_size = cache_size
        fam = spec.family
        n = len(data)
        if fam in SPECTRAL_FAMILIES:
            if spectrum is None:
                raise ContractError("spectral kernels need a spectrum")
            T = spectral_truncation(spec, spectrum)
            self._phi = basis_at(spectrum, data.points, data.mesh, T) if n else np.zeros((0, T + 1))
        elif fam == "sphere-catalog" and spec.name in ("legendre-matern", "truncated-legendre-matern"):
            X = np.atleast_2d(np.asarray(data.points, dtype=float)) if n else np.zeros((0, 3))
            self._X = X
            T = int(spec.truncation or 500)
            self._P = legendre_series(np.clip(X @ X.T, -1, 1), T)
        elif fam == "sphere-catalog":
            self._angles = sphere_angles(data.points, data.points) if n else np.zeros((0, 0))
        else:
            th = np.asarray(data.points, dtype=float)
            self._theta = th

    def __call__(self, alpha):
        key = float(alpha)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        R = self._compute(key)
        self._cache[key] = R
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return R

    def _compute(self, alpha):
        spec = self.spec.with_params(alpha=alpha)
        fam = spec.family
        if fam in SPECTRAL_FAMILIES:
            a = spectral_weights(spec, self.spectrum.eigenvalues[:self._phi.shape[1]], self.spectrum.dim)
            raw = (self._phi * a) @ self._phi.T
            if spec.normalization == "pointwise":
                d = 1 / np.sqrt(np.diag(raw))
                R = raw * np.outer(d, d)
            elif spec.normalization == "averaged":
                R = raw / np.mean(np.diag(raw))
            else:
                R = raw * self.spectrum.volume / a.sum()
        elif hasattr(self, "_P"):
            from .kernels import legendre_weights

            w = legendre_weights(spec, self._P.shape[-1] - 1)
            R = self._P @ (w / w.sum())
        elif hasattr(self, "_angles"):
            R = sphere_catalog_eval(spec, self._angles)
        else:
            R = circle_matern_eval(spec, self._theta[:, None], self._theta[None, :])
        R = 0.5 * (R + R.T)
        R.setflags(write=False)
        return R


def _factor(R, rho):
    S = rho * R + (1 - rho) * np.eye(len(R))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        L, _ = cholesky_with_jitter(S)
    return L


def _loglik_from_factor(L, r, v):
    n = len(r)
    if n == 0:
        return 0.0
    w = linalg.solve_triangular(L, r, lower=True, check_finite=False)
    logdet = 2 * np.log(np.diag(L)).sum() + n * math.log(v)
    return -0.5 * (n * LOG2PI + logdet + (w @ w) / v)


def collapsed_loglik(params, spec, spectrum, data, model=None):
    """Gaussian log-likelihood of ``y - beta0`` under ``v (rho R + (1 - rho) I)``."""
    if len(data) == 0:
        return 0.0
    model = model or CorrelationModel(spec, spectrum, data)
    R = model(params.alpha)
    L = _factor(R, params.rho)
    return _loglik_from_factor(L, data.y - params.beta0, params.v)


def log_posterior(params, priors, spec, spectrum, data, model=None):
    """Collapsed log-likelihood plus log prior; ``-inf`` outside the support."""
    try:
        v, rho, alpha = params.v, params.rho, params.alpha
    except (AttributeError, ZeroDivisionError):
        return -np.inf
    if not (v > 0 and 0 < rho < 1 and alpha > 0 and np.isfinite(v)):
        return -np.inf
    lp = priors.log_density(v, rho, alpha, params.beta0)
    if not np.isfinite(lp):
        return -np.inf
    try:
        return lp + collapsed_loglik(params, spec, spectrum, data, model)
    except FactorizationError:
        return -np.inf


# ---------------------------------------------------------------- sampler

@dataclass(frozen=True)
class SamplerConfig:
    iters: int = 2000
    burn_in: int = 500
    thin: int = 5
    seed: int = 0
    step_sizes: tuple = (0.3, 0.3, 0.3)
    target_accept: float = 0.3
    adapt: bool = True

    def __post_init__(self):
        if self.iters < 0 or self.burn_in < 0 or self.thin < 1:
            raise ContractError("need iters >= 0, burn_in >= 0, thin >= 1")
        if len(self.step_sizes) != 3 or min(self.step_sizes) <= 0:
            raise ContractError("step_sizes must be three positive numbers")

    def to_dict(self):
        d = asdict(self)
        d["step_sizes"] = list(self.step_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown sampler fields {sorted(unknown)}")
        if "step_sizes" in d:
            d["step_sizes"] = tuple(d["step_sizes"])
        return cls(**d)


BLOCKS = ("v", "rho", "alpha")
DRAW_COLUMNS = ("iter", "sigma2", "tau2", "alpha", "beta0", "v", "rho", "loglik", "logpost")


@dataclass
class PosteriorDraws:
    """Retained MCMC draws and diagnostics."""

    iters: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    alpha: np.ndarray
    beta0: np.ndarray
    loglik: np.ndarray
    logpost: np.ndarray
    nu: float = 2.0
    acceptance: dict = field(default_factory=dict)
    step_sizes: tuple = ()
    seed: int = None

    def __len__(self):
        return len(self.sigma2)

    @property
    def v(self):
        return self.sigma2 + self.tau2

    @property
    def rho(self):
        return self.sigma2 / self.v

    def params(self, i):
        return HyperParams(float(self.sigma2[i]), float(self.alpha[i]), float(self.tau2[i]),
                           self.nu, float(self.beta0[i]))

    def quantiles(self, probs=(0.025, 0.5, 0.975)):
        return {name: np.quantile(getattr(self, name), probs)
                for name in ("sigma2", "tau2", "alpha", "beta0")}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DRAW_COLUMNS)
            for i in range(len(self)):
                w.writerow([int(self.iters[i])] + [repr(float(x)) for x in (
                    self.sigma2[i], self.tau2[i], self.alpha[i], self.beta0[i], self.v[i],
                    self.rho[i], self.loglik[i], self.logpost[i])])

    @classmethod
    def from_csv(cls, path, nu=2.0):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ContractError(f"{path}: no draws")
        col = {k: np.array([float(r[k]) for r in rows]) for k in DRAW_COLUMNS}
        return cls(col["iter"].astype(int), col["sigma2"], col["tau2"], col["alpha"],
                   col["beta0"], col["loglik"], col["logpost"], nu=nu)


def _logit(p):
    return math.log(p) - math.log1p(-p)


def _expit(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


class _Chain:
    def __init__(self, priors, spec, spectrum, data, model):
        self.priors = priors
        self.spec = spec
        self.data = data
        self.model = model
        self.nu = spec.nu

    def evaluate(self, z, beta0, L=None):
        """Log target on the unconstrained scale (with Jacobian) and its factor.

        ``L`` reuses a factor already computed for the same ``(rho, alpha)``.
        """
        try:
            v, rho, alpha = math.exp(z[0]), _expit(z[1]), math.exp(z[2])
        except OverflowError:
            return -np.inf, None, -np.inf
        if not (0 < rho < 1) or not np.isfinite(v) or not np.isfinite(alpha) or v <= 0 or alpha <= 0:
            return -np.inf, None, -np.inf
        lp = self.priors.log_density(v, rho, alpha, beta0)
        if not np.isfinite(lp):
            return -np.inf, None, -np.inf
        if L is None:
            try:
                with np.errstate(all="ignore"):
                    R = self.model(alpha)
                if not np.isfinite(R).all():
                    return -np.inf, None, -np.inf
                L = _factor(R, rho)
            except (FactorizationError, OverflowError):
                return -np.inf, None, -np.inf
        ll = _loglik_from_factor(L, self.data.y - beta0, v)
        if not np.isfinite(ll):
            return -np.inf, None, -np.inf
        jac = z[0] + math.log(rho) + math.log1p(-rho) + z[2]
        return lp + ll + jac, L, ll

    def draw_beta0(self, z, L, rng):
        p = self.priors
        if p.beta0_fixed is not None:
            return float(p.beta0_fixed)
        v = math.exp(z[0])
        one = linalg.solve_triangular(L, np.ones(len(self.data)), lower=True, check_finite=False)
        wy = linalg.solve_triangular(L, self.data.y, lower=True, check_finite=False)
        prec = (one @ one) / v
        lin = (one @ wy) / v
        if p.beta_var is not None:
            prec += 1 / p.beta_var
            lin += p.beta_mean / p.beta_var
        return float(lin / prec + rng.standard_normal() / math.sqrt(prec))


def mh_sample(priors, spec, spectrum, data, config=SamplerConfig(), init=None, model=None):
    """Adaptive componentwise random-walk Metropolis for ``(v, rho, alpha)``.

    Proposal scales adapt by Robbins-Monro toward ``config.target_accept``
    during burn-in only.  ``beta0`` is Gibbs-updated from its Gaussian full
    conditional each sweep (unless fixed by the priors).  Draws after
    burn-in are kept every ``thin`` iterations; with ``iters=0`` the initial
    state is returned.

    Raises
    ------
    ConvergenceError
        If every block rejects every proposal after burn-in.
    """
    if len(data) == 0:
        raise ContractError("mh_sample needs at least one observation")
    model = model or CorrelationModel(spec, spectrum, data)
    chain = _Chain(priors, spec, spectrum, data, model)
    rng = np.random.default_rng(config.seed)
    if init is None:
        var = float(np.var(data.y)) if len(data) > 1 else 1.0
        init = HyperParams.from_v_rho(max(var, 1e-8), 0.5, priors.b_alpha / max(priors.a_alpha - 1, 1),
                                      spec.nu, float(np.mean(data.y)))
    beta0 = init.beta0 if priors.beta0_fixed is None else float(priors.beta0_fixed)
    z = np.array([math.log(init.v), _logit(min(max(init.rho, 1e-6), 1 - 1e-6)), math.log(init.alpha)])
    lp, L, ll = chain.evaluate(z, beta0)
    if not np.isfinite(lp):
        raise ContractError("initial state has zero posterior density")
    log_step = np.log(np.asarray(config.step_sizes, dtype=float))
    accepted = np.zeros(3, dtype=int)
    proposed = np.zeros(3, dtype=int)
    keep = []

    def record(it):
        v, rho, alpha = math.exp(z[0]), _expit(z[1]), math.exp(z[2])
        logpost = lp - (z[0] + math.log(rho) + math.log1p(-rho) + z[2])
        keep.append((it, rho * v, (1 - rho) * v, alpha, beta0, ll, logpost))

    if config.iters == 0:
        record(0)
    for it in range(1, config.iters + 1):
        for b in range(3):
            zp = z.copy()
            zp[b] += math.exp(log_step[b]) * rng.standard_normal()
            lpp, Lp, llp = chain.evaluate(zp, beta0)
            acc = math.log(rng.random()) < lpp - lp
            if acc:
                z, lp, L, ll = zp, lpp, Lp, llp
            if it > config.burn_in:
                proposed[b] += 1
                accepted[b] += acc
            elif config.adapt:
                gain = min(1.0, 10.0 / (it + 10.0) ** 0.6)
                log_step[b] += gain * ((1.0 if acc else 0.0) - config.target_accept)
        if priors.beta0_fixed is None:
            beta0 = chain.draw_beta0(z, L, rng)
            lp, L, ll = chain.evaluate(z, beta0, L)
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            record(it)
    rates = {name: (accepted[i] / proposed[i] if proposed[i] else float("nan"))
             for i, name in enumerate(BLOCKS)}
    if proposed.sum() > 0 and accepted.sum() == 0:
        raise ConvergenceError("every proposal was rejected after burn-in",
                               diagnostics={"acceptance": rates,
                                            "step_sizes": np.exp(log_step).tolist()})
    cols = list(zip(*keep)) if keep else [[]] * 7
    arr = [np.asarray(c, dtype=float) for c in cols]
    return PosteriorDraws(arr[0].astype(int), arr[1], arr[2], arr[3], arr[4], arr[5], arr[6],
                          nu=spec.nu, acceptance=rates, step_sizes=tuple(np.exp(log_step)),
                          seed=config.seed)


def geweke_z(chain, first=0.1, last=0.5):
    """Mean-split z-score comparing the first and last parts of a chain.

    Variances use batch means to allow for autocorrelation.
    """
    x = np.asarray(chain, dtype=float)
    n = len(x)
    a = x[: max(2, int(first * n))]
    b = x[n - max(2, int(last * n)):]

    def var_mean(s):
        m = len(s)
        nb = max(2, int(math.sqrt(m)))
        size = m // nb
        if size < 1:
            return np.var(s, ddof=1) / m
        means = s[: nb * size].reshape(nb, size).mean(axis=1)
        return np.var(means, ddof=1) / nb

    denom = math.sqrt(var_mean(a) + var_mean(b))
    if denom == 0:
        return 0.0
    return float((a.mean() - b.mean()) / denom)


# ------------------------------------------------------------- predictors

class MeshGradientPredictor:
    """Blocks for ``D_V Z`` at mesh grid points from a spectral kernel.

    Prediction uses one normalizing constant ``C~`` (the mean of ``C(x_j)``
    over the data) for every block, so the joint covariance is consistent
    and predictive means do not depend on the scale of the spectral weights.
    """

    def __init__(self, spec, spectrum, mesh, data_points, grid_points, grid_vectors):
        self.spec = spec
        self.spectrum = spectrum
        T = spectral_truncation(spec, spectrum)
        pts = as_bary_points(data_points)
        self.phi = eigenfunction_values(mesh, spectrum, pts, T) if len(pts) else np.zeros((0, T + 1))
        self.grad = spectral_gradient_features(spec, spectrum, mesh, grid_points, grid_vectors)
        self.n_grid = len(self.grad)

    def blocks(self, alpha):
        spec = self.spec.with_params(alpha=alpha)
        a = spectral_weights(spec, self.spectrum.eigenvalues[:self.grad.shape[1]], self.spectrum.dim)
        C = float(np.mean((self.phi ** 2) @ a)) if len(self.phi) else float(a.sum() / self.spectrum.volume)
        Rzz = (self.phi * a) @ self.phi.T / C
        cross = (self.phi * a) @ self.grad.T / C
        prior = (self.grad ** 2) @ a / C
        return Rzz, cross[:, :, None], prior[:, None, None]


class SphereGradientPredictor:
    """Closed-form blocks for ``D_V Z`` on the unit sphere (Legendre-Matérn kernels)."""

    def __init__(self, spec, data_X, grid_X, grid_V):
        self.spec = spec
        self.T = int(spec.truncation)
        X = np.atleast_2d(np.asarray(data_X, float)) if len(data_X) else np.zeros((0, 3))
        X0 = np.atleast_2d(np.asarray(grid_X, float))
        V0 = np.atleast_2d(np.asarray(grid_V, float))
        self.n_grid = len(X0)
        self.P = legendre_series(np.clip(X @ X.T, -1, 1), self.T)
        _, self.D1 = legendre_series(np.clip(X @ X0.T, -1, 1), self.T, deriv=1)
        self.xv = X @ V0.T
        self.vv = np.einsum("ij,ij->i", V0, V0)

    def blocks(self, alpha):
        k = LegendreKernel(self.spec.with_params(alpha=alpha, sigma2=1.0))
        w = k.weights / k.C
        Rzz = self.P @ w
        cross = (self.D1 @ w) * self.xv
        prior = -self.vv * k.d2_zero
        return Rzz, cross[:, :, None], prior[:, None, None]


class CirclePredictor:
    """Spectral blocks for ``(D_V Z, D^2_{U,V} Z)`` on the analytic circle."""

    def __init__(self, spec, spectrum, data_theta, grid_theta, V=1.0, U=1.0, curvature=True):
        self.spec = spec
        self.spectrum = spectrum
        T = spectral_truncation(spec, spectrum)
        self.phi = spectrum.values(np.asarray(data_theta, float), 0, T)
        g = [V * spectrum.values(grid_theta, 1, T)]
        if curvature:
            g.append(V * U * spectrum.values(grid_theta, 2, T))
        self.feats = np.stack(g, axis=-1)  # (G, T+1, q)
        self.n_grid = len(self.feats)

    def blocks(self, alpha):
        spec = self.spec.with_params(alpha=alpha)
        a = spectral_weights(spec, self.spectrum.eigenvalues[:self.phi.shape[1]], 1)
        C = float(a.sum())
        Rzz = (self.phi * a) @ self.phi.T / C
        cross = np.einsum("nl,l,glq->ngq", self.phi, a, self.feats) / C
        prior = np.einsum("glq,l,glr->gqr", self.feats, a, self.feats) / C
        return Rzz, cross, prior


def mesh_gradient_predictor(spec, spectrum, mesh, data_points, grid_points, grid_vectors):
    return MeshGradientPredictor(spec, spectrum, mesh, data_points, grid_points, grid_vectors)


def sphere_gradient_predictor(spec, data_X, grid_X, grid_V):
    return SphereGradientPredictor(spec, data_X, grid_X, grid_V)


@dataclass
class PredictiveSummary:
    """Per-grid-point posterior predictive summary of one differential process."""

    mean: np.ndarray
    var: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    draws: np.ndarray = None
    truth: np.ndarray = None
    errors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.mean)

    @property
    def covered(self):
        if self.truth is None:
            return None
        return (self.lo95 <= self.truth) & (self.truth <= self.hi95)

    @property
    def coverage(self):
        return None if self.truth is None else coverage_report(self, self.truth)

    def to_csv(self, path, grid_ids=None):
        ids = np.arange(len(self)) if grid_ids is None else np.asarray(grid_ids)
        cov = self.covered
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid_id", "mean", "var", "lo95", "hi95", "truth", "covered"])
            for i in range(len(self)):
                truth = "" if self.truth is None else repr(float(self.truth[i]))
                c = "" if cov is None else int(bool(cov[i]))
                w.writerow([int(ids[i]), repr(float(self.mean[i])), repr(float(self.var[i])),
                            repr(float(self.lo95[i])), repr(float(self.hi95[i])), truth, c])


def coverage_report(summary, truth):
    """Fraction of grid points whose 95% interval contains the truth.

    Points with a NaN interval (failed predictions) are ignored.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (len(summary),):
        raise ContractError(f"truth has {truth.size} values for {len(summary)} grid points")
    ok = ~(np.isnan(summary.lo95) | np.isnan(summary.hi95))
    if not ok.any():
        return float("nan")
    inside = (summary.lo95 <= truth) & (truth <= summary.hi95)
    return float(inside[ok].mean())


def conditional_moments(params, blocks, y):
    """Mean (G, q) and covariance (G, q, q) of ``W(x0)`` given noisy data ``y``.

    ``blocks`` are the per-unit-``sigma2`` matrices ``(Rzz, cross, prior)``
    returned by a predictor's ``blocks(alpha)``.
    """
    Rzz, cross, prior = blocks
    G, q = prior.shape[0], prior.shape[1]
    y = np.asarray(y, dtype=float)
    p = params
    if not len(y):
        return np.zeros((G, q)), p.sigma2 * prior
    S = p.sigma2 * Rzz + p.tau2 * np.eye(len(y))
    L, _ = cholesky_with_jitter(0.5 * (S + S.T))
    w = linalg.solve_triangular(L, y - p.beta0, lower=True, check_finite=False)
    Wc = linalg.solve_triangular(L, p.sigma2 * cross.reshape(len(y), -1), lower=True,
                                 check_finite=False).reshape(len(y), G, q)
    mean = np.einsum("ngq,n->gq", Wc, w)
    cov = p.sigma2 * prior - np.einsum("ngq,ngr->gqr", Wc, Wc)
    return mean, cov


def predictive_draws(draws, predictor, y, seed=0):
    """One-for-one predictive draws, shape (n_draws, G, q).

    For each retained hyperparameter draw, conditions the joint Gaussian of
    ``(Z + noise, W(x0))`` on ``y - beta0`` and samples ``W`` at every grid
    point (jointly over the ``q`` components at a point).
    """
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(seed)
    out = None
    cache = {}
    for i in range(len(draws)):
        p = draws.params(i)
        if p.alpha not in cache:
            cache.clear()
            cache[p.alpha] = predictor.blocks(p.alpha)
        mean, cov = conditional_moments(p, cache[p.alpha], y)
        G, q = mean.shape
        if out is None:
            out = np.empty((len(draws), G, q))
        if q == 1:
            sd = np.sqrt(np.clip(cov[:, 0, 0], 0, None))
            out[i, :, 0] = mean[:, 0] + sd * rng.standard_normal(G)
        else:
            cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
            wv, U = np.linalg.eigh(cov)
            root = U * np.sqrt(np.clip(wv, 0, None))[:, None, :]
            out[i] = mean + np.einsum("gqr,gr->gq", root, rng.standard_normal((G, q)))
    return out


def summarize(samples, truth=None):
    """Mean, variance and equal-tailed 95% interval over draws (axis 0)."""
    samples = np.asarray(samples, dtype=float)
    lo, hi = np.quantile(samples, [0.025, 0.975], axis=0)
    return PredictiveSummary(samples.mean(axis=0), samples.var(axis=0), lo, hi, samples,
                             None if truth is None else np.asarray(truth, float))


def predictive_gradient(draws, predictor, y, seed=0, truth=None):
    """Posterior predictive summary of ``D_V Z`` at the predictor's grid."""
    if len(draws) == 0:
        raise ContractError("no posterior draws")
    s = predictive_draws(draws, predictor, y, seed)
    return summarize(s[:, :, 0], truth)


def predictive_curvature_circle(draws, spec, spectrum, data, grid, V=1.0, U=1.0, seed=0,
                                truth_dv=None, truth_duv=None):
    """Predictive summaries of ``D_V Z`` and ``D^2_{U,V} Z`` on the circle.

    Returns ``(dv_summary, duv_summary)``.
    """
    if len(draws) == 0:
        raise ContractError("no posterior draws")
    pred = CirclePredictor(spec, spectrum, data.points if len(data) else np.zeros(0), grid, V, U)
    s = predictive_draws(draws, pred, data.y, seed)
    return summarize(s[:, :, 0], truth_dv), summarize(s[:, :, 1], truth_duv)
