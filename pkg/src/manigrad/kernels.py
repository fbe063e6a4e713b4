"""Covariance models on compact manifolds.

Three kinds of kernel are supported:

* spectral Matérn / RBF kernels built from a truncated Laplace-Beltrami
  spectrum (meshes or the analytic circle);
* the closed-form Matérn kernels on the unit-circumference circle for
  ``nu = s + 1/2``, ``s in {0, 1, 2}``;
* a catalog of isotropic covariances on the two-sphere, written as functions
  of the geodesic angle ``t``.
"""

import math
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import linalg, special

from .errors import ContractError, FactorizationError

SPECTRAL_FAMILIES = ("spectral-matern", "spectral-rbf")
FAMILIES = SPECTRAL_FAMILIES + ("circle-matern", "sphere-catalog")
NORMALIZATIONS = ("pointwise", "averaged", "global")

CATALOG = (
    "chordal-matern",
    "circular-matern",
    "legendre-matern",
    "truncated-legendre-matern",
    "bernoulli",
    "powered-exponential",
    "generalized-cauchy",
    "multiquadric",
    "sine-power",
    "spherical",
    "askey",
    "c2-wendland",
    "c4-wendland",
)
SERIES_ROWS = ("circular-matern", "legendre-matern", "truncated-legendre-matern")
DEFAULT_SERIES_T = 500

JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    """Description of a covariance model.

    Parameters
    ----------
    family : str
        ``"spectral-matern"``, ``"spectral-rbf"``, ``"circle-matern"`` or
        ``"sphere-catalog"``.
    sigma2, alpha, nu : float
        Variance, inverse length scale and smoothness.
    truncation : int, optional
        ``T``; the kernel sums ``l = 0..T``.  Required for spectral families
        and the truncated Legendre-Matérn row; series catalog rows default to
        500.
    name : str, optional
        Catalog row (``sphere-catalog`` only), one of :data:`CATALOG`.
    s : int, optional
        Circle closed-form order, ``nu = s + 1/2``.
    tau, n : optional
        Extra catalog parameters (Cauchy/multiquadric/Askey/Wendland ``tau``,
        Bernoulli ``n``).
    normalization : str
        Spectral families: ``"pointwise"`` uses ``C(x) = sum a_l f_l(x)^2``
        symmetrically, ``"averaged"`` a single constant ``C~`` (mean of
        ``C(x_j)`` over supplied points), ``"global"`` the manifold average
        ``sum a_l / vol``.
    weight_scale : float
        Multiplies every spectral weight ``a_l``.  Normalized kernels do not
        depend on it.
    legendre_form : str
        ``"l(l+1)"`` (default) or ``"l^2"`` for the Legendre-Matérn weights
        ``(alpha^2 + lambda_l)^(-nu-1/2)``.
    """

    family: str
    sigma2: float = 1.0
    alpha: float = 1.0
    nu: float = 2.0
    truncation: int = None
    name: str = None
    s: int = None
    tau: float = None
    n: int = None
    normalization: str = "pointwise"
    weight_scale: float = 1.0
    legendre_form: str = "l(l+1)"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.sigma2 > 0:
            raise ContractError("sigma2 must be > 0")
        if self.normalization not in NORMALIZATIONS:
            raise ContractError(f"normalization must be one of {NORMALIZATIONS}")
        if not self.weight_scale > 0:
            raise ContractError("weight_scale must be > 0")
        if self.legendre_form not in ("l(l+1)", "l^2"):
            raise ContractError("legendre_form must be 'l(l+1)' or 'l^2'")
        if self.truncation is not None and int(self.truncation) < 0:
            raise ContractError("truncation must be >= 0")
        if self.family in SPECTRAL_FAMILIES:
            _positive(self, "alpha")
            if self.family == "spectral-matern":
                _positive(self, "nu")
        elif self.family == "circle-matern":
            if self.s not in (0, 1, 2):
                raise ContractError("circle-matern needs s in {0, 1, 2}")
            _positive(self, "alpha")
            object.__setattr__(self, "nu", self.s + 0.5)
        else:
            _validate_catalog(self)

    def with_params(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown kernel fields {sorted(unknown)}")
        return cls(**d)


def _positive(spec, attr):
    if not getattr(spec, attr) > 0:
        raise ContractError(f"{attr} must be > 0")


def _validate_catalog(spec):
    name = spec.name
    if name not in CATALOG:
        raise ContractError(f"unknown catalog kernel {name!r}; expected one of {CATALOG}")
    a, nu, tau = spec.alpha, spec.nu, spec.tau

    def need(cond, msg):
        if not cond:
            raise ContractError(f"{name}: {msg}")

    if name != "sine-power":
        need(a > 0, "alpha must be > 0")
    if name in ("chordal-matern", "circular-matern", "legendre-matern", "truncated-legendre-matern"):
        need(nu > 0, "nu must be > 0")
    if name == "truncated-legendre-matern":
        need(spec.truncation is not None, "truncation T is required")
    if name == "bernoulli":
        need(spec.n is not None and int(spec.n) == spec.n and spec.n >= 1,
             "n must be a positive integer")
    if name in ("powered-exponential", "generalized-cauchy"):
        need(0 < nu <= 1, "nu must be in (0, 1]")
    if name == "generalized-cauchy":
        need(tau is not None and tau > 0, "tau must be > 0")
    if name == "multiquadric":
        need(tau is not None and 0 < tau < 1, "tau must be in (0, 1)")
    if name == "sine-power":
        need(0 < nu < 2, "nu must be in (0, 2)")
    if name == "askey":
        need(tau is not None and tau >= 2, "tau must be >= 2")
    if name == "c2-wendland":
        need(a >= 1 / np.pi, "alpha must be >= 1/pi")
        need(tau is not None and tau >= 4, "tau must be >= 4")
    if name == "c4-wendland":
        need(a >= 1 / np.pi, "alpha must be >= 1/pi")
        need(tau is not None and tau >= 6, "tau must be >= 6")


# ---------------------------------------------------------------- Legendre

def legendre_series(x, T, deriv=0):
    """``P_l(x)`` for ``l = 0..T`` by the three-term recurrence.

    Returns an array of shape ``x.shape + (T+1,)``; with ``deriv=1`` or ``2``
    returns a tuple with the first (and second) derivatives as well, from
    ``P'_{l+1} = P'_{l-1} + (2l+1) P_l`` and its derivative.
    """
    x = np.asarray(x, dtype=float)
    T = int(T)
    P = np.empty(x.shape + (T + 1,))
    P[..., 0] = 1.0
    if T >= 1:
        P[..., 1] = x
    for l in range(1, T):
        P[..., l + 1] = ((2 * l + 1) * x * P[..., l] - l * P[..., l - 1]) / (l + 1)
    if deriv == 0:
        return P
    D1 = np.zeros_like(P)
    if T >= 1:
        D1[..., 1] = 1.0
    for l in range(1, T):
        D1[..., l + 1] = D1[..., l - 1] + (2 * l + 1) * P[..., l]
    if deriv == 1:
        return P, D1
    D2 = np.zeros_like(P)
    for l in range(1, T):
        D2[..., l + 1] = D2[..., l - 1] + (2 * l + 1) * D1[..., l]
    return P, D1, D2


def legendre_eval(l, x, derivative=False):
    """Legendre polynomial ``P_l(x)``; with ``derivative=True`` also ``P_l'(x)``.

    The derivative uses ``P_l' = l (x P_l - P_{l-1}) / (x^2 - 1)`` away from the
    endpoints and the limit ``P_l'(+-1) = (+-1)^(l+1) l (l+1) / 2`` at them.
    """
    l = int(l)
    if l < 0:
        raise ContractError("degree must be >= 0")
    x = float(x)
    p_prev, p = 1.0, x
    if l == 0:
        p, p_prev = 1.0, 0.0
    else:
        for k in range(1, l):
            p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    if not derivative:
        return p
    if l == 0:
        return p, 0.0
    if abs(1 - x * x) < 1e-12:
        sign = 1.0 if x > 0 else (-1.0) ** (l + 1)
        return p, sign * l * (l + 1) / 2
    return p, l * (x * p - p_prev) / (x * x - 1)


def legendre_weights(spec, T=None):
    """Legendre-Matérn weights ``(alpha^2 + lambda_l)^(-nu-1/2)``, ``l = 0..T``."""
    T = spec.truncation if T is None else T
    l = np.arange(int(T) + 1, dtype=float)
    lam = l * (l + 1) if spec.legendre_form == "l(l+1)" else l ** 2
    return spec.weight_scale * (spec.alpha ** 2 + lam) ** (-spec.nu - 0.5)


# ------------------------------------------------------- spectral kernels

def spectral_weights(spec, eigenvalues, dim):
    """Spectral weights ``a_l`` (before normalization), scaled by ``weight_scale``."""
    lam = np.asarray(eigenvalues, dtype=float)
    if spec.family == "spectral-matern" or spec.family == "circle-matern":
        a = (spec.alpha ** 2 + lam) ** (-spec.nu - dim / 2.0)
    elif spec.family == "spectral-rbf":
        a = np.exp(-lam / (2 * spec.alpha ** 2))
    else:
        raise ContractError(f"family {spec.family!r} has no spectral weights")
    return spec.weight_scale * a


def spectral_truncation(spec, spectrum):
    T = spectrum.size - 1 if spec.truncation is None else int(spec.truncation)
    if T > spectrum.size - 1:
        raise ContractError(f"truncation T={T} exceeds spectrum with {spectrum.size} pairs")
    return T


def basis_at(spectrum, points, mesh=None, T=None, deriv=0):
    """Eigenfunction values at points, shape (n, T+1).

    Mesh spectra take vertex indices or barycentric points (``mesh``
    required for the latter); circle spectra take angles in ``[0, 1)``.
    """
    if spectrum.source == "circle-analytic":
        return spectrum.values(points, deriv=deriv, T=T)
    if deriv:
        raise ContractError("pointwise derivatives of mesh eigenfunctions need a direction")
    from .geometry import BaryPoint, BaryPoints, eigenfunction_values

    if isinstance(points, (BaryPoints, BaryPoint)) or (
            isinstance(points, list) and points and isinstance(points[0], BaryPoint)):
        if mesh is None:
            raise ContractError("barycentric points need the mesh")
        return eigenfunction_values(mesh, spectrum, points, T)
    return spectrum.at_vertices(np.atleast_1d(points), T)


def pointwise_constants(spec, spectrum, Phi):
    """``C(x) = sum_l a_l f_l(x)^2`` for each row of ``Phi``."""
    a = spectral_weights(spec, spectrum.eigenvalues[:Phi.shape[1]], spectrum.dim)
    return (Phi ** 2) @ a


def normalizing_constant(spec, spectrum, mode="averaged", points=None, mesh=None):
    """Normalizing constant of a spectral kernel.

    ``mode="pointwise"`` returns ``C(x)`` for each point, ``"averaged"`` the
    mean of ``C(x_j)`` over the points, ``"global"`` ``sum a_l / vol``.
    """
    T = spectral_truncation(spec, spectrum)
    if mode == "global":
        a = spectral_weights(spec, spectrum.eigenvalues[:T + 1], spectrum.dim)
        return float(a.sum() / spectrum.volume)
    if points is None or len(np.atleast_1d(points) if not hasattr(points, "faces") else points) == 0:
        raise ContractError("normalizing constant needs a nonempty point set")
    C = pointwise_constants(spec, spectrum, basis_at(spectrum, points, mesh, T))
    if mode == "pointwise":
        return C
    if mode == "averaged":
        return float(C.mean())
    raise ContractError(f"unknown normalization mode {mode!r}")


def spectral_cross(spec, spectrum, Phi_x, Phi_y, C_x=None, C_y=None, C=None):
    """Normalized spectral covariance between two feature blocks.

    ``Phi_x`` (n, T+1) and ``Phi_y`` (m, T+1) hold eigenfunction values.
    Pointwise normalization divides by ``sqrt(C(x) C(y))``; otherwise the
    scalar ``C`` is used (computed globally when omitted).
    """
    a = spectral_weights(spec, spectrum.eigenvalues[:Phi_x.shape[1]], spectrum.dim)
    raw = (Phi_x * a) @ Phi_y.T
    if spec.normalization == "pointwise" and C is None:
        if C_x is None:
            C_x = (Phi_x ** 2) @ a
        if C_y is None:
            C_y = (Phi_y ** 2) @ a
        return spec.sigma2 * raw / np.sqrt(np.outer(C_x, C_y))
    if C is None:
        C = float(a.sum() / spectrum.volume)
    return spec.sigma2 * raw / C


def spectral_kernel_eval(spec, spectrum, x, y, mesh=None, C=None):
    """``K(x, y)`` for a spectral family at single points (vertex, BaryPoint or angle)."""
    if spec.family not in SPECTRAL_FAMILIES:
        raise ContractError("spectral_kernel_eval needs a spectral family")
    T = spectral_truncation(spec, spectrum)
    px = basis_at(spectrum, _one(x), mesh, T)
    py = basis_at(spectrum, _one(y), mesh, T)
    return float(spectral_cross(spec, spectrum, px, py, C=C)[0, 0])


def _one(p):
    from .geometry import BaryPoint

    if isinstance(p, BaryPoint):
        return [p]
    return np.atleast_1d(p)


# --------------------------------------------------------- circle closed form

def wrapped_distance(tx, ty):
    d = np.abs(np.asarray(tx, float) - np.asarray(ty, float)) % 1.0
    return np.minimum(d, 1.0 - d)


def circle_matern_coefficients(s, alpha):
    """Coefficients ``(a_{s,0..s})`` and constant ``C_{s+1/2}`` of the closed forms."""
    a = float(alpha)
    coth = 1.0 / np.tanh(a / 2)
    ch, sh = np.cosh(a / 2), np.sinh(a / 2)
    if s == 0:
        return (1.0,), ch
    if s == 1:
        a10 = 2 * np.pi ** 2 / a ** 2 * (1 + a / 2 * coth)
        a11 = -2 * np.pi ** 2 / a ** 2
        return (a10, a11), a10 * ch + a11 * a / 2 * sh
    if s == 2:
        k = np.pi ** 4 / a ** 4
        a20 = k * (6 - a ** 2 / 2 + 3 * a * coth + a ** 2 * coth ** 2)
        a21 = -2 * k * (3 + a * coth)
        a22 = 2 * k
        return (a20, a21, a22), a20 * ch + a21 * a / 2 * sh + a22 * a ** 2 / 4 * ch
    raise ContractError("s must be 0, 1 or 2")


def circle_matern_eval(spec, theta_x, theta_y):
    """Closed-form circle Matérn ``K_{s+1/2}`` with ``u = alpha (d - 1/2)``.

    ``d`` is the wrapped chart distance in ``[0, 1/2]``.
    """
    if spec.family != "circle-matern":
        raise ContractError("circle_matern_eval needs the circle-matern family")
    d = wrapped_distance(theta_x, theta_y)
    u = spec.alpha * (d - 0.5)
    coef, C = circle_matern_coefficients(spec.s, spec.alpha)
    val = coef[0] * np.cosh(u)
    if spec.s >= 1:
        val = val + coef[1] * u * np.sinh(u)
    if spec.s >= 2:
        val = val + coef[2] * u ** 2 * np.cosh(u)
    out = spec.sigma2 * val / C
    return float(out) if np.ndim(out) == 0 else out


# ------------------------------------------------------------ sphere catalog

def _bernoulli_cos_series(n, t):
    """``sum_{l>=1} cos(l t) / l^(2n)`` on ``[0, 2 pi]`` via Bernoulli polynomials."""
    m = 2 * n
    B = special.bernoulli(m)
    x = t / (2 * np.pi)
    poly = sum(math.comb(m, k) * B[k] * x ** (m - k) for k in range(m + 1))
    return (-1) ** (n - 1) * (2 * np.pi) ** m / (2 * math.factorial(m)) * poly


def _circular_matern_raw(spec, t, T):
    l = np.arange(-T, T + 1, dtype=float)
    w = (spec.alpha ** 2 + l * (l + 1)) ** (-spec.nu - 0.5)
    t = np.atleast_1d(t)
    out = np.empty(t.shape)
    chunk = max(1, 2_000_000 // len(l))
    for i in range(0, t.size, chunk):
        tt = t.ravel()[i:i + chunk]
        out.ravel()[i:i + chunk] = np.cos(np.outer(tt, l)) @ w
    return out


def _catalog_raw(spec, t):
    name = spec.name
    a, nu, tau = spec.alpha, spec.nu, spec.tau
    t = np.asarray(t, dtype=float)
    if name == "chordal-matern":
        r = a * 2 * np.sin(t / 2)
        with np.errstate(invalid="ignore"):
            val = np.where(r > 0, r ** nu * special.kv(nu, np.maximum(r, 1e-300)), 0.0)
        limit = 2 ** (nu - 1) * special.gamma(nu)
        return np.where(r > 0, val, limit)
    if name == "circular-matern":
        return _circular_matern_raw(spec, t, spec.truncation or DEFAULT_SERIES_T)
    if name in ("legendre-matern", "truncated-legendre-matern"):
        T = spec.truncation if spec.truncation is not None else DEFAULT_SERIES_T
        return legendre_series(np.cos(t), T) @ legendre_weights(spec, T)
    if name == "bernoulli":
        return 1 + a + 2 * _bernoulli_cos_series(int(spec.n), t)
    if name == "powered-exponential":
        return np.exp(-(a * t) ** nu)
    if name == "generalized-cauchy":
        return (1 + (a * t) ** nu) ** (-tau / nu)
    if name == "multiquadric":
        return (1 - tau) ** (2 * a) / (1 + tau ** 2 - 2 * tau * np.cos(t)) ** a
    if name == "sine-power":
        return 1 - np.sin(t / 2) ** nu
    if name == "spherical":
        return (1 + a * t / 2) * np.clip(1 - a * t, 0, None) ** 2
    if name == "askey":
        return np.clip(1 - a * t, 0, None) ** tau
    if name == "c2-wendland":
        return (1 + tau * a * t) * np.clip(1 - a * t, 0, None) ** tau
    if name == "c4-wendland":
        return ((1 + tau * a * t + (tau ** 2 - 1) / 3 * (a * t) ** 2)
                * np.clip(1 - a * t, 0, None) ** tau)
    raise ContractError(f"unknown catalog kernel {name!r}")


def sphere_catalog_eval(spec, t):
    """Catalog covariance at geodesic angle(s) ``t`` in ``[0, pi]``.

    Values are scaled so that ``K(0) = sigma2``.
    """
    if spec.family != "sphere-catalog":
        raise ContractError("sphere_catalog_eval needs the sphere-catalog family")
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > np.pi + 1e-12):
        raise ContractError("geodesic angle must lie in [0, pi]")
    t = np.clip(t, 0.0, np.pi)
    k0 = _catalog_raw(spec, np.zeros(1))[0]
    out = spec.sigma2 * _catalog_raw(spec, t) / k0
    return float(out) if np.ndim(out) == 0 else out


def sphere_angles(X, Y):
    """Geodesic angles between rows of two unit-vector arrays, shape (n, m)."""
    G = np.atleast_2d(X) @ np.atleast_2d(Y).T
    return np.arccos(np.clip(G, -1.0, 1.0))


# ------------------------------------------------------------- smoothness

@dataclass(frozen=True)
class SmoothnessClass:
    msc: bool
    one_msd: bool
    two_msd: bool

    def __post_init__(self):
        if (self.two_msd and not self.one_msd) or (self.one_msd and not self.msc):
            raise ContractError("smoothness classes must be nested")


_TABLE = {
    "circular-matern": (True, False, False),
    "truncated-legendre-matern": (True, True, True),
    "bernoulli": (True, False, False),
    "powered-exponential": (True, False, False),
    "generalized-cauchy": (True, False, False),
    "multiquadric": (True, True, True),
    "sine-power": (True, False, False),
    "spherical": (True, False, False),
    "askey": (True, False, False),
    "c2-wendland": (True, True, False),
    "c4-wendland": (True, True, True),
}


# Parameters at which each catalog row's tabulated smoothness is visible to
# finite differences on the 1e-2..1e-5 step ladder.
REPRESENTATIVES = {
    "chordal-matern": dict(alpha=1.0, nu=1.5),
    "circular-matern": dict(alpha=1.0, nu=0.25, truncation=2_000_000),
    "legendre-matern": dict(alpha=1.0, nu=2.0, truncation=500),
    "truncated-legendre-matern": dict(alpha=1.0, nu=2.0, truncation=20),
    "bernoulli": dict(alpha=1.0, n=1),
    "powered-exponential": dict(alpha=1.0, nu=1.0),
    "generalized-cauchy": dict(alpha=1.0, nu=1.0, tau=2.0),
    "multiquadric": dict(alpha=1.0, tau=0.5),
    "sine-power": dict(nu=1.0),
    "spherical": dict(alpha=1.0),
    "askey": dict(alpha=1.0, tau=2.0),
    "c2-wendland": dict(alpha=1 / np.pi, tau=4.0),
    "c4-wendland": dict(alpha=1 / np.pi, tau=6.0),
}


def smoothness_class(spec, p=2):
    """Mean-square smoothness implied by the kernel's parameters.

    Spectral Matérn on a ``p``-manifold is MSC, 1-MSD and 2-MSD for
    ``nu > (p-1)/2``, ``(p+1)/2`` and ``(p+3)/2``; RBF and every finite
    truncation are smooth to all three orders.
    """
    if spec.family in SPECTRAL_FAMILIES:
        if spec.truncation is not None or spec.family == "spectral-rbf":
            return SmoothnessClass(True, True, True)
        nu = spec.nu
        return SmoothnessClass(nu > (p - 1) / 2, nu > (p + 1) / 2, nu > (p + 3) / 2)
    if spec.family == "circle-matern":
        nu = spec.nu
        return SmoothnessClass(nu > 0, nu > 1, nu > 2)
    name = spec.name
    if name == "chordal-matern":
        return SmoothnessClass(True, spec.nu > 1, spec.nu > 2)
    if name == "legendre-matern":
        nu = spec.nu
        return SmoothnessClass(nu > 0.5, nu > 1.5, nu > 2.5)
    return SmoothnessClass(*_TABLE[name])


@dataclass(frozen=True)
class SmoothnessProbe:
    """Finite-difference evidence about ``K`` near ``t = 0``.

    ``d1[i] = (K(h_i) - K(0)) / h_i`` estimates ``K'(0+)``; its log-log slope
    in ``h`` is about 1 when ``K'(0+) = 0`` and about 0 (or negative) when not.
    ``d3`` is a difference of ``(K(h) - K(0)) / h^2`` that tends to a nonzero
    constant exactly when ``K'''(0+) != 0``.
    """

    steps: np.ndarray
    increments: np.ndarray
    d1: np.ndarray
    d3: np.ndarray
    d3_steps: np.ndarray
    slope1: float
    slope3: float
    k1_estimate: float
    msc: bool
    one_msd: bool
    two_msd: bool

    @property
    def verdict(self):
        return SmoothnessClass(self.msc, self.msc and self.one_msd,
                               self.msc and self.one_msd and self.two_msd)


def _loglog_slope(h, y):
    y = np.abs(y)
    keep = y > 0
    if keep.sum() < 2:
        return np.inf
    return float(np.polyfit(np.log(h[keep]), np.log(y[keep]), 1)[0])


def default_step_ladder():
    return 10.0 ** -np.arange(2.0, 5.01, 0.5)


def numeric_smoothness_probe(kernel, steps=None, slope_threshold=0.8, msc_tol=1e-2):
    """Classify a kernel ``K(t)`` by one-sided finite differences at ``0+``.

    Parameters
    ----------
    kernel : callable
        Vectorized ``K(t)`` for ``t >= 0``.
    steps : array_like, optional
        Step ladder, default ``10^-2 ... 10^-5`` in half decades.
    slope_threshold : float
        ``K'(0+) -> 0`` (resp. ``K'''(0+) -> 0``) is declared when the
        difference quotient decays at least like ``h^threshold``, i.e. like
        ``c h`` up to the threshold.
    """
    h = np.sort(np.asarray(default_step_ladder() if steps is None else steps, float))[::-1]
    k0 = float(np.asarray(kernel(np.array([0.0]))).ravel()[0])
    kh = np.asarray(kernel(h), dtype=float).ravel()
    k2h = np.asarray(kernel(2 * h), dtype=float).ravel()
    inc = kh - k0
    d1 = inc / h
    scale = max(abs(k0), 1e-300)
    eps = np.finfo(float).eps
    # D1 is trustworthy where its roundoff (~eps*K0/h) is well below its size
    noise1 = 8 * eps * scale / h
    zero1 = np.abs(d1) <= noise1
    if zero1.all():
        slope1 = np.inf
    else:
        ok = ~zero1
        slope1 = _loglog_slope(h[ok], d1[ok])
    msc = bool(abs(inc[-1]) <= msc_tol * scale and abs(inc[-1]) <= abs(inc[0]) + noise1[0] * h[0])
    one_msd = bool(slope1 >= slope_threshold)
    if len(h) >= 2:
        x1, x2 = h[-1], h[-2]
        k1_est = float(d1[-1] - (d1[-2] - d1[-1]) / (x2 - x1) * x1)
    else:
        k1_est = float(d1[-1])
    g1 = inc / h ** 2
    g2 = (k2h - k0) / (2 * h) ** 2
    d3 = (g2 - g1) / h
    noise3 = 16 * eps * scale / h ** 3
    usable = np.abs(d3) > 100 * noise3
    if usable.sum() >= 2:
        slope3 = _loglog_slope(h[usable], d3[usable])
    elif usable.sum() == 0 and np.all(np.abs(d3) <= 100 * noise3):
        slope3 = np.inf  # indistinguishable from zero at every step
    else:
        slope3 = -np.inf
    two_msd = bool(one_msd and slope3 >= slope_threshold / 2 + 0.1)
    return SmoothnessProbe(h, inc, d1, d3, h, slope1, slope3, k1_est, msc, one_msd, two_msd)


# ---------------------------------------------------------- Gram matrices

def cholesky_with_jitter(A, start=JITTER_START, max_rel=JITTER_MAX):
    """Lower Cholesky factor of ``A``, adding diagonal jitter when needed.

    Jitter starts at ``start * mean(diag A)`` and grows tenfold up to
    ``max_rel * mean(diag A)``.

    Returns
    -------
    (L, jitter) : lower factor and the absolute jitter that was added.

    Raises
    ------
    FactorizationError
        If the matrix is still not positive definite at the largest jitter.
    """
    A = np.asarray(A, dtype=float)
    try:
        return linalg.cholesky(A, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    if not np.all(np.isfinite(A)):
        raise FactorizationError("matrix has non-finite entries")
    base = float(np.mean(np.diag(A)))
    if not base > 0:
        raise FactorizationError("matrix has a nonpositive mean diagonal")
    rel = start
    while rel <= max_rel * (1 + 1e-9):
        jitter = rel * base
        try:
            L = linalg.cholesky(A + jitter * np.eye(len(A)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            rel *= 10
            continue
        warnings.warn(f"added diagonal jitter {jitter:.3g} ({rel:.0e} x mean diagonal) "
                      "to factorize a covariance matrix", RuntimeWarning, stacklevel=2)
        return L, jitter
    w = linalg.eigvalsh(A)
    raise FactorizationError(
        f"Cholesky failed after jitter {max_rel:.0e} x mean diagonal; eigenvalue range "
        f"[{w[0]:.3e}, {w[-1]:.3e}]")


def kernel_matrix(spec, spectrum=None, X=None, Y=None, mesh=None, C=None):
    """Cross-covariance matrix ``K(X, Y)`` for any family.

    Points are vertex indices or barycentric points (mesh spectra), angles in
    ``[0, 1)`` (circle) or unit 3-vectors (sphere catalog).
    """
    square = Y is None
    Y = X if Y is None else Y
    if spec.family in SPECTRAL_FAMILIES:
        if spectrum is None:
            raise ContractError("spectral kernels need a spectrum")
        T = spectral_truncation(spec, spectrum)
        Px = basis_at(spectrum, X, mesh, T)
        Py = Px if Y is X else basis_at(spectrum, Y, mesh, T)
        return spectral_cross(spec, spectrum, Px, Py, C=C)
    if spec.family == "circle-matern":
        X = np.atleast_1d(np.asarray(X, float))
        Y = np.atleast_1d(np.asarray(Y, float))
        K = circle_matern_eval(spec, X[:, None], Y[None, :])
    else:
        K = sphere_catalog_eval(spec, sphere_angles(X, Y))
    return 0.5 * (K + K.T) if square else K


def gram_matrix(spec, spectrum=None, points=None, nugget=0.0, mesh=None, C=None):
    """``K(x_i, x_j) + nugget * I`` made factorization-ready.

    The matrix is symmetrized; if it is not numerically positive definite,
    jitter is added per :func:`cholesky_with_jitter`.
    """
    if points is None or len(points) == 0:
        raise ContractError("gram_matrix needs at least one point")
    if nugget < 0:
        raise ContractError("nugget must be nonnegative")
    K = kernel_matrix(spec, spectrum, points, None, mesh, C)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += nugget
    _, jitter = cholesky_with_jitter(K)
    if jitter:
        K[np.diag_indices_from(K)] += jitter
    return K
