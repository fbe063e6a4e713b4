"""Covariances of the derivative and curvature processes.

For a field ``Z`` with covariance ``K`` and tangent fields ``V``, ``U`` this
module evaluates the cross-covariances among ``Z``, ``D_V Z`` and
``D^2_{U,V} Z``:

* on meshes from the truncated spectrum and per-face P1 gradients;
* on the unit sphere in closed form from an isotropic ``K(t)`` and its first
  two derivatives;
* on the unit-circumference circle, including curvature, from the analytic
  eigenfunctions.

Every function takes an optional normalizing constant ``C``; the returned
covariances carry the factor ``sigma2 / C``.  ``C=None`` selects the
family's default (``sum a_l / vol`` for spectral kernels, ``K(0) = sigma2``
for Legendre kernels).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .geometry import (as_bary_points, directional_eigen_derivatives, eigenfunction_values)
from .kernels import (SPECTRAL_FAMILIES, legendre_series, legendre_weights, spectral_truncation,
                      spectral_weights)

NEAR_COINCIDENT = 1e-4
ANTIPODAL = 1e-6


def _spectral_scale(spec, spectrum, a, C):
    if C is None:
        C = float(a.sum() / spectrum.volume)
    return spec.sigma2 / C


def _require_spectral(spec):
    if spec.family not in SPECTRAL_FAMILIES:
        raise ContractError("a spectral kernel family is required")


# ------------------------------------------------------------------ meshes

def spectral_gradient_features(spec, spectrum, mesh, x0, V0):
    """``g_l = <grad f_l(x0), V0>`` for each point of ``x0``, shape (n, T+1)."""
    _require_spectral(spec)
    T = spectral_truncation(spec, spectrum)
    pts = as_bary_points(x0)
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    if V0.shape[0] == 1 and len(pts) > 1:
        V0 = np.repeat(V0, len(pts), axis=0)
    nrm = mesh.face_normals[pts.faces]
    off = np.abs(np.einsum("ij,ij->i", nrm, V0)) > 1e-8 * np.maximum(np.linalg.norm(V0, axis=1), 1)
    if off.any():
        raise ContractError("V0 must be tangent to the face containing x0")
    g = directional_eigen_derivatives(mesh, spectrum, pts, V0, T)
    # the l = 0 eigenfunction is constant; drop its roundoff-level gradient
    g[:, 0] = 0.0
    return g


def spectral_cov_z_dvz(spec, spectrum, mesh, x_j, x0, V0, C=None):
    """``Cov(Z(x_j), D_V Z(x0)) = sigma2/C sum_l a_l f_l(x_j) <grad f_l(x0), V0>``.

    ``x_j`` may be a vertex index, a BaryPoint or a batch; ``x0`` a single
    BaryPoint.  Returns a scalar or an (n,) array.
    """
    T = spectral_truncation(spec, spectrum)
    a = spectral_weights(spec, spectrum.eigenvalues[:T + 1], spectrum.dim)
    g = spectral_gradient_features(spec, spectrum, mesh, x0, V0)[0]
    single = np.ndim(x_j) == 0 or (isinstance(x_j, tuple) and len(x_j) == 2 and np.ndim(x_j[0]) == 0)
    if np.ndim(x_j) == 0:
        Phi = spectrum.at_vertices([x_j], T)
    elif single or hasattr(x_j, "faces") or (isinstance(x_j, list) and x_j and isinstance(x_j[0], tuple)):
        Phi = eigenfunction_values(mesh, spectrum, as_bary_points(x_j), T)
    else:
        Phi = spectrum.at_vertices(x_j, T)
    out = _spectral_scale(spec, spectrum, a, C) * (Phi * a) @ g
    return float(out[0]) if single else out


def spectral_kv(spec, spectrum, mesh, x0, V0, C=None):
    """``K_V(x0, x0) = sigma2/C sum_l a_l <grad f_l(x0), V0>^2`` (nonnegative)."""
    T = spectral_truncation(spec, spectrum)
    a = spectral_weights(spec, spectrum.eigenvalues[:T + 1], spectrum.dim)
    g = spectral_gradient_features(spec, spectrum, mesh, x0, V0)
    out = _spectral_scale(spec, spectrum, a, C) * (g ** 2) @ a
    return float(out[0]) if len(out) == 1 else out


def spectral_joint_covariance(spec, spectrum, mesh, data_points, grid_points, grid_vectors, C=None):
    """Joint covariance of ``(Z(x_1..x_N), D_V Z(x0_1..x0_G))``, shape (N+G, N+G)."""
    T = spectral_truncation(spec, spectrum)
    a = spectral_weights(spec, spectrum.eigenvalues[:T + 1], spectrum.dim)
    Phi = eigenfunction_values(mesh, spectrum, data_points, T)
    G = spectral_gradient_features(spec, spectrum, mesh, grid_points, grid_vectors)
    B = np.vstack([Phi, G])
    J = _spectral_scale(spec, spectrum, a, C) * (B * a) @ B.T
    return 0.5 * (J + J.T)


# ------------------------------------------------------------------ sphere

class LegendreKernel:
    """Isotropic Legendre-Matérn kernel ``K(t) = sigma2/C sum_l a_l P_l(cos t)``.

    ``C`` defaults to ``sum a_l`` so that ``K(0) = sigma2``.  Exposes ``K``,
    ``K'``, ``K''`` and ``K''(0) = -1/2 sigma2/C sum_l a_l l (l+1)``.
    """

    def __init__(self, spec, C=None):
        if spec.family != "sphere-catalog" or spec.name not in (
                "legendre-matern", "truncated-legendre-matern"):
            raise ContractError("LegendreKernel needs a (truncated) Legendre-Matérn spec")
        if spec.truncation is None:
            raise ContractError("Legendre kernel derivatives need a truncation T")
        self.spec = spec
        self.T = int(spec.truncation)
        self.weights = legendre_weights(spec, self.T)
        self.C = float(self.weights.sum()) if C is None else float(C)
        self.scale = spec.sigma2 / self.C
        l = np.arange(self.T + 1)
        self.d2_zero = -0.5 * self.scale * float(self.weights @ (l * (l + 1.0)))

    def __call__(self, t):
        return self.scale * legendre_series(np.cos(t), self.T) @ self.weights

    def d1(self, t):
        _, D1 = legendre_series(np.cos(t), self.T, deriv=1)
        return -np.sin(t) * self.scale * (D1 @ self.weights)

    def d2(self, t):
        _, D1, D2 = legendre_series(np.cos(t), self.T, deriv=2)
        return self.scale * ((np.sin(t) ** 2) * (D2 @ self.weights) - np.cos(t) * (D1 @ self.weights))

    def dprime_cos(self, c):
        """``sigma2/C sum_l a_l P_l'(c)``, so that ``K'(t) = -sin t * dprime_cos(cos t)``."""
        _, D1 = legendre_series(c, self.T, deriv=1)
        return self.scale * (D1 @ self.weights)


def legendre_kernel_derivatives(spec, t, C=None):
    """``(K'(t), K''(t), K''(0))`` of a truncated Legendre-Matérn kernel, ``t`` in (0, pi)."""
    t = float(t)
    if not 0 < t < np.pi:
        raise ContractError("t must lie in (0, pi)")
    k = LegendreKernel(spec, C)
    return float(k.d1(t)), float(k.d2(t)), k.d2_zero


def _check_sphere(x, V, name):
    if abs(np.linalg.norm(x) - 1) > 1e-8:
        raise ContractError(f"{name} must be a unit vector")
    if V is not None and abs(np.dot(x, V)) > 1e-8 * max(1.0, np.linalg.norm(V)):
        raise ContractError(f"tangent vector at {name} must be orthogonal to it")


def _separation(x, xp):
    c = float(np.clip(np.dot(x, xp), -1.0, 1.0))
    s = float(np.linalg.norm(np.cross(x, xp)))
    if c < 0 and s < ANTIPODAL:
        raise ContractError("antipodal points: the derivative covariance is singular there")
    return c, s


def sphere_kv(kernel, x, xp, Vx, Vxp):
    """``Cov(D_V Z(x), D_V Z(x'))`` for an isotropic kernel on the unit sphere.

    ``kernel`` supplies ``d1(t)``, ``d2(t)`` and ``d2_zero`` (e.g.
    :class:`LegendreKernel`).  For ``sin d < 1e-4`` the diagonal limit
    ``-<Vx, Vx'> K''(0)`` is returned.
    """
    x, xp, Vx, Vxp = (np.asarray(v, dtype=float) for v in (x, xp, Vx, Vxp))
    _check_sphere(x, Vx, "x")
    _check_sphere(xp, Vxp, "x'")
    c, s = _separation(x, xp)
    if s < NEAR_COINCIDENT:
        return -float(np.dot(Vx, Vxp)) * kernel.d2_zero
    d = np.arctan2(s, c)
    k1 = float(kernel.d1(d))
    k2 = float(kernel.d2(d))
    return (-k1 * np.dot(Vx, Vxp) / s
            + (k2 - k1 * c / s) * np.dot(Vx, xp) * np.dot(x, Vxp) / s ** 2)


def sphere_cov_z_dvz(kernel, x, xp, Vxp):
    """``Cov(Z(x), D_V Z(x')) = -K'(d) <x, V_x'> / sin d``; 0 for ``sin d < 1e-4``."""
    x, xp, Vxp = (np.asarray(v, dtype=float) for v in (x, xp, Vxp))
    _check_sphere(x, None, "x")
    _check_sphere(xp, Vxp, "x'")
    c, s = _separation(x, xp)
    if s < NEAR_COINCIDENT:
        return 0.0
    d = np.arctan2(s, c)
    return -float(kernel.d1(d)) * float(np.dot(x, Vxp)) / s


def sphere_cov_z_dvz_matrix(kernel, X, X0, V0):
    """Batch ``Cov(Z(x_i), D_V Z(x0_g))``, shape (N, G).

    Uses ``-K'(d)/sin d = sigma2/C sum a_l P_l'(cos d)``, which is regular at
    coincident and antipodal points.
    """
    X = np.atleast_2d(X)
    X0 = np.atleast_2d(X0)
    V0 = np.atleast_2d(V0)
    c = np.clip(X @ X0.T, -1.0, 1.0)
    return kernel.dprime_cos(c) * (X @ V0.T)


def sphere_joint_covariance(kernel, X, X0, V0):
    """Joint covariance of ``(Z(X), D_V Z(X0))`` from the closed forms, (N+G, N+G)."""
    X = np.atleast_2d(X)
    X0 = np.atleast_2d(X0)
    V0 = np.atleast_2d(V0)
    n, g = len(X), len(X0)
    Czz = kernel(np.arccos(np.clip(X @ X.T, -1, 1)))
    Czz = 0.5 * (Czz + Czz.T)
    Czd = sphere_cov_z_dvz_matrix(kernel, X, X0, V0)
    Cdd = np.empty((g, g))
    for i in range(g):
        for j in range(i, g):
            Cdd[i, j] = Cdd[j, i] = sphere_kv(kernel, X0[i], X0[j], V0[i], V0[j])
    out = np.empty((n + g, n + g))
    out[:n, :n] = Czz
    out[:n, n:] = Czd
    out[n:, :n] = Czd.T
    out[n:, n:] = Cdd
    return out


# ------------------------------------------------------------------ circle

@dataclass(frozen=True)
class JointCovBlocks:
    """Blocks of the joint covariance of ``(Z(x_1..x_N), D_V Z(x0)[, D^2 Z(x0)])``."""

    c_zz: np.ndarray
    c_z_dv: np.ndarray
    kv_00: float
    c_z_duv: np.ndarray = None
    c_dv_duv: float = None
    kuv_00: float = None

    @property
    def has_curvature(self):
        return self.c_z_duv is not None

    def full(self):
        n = len(self.c_zz)
        m = n + (2 if self.has_curvature else 1)
        out = np.empty((m, m))
        out[:n, :n] = self.c_zz
        out[:n, n] = out[n, :n] = self.c_z_dv
        out[n, n] = self.kv_00
        if self.has_curvature:
            out[:n, n + 1] = out[n + 1, :n] = self.c_z_duv
            out[n, n + 1] = out[n + 1, n] = self.c_dv_duv
            out[n + 1, n + 1] = self.kuv_00
        return out


def circle_features(spectrum, theta, T, V=1.0, U=1.0):
    """Rows ``f_l(theta)``, ``V f_l'(theta)`` and ``V U f_l''(theta)``."""
    f = spectrum.values(theta, 0, T)
    d1 = V * spectrum.values(theta, 1, T)
    d2 = V * U * spectrum.values(theta, 2, T)
    return f, d1, d2


def circle_joint_cov(spec, spectrum, theta, theta0, V=1.0, U=1.0, C=None, curvature=True):
    """Joint covariance blocks on the circle with exact trigonometric derivatives.

    ``grad f_l(V) = V f_l'`` and ``grad^2 f_l(V, U) = V U f_l''`` at ``theta0``;
    ``V`` and ``U`` are tangent speeds (nonzero scalars).
    """
    _require_spectral(spec)
    if spectrum.source != "circle-analytic":
        raise ContractError("circle_joint_cov needs the analytic circle spectrum")
    if V == 0 or U == 0:
        raise ContractError("V and U must be nonzero")
    T = spectral_truncation(spec, spectrum)
    a = spectral_weights(spec, spectrum.eigenvalues[:T + 1], 1)
    scale = _spectral_scale(spec, spectrum, a, C)
    Phi = spectrum.values(np.atleast_1d(theta), 0, T)
    _, g1, g2 = circle_features(spectrum, [theta0], T, V, U)
    g1, g2 = g1[0], g2[0]
    Czz = scale * (Phi * a) @ Phi.T
    blocks = dict(c_zz=Czz, c_z_dv=scale * (Phi * a) @ g1, kv_00=float(scale * a @ g1 ** 2))
    if curvature:
        blocks.update(c_z_duv=scale * (Phi * a) @ g2, c_dv_duv=float(scale * a @ (g1 * g2)),
                      kuv_00=float(scale * a @ g2 ** 2))
    return JointCovBlocks(**blocks)


def circle_joint_covariance(spec, spectrum, theta, theta0, V=1.0, U=1.0, C=None):
    """Joint covariance of ``(Z(theta), D_V Z(theta0), D^2_{U,V} Z(theta0))``.

    Multi-point version of :func:`circle_joint_cov`; the shape is
    ``(N + 2G, N + 2G)`` with the ``G`` first-derivative entries before the
    ``G`` curvature entries.
    """
    _require_spectral(spec)
    if spectrum.source != "circle-analytic":
        raise ContractError("circle_joint_covariance needs the analytic circle spectrum")
    if V == 0 or U == 0:
        raise ContractError("V and U must be nonzero")
    T = spectral_truncation(spec, spectrum)
    a = spectral_weights(spec, spectrum.eigenvalues[:T + 1], 1)
    Phi = spectrum.values(np.atleast_1d(theta), 0, T)
    _, g1, g2 = circle_features(spectrum, np.atleast_1d(theta0), T, V, U)
    B = np.vstack([Phi, g1, g2])
    J = _spectral_scale(spec, spectrum, a, C) * (B * a) @ B.T
    return 0.5 * (J + J.T)
