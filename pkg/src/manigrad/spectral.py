"""Truncated Laplace-Beltrami spectra.

A :class:`Spectrum` holds the ``T + 1`` smallest eigenpairs ``(lambda_l, f_l)``
of ``-Delta``.  Mesh spectra come from the generalized problem
``L f = lambda M f`` with the cotangent stiffness ``L`` and lumped mass ``M``,
and are M-orthonormal.  The unit-circumference circle has a closed-form
spectrum that can be evaluated (with derivatives) anywhere.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import ContractError, ConvergenceError

DENSE_LIMIT = 2000
SOURCES = ("mesh", "circle-analytic", "sphere-analytic")


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Truncated eigen-decomposition ``{lambda_l, f_l}_{l=0..T}``.

    Attributes
    ----------
    eigenvalues : ndarray, shape (T+1,)
        Ascending, nonnegative.
    eigenfunctions : ndarray, shape (K, T+1) or None
        Column ``l`` is ``f_l`` at the K mesh vertices.  ``None`` for analytic
        spectra, which are evaluated functionally instead.
    mass : ndarray, shape (K,) or None
        Lumped mass diagonal used for the normalization.
    normalized : bool
        True when the columns are orthonormal in the mass inner product.
    source : str
        One of ``"mesh"``, ``"circle-analytic"``, ``"sphere-analytic"``.
    dim : int
        Manifold dimension ``p``.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray = None
    mass: np.ndarray = None
    normalized: bool = True
    source: str = "mesh"
    dim: int = 2
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ContractError(f"unknown spectrum source {self.source!r}")
        object.__setattr__(self, "eigenvalues", _readonly(self.eigenvalues))
        if self.eigenfunctions is not None:
            F = _readonly(self.eigenfunctions)
            if F.ndim != 2 or F.shape[1] != len(self.eigenvalues):
                raise ContractError("eigenfunctions must have shape (K, T+1)")
            object.__setattr__(self, "eigenfunctions", F)
        if self.mass is not None:
            object.__setattr__(self, "mass", _readonly(self.mass))

    @property
    def size(self):
        """Number of eigenpairs, ``T + 1``."""
        return len(self.eigenvalues)

    @property
    def truncation(self):
        return self.size - 1

    @property
    def volume(self):
        if self.mass is not None:
            return float(self.mass.sum())
        return 1.0

    def at_vertices(self, vertices, T=None):
        """Eigenfunction values at vertex indices, shape (n, T+1)."""
        if self.eigenfunctions is None:
            raise ContractError("analytic spectra have no vertex representation")
        n = self.size if T is None else _check_T(self, T) + 1
        return self.eigenfunctions[np.asarray(vertices, dtype=np.int64), :n]

    def truncate(self, T):
        """The leading ``T + 1`` pairs as a new spectrum."""
        n = _check_T(self, T) + 1
        F = None if self.eigenfunctions is None else self.eigenfunctions[:, :n]
        return Spectrum(self.eigenvalues[:n], F, self.mass, self.normalized,
                        self.source, self.dim, dict(self.meta))


def _check_T(spectrum, T):
    T = int(T)
    if T < 0 or T > spectrum.size - 1:
        raise ContractError(f"truncation T={T} exceeds spectrum with {spectrum.size} pairs")
    return T


class CircleSpectrum(Spectrum):
    """Closed-form spectrum of the circle of circumference one.

    Index ``0`` is the constant ``1``; for ``k >= 1`` index ``2k - 1`` is
    ``sqrt(2) cos(2 pi k theta)`` and index ``2k`` is ``sqrt(2) sin(2 pi k theta)``,
    both with eigenvalue ``(2 pi k)^2``.
    """

    def __init__(self, count):
        count = int(count)
        if count < 1:
            raise ContractError("count must be >= 1")
        j = np.arange(count)
        freq = (j + 1) // 2
        super().__init__(eigenvalues=(2 * np.pi * freq) ** 2, source="circle-analytic", dim=1,
                         meta={"count": count})
        object.__setattr__(self, "frequencies", freq)
        object.__setattr__(self, "_is_sin", (j > 0) & (j % 2 == 0))

    def truncate(self, T):
        return CircleSpectrum(_check_T(self, T) + 1)

    def values(self, theta, deriv=0, T=None):
        """Eigenfunctions (or their ``deriv``-th theta-derivatives), shape (n, T+1)."""
        n = self.size if T is None else _check_T(self, T) + 1
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        w = 2 * np.pi * self.frequencies[:n]
        arg = np.outer(theta, w)
        c = np.sqrt(2) * np.cos(arg)
        s = np.sqrt(2) * np.sin(arg)
        is_sin = self._is_sin[:n]
        if deriv == 0:
            out = np.where(is_sin, s, c)
            out[:, 0] = 1.0
        elif deriv == 1:
            out = np.where(is_sin, w * c, -w * s)
            out[:, 0] = 0.0
        elif deriv == 2:
            out = -(w ** 2) * np.where(is_sin, s, c)
            out[:, 0] = 0.0
        else:
            raise ContractError("deriv must be 0, 1 or 2")
        return out


def analytic_circle_spectrum(count):
    """Closed-form circle spectrum with ``count`` eigenpairs (``count >= 1``)."""
    return CircleSpectrum(count)


def _fix_signs(F):
    idx = np.argmax(np.abs(F), axis=0)
    signs = np.sign(F[idx, np.arange(F.shape[1])])
    signs[signs == 0] = 1.0
    return F * signs


def compute_spectrum(lap, count, dense_limit=DENSE_LIMIT, tol=0.0, maxiter=None):
    """Smallest ``count`` eigenpairs of ``L f = lambda M f``.

    Parameters
    ----------
    lap : LaplacianPair
    count : int
        Number of pairs, ``1 <= count <= K``.
    dense_limit : int
        Meshes with at most this many vertices use a dense symmetric solve of
        ``M^{-1/2} L M^{-1/2}``; larger meshes use shift-invert Lanczos.

    Returns
    -------
    Spectrum
        M-orthonormal, eigenvalues ascending, each eigenvector's entry of
        largest magnitude made positive.
    """
    L = sparse.csr_matrix(lap.stiffness)
    m = np.asarray(lap.mass_diagonal, dtype=float)
    K = L.shape[0]
    count = int(count)
    if count < 1:
        raise ContractError("count must be >= 1")
    if count > K:
        raise ContractError(f"count={count} exceeds the number of vertices K={K}")
    if np.any(m <= 0):
        raise ContractError("mass matrix must be positive definite")
    d = 1.0 / np.sqrt(m)
    if K <= dense_limit:
        A = (d[:, None] * L.toarray()) * d[None, :]
        A = 0.5 * (A + A.T)
        w, U = linalg.eigh(A, subset_by_index=[0, count - 1])
        F = d[:, None] * U
        info = {"solver": "dense"}
    else:
        # shift slightly below zero so the singular constant mode is reachable
        scale = np.abs(L.diagonal() / m).mean()
        sigma = -1e-6 * scale
        k = min(count, K - 1)
        try:
            w, F = eigsh(L.tocsc(), k=k, M=sparse.diags(m).tocsc(), sigma=sigma, which="LM",
                         tol=tol, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"shift-invert Lanczos did not converge ({len(exc.eigenvalues)} of {k} pairs)",
                diagnostics={"converged": len(exc.eigenvalues), "requested": k, "sigma": sigma},
            ) from exc
        order = np.argsort(w)
        w, F = w[order], F[:, order]
        # re-orthonormalize within the M inner product (clustered eigenvalues)
        G = F.T @ (m[:, None] * F)
        C = linalg.cholesky(0.5 * (G + G.T), lower=False)
        F = linalg.solve_triangular(C, F.T, trans="T", lower=False).T
        info = {"solver": "shift-invert", "sigma": sigma}
    w = np.clip(w, 0.0, None)
    F = _fix_signs(F)
    return Spectrum(w, F, m, True, "mesh", 2, info)


@dataclass(frozen=True)
class WeylReport:
    slope: float
    intercept: float
    residual: float
    expected_slope: float

    @property
    def relative_error(self):
        return abs(self.slope - self.expected_slope) / self.expected_slope


def weyl_diagnostic(spectrum, p):
    """Least-squares slope of ``log lambda_l`` against ``log l`` over the upper half.

    Weyl's law predicts ``lambda_l ~ c l^{2/p}``.  Requires ``T >= 20``.
    """
    T = spectrum.size - 1
    if T < 20:
        raise ContractError(f"Weyl diagnostic needs T >= 20, got T={T}")
    ls = np.arange(T // 2, T + 1)
    lam = spectrum.eigenvalues[ls]
    keep = lam > 0
    x = np.log(ls[keep])
    y = np.log(lam[keep])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return WeylReport(float(coef[0]), float(coef[1]), resid, 2.0 / p)


def eigen_residuals(lap, spectrum):
    """Per-pair relative residual ``||L f - lambda M f|| / ||M f||``."""
    F = spectrum.eigenfunctions
    m = np.asarray(lap.mass_diagonal)
    MF = m[:, None] * F
    R = lap.stiffness @ F - MF * spectrum.eigenvalues
    return np.linalg.norm(R, axis=0) / np.linalg.norm(MF, axis=0)


def orthonormality_error(spectrum):
    """``max |F^T M F - I|`` for a mesh spectrum."""
    F = spectrum.eigenfunctions
    G = F.T @ (spectrum.mass[:, None] * F)
    return float(np.abs(G - np.eye(len(G))).max())


def save_spectrum(path, spectrum, meta=None):
    """Write a mesh spectrum to an ``.npz`` sidecar (atomic replace)."""
    if spectrum.eigenfunctions is None:
        raise ContractError("only mesh spectra can be cached")
    info = dict(spectrum.meta)
    info.update(meta or {})
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, eigenvalues=spectrum.eigenvalues,
                 eigenfunctions=np.ascontiguousarray(spectrum.eigenfunctions),
                 mass=spectrum.mass, normalized=np.array(spectrum.normalized),
                 source=np.array(spectrum.source), dim=np.array(spectrum.dim),
                 meta=np.array(json.dumps(info, sort_keys=True)))
    os.replace(tmp, path)


def load_spectrum(path):
    with np.load(path, allow_pickle=False) as z:
        return Spectrum(
            eigenvalues=z["eigenvalues"],
            eigenfunctions=z["eigenfunctions"],
            mass=z["mass"],
            normalized=bool(z["normalized"]),
            source=str(z["source"]),
            dim=int(z["dim"]),
            meta=json.loads(str(z["meta"])),
        )
