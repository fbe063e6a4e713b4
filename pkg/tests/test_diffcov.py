import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from manigrad.diffcov import (LegendreKernel, circle_joint_cov, legendre_kernel_derivatives,
                              spectral_cov_z_dvz, spectral_joint_covariance, spectral_kv,
                              sphere_cov_z_dvz, sphere_cov_z_dvz_matrix, sphere_joint_covariance,
                              sphere_kv)
from manigrad.errors import ContractError
from manigrad.geometry import BaryPoint, BaryPoints, eigenfunction_values, rotational_field, sphere_exp
from manigrad.kernels import KernelSpec, legendre_weights, spectral_weights, sphere_catalog_eval
from manigrad.spectral import Spectrum, analytic_circle_spectrum

LEG = KernelSpec("sphere-catalog", name="truncated-legendre-matern", alpha=1.0, nu=2.0, truncation=20)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def tangent(x, rng):
    v = rng.normal(size=3)
    return v - np.dot(v, x) * x


def random_pair(rng, min_sep=0.3):
    while True:
        x, xp = unit(rng.normal(size=3)), unit(rng.normal(size=3))
        d = np.arccos(np.clip(x @ xp, -1, 1))
        if min_sep < d < np.pi - min_sep:
            return x, xp


def kernel_at(k, x, xp):
    return float(k(np.arccos(np.clip(np.dot(x, xp), -1, 1))))


# ------------------------------------------------------------ mesh forms

def shift_in_face(mesh, p, V, h):
    """Barycentric coordinates of ``x(p) + h V`` inside the same face."""
    v = mesh.vertices[mesh.faces[p.face]]
    x = np.asarray(p.coords) @ v + h * V
    A = np.vstack([v.T, np.ones(3)])
    c = np.linalg.lstsq(A, np.r_[x, 1.0], rcond=None)[0]
    return BaryPoint(p.face, tuple(c))


def bunny_config(mesh, rng):
    face = int(rng.integers(mesh.n_faces))
    p = BaryPoint(face, (1 / 3, 1 / 3, 1 / 3))
    nrm = mesh.face_normals[face]
    V = unit(np.cross(nrm, rng.normal(size=3)))
    return p, V


class TestSpectralMesh:
    spec = KernelSpec("spectral-matern", alpha=8.0, nu=2.0, truncation=150)

    def raw_kernel(self, mesh, spectrum, xj, y):
        T = 150
        a = spectral_weights(self.spec, spectrum.eigenvalues[:T + 1], 2)
        fj = spectrum.at_vertices([xj], T)[0]
        fy = eigenfunction_values(mesh, spectrum, BaryPoints([y.face], [y.coords]), T)[0]
        return float((fj * a) @ fy)

    def test_constant_only_is_zero(self, bunny, bunny_spectrum):
        spec = KernelSpec("spectral-matern", truncation=0)
        p, V = bunny_config(bunny, np.random.default_rng(0))
        assert spectral_cov_z_dvz(spec, bunny_spectrum, bunny, 5, p, V) == 0.0
        assert spectral_kv(spec, bunny_spectrum, bunny, p, V) == 0.0

    def test_linear_eigenfunction(self, triangle):
        F = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.0]])
        sp = Spectrum([0.0, 1.0], F, np.ones(3))
        spec = KernelSpec("spectral-matern", alpha=1.0, nu=1.0, sigma2=1.0)
        p = BaryPoint(0, (1 / 3, 1 / 3, 1 / 3))
        a1 = spectral_weights(spec, [1.0], 2)[0]
        got = spectral_cov_z_dvz(spec, sp, triangle, 1, p, [1.0, 0, 0], C=1.0)
        assert got == pytest.approx(a1)

    def test_cov_matches_in_face_difference(self, bunny, bunny_spectrum):
        rng = np.random.default_rng(1)
        for _ in range(5):
            p, V = bunny_config(bunny, rng)
            xj = int(rng.integers(bunny.n_vertices))
            h = 1e-4
            fd = (self.raw_kernel(bunny, bunny_spectrum, xj, shift_in_face(bunny, p, V, h))
                  - self.raw_kernel(bunny, bunny_spectrum, xj, shift_in_face(bunny, p, V, -h))) / (2 * h)
            got = spectral_cov_z_dvz(self.spec, bunny_spectrum, bunny, xj, p, V, C=self.spec.sigma2)
            assert got == pytest.approx(fd, rel=1e-5, abs=1e-12 * abs(got) + 1e-14)

    def test_kv_matches_mixed_difference(self, bunny, bunny_spectrum):
        p, V = bunny_config(bunny, np.random.default_rng(2))
        T = 150
        a = spectral_weights(self.spec, bunny_spectrum.eigenvalues[:T + 1], 2)
        h = 1e-4

        def phi(t):
            q = shift_in_face(bunny, p, V, t)
            return eigenfunction_values(bunny, bunny_spectrum, BaryPoints([q.face], [q.coords]), T)[0]

        def k(s, t):
            return float((phi(s) * a) @ phi(t))

        fd = (k(h, h) - k(h, -h) - k(-h, h) + k(-h, -h)) / (4 * h * h)
        got = spectral_kv(self.spec, bunny_spectrum, bunny, p, V, C=1.0)
        assert got == pytest.approx(fd, rel=1e-4)

    def test_kv_quadruples(self, bunny, bunny_spectrum):
        p, V = bunny_config(bunny, np.random.default_rng(3))
        one = spectral_kv(self.spec, bunny_spectrum, bunny, p, V)
        assert spectral_kv(self.spec, bunny_spectrum, bunny, p, 2 * V) == pytest.approx(4 * one)
        assert one > 0

    def test_nontangent_rejected(self, bunny, bunny_spectrum):
        p, _ = bunny_config(bunny, np.random.default_rng(4))
        with pytest.raises(ContractError):
            spectral_kv(self.spec, bunny_spectrum, bunny, p, bunny.face_normals[p.face])

    def test_joint_psd(self, bunny, bunny_spectrum):
        rng = np.random.default_rng(5)
        cfg = [bunny_config(bunny, rng) for _ in range(6)]
        grid = BaryPoints([c[0].face for c in cfg], [c[0].coords for c in cfg])
        J = spectral_joint_covariance(self.spec, bunny_spectrum, bunny, np.arange(40), grid,
                                      np.array([c[1] for c in cfg]))
        assert np.abs(J - J.T).max() < 1e-12 * np.abs(J).max()
        w = np.linalg.eigvalsh(J)
        assert w.min() >= -1e-8 * w.max()

    def test_scale_free_conditional_mean(self, bunny, bunny_spectrum):
        rng = np.random.default_rng(6)
        p, V = bunny_config(bunny, rng)
        idx = np.arange(0, 453, 9)
        y = rng.normal(size=len(idx))
        means = []
        for c in (1.0, 37.0):
            spec = KernelSpec("spectral-matern", alpha=8.0, nu=2.0, truncation=150, weight_scale=c)
            J = spectral_joint_covariance(spec, bunny_spectrum, bunny, idx, BaryPoints([p.face], [p.coords]),
                                          V[None], C=1.0)
            n = len(idx)
            means.append(J[n, :n] @ np.linalg.solve(J[:n, :n] + 0.1 * np.eye(n) * c, y))
        assert_allclose(means[0], means[1], rtol=1e-10)


# ---------------------------------------------------------- sphere forms

class TestLegendreDerivatives:
    def test_one_term(self):
        spec = KernelSpec("sphere-catalog", name="truncated-legendre-matern", alpha=1.0, nu=2.0, truncation=1)
        assert LegendreKernel(spec, C=1.0).d2_zero == pytest.approx(-3 ** -2.5)

    def test_k2_zero_sum(self):
        l = np.arange(1, 21)
        ref = -0.5 * np.sum((1 + l * (l + 1.0)) ** -2.5 * l * (l + 1))
        assert LegendreKernel(LEG, C=1.0).d2_zero == pytest.approx(ref, rel=1e-13)

    def test_default_constant_gives_unit_variance(self):
        assert LegendreKernel(LEG)(0.0) == pytest.approx(1.0)

    def test_first_derivative_vanishes_at_zero(self):
        k = LegendreKernel(LEG)
        vals = [abs(float(k.d1(h))) for h in (1e-2, 1e-3, 1e-4)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-3 * abs(k.d2_zero)

    def test_first_derivative_matches_catalog(self):
        h = 1e-5
        fd = (sphere_catalog_eval(LEG, 1.0 + h) - sphere_catalog_eval(LEG, 1.0 - h)) / (2 * h)
        d1, d2, _ = legendre_kernel_derivatives(LEG, 1.0)
        assert d1 == pytest.approx(fd, abs=1e-6)
        k = LegendreKernel(LEG)
        assert d2 == pytest.approx((k.d1(1.0 + h) - k.d1(1.0 - h)) / (2 * h), rel=1e-6)

    def test_domain(self):
        with pytest.raises(ContractError):
            legendre_kernel_derivatives(LEG, 0.0)

    def test_weights_forms(self):
        spec = KernelSpec("sphere-catalog", name="truncated-legendre-matern", alpha=1.0, nu=2.0,
                          truncation=3, legendre_form="l^2")
        assert_allclose(legendre_weights(spec), (1 + np.arange(4.0) ** 2) ** -2.5)


class TestSphereClosedForms:
    k = LegendreKernel(LEG)

    def test_kv_diagonal(self):
        x = unit([1, 2, 3])
        V = tangent(x, np.random.default_rng(0))
        assert sphere_kv(self.k, x, x, V, V) == pytest.approx(-np.dot(V, V) * self.k.d2_zero)

    def test_kv_diagonal_limit(self):
        rng = np.random.default_rng(1)
        x = unit([0.3, -0.2, 0.9])
        V = unit(tangent(x, rng))
        xp = sphere_exp(x, unit(tangent(x, rng)), 1e-3)
        Vp = V - np.dot(V, xp) * xp
        assert sphere_kv(self.k, x, xp, V, Vp) == pytest.approx(-self.k.d2_zero, abs=1e-6)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_kv_matches_geodesic_difference(self, seed):
        rng = np.random.default_rng(seed)
        x, xp = random_pair(rng)
        V, Vp = tangent(x, rng), tangent(xp, rng)
        h = 1e-3

        def K(s, t):
            return kernel_at(self.k, sphere_exp(x, V, s), sphere_exp(xp, Vp, t))

        fd = (K(h, h) - K(h, -h) - K(-h, h) + K(-h, -h)) / (4 * h * h)
        got = sphere_kv(self.k, x, xp, V, Vp)
        assert got == pytest.approx(fd, rel=1e-4, abs=1e-6 * abs(self.k.d2_zero) * np.dot(V, V))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_cov_matches_geodesic_difference(self, seed):
        rng = np.random.default_rng(seed)
        x, xp = random_pair(rng)
        Vp = tangent(xp, rng)
        h = 1e-4
        fd = (kernel_at(self.k, x, sphere_exp(xp, Vp, h)) - kernel_at(self.k, x, sphere_exp(xp, Vp, -h))) / (2 * h)
        got = sphere_cov_z_dvz(self.k, x, xp, Vp)
        assert got == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_second_order_convergence(self):
        rng = np.random.default_rng(3)
        x, xp = random_pair(rng)
        Vp = tangent(xp, rng)
        exact = sphere_cov_z_dvz(self.k, x, xp, Vp)
        errs = []
        for h in (4e-2, 2e-2):
            fd = (kernel_at(self.k, x, sphere_exp(xp, Vp, h))
                  - kernel_at(self.k, x, sphere_exp(xp, Vp, -h))) / (2 * h)
            errs.append(abs(fd - exact))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)

    def test_coincident_cov_is_zero(self):
        x = unit([1, 1, 1])
        assert sphere_cov_z_dvz(self.k, x, x, tangent(x, np.random.default_rng(0))) == 0.0

    def test_north_pole_rotational(self):
        xp = unit([0.4, 0.5, 0.2])
        assert sphere_cov_z_dvz(self.k, [0, 0, 1.0], xp, rotational_field(xp)) == 0.0

    def test_antisymmetry_rotational(self, rng):
        for _ in range(10):
            x, xp = random_pair(rng)
            fwd = sphere_cov_z_dvz(self.k, x, xp, rotational_field(xp))
            back = sphere_cov_z_dvz(self.k, xp, x, rotational_field(x))
            assert abs(fwd + back) < 1e-10

    def test_antipodal_rejected(self):
        x = np.array([0, 0, 1.0])
        with pytest.raises(ContractError):
            sphere_kv(self.k, x, -x, [1.0, 0, 0], [1.0, 0, 0])
        with pytest.raises(ContractError):
            sphere_cov_z_dvz(self.k, x, -x, [1.0, 0, 0])

    def test_nontangent_rejected(self):
        x = np.array([0, 0, 1.0])
        with pytest.raises(ContractError):
            sphere_cov_z_dvz(self.k, unit([1, 0, 1]), x, [0, 0, 1.0])

    def test_batch_matches_scalar(self, rng):
        X = np.array([unit(rng.normal(size=3)) for _ in range(8)])
        X0 = np.array([unit(rng.normal(size=3)) for _ in range(3)])
        V0 = rotational_field(X0)
        M = sphere_cov_z_dvz_matrix(self.k, X, X0, V0)
        for i in range(8):
            for g in range(3):
                assert M[i, g] == pytest.approx(sphere_cov_z_dvz(self.k, X[i], X0[g], V0[g]), abs=1e-12)

    def test_joint_psd(self, rng):
        X = np.array([unit(rng.normal(size=3)) for _ in range(30)])
        X0 = np.array([unit(rng.normal(size=3)) for _ in range(5)])
        J = sphere_joint_covariance(self.k, X, X0, rotational_field(X0))
        w = np.linalg.eigvalsh(J)
        assert w.min() >= -1e-8 * w.max()


# ---------------------------------------------------------------- circle

class TestCircle:
    def test_constant_pair_contributes_nothing(self):
        spec = KernelSpec("spectral-matern", nu=2.0, truncation=0)
        b = circle_joint_cov(spec, analytic_circle_spectrum(1), [0.1, 0.4], 0.3)
        assert b.kv_00 == 0 and b.kuv_00 == 0 and b.c_dv_duv == 0
        assert not b.c_z_dv.any() and not b.c_z_duv.any()

    @pytest.mark.parametrize("theta0", [0.0, 0.13, 0.71])
    def test_single_pair_curvature_variance(self, theta0):
        # both eigenfunctions of the pair carry sqrt 2, so cos^2 + sin^2 gives the factor 2
        spec = KernelSpec("spectral-matern", nu=2.0, alpha=1.0)
        V = 1.7
        b = circle_joint_cov(spec, analytic_circle_spectrum(3), [0.2], theta0, V=V, U=V, C=spec.sigma2)
        a1 = spectral_weights(spec, [(2 * np.pi) ** 2], 1)[0]
        assert b.kuv_00 == pytest.approx(2 * a1 * V ** 4 * (2 * np.pi) ** 4)

    def test_joint_psd(self, rng):
        spec = KernelSpec("spectral-matern", nu=3.0, alpha=1.0)
        b = circle_joint_cov(spec, analytic_circle_spectrum(51), rng.random(10), 0.37, V=0.8, U=1.3)
        J = b.full()
        assert J.shape == (12, 12)
        assert np.array_equal(J, J.T)
        w = np.linalg.eigvalsh(J)
        assert w.min() >= -1e-8 * w.max()

    def test_cov_matches_difference(self):
        spec = KernelSpec("spectral-matern", nu=2.0, alpha=1.0)
        sp = analytic_circle_spectrum(41)
        theta = np.array([0.05, 0.6])
        h = 1e-5

        def cz(t0):
            return circle_joint_cov(spec, sp, np.r_[theta, t0], t0, curvature=False).c_zz[:2, 2]

        b = circle_joint_cov(spec, sp, theta, 0.3)
        assert_allclose(b.c_z_dv, (cz(0.3 + h) - cz(0.3 - h)) / (2 * h), rtol=1e-6)
        d1 = lambda t: circle_joint_cov(spec, sp, theta, t, curvature=False).c_z_dv  # noqa: E731
        assert_allclose(b.c_z_duv, (d1(0.3 + h) - d1(0.3 - h)) / (2 * h), rtol=1e-5)

    def test_requires_analytic_spectrum(self, bunny_spectrum):
        with pytest.raises(ContractError):
            circle_joint_cov(KernelSpec("spectral-matern"), bunny_spectrum, [0.1], 0.2)

    def test_zero_speed_rejected(self):
        with pytest.raises(ContractError):
            circle_joint_cov(KernelSpec("spectral-matern"), analytic_circle_spectrum(5), [0.1], 0.2, V=0.0)
