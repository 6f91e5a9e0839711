import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from scipy.special import comb, eval_gegenbauer, sph_harm_y

from conftest import gen, unit_vectors
from rdgp.errors import DomainError
from rdgp.harmonics import (
    addition_constant,
    gegenbauer,
    gegenbauer_at_one,
    gegenbauer_table,
    gegenbauer_values,
    harmonic_count,
    harmonic_degrees,
    laplace_eigenvalue,
    scalar_harmonics,
    scalar_harmonics_s2,
    scalar_harmonics_sd,
    sphere_volume,
    total_harmonic_count,
    vector_harmonics_s2,
)
from rdgp.sphere import sample_uniform


class TestGegenbauer:
    def test_degree_zero(self):
        v, d1, d2 = gegenbauer(0, 0.7, 0.3)
        assert (float(v), float(d1), float(d2)) == (1.0, 0.0, 0.0)

    def test_degree_one(self):
        assert abs(float(gegenbauer(1, 0.5, 0.3)[0]) - 0.3) < 1e-15

    def test_legendre_at_one(self):
        assert abs(float(gegenbauer(3, 0.5, 1.0)[0]) - 1.0) < 1e-14

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.5])
    def test_matches_scipy(self, alpha):
        t = np.linspace(-1, 1, 41)
        vals = gegenbauer_values(12, alpha, torch.as_tensor(t)).numpy()
        for k in range(13):
            assert np.allclose(vals[:, k], eval_gegenbauer(k, alpha, t), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
    def test_derivatives_match_finite_differences(self, alpha):
        t = torch.as_tensor(np.random.default_rng(0).uniform(-0.99, 0.99, 50))
        h = 1e-5
        _, d1, d2 = gegenbauer_table(12, alpha, t)
        vp, vm = gegenbauer_values(12, alpha, t + h), gegenbauer_values(12, alpha, t - h)
        v0 = gegenbauer_values(12, alpha, t)
        fd1 = (vp - vm) / (2 * h)
        fd2 = (vp - 2 * v0 + vm) / h**2
        scale1 = d1.abs().max(0).values.clamp(min=1.0)
        scale2 = d2.abs().max(0).values.clamp(min=1.0)
        assert float(((fd1 - d1).abs() / scale1).max()) < 1e-6
        # the second difference loses ~8 digits to cancellation
        assert float(((fd2 - d2).abs() / scale2).max()) < 1e-4

    @given(st.integers(0, 10), st.sampled_from([0.5, 1.0, 1.5, 3.0]))
    def test_value_at_one(self, k, alpha):
        expected = comb(k + 2 * alpha - 1, k)
        assert abs(gegenbauer_at_one(k, alpha) - expected) < 1e-9 * max(1.0, expected)
        assert abs(float(gegenbauer(k, alpha, 1.0)[0]) - expected) < 1e-9 * max(1.0, expected)

    def test_domain(self):
        gegenbauer(4, 0.5, 1.0 + 5e-10)
        with pytest.raises(DomainError):
            gegenbauer(4, 0.5, 1.01)


class TestCounts:
    def test_eigenvalues(self):
        assert laplace_eigenvalue(0, 2) == 0
        assert laplace_eigenvalue(1, 2) == 2
        assert laplace_eigenvalue(2, 3) == 8

    @given(st.integers(0, 12), st.integers(2, 6))
    def test_count_matches_polynomial_dimensions(self, k, d):
        # harmonic polynomials: dim P_k(R^D) - dim P_{k-2}(R^D)
        D = d + 1
        dim = lambda n: comb(n + D - 1, D - 1, exact=True) if n >= 0 else 0  # noqa: E731
        assert harmonic_count(k, d) == dim(k) - dim(k - 2)

    def test_paper_counts(self):
        assert harmonic_count(0, 2) == 1
        assert total_harmonic_count(6, 2) == 49
        assert 2 * sum(harmonic_count(k, 2) for k in range(1, 6)) == 70
        assert 2 * sum(harmonic_count(k, 2) for k in range(1, 10)) == 198

    def test_degrees_layout(self):
        deg = harmonic_degrees(3, 2)
        assert list(deg) == [0, 1, 1, 1, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3]

    def test_volume(self):
        assert abs(sphere_volume(2) - 4 * math.pi) < 1e-14
        assert abs(sphere_volume(3) - 2 * math.pi**2) < 1e-13


def _latlon_laplacian_eigenvalue(fn, h=1e-3):
    """Fit lambda from -Delta f = lambda f with a finite-difference Laplacian."""
    colat = torch.linspace(0.4, 2.7, 25, dtype=torch.float64)
    lon = torch.linspace(0.1, 6.0, 25, dtype=torch.float64)
    th, ph = torch.meshgrid(colat, lon, indexing="ij")

    def f(th, ph):
        x = torch.stack([torch.sin(th) * torch.cos(ph), torch.sin(th) * torch.sin(ph), torch.cos(th)], -1)
        return fn(x)

    f0 = f(th, ph)
    d_th = (f(th + h, ph) - f(th - h, ph)) / (2 * h)
    d_thth = (f(th + h, ph) - 2 * f0 + f(th - h, ph)) / h**2
    d_phph = (f(th, ph + h) - 2 * f0 + f(th, ph - h)) / h**2
    lap = d_thth + torch.cos(th) / torch.sin(th) * d_th + d_phph / torch.sin(th) ** 2
    return float(-(lap * f0).sum() / (f0 * f0).sum())


def _ambient_laplacian_eigenvalue(fn, x, h=1e-3):
    """Laplace-Beltrami via the Euclidean Laplacian of the 0-homogeneous extension."""
    D = x.shape[-1]
    F = lambda y: fn(y / y.norm(dim=-1, keepdim=True))  # noqa: E731
    f0 = F(x)
    lap = torch.zeros_like(f0)
    for i in range(D):
        e = torch.zeros(D, dtype=torch.float64)
        e[i] = h
        lap = lap + (F(x + e) - 2 * f0 + F(x - e)) / h**2
    return float(-(lap * f0).sum() / (f0 * f0).sum())


class TestScalarHarmonicsS2:
    def test_constant(self):
        v = scalar_harmonics_s2(torch.tensor([0.3, 0.4, math.sqrt(0.75)]), 0)
        assert v.shape == (1,)
        assert abs(float(v[0]) - 1 / math.sqrt(4 * math.pi)) < 1e-15

    @given(unit_vectors(), unit_vectors())
    def test_degree_energy_is_constant(self, x, y):
        vx, vy = scalar_harmonics_s2(x, 6), scalar_harmonics_s2(y, 6)
        deg = harmonic_degrees(6, 2)
        for k in range(7):
            m = torch.as_tensor(deg == k)
            assert abs(float((vx[m] ** 2).sum() - (vy[m] ** 2).sum())) < 1e-12
            assert abs(float((vx[m] ** 2).sum()) - (2 * k + 1) / (4 * math.pi)) < 1e-12

    def test_monte_carlo_gram(self):
        x = sample_uniform(100_000, 2, gen(0))
        v = scalar_harmonics_s2(x, 6)
        gram = v.T @ v * (4 * math.pi / x.shape[0])
        assert float((gram - torch.eye(49, dtype=torch.float64)).abs().max()) < 2e-2

    def test_addition_theorem(self):
        g = gen(1)
        x, y = sample_uniform(100, 2, g), sample_uniform(100, 2, g)
        vx, vy = scalar_harmonics_s2(x, 8), scalar_harmonics_s2(y, 8)
        t = (x * y).sum(-1)
        deg = harmonic_degrees(8, 2)
        for k in range(9):
            m = torch.as_tensor(deg == k)
            lhs = (vx[:, m] * vy[:, m]).sum(-1)
            rhs = (2 * k + 1) / (4 * math.pi) * gegenbauer_values(k, 0.5, t)[:, k]
            assert float((lhs - rhs).abs().max()) < 1e-10

    def test_matches_scipy_up_to_sign(self):
        x = sample_uniform(30, 2, gen(2))
        colat = torch.arccos(x[:, 2]).numpy()
        lon = torch.atan2(x[:, 1], x[:, 0]).numpy()
        v = scalar_harmonics_s2(x, 5).numpy()
        col = 0
        for k in range(6):
            for m in range(-k, k + 1):
                y = sph_harm_y(k, abs(m), colat, lon)
                ref = y.real if m == 0 else math.sqrt(2) * (y.imag if m < 0 else y.real)
                got = v[:, col]
                sign = np.sign(got @ ref)
                assert np.allclose(sign * got, ref, atol=1e-12), (k, m)
                col += 1

    @pytest.mark.parametrize("col", [1, 3, 5, 8, 11, 17, 24])
    def test_laplacian_eigenvalue(self, col):
        k = int(harmonic_degrees(4, 2)[col])
        lam = _latlon_laplacian_eigenvalue(lambda x: scalar_harmonics_s2(x, 4)[..., col])
        assert abs(lam - k * (k + 1)) <= 0.01 * k * (k + 1)

    def test_smooth_through_poles(self):
        eps = torch.tensor([1e-9, 0.0, 0.0], dtype=torch.float64)
        n = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
        a = scalar_harmonics_s2(n, 6)
        b = scalar_harmonics_s2(torch.nn.functional.normalize(n + eps, dim=0), 6)
        assert torch.isfinite(a).all()
        assert float((a - b).abs().max()) < 1e-7


class TestVectorHarmonics:
    def test_counts(self):
        x = sample_uniform(4, 2, gen(3))
        div, curl = vector_harmonics_s2(x, 5)
        assert div.shape == curl.shape == (4, 35, 3)
        assert div.shape[1] + curl.shape[1] == 70
        div9, curl9 = vector_harmonics_s2(x, 9)
        assert div9.shape[1] + curl9.shape[1] == 198

    def test_empty_for_degree_zero(self):
        div, curl = vector_harmonics_s2(sample_uniform(3, 2, gen()), 0)
        assert div.shape == (3, 0, 3) and curl.shape == (3, 0, 3)

    @given(unit_vectors())
    def test_tangent(self, x):
        div, curl = vector_harmonics_s2(x, 6)
        assert float((div @ x).abs().max()) < 1e-10
        assert float((curl @ x).abs().max()) < 1e-10

    def test_monte_carlo_orthonormality(self):
        x = sample_uniform(100_000, 2, gen(4))
        div, curl = vector_harmonics_s2(x, 4)
        w = 4 * math.pi / x.shape[0]
        cross = torch.einsum("nid,njd->ij", div, curl) * w
        gram = torch.einsum("nid,njd->ij", div, div) * w
        assert float(cross.abs().max()) < 2e-2
        assert float((gram - torch.eye(div.shape[1], dtype=torch.float64)).abs().max()) < 3e-2

    def test_div_fields_are_gradients(self):
        # numerical tangential gradient of the 0-homogeneous extension
        x = torch.nn.functional.normalize(torch.tensor([0.3, -0.5, 0.7], dtype=torch.float64), dim=0)
        h = 1e-6
        div, _ = vector_harmonics_s2(x, 3)
        num = torch.zeros(15, 3, dtype=torch.float64)
        for i in range(3):
            e = torch.zeros(3, dtype=torch.float64)
            e[i] = h
            f = lambda y: scalar_harmonics_s2(y / y.norm(), 3)[1:]  # noqa: E731
            num[:, i] = (f(x + e) - f(x - e)) / (2 * h)
        lam = torch.as_tensor([laplace_eigenvalue(int(k), 2) for k in harmonic_degrees(3, 2)[1:]], dtype=torch.float64)
        assert torch.allclose(div, num / lam.sqrt().unsqueeze(-1), atol=1e-8)


class TestScalarHarmonicsSd:
    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_constant(self, d):
        x = sample_uniform(1, d, gen(5))[0]
        v = scalar_harmonics_sd(x, 0)
        assert v.shape == (1,)
        vol = 2 * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2)
        assert abs(float(v[0]) - 1 / math.sqrt(vol)) < 1e-14

    @pytest.mark.parametrize("d,K", [(2, 6), (3, 5), (4, 4)])
    def test_addition_theorem(self, d, K):
        g = gen(6)
        x, y = sample_uniform(50, d, g), sample_uniform(50, d, g)
        vx, vy = scalar_harmonics_sd(x, K), scalar_harmonics_sd(y, K)
        assert vx.shape[-1] == total_harmonic_count(K, d)
        t = (x * y).sum(-1)
        deg = harmonic_degrees(K, d)
        alpha = (d - 1) / 2
        for k in range(K + 1):
            m = torch.as_tensor(deg == k)
            lhs = (vx[:, m] * vy[:, m]).sum(-1)
            rhs = addition_constant(k, d) * gegenbauer_values(k, alpha, t)[:, k]
            assert float((lhs - rhs).abs().max()) < 1e-10

    def test_same_eigenspaces_as_s2(self):
        x = sample_uniform(200, 2, gen(7))
        a, b = scalar_harmonics_s2(x, 5), scalar_harmonics_sd(x, 5)
        deg = harmonic_degrees(5, 2)
        for k in range(6):
            m = torch.as_tensor(deg == k)
            coef = torch.linalg.lstsq(a[:, m], b[:, m]).solution
            assert float((a[:, m] @ coef - b[:, m]).abs().max()) < 1e-10
            eye = torch.eye(int(m.sum()), dtype=torch.float64)
            assert float((coef.T @ coef - eye).abs().max()) < 1e-9

    @pytest.mark.parametrize("col", [1, 5, 13])
    def test_ambient_laplacian_on_s3(self, col):
        k = int(harmonic_degrees(2, 3)[col])
        x = sample_uniform(64, 3, gen(8))
        lam = _ambient_laplacian_eigenvalue(lambda y: scalar_harmonics_sd(y, 2)[..., col], x)
        assert abs(lam - laplace_eigenvalue(k, 3)) <= 0.01 * laplace_eigenvalue(k, 3)

    def test_dispatch(self):
        x = sample_uniform(3, 2, gen(9))
        assert torch.equal(scalar_harmonics(x, 3), scalar_harmonics_s2(x, 3))
        y = sample_uniform(3, 3, gen(9))
        assert torch.equal(scalar_harmonics(y, 3), scalar_harmonics_sd(y, 3))
