import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from scipy.stats import multivariate_normal

from conftest import gen
from rdgp.errors import LinearAlgebraError, NumericalError
from rdgp.gvf import prior_cov, prior_cov_diag
from rdgp.kernels import MaternSpec, scalar_matern_kernel
from rdgp.sphere import projection_matrix, sample_uniform
from rdgp.variational import (
    ExactGp,
    IlLayer,
    IvLayer,
    PriorModule,
    exact_log_marginal,
    exact_posterior,
    identity_raw,
    kl_diag,
    kl_whitened,
    make_layer,
    robust_cholesky,
    sample_points,
    tril_from_raw,
)

KINDS = ("scalar", "projected", "frame", "hodge")


def points(n, seed):
    x = sample_uniform(4 * n, 2, gen(seed))
    return x[x[:, 2].abs() < 0.95][:n]


def module(kind, K=4, **kw):
    return PriorModule(kind, K=K, kappa=0.7, sigma2=1.3, **kw)


def layer(family, kind, K=4, extended=False):
    pm = module(kind, K)
    if family == "il":
        return IlLayer(pm, points(12, 99))
    return IvLayer(pm, inducing_degree=2, extended=extended)


class TestHelpers:
    def test_tril_identity(self):
        assert torch.allclose(tril_from_raw(identity_raw(5), 5), torch.eye(5, dtype=torch.float64), atol=1e-15)

    @given(st.integers(1, 6), st.integers(0, 100))
    def test_tril_is_lower_with_positive_diagonal(self, n, seed):
        raw = torch.randn(n * (n + 1) // 2, dtype=torch.float64, generator=gen(seed))
        L = tril_from_raw(raw, n)
        assert torch.equal(L, torch.tril(L))
        assert bool((L.diagonal() > 0).all())

    @given(st.integers(1, 5), st.integers(0, 100))
    def test_kl_whitened_matches_torch(self, n, seed):
        g = gen(seed)
        mean = torch.randn(n, dtype=torch.float64, generator=g)
        L = tril_from_raw(torch.randn(n * (n + 1) // 2, dtype=torch.float64, generator=g), n)
        q = torch.distributions.MultivariateNormal(mean, scale_tril=L)
        p = torch.distributions.MultivariateNormal(torch.zeros(n, dtype=torch.float64), torch.eye(n, dtype=torch.float64))
        assert abs(float(kl_whitened(mean, L)) - float(torch.distributions.kl_divergence(q, p))) < 1e-10

    def test_kl_diag(self):
        d = torch.tensor([0.5, 1.0, 2.0], dtype=torch.float64)
        ref = sum(0.5 * (v - 1 - math.log(v)) for v in (0.5, 1.0, 2.0))
        assert abs(float(kl_diag(d)) - ref) < 1e-15
        assert float(kl_diag(torch.ones(4, dtype=torch.float64))) == 0.0

    def test_robust_cholesky_rescues_semidefinite(self):
        v = torch.randn(6, 2, dtype=torch.float64, generator=gen(1))
        a = v @ v.T
        L = robust_cholesky(a)
        assert float((L @ L.T - a).abs().max()) < 1e-5 * float(a.diagonal().mean())

    def test_robust_cholesky_fails_on_indefinite(self):
        with pytest.raises(LinearAlgebraError):
            robust_cholesky(torch.diag(torch.tensor([1.0, -1.0], dtype=torch.float64)))


class TestNeutrality:
    @pytest.mark.parametrize("family", ["il", "iv"])
    @pytest.mark.parametrize("kind", KINDS)
    def test_identity_state_reproduces_prior(self, family, kind):
        lay = layer(family, kind)
        x = points(50, 2)
        prior = lay.prior()
        with torch.no_grad():
            mean, cov = lay.moments(x)
            _, full = lay.moments(x, full_cov=True)
            prior = lay.prior()
            diag = prior_cov_diag(prior, x)
            ref = prior_cov(prior, x, x).permute(0, 2, 1, 3)
        assert float(mean.abs().max()) == 0.0
        assert float((cov - diag).abs().max()) < 1e-10
        assert float((full - ref).abs().max()) < 1e-10
        assert float(lay.kl().detach()) == 0.0

    @pytest.mark.parametrize("kind", KINDS)
    def test_extended_identity_is_neutral(self, kind):
        lay = layer("iv", kind, extended=True)
        x = points(20, 3)
        with torch.no_grad():
            _, cov = lay.moments(x)
            diag = prior_cov_diag(lay.prior(), x)
        assert float((cov - diag).abs().max()) < 1e-10
        assert float(lay.kl().detach()) == 0.0


class TestIvLayer:
    def test_inducing_counts(self):
        assert IvLayer(module("scalar", K=6)).M == 49
        assert IvLayer(module("scalar", K=6), inducing_degree=3).M == 16
        assert IvLayer(module("hodge", K=5)).M == 70
        assert IvLayer(module("projected", K=3)).M == 3 * 16

    def test_groups_follow_components(self):
        assert len(IvLayer(module("projected", K=3)).groups) == 3
        assert len(IvLayer(module("frame", K=3)).groups) == 2
        assert len(IvLayer(module("hodge", K=3)).groups) == 1

    def test_degree_above_truncation(self):
        with pytest.raises(ValueError):
            IvLayer(module("scalar", K=3), inducing_degree=4)

    def test_tail_levels_are_tied(self):
        lay = IvLayer(module("scalar", K=5), inducing_degree=2, extended=True)
        assert lay.raw_dprime.shape[0] == 3  # degrees 3, 4, 5
        with torch.no_grad():
            lay.raw_dprime.copy_(torch.tensor([0.1, 0.2, 0.3]))
        d = lay.dprime()
        assert d.shape[0] == 36 - 9
        assert torch.allclose(d[:7], d[0].expand(7))

    def test_moments_match_weight_space(self):
        lay = IvLayer(module("hodge", K=3), inducing_degree=2, extended=True)
        g = gen(4)
        with torch.no_grad():
            for p in lay.parameters():
                p.add_(0.3 * torch.randn(p.shape, dtype=torch.float64, generator=g))
        x = points(3, 5)
        with torch.no_grad():
            mean, cov = lay.moments(x)
        f = lay.function_sample(gen(6), num=20000)
        vals = f(x)  # (S, n, 3)
        assert float((vals.mean(0) - mean).abs().max()) < 4 * float(cov.diagonal(dim1=-2, dim2=-1).max().sqrt()) / math.sqrt(20000)
        emp = torch.einsum("snp,snq->npq", vals - vals.mean(0), vals - vals.mean(0)) / 19999
        assert float((emp - cov).abs().max()) < 0.05 * float(cov.abs().max())

    def test_shared_noise_reproduces_draw(self):
        lay = IvLayer(module("scalar", K=3))
        eps_u = torch.randn(lay.M, dtype=torch.float64, generator=gen(7))
        eps_t = torch.zeros(lay.total - lay.M, dtype=torch.float64)
        x = points(4, 8)
        a = lay.function_sample(eps_u=eps_u, eps_t=eps_t)(x)
        b = lay.function_sample(eps_u=eps_u, eps_t=eps_t)(x)
        assert torch.equal(a, b)


class TestIlLayer:
    def test_parameters_are_tangent_projected(self):
        lay = IlLayer(module("hodge", K=3), points(6, 9))
        assert lay.q_mu.shape[0] == 18
        mean, factor = lay.whitened_moments()
        assert mean.shape[0] == 12 and factor.shape == (12, 18)

    @pytest.mark.parametrize("kind", ["scalar", "hodge"])
    def test_function_sample_matches_moments(self, kind):
        lay = IlLayer(module(kind, K=3), points(8, 10))
        g = gen(11)
        with torch.no_grad():
            for p in lay.parameters():
                p.add_(0.2 * torch.randn(p.shape, dtype=torch.float64, generator=g))
        x = points(3, 12)
        with torch.no_grad():
            mean, cov = lay.moments(x)
        vals = lay.function_sample(gen(13), num=20000)(x)
        scale = float(cov.diagonal(dim1=-2, dim2=-1).max().sqrt())
        assert float((vals.mean(0) - mean).abs().max()) < 5 * scale / math.sqrt(20000)
        emp = torch.einsum("snp,snq->npq", vals - vals.mean(0), vals - vals.mean(0)) / 19999
        assert float((emp - cov).abs().max()) < 0.05 * float(cov.abs().max()) + 1e-12

    def test_optimal_state_interpolates_exact_gp(self):
        # with q(u) set to the exact posterior at z = x and tiny noise the layer
        # reproduces the exact predictive mean away from the data
        spec = MaternSpec(nu=1.5, kappa=0.7, sigma2=1.3, K=4)
        x = points(10, 14)
        y = torch.sin(3 * x[:, 0])
        lay = IlLayer(PriorModule("scalar", K=4, kappa=0.7, sigma2=1.3), x)
        kzz = scalar_matern_kernel(spec, x, x)
        L = torch.linalg.cholesky(kzz + 1e-12 * torch.eye(10, dtype=torch.float64))
        noise = 1e-3
        post_mean_u = kzz @ torch.linalg.solve(kzz + noise * torch.eye(10, dtype=torch.float64), y)
        with torch.no_grad():
            lay.q_mu.copy_(torch.linalg.solve_triangular(L, post_mean_u[:, None], upper=False)[:, 0])
        xs = points(5, 15)
        with torch.no_grad():
            mean, _ = lay.moments(xs)
        ref, _ = exact_posterior(ExactGp(spec, x, y, noise), xs, full_cov=False)
        assert float((mean[:, 0] - ref).abs().max()) < 1e-6


class TestSamplePoints:
    def test_scalar(self):
        mean = torch.zeros(3, 1, dtype=torch.float64)
        cov = torch.full((3, 1, 1), 4.0, dtype=torch.float64)
        out = sample_points(mean, cov, torch.ones(3, 1, dtype=torch.float64))
        assert torch.allclose(out, torch.full((3, 1), 2.0, dtype=torch.float64))

    def test_negative_variance_raises(self):
        cov = torch.full((1, 1, 1), -1.0, dtype=torch.float64)
        with pytest.raises(NumericalError):
            sample_points(torch.zeros(1, 1, dtype=torch.float64), cov, torch.zeros(1, 1, dtype=torch.float64))

    def test_vector_samples_are_tangent_with_right_covariance(self):
        x = points(1, 16)
        a = torch.randn(3, 3, dtype=torch.float64, generator=gen(17))
        P = projection_matrix(x[0])
        cov = (P @ a @ a.T @ P)[None]
        noise = torch.randn(40000, 3, dtype=torch.float64, generator=gen(18))
        out = sample_points(torch.zeros(40000, 3, dtype=torch.float64), cov.expand(40000, 3, 3), noise, x.expand(40000, 3))
        assert float((out @ x[0]).abs().max()) < 1e-10
        emp = out.T @ out / 40000
        assert float((emp - cov[0]).abs().max()) < 0.05 * float(cov.abs().max())

    def test_zero_covariance_gives_mean(self):
        x = points(2, 19)
        mean = torch.randn(2, 3, dtype=torch.float64, generator=gen(20))
        out = sample_points(mean, torch.zeros(2, 3, 3, dtype=torch.float64), torch.ones(2, 3, dtype=torch.float64), x)
        assert torch.equal(out, mean)


class TestExactGp:
    def test_scalar_against_numpy(self):
        spec = MaternSpec(nu=2.5, kappa=0.5, sigma2=2.0, K=6)
        x, xs = points(15, 21), points(4, 22)
        y = torch.randn(15, dtype=torch.float64, generator=gen(23))
        k = scalar_matern_kernel(spec, x, x).numpy()
        ks = scalar_matern_kernel(spec, xs, x).numpy()
        kss = scalar_matern_kernel(spec, xs, xs).numpy()
        a = k + 0.1 * np.eye(15)
        ref_mean = ks @ np.linalg.solve(a, y.numpy())
        ref_cov = kss - ks @ np.linalg.solve(a, ks.T)
        mean, cov = exact_posterior(ExactGp(spec, x, y, 0.1), xs)
        assert np.allclose(mean.numpy(), ref_mean, atol=1e-10)
        assert np.allclose(cov.numpy(), ref_cov, atol=1e-10)
        _, var = exact_posterior(ExactGp(spec, x, y, 0.1), xs, full_cov=False)
        assert np.allclose(var.numpy(), np.diag(ref_cov), atol=1e-10)
        lml = float(exact_log_marginal(ExactGp(spec, x, y, 0.1)))
        assert abs(lml - multivariate_normal(np.zeros(15), a).logpdf(y.numpy())) < 1e-9

    def test_no_data_gives_prior(self):
        spec = MaternSpec(K=4)
        xs = points(3, 24)
        mean, cov = exact_posterior(ExactGp(spec, torch.zeros(0, 3), torch.zeros(0), 0.1), xs)
        assert float(mean.abs().max()) == 0.0
        assert torch.allclose(cov, scalar_matern_kernel(spec, xs, xs))

    def test_vector_posterior_is_tangent(self):
        prior = module("hodge").prior()
        x, xs = points(12, 25), points(6, 26)
        y = (projection_matrix(x) @ torch.randn(12, 3, 1, dtype=torch.float64, generator=gen(27)))[..., 0]
        mean, cov = exact_posterior(ExactGp(prior, x, y, 0.05), xs, full_cov=False)
        assert mean.shape == (6, 3) and cov.shape == (6, 3, 3)
        assert float((mean * xs).sum(-1).abs().max()) < 1e-12
        assert float((cov @ xs[..., None]).abs().max()) < 1e-12
        assert float(torch.linalg.eigvalsh(cov).min()) > -1e-10


def test_make_layer_checks():
    pm = module("scalar")
    with pytest.raises(ValueError):
        make_layer("il", pm)
    with pytest.raises(ValueError):
        make_layer("xx", pm)
    with pytest.raises(ValueError):
        PriorModule("nope")
    assert isinstance(make_layer("iv", pm), IvLayer)
