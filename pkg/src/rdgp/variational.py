"""Sparse variational layers and the exact-GP oracle.

Two whitened families are provided.  ``IlLayer`` places inducing values at
fixed locations ``z`` on the sphere; ``IvLayer`` uses interdomain inducing
variables given by projections onto the (scaled) harmonic features, so its
posterior is an explicit finite basis expansion.

Layers work for scalar priors (a ``MaternSpec``, output dimension 1) and
for vector-field priors alike.  Shapes follow ``(n, p)`` for means and
``(n, p, p)`` for per-point covariances.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch
from torch import nn

from ._torch import DTYPE, as_tensor, inv_softplus, make_generator, softplus
from .errors import LinearAlgebraError, NotSampleableError, NumericalError
from .gvf import (
    FramePrior,
    HodgePrior,
    ProjectedPrior,
    feature_count,
    feature_layout,
    gram_table,
    gvf_features,
    output_dim,
    prior_cov,
    prior_cov_diag,
)
from .kernels import INF, HodgeSpec, MaternSpec
from .sphere import projection_matrix, tangent_basis

NU_MIN = 0.25
JITTERS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


# -- hyperparameter modules --------------------------------------------------


class MaternParams(nn.Module):
    """Trainable (nu, kappa, sigma2) stored as unconstrained raw values."""

    def __init__(self, nu=1.5, kappa=1.0, sigma2=1.0, K=6, d=2, train_nu=True):
        super().__init__()
        self.K, self.d = int(K), int(d)
        self.raw_kappa = nn.Parameter(inv_softplus(kappa).reshape(()))
        self.raw_sigma2 = nn.Parameter(inv_softplus(sigma2).reshape(()))
        self.transforms = {"raw_kappa": "softplus", "raw_sigma2": "softplus"}
        self.nu_fixed = None
        if math.isinf(nu):
            self.nu_fixed = INF
        elif train_nu:
            self.raw_nu = nn.Parameter(inv_softplus(nu - NU_MIN).reshape(()))
            self.transforms["raw_nu"] = "softplus"
        else:
            self.nu_fixed = float(nu)

    @property
    def nu(self):
        if self.nu_fixed is not None:
            return self.nu_fixed
        return NU_MIN + softplus(self.raw_nu)

    @property
    def kappa(self):
        return softplus(self.raw_kappa)

    @property
    def sigma2(self):
        return softplus(self.raw_sigma2)

    def spec(self):
        return MaternSpec(nu=self.nu, kappa=self.kappa, sigma2=self.sigma2, K=self.K, d=self.d)


class PriorModule(nn.Module):
    """Builds a scalar, projected, frame or Hodge prior from trainable parts."""

    KINDS = ("scalar", "projected", "frame", "hodge")

    def __init__(self, kind, K=6, d=2, nu=1.5, kappa=1.0, sigma2=1.0, train_nu=True):
        super().__init__()
        if kind not in self.KINDS:
            raise ValueError(f"unknown prior kind {kind!r}; expected one of {self.KINDS}")
        self.kind, self.d = kind, int(d)
        count = {"scalar": 1, "projected": d + 1, "frame": 2, "hodge": 2}[kind]
        self.parts = nn.ModuleList(
            MaternParams(nu=nu, kappa=kappa, sigma2=sigma2, K=K, d=d, train_nu=train_nu)
            for _ in range(count)
        )
        self.prior()  # validate eagerly

    @property
    def output_dim(self):
        return 1 if self.kind == "scalar" else self.d + 1

    def prior(self):
        specs = [p.spec() for p in self.parts]
        if self.kind == "scalar":
            return specs[0]
        if self.kind == "projected":
            return ProjectedPrior(tuple(specs))
        if self.kind == "frame":
            return FramePrior(tuple(specs))
        return HodgePrior(HodgeSpec(div=specs[0], curl=specs[1]))

    def set_sigma2(self, value):
        with torch.no_grad():
            for p in self.parts:
                p.raw_sigma2.copy_(inv_softplus(value))


# -- small linear-algebra helpers -------------------------------------------


def robust_cholesky(a, jitters=JITTERS):
    """Cholesky with relative diagonal jitter, escalated on failure."""
    eye = torch.eye(a.shape[-1], dtype=a.dtype)
    scale = a.diagonal(dim1=-2, dim2=-1).mean().detach().abs().clamp_min(1e-300)
    for j in jitters:
        chol, info = torch.linalg.cholesky_ex(a + (j * scale) * eye)
        if int(info.max()) == 0:
            return chol
    raise LinearAlgebraError(f"Cholesky failed with jitter up to {jitters[-1]:g} x mean diagonal")


def _tril_size(n):
    return n * (n + 1) // 2


def tril_from_raw(raw, n):
    """Lower-triangular factor from a flat vector; softplus on the diagonal."""
    rows, cols = torch.tril_indices(n, n)
    vals = torch.where(rows == cols, softplus(raw), raw)
    out = raw.new_zeros(n, n)
    return out.index_put((rows, cols), vals)


def identity_raw(n):
    rows, cols = torch.tril_indices(n, n)
    raw = torch.zeros(_tril_size(n), dtype=DTYPE)
    raw[rows == cols] = inv_softplus(1.0)
    return raw


def kl_whitened(mean, chol, logdet=None):
    """KL(N(m, L L^T) || N(0, I)); ``logdet`` overrides log det(L L^T)."""
    if logdet is None:
        logdet = 2.0 * torch.log(chol.diagonal()).sum()
    m = mean.shape[0]
    return 0.5 * ((chol**2).sum() + (mean**2).sum() - m - logdet)


def kl_diag(d):
    """KL(N(0, diag d) || N(0, I))."""
    return 0.5 * (d - 1.0 - torch.log(d)).sum()


# -- per-point reparameterised sampling --------------------------------------


def sample_points(mean, cov, noise, x=None):
    """Draw ``mean + A eps`` with ``A A^T = cov`` independently per point.

    ``mean`` is ``(n, p)``, ``cov`` ``(n, p, p)``, ``noise`` ``(n, p)``.  For
    vector outputs ``cov`` is supported on the tangent space at ``x``; the
    factor is ``P_x chol(cov + s x x^T)`` with ``s = tr(cov) / d``, which is
    tangent by construction and differentiable.
    """
    p = mean.shape[-1]
    if p == 1:
        var = cov[..., 0, 0]
        if bool((var < -1e-8).any()):
            raise NumericalError(f"negative predictive variance {float(var.min()):.3e}")
        return mean + torch.sqrt(var.clamp_min(0.0)).unsqueeze(-1) * noise
    if x is None:
        raise ValueError("vector sampling needs the base points")
    d = p - 1
    tr = cov.diagonal(dim1=-2, dim2=-1).sum(-1)
    zero = tr <= 0
    s = torch.where(zero, torch.ones_like(tr), tr / d)
    outer = x.unsqueeze(-1) * x.unsqueeze(-2)
    eye = torch.eye(p, dtype=cov.dtype)
    a = cov + s[..., None, None] * outer
    a = torch.where(zero[..., None, None], eye.expand_as(a), a)
    chol, info = torch.linalg.cholesky_ex(a)
    if int(info.max()) != 0:
        with torch.no_grad():
            low = torch.linalg.eigvalsh(cov).min()
        if low < -1e-8 * max(1.0, float(tr.detach().max())):
            raise NumericalError(f"per-point covariance has eigenvalue {float(low):.3e}")
        chol = robust_cholesky_batched(a)
    factor = projection_matrix(x) @ chol
    step = (factor @ noise.unsqueeze(-1)).squeeze(-1)
    step = torch.where(zero.unsqueeze(-1), torch.zeros_like(step), step)
    return mean + step


def robust_cholesky_batched(a):
    eye = torch.eye(a.shape[-1], dtype=a.dtype)
    scale = a.diagonal(dim1=-2, dim2=-1).mean(-1, keepdim=True).unsqueeze(-1).detach()
    for j in JITTERS:
        chol, info = torch.linalg.cholesky_ex(a + j * scale * eye)
        if int(info.max()) == 0:
            return chol
    raise LinearAlgebraError("per-point Cholesky failed after jitter escalation")


# -- inducing-location family -------------------------------------------------


class IlLayer(nn.Module):
    """Whitened inducing-location layer with tangent-projected parameters.

    The free parameters are an ambient mean ``m~`` (length ``m p``) and a
    lower-triangular factor ``L~``.  Their tangent parts at ``z``,
    ``m' = B^T m~`` and ``S' = B^T L~ L~^T B`` with ``B`` an orthonormal
    tangent basis per inducing point, are the whitened variational moments
    relative to the tangent-restricted Gram ``B^T k(z, z) B``.
    """

    family = "il"

    def __init__(self, prior_module, z):
        super().__init__()
        self.prior_module = prior_module
        z = as_tensor(z).detach()
        self.register_buffer("z", z)
        p = prior_module.output_dim
        m = z.shape[0]
        if p == 1:
            basis = torch.ones(m, 1, 1, dtype=DTYPE)
        else:
            basis = tangent_basis(z)
        self.register_buffer("basis", basis)
        self.p, self.r, self.m = p, basis.shape[-1], m
        self.q_mu = nn.Parameter(torch.zeros(m * p, dtype=DTYPE))
        self.q_sqrt_raw = nn.Parameter(identity_raw(m * p))
        self.transforms = {"q_mu": "identity", "q_sqrt_raw": "lower_tri_softplus_diag"}
        with torch.no_grad():
            self._zz_table = gram_table(prior_module.prior(), z, z)

    def prior(self):
        return self.prior_module.prior()

    def _to_tangent(self, v):
        """Contract the per-point ambient axis of ``(m p, ...)`` with the basis."""
        tail = v.shape[1:]
        v = v.reshape((self.m, self.p) + tail)
        out = torch.einsum("mpr,mp...->mr...", self.basis, v)
        return out.reshape((self.m * self.r,) + tail)

    def q_factor(self):
        return tril_from_raw(self.q_sqrt_raw, self.m * self.p)

    def whitened_moments(self):
        """(m', F) with S' = F F^T."""
        mean = self._to_tangent(self.q_mu)
        factor = self._to_tangent(self.q_factor())
        return mean, factor

    def _gram_chol(self, prior):
        kzz = prior_cov(prior, self.z, self.z, self._zz_table)  # (m, m, p, p)
        kzz = torch.einsum("apr,abpq,bqs->arbs", self.basis, kzz, self.basis)
        n = self.m * self.r
        return robust_cholesky(kzz.reshape(n, n))

    def _projected_cross(self, prior, x):
        """A = k(x, z)_T L^{-T}, shape ``(n p, m r)``."""
        kxz = prior_cov(prior, x, self.z)  # (n, m, p, q)
        kxz = torch.einsum("nmpq,mqr->npmr", kxz, self.basis)
        n = x.shape[0]
        kxz = kxz.reshape(n * self.p, self.m * self.r)
        chol = self._gram_chol(prior)
        return torch.linalg.solve_triangular(chol, kxz.T, upper=False).T

    def moments(self, x, full_cov=False):
        x = as_tensor(x)
        prior = self.prior()
        n = x.shape[0]
        a = self._projected_cross(prior, x)
        mean, factor = self.whitened_moments()
        mu = (a @ mean).reshape(n, self.p)
        af = a @ factor
        if full_cov:
            kxx = prior_cov(prior, x, x).permute(0, 2, 1, 3).reshape(n * self.p, n * self.p)
            cov = kxx - a @ a.T + af @ af.T
            return mu, cov.reshape(n, self.p, n, self.p)
        a3 = a.reshape(n, self.p, -1)
        af3 = af.reshape(n, self.p, -1)
        cov = prior_cov_diag(prior, x) - a3 @ a3.transpose(-1, -2) + af3 @ af3.transpose(-1, -2)
        return mu, cov

    def kl(self):
        mean, factor = self.whitened_moments()
        if self.p == 1:
            return kl_whitened(mean, factor)
        # S' = B^T L~ L~^T B equals I only up to rounding at the whitened start.
        # Eigenvalues within rounding of 1 count as 1 (the KL is flat there),
        # so the neutral state has KL exactly 0.
        lam = torch.linalg.eigvalsh(factor @ factor.T)
        if float(lam.detach().min()) <= 0.0:
            raise LinearAlgebraError("tangent variational covariance is singular")
        e = lam - 1.0
        e = torch.where(e.abs() <= 64 * torch.finfo(DTYPE).eps, torch.zeros_like(e), e)
        return 0.5 * ((e - torch.log1p(e)).sum() + (mean**2).sum())

    def sample_at(self, x, noise):
        mean, cov = self.moments(x)
        return sample_points(mean, cov, noise, x)

    def function_sample(self, generator=None, num=None):
        """Matheron-rule posterior draw built on a weight-space prior draw.

        With ``num`` set, returns ``num`` independent draws evaluated jointly;
        see ``apply_weights`` for the shapes.
        """
        prior = self.prior()
        if not isinstance(prior, (MaternSpec, ProjectedPrior, FramePrior, HodgePrior)):
            raise NotSampleableError(f"no prior sampler for {type(prior).__name__}")
        cols = () if num is None else (int(num),)
        total = feature_count(prior)
        with torch.no_grad():
            w = torch.randn((total,) + cols, dtype=DTYPE, generator=generator)
            eps = torch.randn((self.m * self.p,) + cols, dtype=DTYPE, generator=generator)
            mean, factor = self.whitened_moments()
            u = mean.reshape((-1,) + (1,) * len(cols)) + factor @ eps
            chol = self._gram_chol(prior)
            fz = gvf_features(prior, self.z) @ w  # (m, p, *cols)
            fz = fz.reshape((self.m * self.p,) + cols)
            v = torch.linalg.solve_triangular(chol, self._to_tangent(fz).reshape(chol.shape[0], -1), upper=False)
            coef = torch.linalg.solve_triangular(chol.T, u.reshape(chol.shape[0], -1) - v, upper=True)
        coef = coef.reshape((self.m, self.r) + cols)
        basis, z = self.basis, self.z

        def sample(x):
            x = as_tensor(x)
            flat = x.reshape(-1, x.shape[-1])
            kxz = prior_cov(prior, flat, z).reshape(x.shape[:-1] + (z.shape[0], self.p, self.p))
            kb = torch.einsum("...mpq,mqr->...pmr", kxz, basis)
            if num is None:
                update = torch.einsum("...pmr,mr->...p", kb, coef)
            elif x.dim() == 2:
                update = torch.einsum("npmr,mrs->snp", kb, coef)
            else:
                update = torch.einsum("snpmr,mrs->snp", kb, coef)
            return apply_weights(prior, x, w) + update

        sample.output_dim = self.p
        return sample


def apply_weights(prior, x, w):
    """``features(x) @ w``.

    For a single weight vector ``(M,)`` the result is ``(..., p)``.  For a
    weight matrix ``(M, S)`` the inputs are either shared, ``(n, D)``, or one
    set per draw, ``(S, n, D)``; the result is ``(S, n, p)``.
    """
    phi = gvf_features(prior, x)
    if w.dim() == 1:
        return phi @ w
    if x.dim() == 2:
        return (phi @ w).movedim(-1, 0)
    return torch.einsum("snpm,ms->snp", phi, w)


# -- interdomain family -------------------------------------------------------


class IvLayer(nn.Module):
    """Whitened interdomain layer over the leading harmonic features.

    Inducing features are all columns of degree at most ``inducing_degree``.
    For projected and frame priors each independent component carries its
    own Gaussian block; Hodge priors use a single joint block.  With
    ``extended=True`` the remaining columns get a trainable diagonal
    covariance, tied across each eigenvalue level.
    """

    family = "iv"

    def __init__(self, prior_module, inducing_degree=None, extended=False):
        super().__init__()
        self.prior_module = prior_module
        prior = prior_module.prior()
        degrees, levels, comps = feature_layout(prior)
        k_max = int(degrees.max()) if len(degrees) else 0
        k_u = k_max if inducing_degree is None else int(inducing_degree)
        if k_u > k_max:
            raise ValueError(f"inducing degree {k_u} exceeds the kernel truncation {k_max}")
        self.p = prior_module.output_dim
        self.total = feature_count(prior)
        self.M = int((degrees <= k_u).sum())
        group_ids = comps[: self.M]
        self.groups = [np.flatnonzero(group_ids == g) for g in np.unique(group_ids)]
        self.q_mu = nn.ParameterList(nn.Parameter(torch.zeros(len(g), dtype=DTYPE)) for g in self.groups)
        self.q_sqrt_raw = nn.ParameterList(nn.Parameter(identity_raw(len(g))) for g in self.groups)
        self.transforms = {}
        for i in range(len(self.groups)):
            self.transforms[f"q_mu.{i}"] = "identity"
            self.transforms[f"q_sqrt_raw.{i}"] = "lower_tri_softplus_diag"
        tail_levels = levels[self.M :]
        uniq = sorted(set(tail_levels))
        self.register_buffer(
            "tail_level_index", torch.as_tensor([uniq.index(l) for l in tail_levels], dtype=torch.long)
        )
        self.extended = bool(extended) and len(uniq) > 0
        if self.extended:
            self.raw_dprime = nn.Parameter(torch.full((len(uniq),), float(inv_softplus(1.0)), dtype=DTYPE))
            self.transforms["raw_dprime"] = "softplus"
        perm = np.concatenate(self.groups) if self.groups else np.zeros(0, dtype=int)
        self.register_buffer("perm", torch.as_tensor(perm, dtype=torch.long))

    def prior(self):
        return self.prior_module.prior()

    def dprime(self):
        """Tail variances, one per tail column (ones when not extended)."""
        n_tail = self.total - self.M
        if not self.extended:
            return torch.ones(n_tail, dtype=DTYPE)
        return softplus(self.raw_dprime)[self.tail_level_index]

    def whitened_moments(self):
        """Mean and factor over the inducing columns in their natural order."""
        mean = torch.zeros(self.M, dtype=DTYPE)
        factor = torch.zeros(self.M, self.M, dtype=DTYPE)
        for g, mu, raw in zip(self.groups, self.q_mu, self.q_sqrt_raw):
            idx = torch.as_tensor(g)
            mean = mean.index_put((idx,), mu)
            chol = tril_from_raw(raw, len(g))
            factor = factor.index_put((idx.unsqueeze(-1), idx.unsqueeze(0)), chol)
        return mean, factor

    def _blocks(self, phi_u):
        """Per-group ``(Phi_g m_g, Phi_g L_g)``."""
        mean = 0.0
        parts = []
        for g, mu, raw in zip(self.groups, self.q_mu, self.q_sqrt_raw):
            cols = phi_u[..., torch.as_tensor(g)]
            mean = mean + cols @ mu
            parts.append(cols @ tril_from_raw(raw, len(g)))
        a = torch.cat(parts, -1) if parts else phi_u[..., :0]
        return mean, a

    def moments(self, x, full_cov=False):
        x = as_tensor(x)
        phi = gvf_features(self.prior(), x)  # (n, p, total)
        phi_u, phi_t = phi[..., : self.M], phi[..., self.M :]
        mean, a = self._blocks(phi_u)
        if not torch.is_tensor(mean):
            mean = phi.new_zeros(phi.shape[:-1])
        tail = phi_t * torch.sqrt(self.dprime())
        if full_cov:
            n = x.shape[0]
            a2 = a.reshape(n * self.p, -1)
            t2 = tail.reshape(n * self.p, -1)
            cov = a2 @ a2.T + t2 @ t2.T
            return mean, cov.reshape(n, self.p, n, self.p)
        cov = a @ a.transpose(-1, -2) + tail @ tail.transpose(-1, -2)
        return mean, cov

    def kl(self):
        total = 0.0
        for mu, raw in zip(self.q_mu, self.q_sqrt_raw):
            total = total + kl_whitened(mu, tril_from_raw(raw, mu.shape[0]))
        if self.extended:
            total = total + kl_diag(self.dprime())
        return torch.as_tensor(total, dtype=DTYPE)

    def sample_at(self, x, noise):
        mean, cov = self.moments(x)
        return sample_points(mean, cov, noise, x)

    def weight_sample(self, generator=None, eps_u=None, eps_t=None, num=None):
        """Weights ``m' + L eps_u`` and ``sqrt(D') eps_t``, stacked; ``(total,)`` or ``(total, num)``."""
        cols = () if num is None else (int(num),)
        if eps_u is None:
            eps_u = torch.randn((self.M,) + cols, dtype=DTYPE, generator=generator)
        if eps_t is None:
            eps_t = torch.randn((self.total - self.M,) + cols, dtype=DTYPE, generator=generator)
        eps_u, eps_t = as_tensor(eps_u), as_tensor(eps_t)
        mean, factor = self.whitened_moments()
        shape = (-1,) + (1,) * (eps_u.dim() - 1)
        w_u = mean.reshape(shape) + factor @ eps_u
        w_t = torch.sqrt(self.dprime()).reshape(shape) * eps_t
        return torch.cat([w_u, w_t])

    def function_sample(self, generator=None, num=None, eps_u=None, eps_t=None):
        """Exact posterior draw as a finite basis expansion (batched with ``num``)."""
        prior = self.prior()
        with torch.no_grad():
            w = self.weight_sample(generator, eps_u, eps_t, num)

        def sample(x):
            return apply_weights(prior, as_tensor(x), w)

        sample.output_dim = self.p
        return sample


# -- exact GP oracle -----------------------------------------------------------


@dataclass
class ExactGp:
    """Exact GP regression with zero prior mean and diagonal Gaussian noise.

    ``prior`` is a ``MaternSpec`` (scalar targets, shape ``(n,)``) or a GVF
    prior (tangent targets, shape ``(n, D)``).  ``noise`` is a scalar or a
    per-observation variance.
    """

    prior: object
    x: torch.Tensor
    y: torch.Tensor
    noise: object


def _exact_setup(gp):
    x = as_tensor(gp.x)
    y = as_tensor(gp.y)
    p = output_dim(gp.prior)
    n = x.shape[0]
    if p == 1:
        basis = torch.ones(n, 1, 1, dtype=DTYPE)
        y = y.reshape(n, 1)
    else:
        basis = tangent_basis(x)
    r = basis.shape[-1]
    k = prior_cov(gp.prior, x, x)
    k = torch.einsum("apr,abpq,bqs->arbs", basis, k, basis).reshape(n * r, n * r)
    noise = as_tensor(gp.noise)
    noise = noise.expand(n) if noise.dim() == 0 else noise.reshape(n)
    noise = noise.repeat_interleave(r)
    y_t = torch.einsum("npr,np->nr", basis, y).reshape(-1)
    a = k + torch.diag(noise)
    chol, info = torch.linalg.cholesky_ex(a)
    if int(info) != 0:
        jitter = 1e-8 * a.diagonal().mean()
        chol, info = torch.linalg.cholesky_ex(a + jitter * torch.eye(n * r, dtype=DTYPE))
        if int(info) != 0:
            raise LinearAlgebraError("exact GP Gram is not positive definite after 1e-8 jitter")
    return x, basis, y_t, chol, p, r


def exact_posterior(gp, xs, full_cov=True):
    """Posterior mean and covariance at ``xs``.

    Scalar priors return ``(m,)`` and ``(m, m)`` (or ``(m,)`` variances);
    vector priors return ``(m, D)`` and ``(m, D, m, D)`` (or ``(m, D, D)``).
    """
    xs = as_tensor(xs)
    p = output_dim(gp.prior)
    m = xs.shape[0]
    if as_tensor(gp.x).shape[0] == 0:
        mean = torch.zeros(m, p, dtype=DTYPE)
        if full_cov:
            cov = prior_cov(gp.prior, xs, xs).permute(0, 2, 1, 3)
        else:
            cov = prior_cov_diag(gp.prior, xs)
    else:
        x, basis, y_t, chol, p, r = _exact_setup(gp)
        n = x.shape[0]
        ksx = prior_cov(gp.prior, xs, x)
        ksx = torch.einsum("smpq,mqr->spmr", ksx, basis).reshape(m * p, n * r)
        alpha = torch.cholesky_solve(y_t.unsqueeze(-1), chol).squeeze(-1)
        mean = (ksx @ alpha).reshape(m, p)
        v = torch.linalg.solve_triangular(chol, ksx.T, upper=False)
        if full_cov:
            kss = prior_cov(gp.prior, xs, xs).permute(0, 2, 1, 3).reshape(m * p, m * p)
            cov = (kss - v.T @ v).reshape(m, p, m, p)
        else:
            v3 = v.T.reshape(m, p, -1)
            cov = prior_cov_diag(gp.prior, xs) - v3 @ v3.transpose(-1, -2)
    if p == 1:
        mean = mean[:, 0]
        cov = cov[:, 0, :, 0] if full_cov else cov[:, 0, 0]
    return mean, cov


def exact_log_marginal(gp):
    """log N(y; 0, K + Sigma), in tangent coordinates for vector targets."""
    x, basis, y_t, chol, p, r = _exact_setup(gp)
    alpha = torch.cholesky_solve(y_t.unsqueeze(-1), chol).squeeze(-1)
    n = y_t.shape[0]
    return -0.5 * (y_t @ alpha) - torch.log(chol.diagonal()).sum() - 0.5 * n * math.log(2.0 * math.pi)


def make_layer(family, prior_module, z=None, inducing_degree=None, extended=False):
    if family == "il":
        if z is None:
            raise ValueError("inducing-location layers need z")
        return IlLayer(prior_module, z)
    if family == "iv":
        return IvLayer(prior_module, inducing_degree=inducing_degree, extended=extended)
    raise ValueError(f"unknown variational family {family!r}")


def default_generator(seed):
    return seed if isinstance(seed, torch.Generator) else make_generator(seed)
