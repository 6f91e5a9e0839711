"""Truncated Matérn kernels on hyperspheres.

Scalar kernels on S_d are evaluated through the addition theorem,

    k(x, y) = sigma2 / C * sum_k Phi(lambda_k) c_{k,d} C_k^(alpha)(x . y),

and the Hodge (divergence / curl) kernels on S_2 through the gradient of
the same Gegenbauer expansion.  Hyperparameters may be python floats or
torch scalars; gradients flow through either.
"""

from dataclasses import dataclass, replace
from functools import lru_cache
import math

import numpy as np
import torch

from ._torch import as_tensor
from .errors import UnsupportedDimensionError
from .harmonics import (
    addition_constant,
    gegenbauer_derivative_at_one,
    gegenbauer_table,
    gegenbauer_values,
    harmonic_count,
    harmonic_degrees,
    laplace_eigenvalue,
    scalar_harmonics,
    sphere_volume,
    vector_harmonics_s2,
)
from .sphere import cross_matrix

INF = math.inf


def _is_inf(nu):
    return not isinstance(nu, torch.Tensor) and math.isinf(nu)


@dataclass(frozen=True)
class MaternSpec:
    """Hyperparameters of a truncated manifold Matérn kernel on S_d.

    ``nu = INF`` selects the squared-exponential (heat) limit.
    """

    nu: object = 1.5
    kappa: object = 1.0
    sigma2: object = 1.0
    K: int = 6
    d: int = 2

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("truncation K must be nonnegative")
        if self.d < 2:
            raise UnsupportedDimensionError("spheres of dimension >= 2 only")
        # sigma2 = 0 is allowed: it switches a Hodge part off exactly
        if not isinstance(self.kappa, torch.Tensor) and self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if not isinstance(self.sigma2, torch.Tensor) and self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def alpha(self):
        return (self.d - 1) / 2.0

    def with_(self, **kwargs):
        return replace(self, **kwargs)


@dataclass(frozen=True)
class HodgeSpec:
    """Separate hyperparameters for the divergence and curl parts on S_2."""

    div: MaternSpec
    curl: MaternSpec

    def __post_init__(self):
        if self.div.d != 2 or self.curl.d != 2:
            raise UnsupportedDimensionError("Hodge kernels are implemented on S_2 only")
        if self.div.K != self.curl.K:
            raise ValueError("div and curl parts must share the truncation K")
        if self.div.K < 1:
            raise ValueError("Hodge kernels need K >= 1")

    @property
    def K(self):
        return self.div.K


def spectral_weight(spec, lam):
    """Phi(lambda) = (2 nu / kappa^2 + lambda)^(-nu - d/2), or exp(-kappa^2 lambda / 2)."""
    lam = as_tensor(lam)
    kappa = as_tensor(spec.kappa)
    if _is_inf(spec.nu):
        return torch.exp(-0.5 * kappa**2 * lam)
    nu = as_tensor(spec.nu)
    return (2.0 * nu / kappa**2 + lam) ** (-nu - spec.d / 2.0)


@lru_cache(maxsize=None)
def _degree_constants(K, d):
    """(eigenvalues, multiplicities, addition constants) for degrees 0..K."""
    lam = [laplace_eigenvalue(k, d) for k in range(K + 1)]
    counts = [harmonic_count(k, d) for k in range(K + 1)]
    c = [addition_constant(k, d) for k in range(K + 1)]
    return tuple(torch.as_tensor(v, dtype=torch.float64) for v in (lam, counts, c))


def _eigenvalues(spec):
    return _degree_constants(spec.K, spec.d)[0]


def _counts(spec):
    return _degree_constants(spec.K, spec.d)[1]


def scalar_normalizer(spec):
    """C such that k(x, x) = sigma2 for the truncated series."""
    # c_{k,d} C_k(1) = N(k, d) / vol(S_d)
    return (spectral_weight(spec, _eigenvalues(spec)) * _counts(spec)).sum() / sphere_volume(spec.d)


def scalar_degree_weights(spec):
    """Coefficients w_k with k(x, y) = sum_k w_k C_k^(alpha)(x . y)."""
    lam, counts, c = _degree_constants(spec.K, spec.d)
    phi = spectral_weight(spec, lam)
    return as_tensor(spec.sigma2) * phi * c * sphere_volume(spec.d) / (phi * counts).sum()


def _dot(x, y):
    x, y = as_tensor(x), as_tensor(y)
    if x.dim() == 1 and y.dim() == 1:
        return (x * y).sum()
    return x @ y.transpose(-1, -2)


def scalar_matern_kernel(spec, x, y):
    """Kernel value for single points, Gram matrix for ``(n, D)`` x ``(m, D)``."""
    t = torch.clamp(_dot(x, y), -1.0, 1.0)
    return gegenbauer_values(spec.K, spec.alpha, t) @ scalar_degree_weights(spec)


def gegenbauer_gram(spec, x, y):
    """Gegenbauer table ``(n, m, K + 1)`` of ``x @ y.T``; reusable across hyperparameters."""
    t = torch.clamp(_dot(x, y), -1.0, 1.0)
    return gegenbauer_values(spec.K, spec.alpha, t)


def scalar_kernels_from_table(specs, table):
    """Stacked kernels ``(..., c)`` of specs sharing ``K`` and ``d`` from one table."""
    w = torch.stack([scalar_degree_weights(s) for s in specs], -1)
    return table @ w


def scalar_matern_kernel_pairwise(spec, x, y):
    """k(x_i, y_i) for matching rows."""
    t = torch.clamp((as_tensor(x) * as_tensor(y)).sum(-1), -1.0, 1.0)
    return gegenbauer_values(spec.K, spec.alpha, t) @ scalar_degree_weights(spec)


# -- Hodge kernels on S_2 ---------------------------------------------------


def _hodge_degree_terms(spec):
    """Phi(lambda_k) / lambda_k * c_{k,2} for k = 1..K (index 0 is zero)."""
    lam, _, c = _degree_constants(spec.K, 2)
    safe = torch.where(lam > 0, lam, torch.ones_like(lam))
    terms = spectral_weight(spec, lam) / safe * c
    return torch.where(lam > 0, terms, torch.zeros_like(terms))


@lru_cache(maxsize=None)
def _derivatives_at_one(K):
    return torch.as_tensor([gegenbauer_derivative_at_one(k, 0.5) for k in range(K + 1)], dtype=torch.float64)


def hodge_normalizer(spec):
    """C^part making tr k(x, x) = sigma2 (the rank-one term vanishes at t = 1)."""
    cp1 = _derivatives_at_one(spec.K)
    return (_hodge_degree_terms(spec) * cp1).sum() * 2.0


def _hodge_coefficients(spec, t):
    """Normalised sums of C_k' and C_k'' at t, each the shape of t."""
    if spec.d != 2:
        raise UnsupportedDimensionError("Hodge kernels are implemented on S_2 only")
    w = as_tensor(spec.sigma2) * _hodge_degree_terms(spec) / hodge_normalizer(spec)
    _, d1, d2 = gegenbauer_table(spec.K, 0.5, t)
    return d1 @ w, d2 @ w


def _outer(a, b):
    return a.unsqueeze(-1) * b.unsqueeze(-2)


def _pair_tensors(x, y):
    x, y = as_tensor(x), as_tensor(y)
    if x.shape[-1] != 3 or y.shape[-1] != 3:
        raise UnsupportedDimensionError("Hodge kernels are implemented on S_2 only")
    if x.dim() == 1 and y.dim() == 1:
        return x, y
    return x.unsqueeze(-2), y.unsqueeze(-3)


def _div_structure(spec, x, y):
    xb, yb = _pair_tensors(x, y)
    xb, yb = torch.broadcast_tensors(xb, yb)
    t = torch.clamp((xb * yb).sum(-1), -1.0, 1.0)
    cp, cpp = _hodge_coefficients(spec, t)
    px_y = yb - t.unsqueeze(-1) * xb
    py_x = xb - t.unsqueeze(-1) * yb
    eye = torch.eye(3, dtype=xb.dtype)
    pxpy = eye - _outer(xb, xb) - _outer(yb, yb) + t[..., None, None] * _outer(xb, yb)
    return xb, yb, t, cp, cpp, px_y, py_x, pxpy


def hodge_div_kernel(spec, x, y):
    """Divergence-type Hodge Matérn kernel, ``(3, 3)`` or ``(n, m, 3, 3)``.

    Sum over degrees of C_k''(t) (P_x y)(P_y x)^T + C_k'(t) P_x P_y.
    """
    _, _, _, cp, cpp, px_y, py_x, pxpy = _div_structure(spec, x, y)
    return cpp[..., None, None] * _outer(px_y, py_x) + cp[..., None, None] * pxpy


def hodge_curl_kernel(spec, x, y):
    """Curl-type kernel R_x G(x, y) R_y^T, with R the rotation by 90°."""
    xb, yb, t, cp, cpp, _, _, _ = _div_structure(spec, x, y)
    xy = torch.linalg.cross(xb, yb, dim=-1)
    eye = torch.eye(3, dtype=xb.dtype)
    # R_x P_x P_y R_y^T = t I - y x^T
    rot = t[..., None, None] * eye - _outer(yb, xb)
    return cpp[..., None, None] * _outer(xy, -xy) + cp[..., None, None] * rot


def hodge_compositional_kernel(spec, x, y):
    return hodge_div_kernel(spec.div, x, y) + hodge_curl_kernel(spec.curl, x, y)


def hodge_kernel_diag(spec, x):
    """k(x, x) = (sigma2_div + sigma2_curl) / 2 * P_x, shape ``(n, 3, 3)``."""
    x = as_tensor(x)
    scale = (as_tensor(spec.div.sigma2) + as_tensor(spec.curl.sigma2)) / 2.0
    eye = torch.eye(x.shape[-1], dtype=x.dtype)
    return scale * (eye - _outer(x, x))


def rotation_matrix(x):
    return cross_matrix(x)


# -- explicit feature maps --------------------------------------------------


def scalar_feature_scales(spec):
    """sqrt(sigma2 Phi(lambda_k) / C) for each degree k = 0..K."""
    lam = _eigenvalues(spec)
    return torch.sqrt(as_tensor(spec.sigma2) * spectral_weight(spec, lam) / scalar_normalizer(spec))


def scalar_feature_count(spec):
    return sum(harmonic_count(k, spec.d) for k in range(spec.K + 1))


def scalar_feature_map(spec, x, start=0, stop=None):
    """Scaled harmonics Psi_{start:stop}(x), shape ``(..., stop - start)``.

    ``Psi(x) . Psi(y)`` over the full range reproduces the kernel.
    """
    total = scalar_feature_count(spec)
    stop = total if stop is None else stop
    if not 0 <= start <= stop <= total:
        raise IndexError(f"feature range [{start}, {stop}) outside [0, {total})")
    x = as_tensor(x)
    if start == stop:
        return x.new_zeros(x.shape[:-1] + (0,))
    deg = harmonic_degrees(spec.K, spec.d)
    # harmonics only up to the highest degree requested
    k_max = int(deg[stop - 1])
    phi = scalar_harmonics(x, k_max)[..., start:stop]
    scales = scalar_feature_scales(spec)[torch.as_tensor(deg[start:stop])]
    return phi * scales


def _vector_order(K):
    """Column permutation: degree-major, div block then curl block per degree."""
    n = (K + 1) ** 2 - 1
    order = []
    for k in range(1, K + 1):
        idx = list(range(k * k - 1, (k + 1) ** 2 - 1))
        order += idx + [n + i for i in idx]
    return np.asarray(order)


def vector_feature_count(spec):
    return 2 * ((spec.K + 1) ** 2 - 1)


def vector_feature_degrees(spec):
    """Degree and type (0 = div, 1 = curl) of each vector feature column."""
    deg = harmonic_degrees(spec.K, 2)[1:]
    degrees = np.concatenate([deg, deg])[_vector_order(spec.K)]
    kinds = np.concatenate([np.zeros_like(deg), np.ones_like(deg)])[_vector_order(spec.K)]
    return degrees, kinds


def vector_feature_map(spec, x, start=0, stop=None):
    """Scaled Hodge eigenfields as columns, shape ``(..., 3, stop - start)``.

    Columns are degree-major; within a degree the divergence-type fields
    precede the curl-type ones.
    """
    total = vector_feature_count(spec)
    stop = total if stop is None else stop
    if not 0 <= start <= stop <= total:
        raise IndexError(f"feature range [{start}, {stop}) outside [0, {total})")
    x = as_tensor(x)
    if start == stop:
        return x.new_zeros(x.shape[:-1] + (3, 0))
    degrees, _ = vector_feature_degrees(spec)
    k_max = int(degrees[stop - 1])
    div, curl = vector_harmonics_s2(x, k_max)
    deg = torch.as_tensor(harmonic_degrees(k_max, 2)[1:])
    s_div = torch.sqrt(
        as_tensor(spec.div.sigma2) * spectral_weight(spec.div, _eigenvalues(spec.div)) / hodge_normalizer(spec.div)
    )[deg]
    s_curl = torch.sqrt(
        as_tensor(spec.curl.sigma2)
        * spectral_weight(spec.curl, _eigenvalues(spec.curl))
        / hodge_normalizer(spec.curl)
    )[deg]
    cols = torch.cat([div * s_div.unsqueeze(-1), curl * s_curl.unsqueeze(-1)], -2)
    cols = cols[..., torch.as_tensor(_vector_order(k_max)), :][..., start:stop, :]
    return cols.transpose(-1, -2)
