"""Gegenbauer polynomials and explicit spherical harmonics.

Scalar harmonics are real and orthonormal in L2 of the surface measure.
They are evaluated as polynomials in the embedded coordinates, so they
stay smooth (and differentiable) through the poles.
"""

import math

import numpy as np
import torch

from ._torch import as_tensor
from .errors import DomainError, UnsupportedDimensionError
from .sphere import rotate90, tangent_project

_DOMAIN_TOL = 1e-9


def _check_domain(t):
    t = as_tensor(t)
    with torch.no_grad():
        bad = t.abs() > 1.0 + _DOMAIN_TOL
        if bool(bad.any()):
            raise DomainError(f"Gegenbauer argument outside [-1, 1]: {t[bad].flatten()[:3].tolist()}")
    return torch.clamp(t, -1.0, 1.0)


def _gegenbauer_values(K, alpha, t):
    vals = [torch.ones_like(t)]
    if K >= 1:
        vals.append(2.0 * alpha * t)
    for k in range(2, K + 1):
        vals.append(
            (2.0 * (k - 1 + alpha) * t * vals[k - 1] - (k - 2 + 2.0 * alpha) * vals[k - 2]) / k
        )
    return vals


def gegenbauer_values(K, alpha, t):
    """C_k^(alpha)(t) for k = 0..K, shape ``t.shape + (K + 1,)``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return torch.stack(_gegenbauer_values(K, alpha, _check_domain(t)), -1)


def gegenbauer_table(K, alpha, t):
    """Values and first two derivatives of C_k^(alpha)(t) for k = 0..K.

    Each output has shape ``t.shape + (K + 1,)``.  Derivatives use
    d/dt C_k^(a) = 2a C_{k-1}^(a+1).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    t = _check_domain(t)
    c0 = _gegenbauer_values(K, alpha, t)
    c1 = _gegenbauer_values(max(K - 1, 0), alpha + 1.0, t)
    c2 = _gegenbauer_values(max(K - 2, 0), alpha + 2.0, t)
    zero = torch.zeros_like(t)
    d1 = [zero] + [2.0 * alpha * c1[k - 1] for k in range(1, K + 1)]
    d2 = [zero, zero][: K + 1] + [4.0 * alpha * (alpha + 1.0) * c2[k - 2] for k in range(2, K + 1)]
    return torch.stack(c0, -1), torch.stack(d1, -1), torch.stack(d2, -1)


def gegenbauer(k, alpha, t):
    """``(C_k(t), C_k'(t), C_k''(t))`` for a single degree."""
    v, d1, d2 = gegenbauer_table(k, alpha, t)
    return v[..., k], d1[..., k], d2[..., k]


def gegenbauer_at_one(k, alpha):
    """C_k^(alpha)(1) = binom(k + 2 alpha - 1, k)."""
    return math.exp(math.lgamma(k + 2.0 * alpha) - math.lgamma(2.0 * alpha) - math.lgamma(k + 1.0))


def gegenbauer_derivative_at_one(k, alpha):
    if k == 0:
        return 0.0
    return 2.0 * alpha * gegenbauer_at_one(k - 1, alpha + 1.0)


def laplace_eigenvalue(k, d):
    """Eigenvalue of -Laplace-Beltrami on S_d for degree-k harmonics."""
    return float(k * (k + d - 1))


def harmonic_count(k, d):
    """Dimension of the degree-k eigenspace on S_d."""
    if k == 0:
        return 1
    return (2 * k + d - 1) * math.factorial(k + d - 2) // (math.factorial(k) * math.factorial(d - 1))


def total_harmonic_count(K, d):
    return sum(harmonic_count(k, d) for k in range(K + 1))


def sphere_volume(d):
    """Surface area of the unit S_d."""
    return 2.0 * math.pi ** ((d + 1) / 2.0) / math.gamma((d + 1) / 2.0)


def addition_constant(k, d):
    """c_{k,d} with sum_j phi_kj(x) phi_kj(y) = c_{k,d} C_k^(alpha)(x.y)."""
    alpha = (d - 1) / 2.0
    return harmonic_count(k, d) / (sphere_volume(d) * gegenbauer_at_one(k, alpha))


def harmonic_degrees(K, d):
    """Degree of each basis column produced for truncation ``K`` on S_d."""
    return np.repeat(np.arange(K + 1), [harmonic_count(k, d) for k in range(K + 1)])


# -- S_2: associated Legendre recurrences in Cartesian form -----------------


def _legendre_coefficients(K):
    """Constant tables for the order-vectorised Legendre recurrence.

    Works with p_lm = Pbar_lm / sin^m (normalised associated Legendre
    functions divided by sin^m), which are polynomials in z = cos(colat).
    """
    m = np.arange(K + 1, dtype=np.float64)
    diag = np.empty(K + 1)
    diag[0] = 1.0 / math.sqrt(4.0 * math.pi)
    for k in range(1, K + 1):
        diag[k] = math.sqrt((2 * k + 1) / (2 * k)) * diag[k - 1]
    a = np.zeros((K + 1, K + 1))
    b = np.zeros((K + 1, K + 1))
    for l in range(2, K + 1):
        for mm in range(0, l - 1):
            a[l, mm] = math.sqrt((4 * l * l - 1) / (l * l - mm * mm))
            b[l, mm] = math.sqrt(((l - 1) ** 2 - mm * mm) / (4 * (l - 1) ** 2 - 1))
    sub = np.sqrt(2 * m + 3)  # p_{m+1,m} = sqrt(2m+3) z p_mm
    return diag, sub, a, b


def _legendre_tables(z, K):
    """Tables ``p[..., l, m]`` and ``d/dz p[..., l, m]``, zero for m > l."""
    diag, sub, a, b = (torch.as_tensor(t, dtype=z.dtype) for t in _legendre_coefficients(K))
    zc = z.unsqueeze(-1)
    eye = torch.eye(K + 1, dtype=z.dtype)
    zero = torch.zeros(z.shape + (K + 1,), dtype=z.dtype)
    rows, drows = [diag[0] * eye[0] + zero], [zero]
    for l in range(1, K + 1):
        # entries m <= l - 2 by recurrence, m = l - 1 and m = l in closed form
        prev, dprev = rows[l - 1], drows[l - 1]
        prev2 = rows[l - 2] if l >= 2 else zero
        dprev2 = drows[l - 2] if l >= 2 else zero
        rec = a[l] * (zc * prev - b[l] * prev2)
        drec = a[l] * (prev + zc * dprev - b[l] * dprev2)
        edge = eye[l - 1] * (sub[l - 1] * diag[l - 1])
        rows.append(rec + zc * edge + diag[l] * eye[l])
        drows.append(drec + edge + zero)
    return torch.stack(rows, -2), torch.stack(drows, -2)


def _s2_index(K):
    """(l, |m|, sign) for every output column in degree-major order."""
    out = [(l, abs(m), (m > 0) - (m < 0)) for l in range(K + 1) for m in range(-l, l + 1)]
    return [torch.as_tensor(c) for c in zip(*out)]


def _s2_harmonics(x, K, with_grad):
    x = as_tensor(x)
    if x.shape[-1] != 3:
        raise UnsupportedDimensionError("expected points on S_2")
    x1, x2, z = x[..., 0], x[..., 1], x[..., 2]
    p, dp = _legendre_tables(z, K)
    # A_m + i B_m = (x1 + i x2)^m
    A = [torch.ones_like(z)]
    B = [torch.zeros_like(z)]
    for m in range(1, K + 1):
        A.append(x1 * A[m - 1] - x2 * B[m - 1])
        B.append(x1 * B[m - 1] + x2 * A[m - 1])
    A, B = torch.stack(A, -1), torch.stack(B, -1)
    l_idx, m_idx, sign = _s2_index(K)
    coef = torch.where(sign == 0, 1.0, math.sqrt(2.0) * torch.ones((), dtype=x.dtype))
    plm = p[..., l_idx, m_idx]
    trig = torch.where(sign >= 0, A[..., m_idx], B[..., m_idx])
    values = coef * plm * trig
    if not with_grad:
        return values
    m_prev = (m_idx - 1).clamp_min(0)
    mf = m_idx.to(x.dtype)
    a_prev, b_prev = A[..., m_prev], B[..., m_prev]
    # d/dx1 and d/dx2 of A_m (m > 0) and B_m (m < 0); zero for m = 0
    gx = mf * torch.where(sign > 0, a_prev, b_prev)
    gy = mf * torch.where(sign > 0, -b_prev, a_prev)
    dz = dp[..., l_idx, m_idx] * trig
    grads = torch.stack([plm * gx, plm * gy, dz], -1) * coef.unsqueeze(-1)
    return values, grads


def scalar_harmonics_s2(x, K):
    """Real orthonormal harmonics on S_2 through degree ``K``.

    Shape ``(..., (K+1)**2)``; degree-major, order -k..k within a degree
    (negative orders carry sin(m lon), positive orders cos(m lon)).
    """
    return _s2_harmonics(x, K, with_grad=False)


def scalar_harmonics_s2_with_gradient(x, K):
    """Harmonics and their surface gradients, shapes ``(..., M)`` and ``(..., M, 3)``."""
    x = as_tensor(x)
    vals, amb = _s2_harmonics(x, K, with_grad=True)
    return vals, tangent_project(x.unsqueeze(-2), amb)


def vector_harmonics_s2(x, K):
    """Normalised divergence- and curl-type eigenfields through degree ``K``.

    Returns ``(div, curl)``, each of shape ``(..., K(K+2), 3)``: for every
    scalar harmonic of degree k >= 1, ``grad phi / sqrt(lambda_k)`` and its
    rotation ``x × grad phi / sqrt(lambda_k)``.
    """
    x = as_tensor(x)
    if K < 1:
        empty = x.new_zeros(x.shape[:-1] + (0, 3))
        return empty, empty
    _, grad = scalar_harmonics_s2_with_gradient(x, K)
    grad = grad[..., 1:, :]
    lam = torch.as_tensor(
        [laplace_eigenvalue(k, 2) for k in harmonic_degrees(K, 2)[1:]], dtype=x.dtype
    )
    div = grad / torch.sqrt(lam).unsqueeze(-1)
    curl = rotate90(x.unsqueeze(-2).expand_as(div), div)
    return div, curl


# -- S_d: Gegenbauer-product construction ----------------------------------


def _gegenbauer_norm_sq(n, beta):
    """Integral of C_n^(beta)(t)^2 (1 - t^2)^(beta - 1/2) over [-1, 1]."""
    log_h = (
        math.log(math.pi)
        + (1.0 - 2.0 * beta) * math.log(2.0)
        + math.lgamma(n + 2.0 * beta)
        - math.lgamma(n + 1.0)
        - math.log(n + beta)
        - 2.0 * math.lgamma(beta)
    )
    return math.exp(log_h)


def _homogeneous_gegenbauer(K, beta, s, r2):
    """r^m C_m^(beta)(s / r) as polynomials in (s, r^2), m = 0..K."""
    g = [torch.ones_like(s)]
    if K >= 1:
        g.append(2.0 * beta * s)
    for m in range(2, K + 1):
        g.append((2.0 * (m - 1 + beta) * s * g[m - 1] - (m - 2 + 2.0 * beta) * r2 * g[m - 2]) / m)
    return g


def _solid_harmonics(u, K):
    """Homogeneous harmonic polynomials on R^(n+1), grouped by degree.

    On the unit sphere they restrict to an orthonormal harmonic basis of S_n.
    """
    dim = u.shape[-1] - 1
    if dim == 1:
        a, b = torch.ones_like(u[..., 0]), torch.zeros_like(u[..., 0])
        out = [(a / math.sqrt(2.0 * math.pi)).unsqueeze(-1)]
        for _ in range(1, K + 1):
            a, b = u[..., 0] * a - u[..., 1] * b, u[..., 0] * b + u[..., 1] * a
            out.append(torch.stack([a, b], -1) / math.sqrt(math.pi))
        return out
    inner = _solid_harmonics(u[..., :-1], K)
    s = u[..., -1]
    r2 = (u * u).sum(-1)
    out = []
    ggs = {j: _homogeneous_gegenbauer(K - j, j + (dim - 1) / 2.0, s, r2) for j in range(K + 1)}
    for k in range(K + 1):
        parts = []
        for j in range(k + 1):
            beta = j + (dim - 1) / 2.0
            scale = 1.0 / math.sqrt(_gegenbauer_norm_sq(k - j, beta))
            parts.append(scale * ggs[j][k - j].unsqueeze(-1) * inner[j])
        out.append(torch.cat(parts, -1))
    return out


def scalar_harmonics_sd(x, K):
    """Real orthonormal harmonics on S_d (d >= 2) through degree ``K``.

    Shape ``(..., sum_k N(k, d))``, degree-major.
    """
    x = as_tensor(x)
    if x.shape[-1] < 3:
        raise UnsupportedDimensionError("scalar_harmonics_sd needs d >= 2")
    return torch.cat(_solid_harmonics(x, K), -1)


def scalar_harmonics(x, K):
    """Dispatch to the S_2 recurrences or the general construction."""
    x = as_tensor(x)
    if x.shape[-1] == 3:
        return scalar_harmonics_s2(x, K)
    return scalar_harmonics_sd(x, K)
