"""Geometry of the unit hypersphere S_d embedded in R^(d+1).

Points are arrays of shape ``(..., D)`` with unit norm, ``D = d + 1``.
Tangent vectors at ``x`` are ambient vectors orthogonal to ``x``.
All functions are batched over leading axes and differentiable in torch.
"""

import math

import numpy as np
import torch

from ._torch import DTYPE, as_tensor
from .errors import EmptyLatticeError, InvalidCountError, UnsupportedDimensionError

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
_EXP_SMALL = 1e-12


def exp_map(x, v):
    """Exponential map ``cos(|v|) x + sin(|v|) v / |v|``.

    Returns ``x`` unchanged wherever ``|v| < 1e-12``.
    """
    x, v = as_tensor(x), as_tensor(v)
    sq = (v * v).sum(-1, keepdim=True)
    small = sq < _EXP_SMALL**2
    norm = torch.sqrt(torch.where(small, torch.ones_like(sq), sq))
    moved = torch.cos(norm) * x + (torch.sin(norm) / norm) * v
    # rounding-level renormalisation; inputs are only tangent to ~1e-10 |v|
    moved = moved / moved.norm(dim=-1, keepdim=True)
    return torch.where(small, x, moved)


def tangent_project(x, h):
    """Orthogonal projection of ``h`` onto the tangent space at ``x``."""
    x, h = as_tensor(x), as_tensor(h)
    return h - (h * x).sum(-1, keepdim=True) * x


def projection_matrix(x):
    x = as_tensor(x)
    eye = torch.eye(x.shape[-1], dtype=x.dtype)
    return eye - x.unsqueeze(-1) * x.unsqueeze(-2)


def cross_matrix(x):
    """Matrix ``R_x`` with ``R_x v = x × v`` (rotation by 90° in T_x S_2)."""
    x = as_tensor(x)
    if x.shape[-1] != 3:
        raise UnsupportedDimensionError("rotate90 is defined on S_2 only")
    zero = torch.zeros_like(x[..., 0])
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    rows = [
        torch.stack([zero, -x3, x2], -1),
        torch.stack([x3, zero, -x1], -1),
        torch.stack([-x2, x1, zero], -1),
    ]
    return torch.stack(rows, -2)


def rotate90(x, v):
    x, v = as_tensor(x), as_tensor(v)
    if x.shape[-1] != 3:
        raise UnsupportedDimensionError("rotate90 is defined on S_2 only")
    return torch.linalg.cross(x, v, dim=-1)


def geodesic_distance(x, y):
    x, y = as_tensor(x), as_tensor(y)
    return torch.arccos(torch.clamp((x * y).sum(-1), -1.0, 1.0))


def riemannian_gradient_step(x, euclid_grad, step):
    """One descent step: exp_x(P_x(-step * grad))."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = as_tensor(x)
    return exp_map(x, tangent_project(x, -step * as_tensor(euclid_grad)))


def fibonacci_lattice(n):
    """Near-uniform ``n``-point lattice on S_2, shape ``(n, 3)``."""
    if n < 1:
        raise EmptyLatticeError("lattice needs at least one point")
    i = np.arange(n, dtype=np.float64)
    colat = np.arccos(np.clip(1.0 - (2.0 * i + 1.0) / n, -1.0, 1.0))
    lon = 2.0 * np.pi * i / GOLDEN_RATIO
    pts = np.stack(
        [np.sin(colat) * np.cos(lon), np.sin(colat) * np.sin(lon), np.cos(colat)], -1
    )
    return torch.as_tensor(pts, dtype=DTYPE)


def sample_uniform(n, dim, generator=None):
    """``n`` uniform points on S_dim (ambient dimension ``dim + 1``)."""
    g = torch.randn(n, dim + 1, dtype=DTYPE, generator=generator)
    return g / g.norm(dim=-1, keepdim=True)


def normalize(h):
    h = as_tensor(h)
    return h / h.norm(dim=-1, keepdim=True)


def tangent_basis(x):
    """Orthonormal basis of T_x, shape ``(..., D, D-1)``.

    Not smooth in ``x``; meant for fixed points and evaluation, never for
    quantities that are differentiated with respect to ``x``.
    """
    x = as_tensor(x).detach()
    full = torch.linalg.svd(x.unsqueeze(-1), full_matrices=True)[0]
    return full[..., 1:]


def spherical_kmeans(points, k, iters=100, seed=0):
    """Lloyd's k-means in the embedding, centroids renormalised onto the sphere.

    Empty clusters are reseeded from a random data point.
    """
    pts = np.asarray(as_tensor(points).detach(), dtype=np.float64)
    n = pts.shape[0]
    if k < 1 or k > n:
        raise InvalidCountError(f"k={k} must be between 1 and the number of points ({n})")
    rng = np.random.default_rng(seed)
    centroids = pts[rng.choice(n, size=k, replace=False)].copy()
    labels = None
    for _ in range(iters):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        new_labels = d2.argmin(1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = pts[members].mean(0)
            else:
                centroids[c] = pts[rng.integers(n)]
    norms = np.linalg.norm(centroids, axis=1)
    for c in np.flatnonzero(norms < 1e-12):
        # cancelling members (e.g. antipodal); fall back to the nearest data point
        centroids[c] = pts[((pts - centroids[c]) ** 2).sum(-1).argmin()]
        norms[c] = 1.0
    return torch.as_tensor(centroids / norms[:, None], dtype=DTYPE)
