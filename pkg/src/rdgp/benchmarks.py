"""Target functions for the regression and optimisation harnesses."""

import math

import torch

from ._torch import as_tensor
from .errors import DomainError, UnsupportedDimensionError

C_23 = math.sqrt(105.0 / (32.0 * math.pi))
C_12 = math.sqrt(15.0 / (8.0 * math.pi))


def _check_s2(x):
    x = as_tensor(x)
    if x.shape[-1] != 3:
        raise UnsupportedDimensionError("benchmark targets are defined on S_2")
    return x


def _swapped_angles(x):
    """(atan2(x2, x1), arccos(x3)): the angles fed to Y as (theta, phi)."""
    return torch.atan2(x[..., 1], x[..., 0]), torch.arccos(torch.clamp(x[..., 2], -1.0, 1.0))


def y23(theta, phi):
    return C_23 * torch.sin(theta) ** 3 * torch.sin(3.0 * phi)


def y12(theta, phi):
    return C_12 * torch.sin(theta) * torch.sin(2.0 * phi)


def benchmark_f(x):
    """Synthetic regression target; singular at the poles and near the equator."""
    x = _check_s2(x)
    rx = torch.stack([x[..., 0], -x[..., 2], x[..., 1]], -1)
    return y23(*_swapped_angles(x)) + y12(*_swapped_angles(rx))


def bo_target(x):
    """Irregular optimisation target with its global minimum near the north pole."""
    x = _check_s2(x)
    theta, phi = _swapped_angles(x)
    return y23(theta, phi) * (x[..., 2] + 1.0) * (1.0 - phi)


def ackley_sphere(x, scale=math.pi):
    """Ackley function of ``scale * x`` on the embedded coordinates (any S_d)."""
    z = scale * as_tensor(x)
    n = z.shape[-1]
    a = -20.0 * torch.exp(-0.2 * torch.sqrt((z**2).sum(-1) / n))
    b = -torch.exp(torch.cos(2.0 * math.pi * z).sum(-1) / n)
    return a + b + 20.0 + math.e


def embed_euclidean(x, b=1.0):
    """Map ``x`` in R^d to S_d via ``(x, b) / |(x, b)|``."""
    x = as_tensor(x)
    bias = torch.full(x.shape[:-1] + (1,), float(b), dtype=x.dtype)
    v = torch.cat([x, bias], -1)
    norm = v.norm(dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise DomainError("cannot embed the zero vector")
    return v / norm


TARGETS = {"bo_target": bo_target, "benchmark_f": benchmark_f, "ackley": ackley_sphere}
