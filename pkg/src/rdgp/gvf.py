"""Gaussian vector field priors on S_d: projected, coordinate-frame, Hodge.

Every prior exposes its covariance ``gvf_cov`` (ambient ``D x D`` blocks
whose rows and columns are tangent) and an explicit feature matrix whose
columns are tangent fields; the prior is ``g(x) = features(x) @ w`` with
standard normal ``w``.
"""

from dataclasses import dataclass

import numpy as np
import torch

from ._torch import as_tensor, make_generator
from .errors import NotSampleableError, PoleSingularityError, UnsupportedDimensionError
from .harmonics import harmonic_degrees
from .kernels import (
    HodgeSpec,
    MaternSpec,
    hodge_compositional_kernel,
    gegenbauer_gram,
    hodge_kernel_diag,
    scalar_feature_count,
    scalar_feature_map,
    scalar_kernels_from_table,
    scalar_matern_kernel,
    scalar_matern_kernel_pairwise,
    vector_feature_count,
    vector_feature_degrees,
    vector_feature_map,
)
from .sphere import projection_matrix

_POLE_TOL = 1e-8


@dataclass(frozen=True)
class ProjectedPrior:
    """g(x) = P_x h(x) with independent scalar Matérn components h_i."""

    components: tuple

    def __post_init__(self):
        dims = {c.d for c in self.components}
        if len(dims) != 1:
            raise ValueError("all components must share the sphere dimension")
        if len(self.components) != self.d + 1:
            raise ValueError("projected GVF needs one component per ambient coordinate")

    @property
    def d(self):
        return self.components[0].d


@dataclass(frozen=True)
class FramePrior:
    """g(x) = sum_i h_i(x) e_i(x) in the colatitude/longitude frame on S_2."""

    components: tuple

    def __post_init__(self):
        if len(self.components) != 2 or any(c.d != 2 for c in self.components):
            raise UnsupportedDimensionError("coordinate-frame GVFs are implemented on S_2 only")

    @property
    def d(self):
        return 2


@dataclass(frozen=True)
class HodgePrior:
    spec: HodgeSpec

    @property
    def d(self):
        return 2


def default_frame_s2(x):
    """Unit colatitude and longitude directions at ``x``.

    At (1, 0, 0) this is e_1 = (0, 0, -1), e_2 = (0, 1, 0).
    """
    x = as_tensor(x)
    if x.shape[-1] != 3:
        raise UnsupportedDimensionError("frame defined on S_2 only")
    rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
    if bool((rho2 < _POLE_TOL**2).any()):
        raise PoleSingularityError("coordinate frame is singular at the poles")
    rho = torch.sqrt(rho2)
    e1 = torch.stack([x[..., 2] * x[..., 0] / rho, x[..., 2] * x[..., 1] / rho, -rho], -1)
    e2 = torch.stack([-x[..., 1] / rho, x[..., 0] / rho, torch.zeros_like(rho)], -1)
    return e1, e2


def _outer(a, b):
    return a.unsqueeze(-1) * b.unsqueeze(-2)


def _shared_table(components):
    first = components[0]
    return all(c.K == first.K and c.d == first.d for c in components)


def _component_kernels(components, x, y, table=None):
    """Scalar kernels of every component, ``(n, m, c)``."""
    if table is None and not _shared_table(components):
        return torch.stack([scalar_matern_kernel(c, x, y) for c in components], -1)
    if table is None:
        table = gegenbauer_gram(components[0], x, y)
    return scalar_kernels_from_table(components, table)


def gram_table(prior, x, y):
    """Hyperparameter-free part of ``prior_cov(prior, x, y)``, or None."""
    if isinstance(prior, MaternSpec):
        return gegenbauer_gram(prior, as_tensor(x), as_tensor(y))
    if isinstance(prior, (ProjectedPrior, FramePrior)) and _shared_table(prior.components):
        return gegenbauer_gram(prior.components[0], as_tensor(x), as_tensor(y))
    return None


def gvf_cov(prior, x, y, table=None):
    """Prior covariance blocks, ``(D, D)`` for single points else ``(n, m, D, D)``.

    ``table`` optionally supplies ``gram_table(prior, x, y)``.
    """
    x, y = as_tensor(x), as_tensor(y)
    single = x.dim() == 1 and y.dim() == 1
    if single:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    if isinstance(prior, HodgePrior):
        out = hodge_compositional_kernel(prior.spec, x, y)
    elif isinstance(prior, ProjectedPrior):
        ks = _component_kernels(prior.components, x, y, table)
        px = projection_matrix(x).unsqueeze(1)
        py = projection_matrix(y).unsqueeze(0)
        out = (px * ks.unsqueeze(-2)) @ py
    elif isinstance(prior, FramePrior):
        ex = default_frame_s2(x)
        ey = default_frame_s2(y)
        ks = _component_kernels(prior.components, x, y, table)
        out = 0.0
        for i, (a, b) in enumerate(zip(ex, ey)):
            out = out + ks[..., i, None, None] * _outer(a.unsqueeze(1), b.unsqueeze(0))
    else:
        raise TypeError(f"unknown GVF prior {type(prior).__name__}")
    return out[0, 0] if single else out


def gvf_cov_diag(prior, x):
    """k(x_i, x_i) for each row, shape ``(n, D, D)``."""
    x = as_tensor(x)
    if isinstance(prior, HodgePrior):
        return hodge_kernel_diag(prior.spec, x)
    if isinstance(prior, ProjectedPrior):
        var = torch.stack([scalar_matern_kernel_pairwise(c, x, x) for c in prior.components], -1)
        p = projection_matrix(x)
        return (p * var.unsqueeze(-2)) @ p
    if isinstance(prior, FramePrior):
        out = 0.0
        for c, e in zip(prior.components, default_frame_s2(x)):
            out = out + scalar_matern_kernel_pairwise(c, x, x)[..., None, None] * _outer(e, e)
        return out
    raise TypeError(f"unknown GVF prior {type(prior).__name__}")


# -- feature expansions -----------------------------------------------------


def _component_layout(components):
    """Degree-major ordering of (component, harmonic) pairs."""
    spec = components[0]
    deg = harmonic_degrees(spec.K, spec.d)
    n_s = len(deg)
    order, degrees, levels = [], [], []
    for k in range(spec.K + 1):
        idx = np.flatnonzero(deg == k)
        for i in range(len(components)):
            order += list(i * n_s + idx)
            degrees += [k] * len(idx)
            levels += [(i, k)] * len(idx)
    return np.asarray(order), np.asarray(degrees), levels


def feature_count(prior):
    if isinstance(prior, MaternSpec):
        return scalar_feature_count(prior)
    if isinstance(prior, HodgePrior):
        return vector_feature_count(prior.spec.div)
    return sum(scalar_feature_count(c) for c in prior.components)


def feature_layout(prior):
    """Per-column ``(degrees, levels, components)``.

    ``levels`` identifies an eigenvalue level as ``(component or type, degree)``;
    ``components`` names the independent component GP a column belongs to
    (always 0 for scalar and Hodge priors).
    """
    if isinstance(prior, MaternSpec):
        degrees = harmonic_degrees(prior.K, prior.d)
        return degrees, [(0, int(k)) for k in degrees], np.zeros(len(degrees), dtype=int)
    if isinstance(prior, HodgePrior):
        degrees, kinds = vector_feature_degrees(prior.spec.div)
        levels = [(int(t), int(k)) for t, k in zip(kinds, degrees)]
        return degrees, levels, np.zeros(len(degrees), dtype=int)
    _, degrees, levels = _component_layout(prior.components)
    return degrees, levels, np.asarray([c for c, _ in levels])


def gvf_features(prior, x, start=0, stop=None):
    """Tangent feature columns, shape ``(n, D, stop - start)``."""
    x = as_tensor(x)
    if isinstance(prior, MaternSpec):
        return scalar_feature_map(prior, x, start, stop).unsqueeze(-2)
    if isinstance(prior, HodgePrior):
        return vector_feature_map(prior.spec, x, start, stop)
    if not isinstance(prior, (ProjectedPrior, FramePrior)):
        raise NotSampleableError(f"no explicit features for {type(prior).__name__}")
    total = feature_count(prior)
    stop = total if stop is None else stop
    if not 0 <= start <= stop <= total:
        raise IndexError(f"feature range [{start}, {stop}) outside [0, {total})")
    comps = prior.components
    if any(c.K != comps[0].K for c in comps):
        raise ValueError("component truncations must agree")
    psi = torch.stack([scalar_feature_map(c, x) for c in comps], -2)  # (n, C, M_s)
    if isinstance(prior, ProjectedPrior):
        dirs = projection_matrix(x)  # column i is P_x e_i
    else:
        dirs = torch.stack(default_frame_s2(x), -1)
    cols = dirs.unsqueeze(-1) * psi.unsqueeze(-3)  # (n, D, C, M_s)
    cols = cols.reshape(cols.shape[:-2] + (-1,))
    order, _, _ = _component_layout(comps)
    return cols[..., torch.as_tensor(order[start:stop])]


def gvf_prior_function_sample(prior, seed=0, weights=None):
    """Weight-space prior draw ``x -> features(x) @ w`` with ``w ~ N(0, I)``."""
    m = feature_count(prior)
    if weights is None:
        gen = seed if isinstance(seed, torch.Generator) else make_generator(seed)
        weights = torch.randn(m, dtype=torch.float64, generator=gen)
    weights = as_tensor(weights)

    def sample(x):
        return gvf_features(prior, x) @ weights

    return sample


def isotropic_projected(spec):
    """Projected prior with identical components."""
    return ProjectedPrior(tuple(spec for _ in range(spec.d + 1)))


# -- uniform interface over scalar and vector priors ------------------------
#
# A scalar MaternSpec is treated as a prior with output dimension 1, so the
# variational layers can handle hidden GVF layers and scalar heads alike.


def output_dim(prior):
    if isinstance(prior, MaternSpec):
        return 1
    return prior.d + 1


def sphere_dim(prior):
    return prior.d


def prior_cov(prior, x, y, table=None):
    """Covariance blocks ``(n, m, p, p)`` with ``p = output_dim(prior)``."""
    if isinstance(prior, MaternSpec):
        if table is None:
            return scalar_matern_kernel(prior, as_tensor(x), as_tensor(y))[..., None, None]
        return scalar_kernels_from_table([prior], table)[..., None]
    return gvf_cov(prior, x, y, table)


def prior_cov_diag(prior, x):
    """Marginal covariances ``(n, p, p)``."""
    if isinstance(prior, MaternSpec):
        x = as_tensor(x)
        return scalar_matern_kernel_pairwise(prior, x, x)[..., None, None]
    return gvf_cov_diag(prior, x)
