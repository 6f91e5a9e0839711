import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from conftest import gen, unit_vectors
from rdgp.benchmarks import ackley_sphere, benchmark_f, bo_target, embed_euclidean
from rdgp.errors import DomainError, UnsupportedDimensionError
from rdgp.sphere import sample_uniform

A = math.sqrt(105 / (32 * math.pi))
B = math.sqrt(15 / (8 * math.pi))


def np_angles(p):
    return math.atan2(p[1], p[0]), math.acos(max(-1.0, min(1.0, p[2])))


def np_benchmark(p):
    t, f = np_angles(p)
    t2, f2 = np_angles((p[0], -p[2], p[1]))
    return A * math.sin(t) ** 3 * math.sin(3 * f) + B * math.sin(t2) * math.sin(2 * f2)


def np_bo_target(p):
    t, f = np_angles(p)
    return A * math.sin(t) ** 3 * math.sin(3 * f) * (p[2] + 1) * (1 - f)


def test_pole_values():
    north = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64)
    south = -north
    assert abs(float(benchmark_f(north))) < 1e-15
    assert abs(float(bo_target(north))) < 1e-15
    assert abs(float(bo_target(south))) < 1e-15


def test_against_independent_implementation():
    x = sample_uniform(200, 2, gen(0))
    f, g = benchmark_f(x), bo_target(x)
    for i in range(200):
        p = x[i].tolist()
        assert abs(float(f[i]) - np_benchmark(p)) < 1e-12
        assert abs(float(g[i]) - np_bo_target(p)) < 1e-12


@given(unit_vectors())
def test_benchmark_bound(x):
    assert abs(float(benchmark_f(x))) <= A + B + 1e-12


def test_continuity_off_singular_sets():
    # a path that avoids the poles and the image of the equator under R
    t = torch.linspace(0.2, 2.9, 20001, dtype=torch.float64)
    path = torch.stack([torch.sin(t) * math.cos(0.4), torch.sin(t) * math.sin(0.4) * 0.3 + 0.1, torch.cos(t)], -1)
    path = torch.nn.functional.normalize(path, dim=-1)
    rx = torch.stack([path[:, 0], -path[:, 2], path[:, 1]], -1)
    keep = (path[:, 2].abs() < 0.99) & (rx[:, 2].abs() < 0.99) & (path[:, :2].norm(dim=-1) > 0.05)
    keep &= (rx[:, :2].norm(dim=-1) > 0.05)
    for fn in (benchmark_f, bo_target):
        v = fn(path)
        jumps = (v[1:] - v[:-1]).abs()[keep[1:] & keep[:-1]]
        assert float(jumps.max()) < 0.01


def test_s2_only():
    with pytest.raises(UnsupportedDimensionError):
        benchmark_f(torch.ones(1, 4))
    with pytest.raises(UnsupportedDimensionError):
        bo_target(torch.ones(1, 4))


def test_ackley():
    assert abs(float(ackley_sphere(torch.zeros(1, 4, dtype=torch.float64)))) < 1e-12
    x = sample_uniform(50, 3, gen(1))
    v = ackley_sphere(x)
    z = math.pi * x.numpy()
    ref = (
        -20 * np.exp(-0.2 * np.sqrt((z**2).mean(-1)))
        - np.exp(np.cos(2 * np.pi * z).mean(-1))
        + 20
        + np.e
    )
    assert np.allclose(v.numpy(), ref, atol=1e-12)


class TestEmbed:
    def test_examples(self):
        assert torch.allclose(embed_euclidean(torch.zeros(2)), torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64))
        ref = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64) / math.sqrt(2)
        assert torch.allclose(embed_euclidean(torch.tensor([1.0, 0.0])), ref, atol=1e-15)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(0.1, 10))
    def test_unit_norm(self, x, b):
        assert abs(float(embed_euclidean(torch.tensor(x), b).norm()) - 1) < 1e-12

    def test_zero_vector(self):
        with pytest.raises(DomainError):
            embed_euclidean(torch.zeros(3), b=0.0)
