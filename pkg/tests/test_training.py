import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from conftest import gen
from rdgp.errors import TrainingError
from rdgp.model import build_model, elbo
from rdgp.sphere import sample_uniform
from rdgp.training import (
    AdamState,
    ParameterStore,
    TrainConfig,
    adam_step,
    elbo_gradient,
    finite_difference_check,
    train,
)


def data(n, seed):
    x = sample_uniform(n, 2, gen(seed))
    return x, torch.cos(2 * x[:, 1]) + 0.5 * x[:, 0]


def small_model(x, family="iv", layers=2):
    m = build_model(x, num_layers=layers, family=family, K=2, head_K=3, num_inducing=6, gvf_kind="hodge")
    if layers > 1:
        with torch.no_grad():
            m.hidden[0].prior_module.set_sigma2(0.05)
    return m


class TestParameterStore:
    def test_round_trip_and_names(self):
        x, _ = data(10, 0)
        m = small_model(x)
        store = ParameterStore(m)
        flat = store.get()
        assert len(flat) == len(store) == sum(p.numel() for p in m.parameters())
        store.set(flat + 1.0)
        assert torch.equal(store.get(), flat + 1.0)
        assert store.coordinate_name(0).endswith("[0]")
        assert store.coordinate_name(len(store) - 1).startswith(store.names[-1])
        with pytest.raises(ValueError):
            store.set(flat[:-1])

    def test_transform_tags(self):
        x, _ = data(10, 1)
        store = ParameterStore(small_model(x, family="il"))
        tags = dict(zip(store.names, store.tags))
        assert tags["raw_noise"] == "softplus"
        assert tags["head.q_sqrt_raw"] == "lower_tri_softplus_diag"
        assert tags["head.q_mu"] == "identity"
        values = store.constrained()
        assert abs(float(values["raw_noise"]) - 1e-2) < 1e-15
        q = values["head.q_sqrt_raw"]
        assert torch.allclose(q, torch.eye(q.shape[0], dtype=torch.float64))


class TestAdam:
    @given(st.integers(0, 50), st.floats(1e-4, 0.5))
    def test_matches_torch_adam(self, seed, lr):
        g = gen(seed)
        p0 = torch.randn(5, dtype=torch.float64, generator=g)
        grads = [torch.randn(5, dtype=torch.float64, generator=g) for _ in range(6)]
        ref = torch.nn.Parameter(p0.clone())
        opt = torch.optim.Adam([ref], lr=lr)
        state, p = AdamState(5, lr=lr), p0.clone()
        for gr in grads:
            ref.grad = gr.clone()
            opt.step()
            p, state = adam_step(state, p, gr)
        assert torch.allclose(p, ref.detach(), atol=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(3), torch.zeros(3), torch.zeros(4))


class TestGradient:
    @pytest.mark.parametrize("family", ["iv", "il"])
    def test_finite_differences(self, family):
        x, y = data(8, 2)
        m = small_model(x, family=family)
        with torch.no_grad():
            for p in m.parameters():
                p.add_(0.05 * torch.randn(p.shape, dtype=torch.float64, generator=gen(3)))
        report = finite_difference_check(m, x, y, seed=4, S=2)
        assert report.max_error < 1e-4, report.worst_parameter

    def test_wrong_gradient_is_caught(self):
        x, y = data(8, 5)
        m = small_model(x, layers=1)
        store = ParameterStore(m)
        _, g = elbo_gradient(m, x, y, store=store)
        bad = g.clone()
        bad[0] = bad[0] * 1.01 + 1e-3
        report = finite_difference_check(m, x, y, grad=bad)
        assert report.max_error > 1e-4
        assert report.worst_parameter == store.coordinate_name(0)

    def test_check_restores_parameters(self):
        x, y = data(8, 6)
        m = small_model(x)
        before = ParameterStore(m).get()
        finite_difference_check(m, x, y)
        assert torch.equal(ParameterStore(m).get(), before)

    def test_value_matches_elbo(self):
        x, y = data(8, 7)
        m = small_model(x)
        value, _ = elbo_gradient(m, x, y, seed=3)
        with torch.no_grad():
            assert value == float(elbo(m, x, y, seed=3))

    def test_bad_step(self):
        x, y = data(4, 8)
        with pytest.raises(ValueError):
            finite_difference_check(small_model(x, layers=1), x, y, step=0.0)


class TestTrain:
    def test_improves_elbo(self):
        x, y = data(30, 9)
        m = build_model(x, K=4)
        result = train(m, x, y, TrainConfig(iters=150, lr=0.05))
        assert len(result.elbo_trace) == 150
        assert np.mean(result.elbo_trace[-10:]) > result.elbo_trace[0]

    def test_deterministic(self):
        x, y = data(20, 10)
        traces = []
        for _ in range(2):
            m = small_model(x)
            traces.append(train(m, x, y, TrainConfig(iters=10, batch_size=8, seed=5)).elbo_trace)
        assert traces[0] == traces[1]

    def test_zero_iterations(self):
        x, y = data(5, 11)
        m = small_model(x, layers=1)
        before = ParameterStore(m).get()
        assert train(m, x, y, TrainConfig(iters=0)).elbo_trace == []
        assert torch.equal(ParameterStore(m).get(), before)

    def test_callback(self):
        x, y = data(5, 12)
        seen = []
        train(small_model(x, layers=1), x, y, TrainConfig(iters=3), callback=lambda it, v: seen.append(it))
        assert seen == [0, 1, 2]

    def test_nonfinite_carries_trace(self):
        x, y = data(5, 13)
        y = y.clone()
        y[0] = float("inf")
        with pytest.raises(TrainingError) as info:
            train(small_model(x, layers=1), x, y, TrainConfig(iters=3))
        assert info.value.trace == []
