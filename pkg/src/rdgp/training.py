"""Parameter registry, gradients, Adam and the training loop.

Gradients come from torch autograd on the ELBO with all Monte-Carlo noise
fixed by the seed (common random numbers), so the objective is a
deterministic function of the parameters and can be checked against finite
differences.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from ._torch import DTYPE, as_tensor, softplus
from .errors import TrainingError
from .model import elbo
from .variational import tril_from_raw

TRANSFORMS = ("identity", "softplus", "lower_tri_softplus_diag")


class ParameterStore:
    """Flat view over a module's trainable raw parameters.

    Every parameter carries a transform tag taken from the owning module's
    ``transforms`` map (default ``identity``).
    """

    def __init__(self, model):
        self.model = model
        tag_map = {}
        for mod_name, module in model.named_modules():
            for key, tag in getattr(module, "transforms", {}).items():
                tag_map[f"{mod_name}.{key}" if mod_name else key] = tag
        self.names, self.params, self.tags = [], [], []
        for name, param in model.named_parameters():
            if not param.requires_grad:
                continue
            tag = tag_map.get(name, "identity")
            if tag not in TRANSFORMS:
                raise ValueError(f"unknown transform {tag!r} for {name}")
            self.names.append(name)
            self.params.append(param)
            self.tags.append(tag)
        self.sizes = [p.numel() for p in self.params]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    def __len__(self):
        return int(self.offsets[-1])

    def get(self):
        return torch.cat([p.detach().reshape(-1) for p in self.params]) if self.params else torch.zeros(0, dtype=DTYPE)

    def set(self, flat):
        flat = as_tensor(flat)
        if flat.shape[0] != len(self):
            raise ValueError(f"expected {len(self)} values, got {flat.shape[0]}")
        with torch.no_grad():
            for p, a, b in zip(self.params, self.offsets[:-1], self.offsets[1:]):
                p.copy_(flat[a:b].reshape(p.shape))

    def grad(self):
        out = []
        for p in self.params:
            out.append(torch.zeros(p.numel(), dtype=DTYPE) if p.grad is None else p.grad.reshape(-1))
        return torch.cat(out) if out else torch.zeros(0, dtype=DTYPE)

    def coordinate_name(self, i):
        j = int(np.searchsorted(self.offsets, i, side="right") - 1)
        return f"{self.names[j]}[{i - self.offsets[j]}]"

    def constrained(self):
        """Transformed values keyed by parameter name."""
        out = {}
        for name, p, tag in zip(self.names, self.params, self.tags):
            v = p.detach()
            if tag == "softplus":
                v = softplus(v)
            elif tag == "lower_tri_softplus_diag":
                n = int(round((np.sqrt(8 * v.numel() + 1) - 1) / 2))
                v = tril_from_raw(v, n)
            out[name] = v
        return out


def elbo_gradient(model, x, y, n_total=None, S=3, seed=0, store=None):
    """(ELBO value, gradient over the store's flat vector)."""
    store = ParameterStore(model) if store is None else store
    model.zero_grad(set_to_none=True)
    value = elbo(model, x, y, n_total=n_total, S=S, seed=seed)
    value.backward()
    grad = store.grad()
    bad = ~torch.isfinite(grad)
    if bool(bad.any()):
        name = store.coordinate_name(int(torch.nonzero(bad)[0]))
        raise TrainingError(f"non-finite gradient for {name}", parameter=name)
    return float(value.detach()), grad


@dataclass
class AdamState:
    size: int
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: torch.Tensor = None
    v: torch.Tensor = None

    def __post_init__(self):
        if self.m is None:
            self.m = torch.zeros(self.size, dtype=DTYPE)
        if self.v is None:
            self.v = torch.zeros(self.size, dtype=DTYPE)


def adam_step(state, params, grad):
    """One bias-corrected Adam descent step; returns ``(new_params, state)``."""
    params, grad = as_tensor(params), as_tensor(grad)
    if params.shape != grad.shape or params.shape[0] != state.size:
        raise ValueError("parameter, gradient and state sizes differ")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (torch.sqrt(v_hat) + state.eps), state


@dataclass
class TrainConfig:
    iters: int = 1000
    lr: float = 0.01
    batch_size: int = None
    S: int = 3
    seed: int = 0


@dataclass
class TrainResult:
    model: object
    elbo_trace: list = field(default_factory=list)


def train(model, x, y, config=None, callback=None):
    """Maximise the ELBO with Adam.  Deterministic given ``config.seed``."""
    config = TrainConfig() if config is None else config
    x, y = as_tensor(x), as_tensor(y)
    n = x.shape[0]
    store = ParameterStore(model)
    state = AdamState(len(store), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    trace = []
    batch = n if config.batch_size is None else min(int(config.batch_size), n)
    for it in range(int(config.iters)):
        idx = None if batch == n else torch.as_tensor(rng.choice(n, size=batch, replace=True))
        xb, yb = (x, y) if idx is None else (x[idx], y[idx])
        step_seed = int(config.seed) * 1_000_003 + it
        try:
            value, grad = elbo_gradient(model, xb, yb, n_total=n, S=config.S, seed=step_seed, store=store)
        except TrainingError as err:
            raise TrainingError(str(err), trace=trace, parameter=err.parameter) from err
        trace.append(value)
        new, state = adam_step(state, store.get(), -grad)
        store.set(new)
        if callback is not None:
            callback(it, value)
    model.zero_grad(set_to_none=True)
    return TrainResult(model, trace)


def finite_difference_check(model, x, y, step=1e-5, seed=0, n_total=None, S=3, grad=None):
    """Relative error of ``elbo_gradient`` against central differences.

    The relative error of coordinate i is ``|g_i - fd_i| / max(|g_i|, |fd_i|, floor)``
    with ``floor = 1e-6 max_j |fd_j|``, so coordinates whose true derivative is
    essentially zero are judged on an absolute scale.  Pass ``grad`` to
    verify an externally supplied gradient.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    store = ParameterStore(model)
    if grad is None:
        _, grad = elbo_gradient(model, x, y, n_total=n_total, S=S, seed=seed, store=store)
    grad = as_tensor(grad)
    base = store.get()
    fd = torch.zeros_like(base)
    try:
        with torch.no_grad():
            for i in range(len(store)):
                up = base.clone()
                up[i] += step
                store.set(up)
                f_up = float(elbo(model, x, y, n_total=n_total, S=S, seed=seed))
                up[i] -= 2.0 * step
                store.set(up)
                f_dn = float(elbo(model, x, y, n_total=n_total, S=S, seed=seed))
                fd[i] = (f_up - f_dn) / (2.0 * step)
    finally:
        store.set(base)
    floor = 1e-6 * float(fd.abs().max()) if len(fd) else 0.0
    denom = torch.maximum(torch.maximum(grad.abs(), fd.abs()), torch.full_like(fd, max(floor, 1e-300)))
    rel = (grad - fd).abs() / denom
    worst = int(rel.argmax()) if len(rel) else -1
    return FdReport(rel, fd, grad, store.coordinate_name(worst) if worst >= 0 else None)


@dataclass
class FdReport:
    relative_errors: torch.Tensor
    finite_differences: torch.Tensor
    gradient: torch.Tensor
    worst_parameter: str

    @property
    def max_error(self):
        return float(self.relative_errors.max()) if len(self.relative_errors) else 0.0
