"""Bayesian optimisation on the sphere with pathwise Monte-Carlo EI.

Every iteration refits the surrogate from scratch on standardised targets,
draws a batch of posterior function samples, and maximises the Monte-Carlo
expected improvement by multi-start Riemannian gradient ascent.
"""

from dataclasses import dataclass, field
import math

from scipy.optimize import minimize
import torch
from torch import nn

from ._torch import DTYPE, as_tensor, inv_softplus, make_generator, softplus
from .benchmarks import TARGETS
from .errors import TrainingError
from .gvf import feature_count, gram_table, gvf_features, prior_cov
from .model import build_model, deep_function_sample
from .sphere import exp_map, fibonacci_lattice, sample_uniform, tangent_project
from .training import AdamState, ParameterStore, TrainConfig, adam_step, train
from .variational import MaternParams, robust_cholesky


def expected_improvement(samples, f_best):
    """Monte-Carlo EI for minimisation; ``samples`` has the draws on axis 0."""
    samples = as_tensor(samples)
    return torch.clamp(f_best - samples, min=0.0).mean(0)


# -- shallow surrogate ---------------------------------------------------------


class ExactSurrogate(nn.Module):
    """Exact GP with a scalar Matérn kernel; hyperparameters by evidence."""

    def __init__(self, K=10, d=2, nu=2.5, train_nu=False, noise_var=1e-2):
        super().__init__()
        self.kernel = MaternParams(nu=nu, K=K, d=d, train_nu=train_nu)
        self.raw_noise = nn.Parameter(inv_softplus(noise_var).reshape(()))
        self.transforms = {"raw_noise": "softplus"}

    @property
    def noise_var(self):
        return softplus(self.raw_noise)

    def _chol(self, x, table=None):
        k = prior_cov(self.kernel.spec(), x, x, table)[..., 0, 0]
        return robust_cholesky(k + self.noise_var * torch.eye(x.shape[0], dtype=DTYPE))

    def log_marginal(self, x, y, table=None):
        chol = self._chol(x, table)
        alpha = torch.cholesky_solve(y.unsqueeze(-1), chol).squeeze(-1)
        n = x.shape[0]
        return -0.5 * (y @ alpha) - torch.log(chol.diagonal()).sum() - 0.5 * n * math.log(2.0 * math.pi)

    def fit(self, x, y, iters=500, lr=0.01):
        store = ParameterStore(self)
        state = AdamState(len(store), lr=lr)
        trace = []
        table = gram_table(self.kernel.spec(), x, x)
        for _ in range(int(iters)):
            self.zero_grad(set_to_none=True)
            value = self.log_marginal(x, y, table)
            if not torch.isfinite(value):
                raise TrainingError("non-finite log marginal likelihood", trace=trace)
            (-value).backward()
            trace.append(float(value.detach()))
            new, state = adam_step(state, store.get(), store.grad())
            store.set(new)
        self.zero_grad(set_to_none=True)
        self.x, self.y = x, y
        return trace

    def function_samples(self, num, generator):
        """Matheron-rule posterior draws, ``(n, D) -> (num, n)``."""
        from .kernels import scalar_matern_kernel

        spec = self.kernel.spec()
        x, y = self.x, self.y
        with torch.no_grad():
            s2 = self.noise_var
            w = torch.randn(feature_count(spec), num, dtype=DTYPE, generator=generator)
            eps = torch.sqrt(s2) * torch.randn(x.shape[0], num, dtype=DTYPE, generator=generator)
            fx = gvf_features(spec, x)[:, 0, :] @ w
            chol = self._chol(x)
            coef = torch.cholesky_solve(y.unsqueeze(-1) - fx - eps, chol)

        def sample(xs):
            xs = as_tensor(xs)
            prior = (gvf_features(spec, xs)[:, 0, :] @ w).T
            return prior + (scalar_matern_kernel(spec, xs, x) @ coef).T

        return sample


# -- acquisition -----------------------------------------------------------------


@dataclass
class AcquisitionConfig:
    num_samples: int = 32
    lattice: int = 2000
    starts: int = 20
    steps: int = 100
    step_size: float = 0.05


def maximise_ei(handle, f_best, d=2, config=None):
    """Multi-start Riemannian ascent of MC-EI from the best lattice points.

    ``handle`` maps ``(n, D)`` inputs to ``(S, n)`` function draws.  A step is
    kept only when it increases EI at that start; otherwise its step size is
    halved.
    """
    config = AcquisitionConfig() if config is None else config
    if d == 2:
        grid = fibonacci_lattice(config.lattice)
    else:
        grid = sample_uniform(config.lattice, d, make_generator(0))
    with torch.no_grad():
        ei_grid = expected_improvement(handle(grid), f_best)
    if not bool(torch.isfinite(ei_grid).all()):
        raise TrainingError("non-finite acquisition values")
    top = torch.argsort(ei_grid, descending=True)[: config.starts]
    x = grid[top].clone()
    ei, grad = _ei_and_grad(handle, x, f_best)
    step = torch.full((x.shape[0],), float(config.step_size), dtype=DTYPE)
    for _ in range(config.steps):
        cand = exp_map(x, tangent_project(x, grad) * step.unsqueeze(-1))
        new, new_grad = _ei_and_grad(handle, cand, f_best)
        better = new > ei
        x = torch.where(better.unsqueeze(-1), cand, x)
        ei = torch.where(better, new, ei)
        grad = torch.where(better.unsqueeze(-1), new_grad, grad)
        step = torch.where(better, step, step / 2.0)
    best = int(torch.argmax(ei))
    return x[best].detach(), float(ei[best])


def _ei_and_grad(handle, x, f_best):
    xg = x.detach().clone().requires_grad_(True)
    val = expected_improvement(handle(xg), f_best)
    (grad,) = torch.autograd.grad(val.sum(), xg)
    if not bool(torch.isfinite(val).all()):
        raise TrainingError("non-finite acquisition values")
    return val.detach(), grad


# -- regret reference ----------------------------------------------------------------


def reference_minimum(target, d=2, n=1_000_000, refine=True, seed=0):
    """Global minimum by dense search, then a Nelder-Mead polish.

    The search uses the Fibonacci lattice on S_2 and uniform draws otherwise;
    the polish runs in ambient coordinates normalised onto the sphere.
    """
    grid = fibonacci_lattice(n) if d == 2 else sample_uniform(n, d, make_generator(seed))
    with torch.no_grad():
        vals = torch.cat([target(chunk) for chunk in torch.split(grid, 100_000)])
    i = int(torch.argmin(vals))
    x0, f0 = grid[i], float(vals[i])
    if not refine:
        return x0, f0

    def fun(v):
        v = torch.as_tensor(v, dtype=DTYPE)
        return float(target((v / v.norm()).unsqueeze(0))[0])

    res = minimize(fun, x0.numpy(), method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 8000})
    if res.fun < f0:
        v = torch.as_tensor(res.x, dtype=DTYPE)
        return v / v.norm(), float(res.fun)
    return x0, f0


# -- the loop ----------------------------------------------------------------------------


@dataclass
class BoConfig:
    target: str = "bo_target"
    d: int = 2
    iterations: int = 200
    switch_at: int = 180
    num_initial: int = 5
    fit_iters: int = 500
    lr: float = 0.01
    K: int = 10
    nu: float = 2.5
    deep_layers: int = 2
    deep_gvf: str = "projected"
    deep_inducing: int = 30
    seed: int = 0
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)


@dataclass
class BoState:
    x: torch.Tensor
    y: torch.Tensor
    best_trace: list = field(default_factory=list)
    surrogate_trace: list = field(default_factory=list)

    def copy(self):
        return BoState(self.x.clone(), self.y.clone(), list(self.best_trace), list(self.surrogate_trace))


def _standardise(y):
    mu = y.mean()
    sd = y.std() if y.shape[0] > 1 else torch.ones((), dtype=DTYPE)
    sd = sd if float(sd) > 1e-12 else torch.ones((), dtype=DTYPE)
    return (y - mu) / sd


def propose(config, state, deep, iteration):
    """Fit a fresh surrogate and return the EI maximiser."""
    ys = _standardise(state.y)
    gen = make_generator(config.seed * 7919 + iteration)
    if not deep:
        model = ExactSurrogate(K=config.K, d=config.d, nu=config.nu)
        model.fit(state.x, ys, iters=config.fit_iters, lr=config.lr)
        handle = model.function_samples(config.acquisition.num_samples, gen)
    else:
        model = build_model(
            state.x,
            num_layers=config.deep_layers,
            gvf_kind=config.deep_gvf,
            family="il",
            head="scalar",
            head_family="iv",
            K=config.K,
            num_inducing=config.deep_inducing,
            nu=config.nu,
            train_nu=False,
            seed=config.seed,
        )
        train(model, state.x, ys, TrainConfig(iters=config.fit_iters, lr=config.lr, seed=config.seed + iteration))
        handle = deep_function_sample(model, gen, num=config.acquisition.num_samples)
    x_new, _ = maximise_ei(handle, float(ys.min()), config.d, config.acquisition)
    return x_new


def initial_state(config, target):
    gen = make_generator(config.seed)
    x = sample_uniform(config.num_initial, config.d, gen)
    y = target(x)
    return BoState(x, y, [float(y.min())])


def advance(config, state, target, start, stop, deep):
    for it in range(start, stop):
        x_new = propose(config, state, deep, it)
        y_new = target(x_new.unsqueeze(0))
        state.x = torch.cat([state.x, x_new.unsqueeze(0)])
        state.y = torch.cat([state.y, y_new])
        state.best_trace.append(min(state.best_trace[-1], float(y_new)))
        state.surrogate_trace.append("deep" if deep else "shallow")
    return state


def log_regret(best_trace, f_ref, floor=1e-12):
    return [math.log10(max(b - f_ref, floor)) for b in best_trace]


def run_bayesopt(config, target=None, f_ref=None):
    """Single run; returns best-so-far and log10-regret traces, one entry per iteration."""
    target = TARGETS[config.target] if target is None else target
    if f_ref is None:
        f_ref = reference_minimum(target, config.d)[1]
    state = initial_state(config, target)
    switch = config.iterations if config.switch_at is None else min(config.switch_at, config.iterations)
    advance(config, state, target, 0, switch, deep=False)
    advance(config, state, target, switch, config.iterations, deep=True)
    return _result(state, f_ref)


def run_bayesopt_pair(config, target=None, f_ref=None):
    """Shallow-only and shallow-then-deep runs sharing their common prefix."""
    target = TARGETS[config.target] if target is None else target
    if f_ref is None:
        f_ref = reference_minimum(target, config.d)[1]
    state = initial_state(config, target)
    advance(config, state, target, 0, config.switch_at, deep=False)
    shallow = advance(config, state.copy(), target, config.switch_at, config.iterations, deep=False)
    deep = advance(config, state, target, config.switch_at, config.iterations, deep=True)
    return _result(shallow, f_ref), _result(deep, f_ref)


def _result(state, f_ref):
    """Per-iteration traces; the initial design's best is reported separately."""
    out = {
        "initial_best": state.best_trace[0],
        "best_trace": list(state.best_trace[1:]),
        "final_best": state.best_trace[-1],
        "surrogates": list(state.surrogate_trace),
        "x": state.x.tolist(),
        "y": state.y.tolist(),
        "reference_minimum": f_ref,
    }
    if f_ref is not None:
        regret = log_regret(state.best_trace, f_ref)
        out["initial_regret"] = regret[0]
        out["regret_trace"] = regret[1:]
        out["final_regret"] = regret[-1]
    return out
