"""Experiment harnesses: synthetic and vector-field regression, Bayesian
optimisation, Euclidean-embedding regression and gradient checks.

Each ``run_*`` function takes an ``ExperimentConfig`` and returns a plain
dictionary of results that ``report.emit_report`` can serialise.
"""

import csv
import math

import numpy as np
import torch

from ._torch import DTYPE, as_tensor, make_generator
from .bayesopt import AcquisitionConfig, BoConfig, reference_minimum, run_bayesopt, run_bayesopt_pair
from .benchmarks import TARGETS, benchmark_f, embed_euclidean
from .errors import ConfigError, CsvFormatError
from .gvf import HodgePrior, gvf_prior_function_sample
from .kernels import HodgeSpec, MaternSpec
from .model import build_model, mse, nlpd, predict
from .sphere import fibonacci_lattice, sample_uniform
from .training import TrainConfig, finite_difference_check, train

POLE_TOL = 1e-12


# -- vector-field data ---------------------------------------------------------


def east_north_frame(lat_deg, lon_deg):
    """Unit east and north vectors ``(n, 3)`` at geographic coordinates."""
    lat = torch.deg2rad(as_tensor(lat_deg))
    lon = torch.deg2rad(as_tensor(lon_deg))
    zero = torch.zeros_like(lon)
    east = torch.stack([-torch.sin(lon), torch.cos(lon), zero], -1)
    north = torch.stack([-torch.sin(lat) * torch.cos(lon), -torch.sin(lat) * torch.sin(lon), torch.cos(lat)], -1)
    return east, north


def latlon_to_points(lat_deg, lon_deg):
    lat = torch.deg2rad(as_tensor(lat_deg))
    lon = torch.deg2rad(as_tensor(lon_deg))
    return torch.stack([torch.cos(lat) * torch.cos(lon), torch.cos(lat) * torch.sin(lon), torch.sin(lat)], -1)


def points_to_latlon(x):
    x = as_tensor(x)
    lat = torch.rad2deg(torch.arcsin(torch.clamp(x[..., 2], -1.0, 1.0)))
    lon = torch.rad2deg(torch.atan2(x[..., 1], x[..., 0]))
    return lat, lon


def records_to_tangent(lat, lon, u, v):
    """Points and ambient tangent targets ``u e_east + v e_north``."""
    if bool((torch.cos(torch.deg2rad(as_tensor(lat))).abs() < POLE_TOL).any()):
        raise ValueError("east/north frame undefined at the poles")
    east, north = east_north_frame(lat, lon)
    y = as_tensor(u).unsqueeze(-1) * east + as_tensor(v).unsqueeze(-1) * north
    return latlon_to_points(lat, lon), y


def tangent_to_records(x, y):
    """Inverse of ``records_to_tangent``: ``(lat, lon, u, v)``."""
    lat, lon = points_to_latlon(x)
    east, north = east_north_frame(lat, lon)
    y = as_tensor(y)
    return lat, lon, (y * east).sum(-1), (y * north).sum(-1)


def read_vectorfield_csv(path):
    """Parse a ``lat,lon,u,v`` file.

    Returns ``(lat, lon, u, v, rejected)`` where ``rejected`` counts pole
    rows, which are dropped because the east/north frame is undefined there.
    Malformed rows raise ``CsvFormatError`` with their line number.
    """
    rows, rejected = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["lat", "lon", "u", "v"]:
            raise CsvFormatError("header must be lat,lon,u,v", line=1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise CsvFormatError(f"expected 4 fields, got {len(row)}", line=line)
            try:
                lat, lon, u, v = (float(c) for c in row)
            except ValueError:
                raise CsvFormatError(f"non-numeric field in {row!r}", line=line) from None
            if not all(math.isfinite(c) for c in (lat, lon, u, v)):
                raise CsvFormatError("non-finite value", line=line)
            if abs(lat) > 90.0:
                raise CsvFormatError(f"latitude {lat} outside [-90, 90]", line=line)
            if not -180.0 <= lon < 180.0:
                raise CsvFormatError(f"longitude {lon} outside [-180, 180)", line=line)
            if math.cos(math.radians(lat)) < POLE_TOL:
                rejected += 1
                continue
            rows.append((lat, lon, u, v))
    if not rows:
        raise CsvFormatError("no usable records")
    cols = np.asarray(rows, dtype=np.float64).T
    return tuple(torch.as_tensor(c, dtype=DTYPE) for c in cols) + (rejected,)


def write_vectorfield_csv(path, lat, lon, u, v):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "u", "v"])
        for row in zip(*(as_tensor(c).tolist() for c in (lat, lon, u, v))):
            w.writerow([repr(c) for c in row])


def hodge_field_sample(K=5, nu=1.5, kappa=1.0, div_sigma2=1.0, curl_sigma2=1.0, seed=0):
    """Prior draw from a Hodge GVF; a zero variance switches that part off."""
    spec = HodgeSpec(
        div=MaternSpec(nu=nu, kappa=kappa, sigma2=div_sigma2, K=K),
        curl=MaternSpec(nu=nu, kappa=kappa, sigma2=curl_sigma2, K=K),
    )
    return gvf_prior_function_sample(HodgePrior(spec), seed)


# -- shared helpers ----------------------------------------------------------------


def _model_kwargs(cfg, d=2):
    m = cfg.model
    if d != 2 and m.gvf != "projected":
        raise ConfigError(f"{m.gvf} GVFs are only available on S_2; use projected")
    return dict(
        gvf_kind=m.gvf,
        family=m.family,
        head=m.head,
        head_family=m.head_family,
        K=m.K,
        head_K=m.head_K,
        inducing_degree=m.inducing_degree,
        num_inducing=m.num_inducing,
        nu=m.nu,
        train_nu=m.train_nu,
        noise_var=m.noise_var,
        extended=m.extended,
    )


def _train_config(cfg, seed):
    t = cfg.training
    return TrainConfig(iters=t.iters, lr=t.lr, batch_size=t.batch_size, S=t.samples, seed=seed)


def _layers(cfg):
    layers = cfg.model.layers
    return [int(v) for v in (layers if isinstance(layers, (list, tuple)) else [layers])]


def fit_and_score(cfg, x, y, xt, yt, layers, seed, truth=None, d=2):
    """Train one model and evaluate it; ``truth`` (noise-free test values) feeds MSE."""
    model = build_model(x, num_layers=layers, seed=seed, **_model_kwargs(cfg, d))
    result = train(model, x, y, _train_config(cfg, seed))
    pred = predict(model, xt, S=cfg.training.eval_samples, seed=seed)
    point_unc = pred.pointwise_uncertainty
    return model, {
        "layers": layers,
        "seed": seed,
        "nlpd": nlpd(model, xt, yt, prediction=pred),
        "mse": mse(model, xt, yt if truth is None else truth, prediction=pred),
        "uncertainty": float(point_unc.mean()),
        "elbo_trace": result.elbo_trace,
        "noise_var_fitted": float(model.noise_var.detach()),
    }, pred


# -- synthetic regression ----------------------------------------------------------


def synthetic_dataset(n_train, n_test, noise_var, seed):
    gen = make_generator(seed)
    x = fibonacci_lattice(n_train)
    xt = fibonacci_lattice(n_test)
    sd = math.sqrt(noise_var)
    y = benchmark_f(x) + sd * torch.randn(n_train, dtype=DTYPE, generator=gen)
    ft = benchmark_f(xt)
    yt = ft + sd * torch.randn(n_test, dtype=DTYPE, generator=gen)
    return x, y, xt, yt, ft


def run_synthetic_regression(cfg, progress=None):
    """Sweep over training sizes, depths and seeds on the benchmark function."""
    d = cfg.data
    sizes = [int(n) for n in (d.n_train if isinstance(d.n_train, (list, tuple)) else [d.n_train])]
    runs = []
    for n in sizes:
        for seed in cfg.seed_list():
            x, y, xt, yt, _ = synthetic_dataset(n, d.n_test, d.noise_var, seed)
            for layers in _layers(cfg):
                _, res, _ = fit_and_score(cfg, x, y, xt, yt, layers, seed)
                res["n_train"] = n
                runs.append(res)
                if progress is not None:
                    progress(res)
    table = [{k: r[k] for k in ("n_train", "layers", "seed", "nlpd", "mse", "uncertainty")} for r in runs]
    summary = []
    for n in sizes:
        for layers in _layers(cfg):
            sel = [r for r in runs if r["n_train"] == n and r["layers"] == layers]
            summary.append(
                {
                    "n_train": n,
                    "layers": layers,
                    "nlpd": float(np.mean([r["nlpd"] for r in sel])),
                    "mse": float(np.mean([r["mse"] for r in sel])),
                }
            )
    return {
        "kind": "regress-synthetic",
        "noise_var": d.noise_var,
        "runs": runs,
        "summary": summary,
        "tables": {"nlpd_table": table, "nlpd_summary": summary},
    }


# -- vector-field regression ---------------------------------------------------------


def _split(n, fraction, seed):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = min(max(1, int(round(fraction * n))), n - 1) if n > 1 else 0
    return torch.as_tensor(perm[n_test:]), torch.as_tensor(perm[:n_test])


def run_vectorfield_regression(cfg, csv_path=None, progress=None):
    """Fit vector-head models to ``lat,lon,u,v`` data (train/test split by seed)."""
    d = cfg.data
    lat, lon, u, v, rejected = read_vectorfield_csv(csv_path or d.csv)
    x, y = records_to_tangent(lat, lon, u, v)
    test_rejected = 0
    if d.test_csv is not None:
        tlat, tlon, tu, tv, test_rejected = read_vectorfield_csv(d.test_csv)
        xt, yt = records_to_tangent(tlat, tlon, tu, tv)
    runs, per_point = [], []
    for seed in cfg.seed_list():
        if d.test_csv is None:
            tr, te = _split(x.shape[0], d.test_fraction, seed)
            if len(te) == 0:
                raise ConfigError("need at least two records to split into train and test")
            xs, ys, xts, yts = x[tr], y[tr], x[te], y[te]
        else:
            xs, ys, xts, yts = x, y, xt, yt
        for layers in _layers(cfg):
            _, res, pred = fit_and_score(cfg, xs, ys, xts, yts, layers, seed)
            runs.append(res)
            unc = pred.pointwise_uncertainty
            mean = pred.mean
            plat, plon, pu, pv = tangent_to_records(xts, mean)
            for i in range(xts.shape[0]):
                per_point.append(
                    {
                        "seed": seed,
                        "layers": layers,
                        "lat": float(plat[i]),
                        "lon": float(plon[i]),
                        "u_mean": float(pu[i]),
                        "v_mean": float(pv[i]),
                        "uncertainty": float(unc[i]),
                    }
                )
            if progress is not None:
                progress(res)
    return {
        "kind": "regress-vectorfield",
        "rejected_pole_rows": rejected + test_rejected,
        "num_records": int(x.shape[0]),
        "runs": runs,
        "tables": {
            "metrics_table": [{k: r[k] for k in ("layers", "seed", "nlpd", "mse", "uncertainty")} for r in runs],
            "predictions": per_point,
        },
    }


# -- Euclidean embedding -------------------------------------------------------------


def read_numeric_csv(path):
    """Numeric table with a header row; the last column is the target."""
    try:
        data = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64, ndmin=2)
    except ValueError as err:
        raise CsvFormatError(str(err)) from err
    if data.size == 0 or data.shape[1] < 2:
        raise CsvFormatError("need at least one feature column and a target column")
    bad = np.flatnonzero(~np.isfinite(data).all(1))
    if len(bad):
        raise CsvFormatError("missing or non-numeric value", line=int(bad[0]) + 2)
    return torch.as_tensor(data[:, :-1]), torch.as_tensor(data[:, -1])


def synthetic_euclidean(n, dim, noise_var, seed):
    gen = make_generator(seed)
    x = 2.0 * torch.rand(n, dim, dtype=DTYPE, generator=gen) - 1.0
    f = torch.sin(2.0 * x.sum(-1)) + 0.5 * torch.cos(3.0 * x[:, 0])
    return x, f + math.sqrt(noise_var) * torch.randn(n, dtype=DTYPE, generator=gen)


def run_embed_regression(cfg, progress=None):
    """Regression on Euclidean inputs mapped to S_d by ``embed_euclidean``.

    Inputs and targets are standardised with training statistics; metrics
    are reported on the standardised target scale.
    """
    d = cfg.data
    if d.csv is not None:
        features, target = read_numeric_csv(d.csv)
    else:
        n = d.n_train if not isinstance(d.n_train, (list, tuple)) else d.n_train[0]
        features, target = synthetic_euclidean(int(n), d.input_dim, d.noise_var, cfg.seed)
    dim = features.shape[1]
    if dim < 2:
        raise ConfigError("embedding needs at least two input features (S_d with d >= 2)")
    runs = []
    for seed in cfg.seed_list():
        tr, te = _split(features.shape[0], d.test_fraction, seed)
        mu, sd = features[tr].mean(0), features[tr].std(0)
        sd = torch.where(sd > 0, sd, torch.ones_like(sd))
        ymu, ysd = target[tr].mean(), target[tr].std()
        ysd = ysd if float(ysd) > 0 else torch.ones((), dtype=DTYPE)
        x = embed_euclidean((features - mu) / sd, d.bias)
        y = (target - ymu) / ysd
        for layers in _layers(cfg):
            _, res, _ = fit_and_score(cfg, x[tr], y[tr], x[te], y[te], layers, seed, d=dim)
            runs.append(res)
            if progress is not None:
                progress(res)
    return {
        "kind": "embed-regress",
        "input_dim": dim,
        "bias": d.bias,
        "runs": runs,
        "tables": {"metrics_table": [{k: r[k] for k in ("layers", "seed", "nlpd", "mse")} for r in runs]},
    }


# -- Bayesian optimisation -------------------------------------------------------------


def bo_config(cfg, seed):
    b = cfg.bayesopt
    return BoConfig(
        target=b.target,
        d=b.d,
        iterations=b.iterations,
        switch_at=b.switch_at,
        num_initial=b.num_initial,
        fit_iters=b.fit_iters,
        lr=b.lr,
        K=b.K,
        nu=b.nu,
        deep_layers=b.deep_layers,
        deep_gvf=b.deep_gvf,
        deep_inducing=b.deep_inducing,
        seed=seed,
        acquisition=AcquisitionConfig(**vars(b.acquisition)),
    )


def run_bayesopt_experiment(cfg, target=None, progress=None):
    """Runs per seed; with ``compare`` the shallow-only baseline is run too."""
    b = cfg.bayesopt
    if target is None:
        if b.target not in TARGETS:
            raise ConfigError(f"unknown target {b.target!r}; expected one of {', '.join(TARGETS)}")
        target = TARGETS[b.target]
    f_ref = reference_minimum(target, b.d)[1]
    branches = {"deep": [], "shallow": []} if b.compare else {"main": []}
    for seed in cfg.seed_list():
        bc = bo_config(cfg, seed)
        if b.compare:
            shallow, deep = run_bayesopt_pair(bc, target, f_ref)
            branches["shallow"].append(shallow)
            branches["deep"].append(deep)
        else:
            branches["main"].append(run_bayesopt(bc, target, f_ref))
        if progress is not None:
            progress({"seed": seed, **{k: v[-1]["final_regret"] for k, v in branches.items()}})
    out = {"kind": "bayesopt", "reference_minimum": f_ref, "seeds": cfg.seed_list(), "runs": branches}
    key = "deep" if b.compare else "main"
    out["regret_trace"] = [r["regret_trace"] for r in branches[key]]
    out["final_regret"] = {k: [r["final_regret"] for r in v] for k, v in branches.items()}
    out["median_final_regret"] = {k: float(np.median(v)) for k, v in out["final_regret"].items()}
    rows = []
    for name, results in branches.items():
        for seed, r in zip(cfg.seed_list(), results):
            for it, (best, reg) in enumerate(zip(r["best_trace"], r["regret_trace"]), start=1):
                rows.append({"branch": name, "seed": seed, "iteration": it, "best": best, "log10_regret": reg})
    out["tables"] = {"regret_curves": rows}
    return out


# -- gradient check ---------------------------------------------------------------------


def run_gradcheck(cfg):
    """Autograd ELBO gradient against central differences on a small model."""
    g = cfg.gradcheck
    gen = make_generator(cfg.seed)
    x = sample_uniform(g.n, 2, gen)
    if cfg.model.head == "vector":
        y = hodge_field_sample(K=3, seed=cfg.seed)(x) + 0.1 * torch.randn(g.n, 3, dtype=DTYPE, generator=gen)
    else:
        y = benchmark_f(x) + 0.1 * torch.randn(g.n, dtype=DTYPE, generator=gen)
    layers = max(_layers(cfg))
    model = build_model(x, num_layers=layers, seed=cfg.seed, **_model_kwargs(cfg))
    report = finite_difference_check(model, x, y, step=g.step, seed=cfg.seed, S=cfg.training.samples)
    return {
        "kind": "gradcheck",
        "layers": layers,
        "num_parameters": int(report.relative_errors.numel()),
        "max_relative_error": report.max_error,
        "worst_parameter": report.worst_parameter,
        "tolerance": g.tolerance,
        "passed": report.max_error < g.tolerance,
    }


RUNNERS = {
    "regress-synthetic": run_synthetic_regression,
    "regress-vectorfield": run_vectorfield_regression,
    "bayesopt": run_bayesopt_experiment,
    "embed-regress": run_embed_regression,
    "gradcheck": run_gradcheck,
}


def run_experiment(cfg, progress=None):
    runner = RUNNERS[cfg.kind]
    if cfg.kind == "gradcheck":
        return runner(cfg)
    return runner(cfg, progress=progress)

