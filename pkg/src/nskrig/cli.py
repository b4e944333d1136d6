"""Batch command line: ``nskrig {simulate,fit,predict,ellipses}``.

Configuration comes from a JSON file (``--config``) with command-line flags
taking precedence. Outputs go to ``--out`` and carry a comment header echoing
the resolved configuration and seed.

Exit codes: 0 ok, 2 input error, 3 conditioning error, 4 convergence failure.
Errors print one line to stderr: ``nskrig: error code=<CODE> exit=<N>: <message>``.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as nio
from .convolution import ConvolutionGrid, default_grid, simulate_discrete_convolution, simulate_gp
from .engine import (
    FitOptions,
    ModelFit,
    basis_grid,
    fit_mle,
    fit_two_stage,
    krige,
    nonstationary_template,
    spec_from_dict,
    stationary_template,
)
from .errors import ConvergenceError, InputError, NSKrigError
from .fields import ConstantKernelField, ConstantScalarField, KernelMatrix
from .nonstationary import ellipse_records
from .stationary import StationarySpec

log = logging.getLogger("nskrig")

MODES = ("simulate", "fit", "predict", "ellipses")
PATH_KEYS = ("data", "fit", "query")


def parse_grid(value):
    """``"xmin,xmax,ymin,ymax,nx,ny"`` (or a 6-list) -> (m, 2) points, x fastest."""
    parts = value.split(",") if isinstance(value, str) else list(value)
    if len(parts) != 6:
        raise InputError(f"grid needs 6 fields xmin,xmax,ymin,ymax,nx,ny; got {value!r}")
    try:
        xmin, xmax, ymin, ymax = (float(p) for p in parts[:4])
        nx, ny = int(parts[4]), int(parts[5])
    except (TypeError, ValueError):
        raise InputError(f"cannot parse grid {value!r}") from None
    if nx < 2 or ny < 2:
        raise InputError("grid resolution must be at least 2 per axis")
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, nx), np.linspace(ymin, ymax, ny), indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_parser():
    p = argparse.ArgumentParser(prog="nskrig", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", help="correlation family: exponential, gaussian or matern")
    p.add_argument("--grid", help='prediction/ellipse grid "xmin,xmax,ymin,ymax,nx,ny"')
    p.add_argument("--basis", type=int, help="number of basis centroids M for the two-stage fit")
    p.add_argument("--radius", type=float, help="local estimation radius")
    p.add_argument("--bandwidth", type=float, help="mixture weight bandwidth")
    p.add_argument("--data", help="observation CSV")
    p.add_argument("--fit", dest="fit", help="fitted model JSON")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        base = os.path.dirname(os.path.abspath(args.config))
        for key in PATH_KEYS:
            if isinstance(config.get(key), str) and not os.path.isabs(config[key]):
                config[key] = os.path.join(base, config[key])
    config["mode"] = args.mode
    for key in ("seed", "out", "grid", "basis", "radius", "bandwidth", "data", "fit"):
        value = getattr(args, key)
        if value is not None:
            config[key] = value
    if args.model is not None:
        config.setdefault("model", {})["family"] = args.model
    if args.mode == "simulate" and config.get("seed") is None:
        raise InputError("simulate requires a seed (--seed or config 'seed')")
    config.setdefault("seed", 0)
    config.setdefault("out", ".")
    return config


def config_echo(config):
    """Resolved configuration minus run-location details, as one JSON line."""
    echo = {k: v for k, v in config.items() if k != "out"}
    for key in PATH_KEYS:
        if isinstance(echo.get(key), str):
            echo[key] = os.path.basename(echo[key])
    return json.dumps(echo, sort_keys=True, separators=(",", ":"))


def _header(config):
    return [f"nskrig {config['mode']}", f"seed: {config['seed']}", f"config: {config_echo(config)}"]


def _require(config, key):
    if config.get(key) is None:
        raise InputError(f"{config['mode']} requires '{key}'")
    return config[key]


def run_simulate(config):
    seed = int(config["seed"])
    spec_d = dict(_require(config, "spec"))
    family = (config.get("model") or {}).get("family")
    if family and "family" in spec_d:
        spec_d["family"] = family
    if config.get("grid") is not None:
        X = parse_grid(config["grid"])
    else:
        n = int(config.get("n", 100))
        xmin, xmax, ymin, ymax = config.get("bounds", [0.0, 1.0, 0.0, 1.0])
        u = np.random.default_rng([seed, 2**31]).uniform(size=(n, 2))
        X = np.column_stack([xmin + (xmax - xmin) * u[:, 0], ymin + (ymax - ymin) * u[:, 1]])
    replicates = int(config.get("replicates", 1))
    nugget = float(config.get("nugget", 0.0))
    method = config.get("method", "exact")
    if method == "exact":
        real = simulate_gp(spec_from_dict(spec_d), X, seed, replicates, nugget=nugget)
    elif method == "convolution":
        from .fields import kernel_field_from_dict

        field = kernel_field_from_dict(spec_d["kernel"])
        if "grid" in spec_d:
            grid = ConvolutionGrid.from_dict(spec_d["grid"])
        else:
            grid = default_grid(X, field, int(config.get("grid_per_axis", 20)), float(config.get("noise_variance", 1.0)))
        real = simulate_discrete_convolution(field, grid, X, seed, replicates)
        if nugget:
            noise = np.stack([np.random.default_rng([seed, r, 1]).standard_normal(len(X)) for r in range(replicates)])
            real.values = real.values + np.sqrt(nugget) * noise
    else:
        raise InputError(f"unknown simulation method {method!r}")
    out = os.path.join(config["out"], "realization.csv")
    nio.write_atomic({out: nio.realization_csv(real, _header(config))})
    return [out]


def _fit_model(config, data):
    model = dict(config.get("model") or {})
    family = model.get("family", "exponential")
    kind = model.get("kind", "two-stage" if config.get("basis") else "stationary")
    opts = FitOptions(restarts=int(config.get("restarts", 3)), seed=int(config["seed"]))
    trend = config.get("trend", "constant")
    smoothness = float(model.get("smoothness", 0.5))
    free_kappa = bool(model.get("free_smoothness", False))
    fixed = model.get("fixed")
    if kind in ("stationary", "anisotropic"):
        tmpl = stationary_template(data, family, anisotropic=kind == "anisotropic", smoothness=smoothness,
                                   free_smoothness=free_kappa, fixed=fixed, trend=trend)
        return fit_mle(data, tmpl, opts)
    if kind == "two-stage":
        M = int(config.get("basis") or 4)
        B = np.array(config["basis_locations"]) if "basis_locations" in config else basis_grid(data.locations, M)
        radius = config.get("radius")
        if radius is None:
            radius = 0.35 * data.diameter() / np.sqrt(2.0)
        return fit_two_stage(data, B, float(radius), opts, family=family, bandwidth=config.get("bandwidth"),
                             smoothness=smoothness, free_smoothness=free_kappa, trend=trend)
    if kind in ("ns-constant", "ns-mixture", "ns-covariate"):
        B = None
        if kind == "ns-mixture":
            B = basis_grid(data.locations, int(config.get("basis") or 4))
        tmpl = nonstationary_template(data, kernel=kind.split("-")[1], family=family, basis_locations=B,
                                      bandwidth=config.get("bandwidth"), smoothness=smoothness,
                                      free_smoothness=free_kappa, sigma=model.get("sigma", "constant"),
                                      fixed=fixed, trend=trend)
        return fit_mle(data, tmpl, opts)
    raise InputError(f"unknown model kind {kind!r}")


def fit_report(fit, config):
    lines = [f"# {h}" for h in _header(config)]
    lines += [
        f"log_likelihood: {nio.fmt(fit.log_likelihood)}",
        f"converged: {fit.convergence.get('converged')}",
        f"iterations: {fit.convergence.get('iterations')}",
        f"evaluations: {fit.convergence.get('evaluations')}",
        f"nugget: {nio.fmt(fit.nugget)}",
        f"trend: {fit.trend} beta={[nio.fmt(b) for b in fit.beta]}",
        "parameter,value",
    ]
    lines += [f"{k},{nio.fmt(v)}" for k, v in sorted(fit.parameters.items())]
    return "\n".join(lines) + "\n"


def run_fit(config):
    data = nio.ingest_csv(_require(config, "data"))
    fit = _fit_model(config, data)
    if not fit.convergence.get("converged", False):
        raise ConvergenceError(
            f"optimizer did not converge after {fit.convergence.get('iterations')} iterations "
            f"(best log-likelihood {fit.log_likelihood:.6g})"
        )
    payload = fit.to_dict()
    payload["run"] = {"seed": config["seed"], "config": json.loads(config_echo(config))}
    out_fit = os.path.join(config["out"], "fit.json")
    out_rep = os.path.join(config["out"], "fit_report.txt")
    nio.write_atomic({
        out_fit: json.dumps(payload, indent=2, sort_keys=True) + "\n",
        out_rep: fit_report(fit, config),
    })
    return [out_fit, out_rep]


def _load_fit(config):
    path = _require(config, "fit")
    try:
        with open(path) as fh:
            return ModelFit.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"cannot read fitted model {path}: {exc}") from None


def _query(config):
    if config.get("query") is not None:
        q = nio.ingest_csv(config["query"])
        return q.locations, q.covariates
    return parse_grid(_require(config, "grid")), None


def run_predict(config):
    fit = _load_fit(config)
    data = nio.ingest_csv(_require(config, "data"))
    X, cov = _query(config)
    result = krige(fit, data, X, cov)
    comments = _header(config) + ["grid order: row-major, x fastest"]
    out = os.path.join(config["out"], "predictions.csv")
    nio.write_atomic({out: nio.predictions_csv(result, comments)})
    return [out]


def _ellipse_fields(spec):
    if isinstance(spec, StationarySpec):
        A = spec.anisotropy.matrix * spec.range**2 if spec.anisotropy is not None else spec.range**2 * np.eye(2)
        return ConstantKernelField(KernelMatrix(A)), ConstantScalarField(np.sqrt(spec.variance)), \
            ConstantScalarField(spec.smoothness)
    if hasattr(spec, "kernel"):
        kappa = getattr(spec, "smoothness", None)
        if isinstance(kappa, (int, float)):
            kappa = ConstantScalarField(float(kappa))
        return spec.kernel, getattr(spec, "sigma", None), kappa
    raise InputError(f"model type {type(spec).__name__} has no kernel-matrix field")


def run_ellipses(config):
    fit = _load_fit(config)
    X, cov = _query(config)
    kernel, sigma, kappa = _ellipse_fields(fit.spec)
    records = ellipse_records(kernel, X, sigma, kappa, cov)
    comments = _header(config) + ["grid order: row-major, x fastest", "angle: radians, major axis, [0, pi)"]
    out = os.path.join(config["out"], "ellipses.csv")
    nio.write_atomic({out: nio.ellipses_csv(records, comments)})
    return [out]


RUNNERS = {"simulate": run_simulate, "fit": run_fit, "predict": run_predict, "ellipses": run_ellipses}


def run(config):
    """Execute one configured run; returns the written paths."""
    return RUNNERS[config["mode"]](config)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    threads = os.environ.get("NSKRIG_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                paths = run(resolve_config(args))
        else:
            paths = run(resolve_config(args))
    except NSKrigError as exc:
        print(f"nskrig: error code={exc.code} exit={exc.exit_status}: {exc}", file=sys.stderr)
        return exc.exit_status
    except (OSError, ValueError) as exc:
        print(f"nskrig: error code={InputError.code} exit={InputError.exit_status}: {exc}", file=sys.stderr)
        return InputError.exit_status
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
