"""Command-line front end: ``sievei fit``, ``sievei test`` and ``sievei mc``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .basis import BasisError
from .bootstrap import BootstrapUnstableError, WeightScheme, bootstrap_ci, bootstrap_score, bootstrap_sqlr, bootstrap_wald
from .data_io import DataError, load_dataset, write_table
from .functionals import parse_functional
from .inference import invert_sqlr_ci, score_test, sqlr_test, wald_test
from .mc import DESIGNS, design_config, power_grid, qq_data, run_power_curve, run_size_experiment, run_variance_experiment
from .models import ModelSpec, NonSmoothResidualError, WeightingError
from .psmd import OptimConfig, RestrictedFitError, fit_design, fit_restricted_design, prepare_design
from .variance import SlopeDegenerateError, plugin_variances

__all__ = ["ConfigError", "main", "read_config"]

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("sievei")


class ConfigError(ValueError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (type, default, help[, choices])
COMMON = {
    "seed": (int, 0, "random seed"),
    "threads": (int, None, "worker threads; unset means $SIEVEI_THREADS or 1"),
    "out": (str, None, "output CSV path"),
}
MODEL = {
    "data": (str, None, "input CSV with columns y1, y2, x"),
    "y1": (str, "y1", "outcome column"),
    "y2": (str, "y2", "endogenous regressor column"),
    "x": (str, "x", "instrument column(s), comma separated"),
    "model": (str, "npiv", "residual model", ("npiv", "npqiv")),
    "qbasis": (str, "pol:4", "sieve for h: pol:J or pspline:r:k"),
    "pbasis": (str, "pol:6", "instrument basis: pol:J or pspline:r:k"),
    "lambda": (float, 0.0, "penalty weight"),
    "gamma": (float, 0.5, "NPQIV quantile"),
    "weighting": (str, "identity", "criterion weighting", ("identity", "known", "sigma0")),
    "sigma2": (float, None, "constant for --weighting known"),
    "tensor": (_bool, False, "tensor-product instrument basis over all x columns"),
    "restarts": (int, 5, "simplex restarts (NPQIV)"),
    "max-iters": (int, 2000, "simplex iterations per start"),
    "xtol": (float, 1e-8, "simplex coefficient tolerance"),
    "ftol": (float, 1e-10, "simplex value tolerance"),
}
COMMANDS = {
    "fit": {**MODEL, **COMMON, "grid": (int, 101, "grid points for the fitted h")},
    "test": {
        **MODEL,
        **COMMON,
        "functional": (str, "eval:0", "eval:Y, expeval:Y, wderiv, quad or curv"),
        "null": (float, 0.0, "hypothesised value phi0"),
        "stat": (str, "sqlr", "test statistic", ("wald", "sqlr", "score")),
        "variance": (str, "v1", "plug-in variance for wald", ("v1", "v2")),
        "boot": (str, "none", "bootstrap weights", ("none", "iid", "multinomial")),
        "B": (int, 200, "bootstrap replications"),
        "boot-flavor": (str, "W2", "bootstrap t flavour", ("W1", "W2")),
        "level": (float, 0.95, "confidence level"),
        "ci": (_bool, False, "also report a confidence set"),
    },
    "mc": {
        **COMMON,
        "design": (str, None, "experiment", DESIGNS),
        "reps": (int, 500, "Monte Carlo replications"),
        "n": (int, 750, "sample size"),
        "B": (int, 200, "bootstrap replications (power design)"),
        "grid": (int, 9, "r grid points (power design)"),
        "qq": (str, None, "also write QQ pairs of the t statistics here"),
        "full": (_bool, False, "full-scale run: reps=5000 and B=500 unless set explicitly"),
    },
}
REQUIRED = {"fit": ("data",), "test": ("data",), "mc": ("design",)}


def read_config(path, command: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment. Unknown keys are rejected."""
    known = COMMANDS[command]
    out = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for '{command}'")
        out[key] = _convert(key, value, known[key])
    return out


def _convert(key, value, spec):
    typ = spec[0]
    try:
        v = typ(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if len(spec) > 3 and v not in spec[3]:
        raise ConfigError(f"{key} must be one of {spec[3]}, got {v!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sievei", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key=value file; flags override it")
        for key, spec in options.items():
            kw = {"type": spec[0], "help": f"{spec[2]} (default: {spec[1]})"}
            if len(spec) > 3:
                kw["choices"] = spec[3]
            p.add_argument(f"--{key}", dest=key.replace("-", "_"), **kw)
    return parser


def _settings(args) -> dict:
    command = args.command
    options = COMMANDS[command]
    values = {k: spec[1] for k, spec in options.items()}
    explicit = set()
    if getattr(args, "config", None):
        from_file = read_config(args.config, command)
        values.update(from_file)
        explicit.update(from_file)
    for key in options:
        dest = key.replace("-", "_")
        if hasattr(args, dest):
            values[key] = getattr(args, dest)
            explicit.add(key)
    values["_explicit"] = explicit
    missing = [k for k in REQUIRED[command] if values.get(k) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join(f"--{k}" for k in missing))
    return values


def _model(s: dict) -> ModelSpec:
    return ModelSpec(
        kind=s["model"],
        qbasis=s["qbasis"],
        pbasis=s["pbasis"],
        lam=s["lambda"],
        gamma=s["gamma"],
        weighting=s["weighting"],
        sigma2=s["sigma2"],
        tensor=s["tensor"],
    )


def _optim(s: dict) -> OptimConfig:
    return OptimConfig(max_iters=s["max-iters"], restarts=s["restarts"], xtol=s["xtol"], ftol=s["ftol"],
                       seed=s["seed"])


def _load(s: dict):
    xs = [c.strip() for c in s["x"].split(",") if c.strip()]
    return load_dataset(s["data"], (s["y1"], s["y2"], xs if len(xs) > 1 else xs[0]))


def _out(s: dict, default: str) -> str:
    return s["out"] or default


def cmd_fit(s: dict) -> int:
    data = _load(s)
    design = prepare_design(_model(s), data)
    res = fit_design(design, _optim(s))
    rows = [
        {"record": "summary", "key": "qhat", "value": res.qhat},
        {"record": "summary", "key": "penalized_value", "value": res.penalized_value},
        {"record": "summary", "key": "converged", "value": int(res.converged)},
        {"record": "summary", "key": "iterations", "value": res.iterations},
        {"record": "summary", "key": "method", "value": res.method},
        {"record": "summary", "key": "n", "value": data.n},
    ]
    rows += [{"record": "beta", "key": j, "value": b} for j, b in enumerate(res.beta)]
    a, b = res.spec.qbasis.support
    grid = np.linspace(a, b, max(2, s["grid"]))
    rows += [{"record": "h", "key": float(y), "value": float(h)} for y, h in zip(grid, res.h(grid))]
    path = _out(s, "fit_report.csv")
    write_table(rows, path, fieldnames=["record", "key", "value"])
    log.info("fit converged=%s qhat=%.6g -> %s", res.converged, res.qhat, path)
    return 0


def cmd_test(s: dict) -> int:
    data = _load(s)
    spec = _model(s)
    optim = _optim(s)
    design = prepare_design(spec, data)
    functional = parse_functional(s["functional"], sample=data.y2)
    fit = fit_design(design, optim)
    phi0 = s["null"]
    threads = s["threads"]
    extra: dict = {}
    scheme = None
    if s["boot"] != "none":
        scheme = WeightScheme("exponential" if s["boot"] == "iid" else "multinomial")

    if s["stat"] == "wald":
        est = plugin_variances(design, fit, functional)
        v = est.v1 if s["variance"] == "v1" else est.v2
        report = wald_test(fit, functional, phi0, v, data.n, s["level"])
        if scheme is not None:
            run = bootstrap_wald(spec, data, fit, functional, v, scheme, s["B"], optim, s["boot-flavor"],
                                 seed=s["seed"], threads=threads, design=design)
            extra.update(_boot_summary(run, abs(report.statistic), s["level"], two_sided=True))
    elif s["stat"] == "sqlr":
        restricted = fit_restricted_design(design, functional, phi0, optim, start=fit.beta)
        report = sqlr_test(fit, restricted, data.n, spec.optimal, functional, phi0)
        if scheme is not None:
            run = bootstrap_sqlr(spec, data, fit, functional, scheme, s["B"], optim, seed=s["seed"],
                                 threads=threads, design=design)
            extra.update(_boot_summary(run, report.statistic, s["level"]))
            if s["ci"]:
                cs = bootstrap_ci(run, spec, data, fit, functional, s["level"], optim)
                extra.update(ci_lower=cs.lower, ci_upper=cs.upper)
        elif s["ci"]:
            if not spec.optimal:
                raise ConfigError("an SQLR confidence set needs optimal weighting or --boot")
            cs = invert_sqlr_ci(spec, data, fit, functional, s["level"], optim, design=design)
            extra.update(ci_lower=cs.lower, ci_upper=cs.upper)
    else:
        restricted = fit_restricted_design(design, functional, phi0, optim, start=fit.beta)
        report = score_test(spec, data, restricted, functional, design=design)
        if scheme is not None:
            run = bootstrap_score(spec, data, restricted, functional, scheme, s["B"], seed=s["seed"],
                                  design=design)
            extra.update(_boot_summary(run, abs(report.statistic), s["level"], two_sided=True))

    # a confidence set from inversion or bootstrap replaces the report's own interval
    values = {r["key"]: r["value"] for r in report.as_rows()}
    values.update(extra, converged=int(fit.converged))
    rows = [{"key": k, "value": v} for k, v in values.items()]
    path = _out(s, "test_report.csv")
    write_table(rows, path, fieldnames=["key", "value"])
    log.info("%s statistic=%.6g -> %s", report.method, report.statistic, path)
    return 0


def _boot_summary(run, stat: float, level: float, two_sided: bool = False) -> dict:
    v = np.abs(run.valid) if two_sided else run.valid
    return {
        "boot_B": run.B,
        "boot_failed": run.n_failed,
        "boot_critical": run.critical_value(level, two_sided=two_sided),
        "boot_pvalue": float(np.mean(v >= stat)),
    }


def cmd_mc(s: dict) -> int:
    name = s["design"]
    if s["full"]:
        given = s["_explicit"]
        s = {**s, "reps": s["reps"] if "reps" in given else 5000, "B": s["B"] if "B" in given else 500}
    cfg = design_config(name, reps=s["reps"], n=s["n"], seed=s["seed"], B=s["B"])
    threads = s["threads"]
    if name == "npqiv-sqlr":
        rows = run_size_experiment(cfg, threads).rows()
    elif name == "power":
        rows = run_power_curve(cfg, power_grid(s["n"], s["grid"]), threads).rows()
    else:
        table = run_variance_experiment(cfg, threads)
        rows = table.rows()
        if s["qq"]:
            q1, q2 = qq_data(table.t1), qq_data(table.t2)
            write_table(
                [{"theoretical": a, "t1": b, "t2": c} for a, b, c in zip(q1.theoretical, q1.empirical, q2.empirical)],
                s["qq"],
            )
    path = _out(s, f"mc_{name}.csv")
    write_table(rows, path)
    log.info("%s -> %s", name, path)
    return 0


HANDLERS = {"fit": cmd_fit, "test": cmd_test, "mc": cmd_mc}
NUMERICAL = (
    NonSmoothResidualError,
    RestrictedFitError,
    BootstrapUnstableError,
    SlopeDegenerateError,
    ArithmeticError,
    np.linalg.LinAlgError,
)
CONFIG = (ConfigError, DataError, BasisError, WeightingError, OSError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        return HANDLERS[args.command](settings)
    except NUMERICAL as exc:
        print(f"sievei: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CONFIG as exc:
        parser.print_usage(sys.stderr)
        print(f"sievei: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
