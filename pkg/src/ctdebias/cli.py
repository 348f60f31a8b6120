"""Command-line front end: ``ctdebias {design,simulate,estimate,mc,rates}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    estimator_rate_study,
    experiment_from_dict,
    filter_from_dict,
    filter_rate_study,
    default_workers,
    kde,
    load_config,
    param_name,
    reps_csv,
    run_mc,
    trajectory_from_dict,
)
from .dynmodel import BUILTINS, parse_model
from .errors import ConfigError, NumericalError
from .lpdiff import FilterSpec, design_filter, design_staggered_pair, row_norms, save_bank
from .regress import Pipeline
from .simkit import NoiseModel, add_noise, integrate, load_trajectory, save_trajectory

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4

# Paper experiment constants used when a built-in model is simulated
# without a config file.
BUILTIN_DEFAULTS = {
    "vdp": {"x0": [0.0, 0.001], "n": 2000, "h": 1 / 2000, "sigma2": 0.01, "filter": {"N": 50, "p": 6, "m": 2}},
    "lorenz": {"x0": [-8.0, 8.0, 27.0], "n": 100_000, "h": 0.001, "sigma2": 0.1, "filter": {"N": 200, "p": 50, "m": 1}},
}


class Outputs:
    """Files written into one output directory, plus its manifest."""

    def __init__(self, out, command):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.manifest = {
            "command": command,
            "tool_version": __version__,
            "started": _now(),
        }

    def path(self, name) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def write_text(self, name, text) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def discard(self):
        for p in self.files:
            p.unlink(missing_ok=True)

    def finish(self, **extra):
        self.manifest.update(extra)
        self.manifest["finished"] = _now()
        self.manifest["files"] = sorted(p.name for p in self.files)
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            json.dump(self.manifest, fh, indent=2, default=_jsonable)
            fh.write("\n")
        os.replace(tmp, self.dir / "manifest.json")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _json_arg(value):
    """A JSON argument given inline or as a path to a file."""
    if value is None:
        return None
    p = Path(value)
    if p.exists():
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{value}: invalid JSON ({exc})") from None
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        raise ConfigError(f"{value!r} is neither a readable file nor inline JSON") from None


def _model_arg(value):
    if value in BUILTINS:
        return value
    parsed = _json_arg(value)
    if not isinstance(parsed, dict):
        raise ConfigError("--model must be a built-in name or a JSON model object")
    return parsed


# ------------------------------------------------------------------ commands


def cmd_design(args) -> int:
    raw = _json_arg(args.spec)
    if not isinstance(raw, dict):
        raise ConfigError("--spec must be a JSON object")
    try:
        spec = FilterSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad filter spec: {exc}") from None
    out = Outputs(args.out, "design")
    try:
        if args.staggered:
            banks = dict(zip(("odd", "even"), design_staggered_pair(spec)))
        else:
            banks = {spec.support: design_filter(spec)}
        for label, bank in banks.items():
            stem = "filter" if not args.staggered else f"filter_{label}"
            for p in save_bank(bank, out.dir / stem):
                out.files.append(p)
            norms = row_norms(bank)
            print(f"{stem}: row norms " + " ".join(f"d={d}:{v:.6g}" for d, v in enumerate(norms)))
    except Exception:
        out.discard()
        raise
    out.finish(config=spec.to_dict(), staggered=args.staggered)
    return 0


def _simulation_config(args) -> dict:
    model = _model_arg(args.model)
    raw = dict(BUILTIN_DEFAULTS.get(model, {})) if isinstance(model, str) else {}
    raw.pop("filter", None)
    raw.update(_json_arg(args.config) or {})
    raw["model"] = model
    return raw


def cmd_simulate(args) -> int:
    raw = _simulation_config(args)
    traj, noise = trajectory_from_dict(raw)
    clean = integrate(traj)
    z = add_noise(clean, noise, args.seed)
    out = Outputs(args.out, "simulate")
    try:
        save_trajectory(out.path("trajectory.csv"), traj.times, clean, z)
    except Exception:
        out.discard()
        raise
    out.finish(config=raw, seeds={"noise": args.seed}, integrator={"method": "RK45", "rtol": traj.rtol, "atol": traj.atol})
    print(f"wrote {traj.n} samples to {out.dir / 'trajectory.csv'}")
    return 0


def cmd_estimate(args) -> int:
    model_src = _model_arg(args.model)
    times, _, z = load_trajectory(args.data)
    if len(times) < 2:
        raise ConfigError("trajectory needs at least two samples")
    steps = np.diff(times)
    h = float(steps.mean())
    if np.abs(steps - h).max() > 1e-6 * h:
        raise ConfigError("trajectory is not uniformly sampled")
    model = parse_model(model_src)
    filt = _json_arg(args.filter)
    if filt is None:
        if not isinstance(model_src, str):
            raise ConfigError("--filter is required for a custom model")
        filt = BUILTIN_DEFAULTS[model_src]["filter"]
    spec = filter_from_dict(filt, h, model.m)
    sigma = _json_arg(args.sigma) if args.sigma is not None else 0.0
    noise = NoiseModel.from_value(sigma, model.d_x)
    method = args.method.upper()
    pipeline = Pipeline(model, spec, noise, methods=(method,))
    result = pipeline.run(z, t_start=float(times[0]))[method]
    out = Outputs(args.out, "estimate")
    try:
        result.write_json(out.path("estimate.json"))
    except Exception:
        out.discard()
        raise
    supports = {"full": spec.support} if method != "IV" else {"hat": "odd", "tilde": "even"}
    out.finish(
        config={"data": str(args.data), "model": model_src, "filter": spec.to_dict(), "sigma2": noise.to_list(), "method": method},
        filter_supports=supports,
    )
    with np.printoptions(precision=6, suppress=False):
        print(f"{method} theta_hat =\n{result.theta_hat}")
    print(f"pe_stat = {result.pe_stat:.6g}")
    if result.pe_stat < args.pe_threshold:
        print(f"warning: persistency of excitation statistic {result.pe_stat:.3g} below {args.pe_threshold:g}", file=sys.stderr)
    return 0


def write_mc_outputs(out: Outputs, cfg, thetas, summary) -> dict:
    """Write reps, summary and per-parameter KDE files; returns manifest extras."""
    out.write_text("reps.csv", reps_csv(thetas))
    out.write_text("summary.csv", summary.to_csv())
    skipped = []
    for method, th in thetas.items():
        d_phi, d_x = th.shape[1:]
        for a in range(d_phi):
            for c in range(d_x):
                name = param_name(a, c, d_x)
                try:
                    grid, dens = kde(th[:, a, c], cfg.kde_points)
                except ConfigError:
                    skipped.append(f"{method}_{name}")
                    continue
                lines = ["grid,density"] + [f"{g!r},{d!r}" for g, d in zip(grid.tolist(), dens.tolist())]
                out.write_text(f"kde_{method}_{name}.csv", "\n".join(lines) + "\n")
    return {
        "kde_skipped": skipped,
        "std_zero_by_convention": cfg.replications == 1,
    }


def cmd_mc(args) -> int:
    raw = load_config(args.config)
    cfg = experiment_from_dict(raw)
    workers = args.workers or default_workers()
    thetas, summary = run_mc(cfg, workers=workers)
    out = Outputs(args.out, "mc")
    try:
        extras = write_mc_outputs(out, cfg, thetas, summary)
    except Exception:
        out.discard()
        raise
    out.finish(
        config=raw,
        seeds={"base_seed": cfg.base_seed, "replication_seeds": [cfg.seeds()[0], cfg.seeds()[-1]]},
        replications=cfg.replications,
        workers=workers,
        **extras,
    )
    for method, param, b, s, e in summary.rows():
        print(f"{method:3s} {param:12s} bias {b:10.4f}%  std {s:10.4f}%  rmse {e:10.4f}%")
    return 0


def cmd_rates(args) -> int:
    raw = load_config(args.config)
    kind = raw.get("kind", "filter")
    if kind == "filter":
        try:
            report = filter_rate_study(
                int(raw["p"]), int(raw["m"]), float(raw["alpha"]), raw["hs"],
                c=float(raw.get("c", 1.0)), draws=int(raw.get("draws", 10_000)),
                seed=int(raw.get("seed", 0)), signal=raw.get("signal", "sin"),
            )
        except KeyError as exc:
            raise ConfigError(f"rates config missing field {exc}") from None
    elif kind == "estimator":
        if "hs" not in raw:
            raise ConfigError("rates config missing field 'hs'")
        cfg = experiment_from_dict(raw)
        report = estimator_rate_study(cfg, raw["hs"], alpha=float(raw.get("alpha", 0.9)), workers=args.workers or default_workers())
    else:
        raise ConfigError(f"unknown rate study kind {kind!r}")
    out = Outputs(args.out, "rates")
    try:
        out.write_text("rates.json", json.dumps(report.to_dict(), indent=2) + "\n")
        keys = list(report.series)
        lines = ["h," + ",".join(keys)]
        for i, h in enumerate(report.scales):
            lines.append(f"{h!r}," + ",".join(repr(float(report.series[k][i])) for k in keys))
        out.write_text("rates.csv", "\n".join(lines) + "\n")
    except Exception:
        out.discard()
        raise
    out.finish(config=raw, seeds={"seed": raw.get("seed", raw.get("base_seed", 0))})
    for name, slope in report.slopes.items():
        print(f"slope[{name}] = {slope:.4f}")
    print(f"theory: beta = {report.beta:.4f}, gamma = {report.gamma:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctdebias", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="design a local-polynomial filter bank")
    p.add_argument("--spec", required=True, help="FilterSpec JSON (file or inline)")
    p.add_argument("--out", required=True)
    p.add_argument("--staggered", action="store_true", help="emit the odd/even pair used by IV")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="integrate a model and add measurement noise")
    p.add_argument("--model", required=True, help="'vdp', 'lorenz' or a model JSON")
    p.add_argument("--config", help="trajectory JSON: theta0, x0, n, h, sigma2, rtol, atol")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run one estimator on a trajectory CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--filter", help="FilterSpec JSON; built-in models default to the paper's filter")
    p.add_argument("--method", required=True, type=str.lower, choices=["ls", "bc", "iv"])
    p.add_argument("--sigma", help="noise variance (scalar means variance * I) or covariance matrix JSON")
    p.add_argument("--pe-threshold", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mc", help="Monte Carlo bias/RMSE study")
    p.add_argument("--config", required=True, help="experiment JSON or a shipped config name")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=0, help="process count (default: CTDEBIAS_THREADS or CPU count)")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("rates", help="empirical filter or estimator rate study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=cmd_rates)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
