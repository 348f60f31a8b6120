"""Monte Carlo studies and empirical rate checks.

One clean trajectory is integrated per study; replication ``r`` redraws the
measurement noise with seed ``base_seed + r`` and every estimator sees the
same noisy series (paired design).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .dynmodel import FeatureModel, builtin_theta, parse_model, BUILTINS
from .errors import ConfigError, NumericalError
from .lpdiff import FilterSpec, design_filter
from .regress import METHODS, Pipeline
from .simkit import NoiseModel, TrajectoryConfig, add_noise, integrate


class ReplicationError(NumericalError):
    """An estimator failed inside a Monte Carlo replication."""

    def __init__(self, message, rep, seed):
        super().__init__(message)
        self.rep = rep
        self.seed = seed


@dataclass
class ExperimentConfig:
    trajectory: TrajectoryConfig
    noise: NoiseModel
    filter: FilterSpec
    estimators: tuple = METHODS
    replications: int = 1
    base_seed: int = 0
    name: str = "study"
    kde_points: int = 256
    source: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.estimators = tuple(e.upper() for e in self.estimators)
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        bad = [e for e in self.estimators if e not in METHODS]
        if bad or not self.estimators:
            raise ConfigError(f"estimators must be a non-empty subset of {METHODS}, got {self.estimators}")

    @property
    def model(self) -> FeatureModel:
        return self.trajectory.model

    @property
    def theta0(self) -> np.ndarray:
        return self.trajectory.theta0

    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.replications)]


def load_config(src) -> dict:
    """Read a JSON config from a path, a shipped config name, or a dict."""
    if isinstance(src, dict):
        return dict(src)
    path = Path(src)
    if not path.exists():
        base = resources.files("ctdebias") / "configs"
        for name in (path.name, path.name + ".json"):
            shipped = base / name
            if shipped.is_file():
                return json.loads(shipped.read_text())
        raise ConfigError(f"config {src!s} not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {src!s} is not valid JSON: {exc}") from None


def trajectory_from_dict(raw: dict) -> tuple[TrajectoryConfig, NoiseModel]:
    model_src = raw.get("model")
    if model_src is None:
        raise ConfigError("config needs a 'model' entry")
    model = parse_model(model_src)
    if "theta0" in raw:
        theta0 = np.asarray(raw["theta0"], dtype=float).reshape(model.d_phi, model.d_x)
    elif isinstance(model_src, str) and model_src in BUILTINS:
        theta0 = builtin_theta(model_src)
    else:
        raise ConfigError("config needs 'theta0' for a custom model")
    try:
        traj = TrajectoryConfig(
            model=model,
            theta0=theta0,
            x0=raw["x0"],
            n=int(raw["n"]),
            h=float(raw["h"]),
            rtol=float(raw.get("rtol", 1e-10)),
            atol=float(raw.get("atol", 1e-12)),
            t0=float(raw.get("t0", 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"config missing field {exc}") from None
    noise = NoiseModel.from_value(raw.get("sigma2", 0.0), model.d_x)
    return traj, noise


def filter_from_dict(raw: dict | None, h: float, m: int) -> FilterSpec:
    raw = dict(raw or {})
    raw.setdefault("h", h)
    raw.setdefault("m", m)
    try:
        return FilterSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad filter spec: {exc}") from None


def experiment_from_dict(raw: dict) -> ExperimentConfig:
    traj, noise = trajectory_from_dict(raw)
    if "filter" not in raw:
        raise ConfigError("config needs a 'filter' entry")
    spec = filter_from_dict(raw["filter"], traj.h, traj.model.m)
    return ExperimentConfig(
        trajectory=traj,
        noise=noise,
        filter=spec,
        estimators=tuple(raw.get("estimators", METHODS)),
        replications=int(raw.get("replications", 1)),
        base_seed=int(raw.get("base_seed", 0)),
        name=str(raw.get("name", "study")),
        kde_points=int(raw.get("kde_points", 256)),
        source=raw,
    )


@dataclass
class McSummary:
    """Percent statistics normalised by the true parameter.

    ``scalar[method]`` maps ``bias_pct``, ``std_pct``, ``rmse_pct`` to
    ``d_phi x d_x`` arrays (NaN where the true entry is zero).
    ``matrix[method]`` holds operator-norm ``bias``, ``rmsd`` and ``rmse``.
    """

    scalar: dict
    matrix: dict
    replications: int
    seeds: list

    def rows(self):
        for method, stats in self.scalar.items():
            b, s, e = stats["bias_pct"], stats["std_pct"], stats["rmse_pct"]
            for a in range(b.shape[0]):
                for c in range(b.shape[1]):
                    yield method, param_name(a, c, b.shape[1]), b[a, c], s[a, c], e[a, c]
            mat = self.matrix[method]
            yield method, "opnorm", mat["bias"], mat["rmsd"], mat["rmse"]

    def to_csv(self) -> str:
        lines = ["method,param,bias_pct,std_pct,rmse_pct"]
        for method, param, b, s, e in self.rows():
            lines.append(f"{method},{param},{float(b)!r},{float(s)!r},{float(e)!r}")
        return "\n".join(lines) + "\n"


def param_name(a: int, c: int, d_x: int) -> str:
    return f"theta{a + 1}" if d_x == 1 else f"theta{a + 1}_{c + 1}"


def summarize(thetas: dict, theta0, seeds) -> McSummary:
    """Bias/std/RMSE per entry and in operator norm over replications."""
    theta0 = np.asarray(theta0, dtype=float)
    scale = np.abs(theta0)
    opnorm0 = np.linalg.norm(theta0, 2)
    scalar, matrix = {}, {}
    with np.errstate(divide="ignore", invalid="ignore"):
        for method, th in thetas.items():
            th = np.asarray(th, dtype=float)
            mean = th.mean(axis=0)
            bias = np.where(scale > 0, (mean - theta0) / scale * 100, np.nan)
            std = np.where(scale > 0, th.std(axis=0) / scale * 100, np.nan)
            rmse = np.sqrt(bias**2 + std**2)
            scalar[method] = {"bias_pct": bias, "std_pct": std, "rmse_pct": rmse}
            mb = np.linalg.norm(mean - theta0, 2) / opnorm0 * 100
            dev = np.array([np.linalg.norm(t - mean, 2) ** 2 for t in th])
            rmsd = np.sqrt(dev.mean()) / opnorm0 * 100
            matrix[method] = {"bias": mb, "rmsd": rmsd, "rmse": float(np.sqrt(mb**2 + rmsd**2))}
    return McSummary(scalar=scalar, matrix=matrix, replications=len(seeds), seeds=list(seeds))


# Worker state for process pools: set once per worker by the initializer.
_WORKER = {}


def _init_worker(pipeline, clean, t_start):
    _WORKER.update(pipeline=pipeline, clean=clean, t_start=t_start)


def _one_rep(args):
    rep, seed = args
    pl, clean = _WORKER["pipeline"], _WORKER["clean"]
    z = add_noise(clean, pl.noise, seed)
    try:
        out = pl.run(z, _WORKER["t_start"])
    except NumericalError as exc:
        raise ReplicationError(f"replication {rep} (seed {seed}): {exc}", rep, seed) from exc
    return {m: o.theta_hat for m, o in out.items()}


def default_workers() -> int:
    cap = os.environ.get("CTDEBIAS_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"CTDEBIAS_THREADS must be an integer, got {cap!r}") from None
    return n


def run_mc(cfg: ExperimentConfig, workers: int = 1, clean=None):
    """Run the study; returns ``({method: (R, d_phi, d_x) array}, McSummary)``.

    A failing replication aborts the whole study with its index attached.
    """
    if clean is None:
        clean = integrate(cfg.trajectory)
    pipeline = Pipeline(cfg.model, cfg.filter, cfg.noise, cfg.estimators)
    t_start = float(cfg.trajectory.times[0])
    jobs = list(enumerate(cfg.seeds()))
    if workers <= 1 or len(jobs) == 1:
        _init_worker(pipeline, clean, t_start)
        results = [_one_rep(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(pipeline, clean, t_start)) as ex:
            results = list(ex.map(_one_rep, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    thetas = {m: np.stack([r[m] for r in results]) for m in cfg.estimators}
    return thetas, summarize(thetas, cfg.theta0, cfg.seeds())


def reps_csv(thetas: dict) -> str:
    methods = list(thetas)
    first = thetas[methods[0]]
    d_phi, d_x = first.shape[1:]
    cols = [param_name(a, c, d_x) for a in range(d_phi) for c in range(d_x)]
    lines = ["rep,method," + ",".join(cols)]
    for r in range(first.shape[0]):
        for m in methods:
            vals = ",".join(repr(float(v)) for v in thetas[m][r].reshape(-1))
            lines.append(f"{r},{m},{vals}")
    return "\n".join(lines) + "\n"


def kde(samples, grid_points: int = 256):
    """Gaussian kernel density estimate with Silverman's bandwidth.

    The grid spans ``mean +- 4 sd`` of the samples.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 2 or np.ptp(x) == 0:
        raise ConfigError("kernel density needs at least two distinct samples")
    sd = x.std(ddof=1)
    bw = 1.06 * sd * x.size ** (-0.2)
    grid = np.linspace(x.mean() - 4 * sd, x.mean() + 4 * sd, grid_points)
    dens = np.zeros_like(grid)
    for chunk in np.array_split(x, max(1, x.size // 4096)):
        zz = (grid[:, None] - chunk[None, :]) / bw
        dens += np.exp(-0.5 * zz * zz).sum(axis=1)
    dens /= x.size * bw * np.sqrt(2 * np.pi)
    return grid, dens


# ---------------------------------------------------------------- rate studies


@dataclass
class RateReport:
    """Fitted log-log slopes next to their theoretical targets.

    ``beta_hat``/``gamma_hat`` are slopes of bias and fourth-root
    fluctuation against ``log h``; ``beta``/``gamma`` are the predictions
    ``(p - m)(1 - alpha)`` and ``((2m + 1) alpha - 2m) / 2``.
    """

    alpha: float
    beta_hat: float
    gamma_hat: float
    beta: float
    gamma: float
    scales: list
    series: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, dict):
                return {k: clean(w) for k, w in v.items()}
            if isinstance(v, (list, tuple, np.ndarray)):
                return [clean(w) for w in v]
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, (float, np.floating)):
                return float(v)
            return v

        return clean(
            {
                "alpha": self.alpha,
                "beta_hat": self.beta_hat,
                "gamma_hat": self.gamma_hat,
                "beta": self.beta,
                "gamma": self.gamma,
                "scales": self.scales,
                "series": self.series,
                "slopes": self.slopes,
            }
        )


def theoretical_rates(p: int, m: int, alpha: float) -> tuple[float, float]:
    return (p - m) * (1 - alpha), ((2 * m + 1) * alpha - 2 * m) / 2


def loglog_slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def sine_bias(bank, order: int, n_eval: int = 200) -> float:
    """Worst |filtered - exact| ``order``-th derivative of ``sin`` on [0, 2 pi]."""
    spec = bank.spec
    tau = np.linspace(0.0, 2 * np.pi, n_eval, endpoint=False)
    offs = (np.arange(1, spec.N + 1) - spec.i0) * spec.h
    est = np.sin(tau[:, None] + offs[None, :]) @ bank.D[order]
    exact = np.sin(tau + order * np.pi / 2)
    return float(np.abs(est - exact).max())


def fluctuation_moment(bank, order: int, draws: int, seed: int, sigma: float = 1.0) -> float:
    """``(E eta^4)^(1/4)`` of the order-``order`` output under white noise."""
    rng = np.random.default_rng(seed)
    acc = 0.0
    done = 0
    row = bank.D[order]
    while done < draws:
        k = min(4096, draws - done)
        eta = sigma * (rng.standard_normal((k, bank.N)) @ row)
        acc += float(np.sum(eta**4))
        done += k
    return (acc / draws) ** 0.25


def bias_rate_fixed_window(p: int, m: int, N: int, hs) -> tuple[float, list]:
    """Slope of the order-``m`` sine bias against ``log(N h)`` at fixed ``N``."""
    hs = list(hs)
    if len(hs) < 4:
        raise ConfigError("rate fits need at least 4 scales")
    bias = [sine_bias(design_filter(FilterSpec(N, p, m, h=h)), m) for h in hs]
    return loglog_slope(np.array(hs) * N, bias), bias


def fluctuation_rate_fixed_step(p: int, m: int, Ns, h: float = 1.0, draws: int = 10_000, seed: int = 0):
    """Slope of the fourth-root fluctuation against ``log N`` at fixed ``h``."""
    Ns = list(Ns)
    if len(Ns) < 4:
        raise ConfigError("rate fits need at least 4 scales")
    fl = [fluctuation_moment(design_filter(FilterSpec(N, p, m, h=h)), m, draws, seed + i) for i, N in enumerate(Ns)]
    return loglog_slope(Ns, fl), fl


def filter_rate_study(p: int, m: int, alpha: float, hs, c: float = 1.0, draws: int = 10_000, seed: int = 0, signal: str = "sin") -> RateReport:
    """Bias and fluctuation of the order-``m`` output along ``N = round(c h^-alpha)``.

    ``signal="zero"`` feeds pure noise, for which the bias is identically zero.
    """
    hs = sorted(float(h) for h in hs)
    if len(hs) < 4:
        raise ConfigError("rate fits need at least 4 scales")
    Ns = [max(p, int(round(c * h ** (-alpha)))) for h in hs]
    bias, fl = [], []
    for i, (h, N) in enumerate(zip(hs, Ns)):
        bank = design_filter(FilterSpec(N, p, m, h=h))
        bias.append(sine_bias(bank, m) if signal == "sin" else 0.0)
        fl.append(fluctuation_moment(bank, m, draws, seed + i))
    beta, gamma = theoretical_rates(p, m, alpha)
    beta_hat = loglog_slope(hs, bias) if all(b > 0 for b in bias) else 0.0
    gamma_hat = loglog_slope(hs, fl)
    return RateReport(
        alpha=alpha,
        beta_hat=beta_hat,
        gamma_hat=gamma_hat,
        beta=beta,
        gamma=gamma,
        scales=hs,
        series={"N": Ns, "bias": bias, "fluctuation": fl},
        slopes={"bias": beta_hat, "fluctuation": gamma_hat},
    )


def estimator_rate_study(cfg: ExperimentConfig, hs, alpha: float = 0.9, workers: int = 1) -> RateReport:
    """Operator-norm |mean bias| of each estimator as ``h`` shrinks at fixed ``T``.

    The window follows ``N = N_ref (h / h_ref)^-alpha`` from the reference
    configuration, and every scale reuses ``cfg``'s seeds.
    """
    hs = sorted((float(h) for h in hs), reverse=True)
    if len(hs) < 3:
        raise ConfigError("estimator rate study needs at least 3 scales")
    T = cfg.trajectory.n * cfg.trajectory.h
    h_ref, N_ref = cfg.trajectory.h, cfg.filter.N
    biases = {m: [] for m in cfg.estimators}
    Ns = []
    for h in hs:
        n = int(round(T / h))
        N = max(cfg.filter.p, int(round(N_ref * (h / h_ref) ** (-alpha))))
        if cfg.filter.support != "full" or "IV" in cfg.estimators:
            N = max(N, 2 * cfg.filter.p)
        Ns.append(N)
        sub = replace(
            cfg,
            trajectory=replace(cfg.trajectory, n=n, h=h),
            filter=replace(cfg.filter, N=N, h=h, i0=None),
        )
        _, summ = run_mc(sub, workers=workers)
        for m in cfg.estimators:
            biases[m].append(summ.matrix[m]["bias"])
    slopes = {m: (loglog_slope(hs, b) if all(v > 0 for v in b) else float("nan")) for m, b in biases.items()}
    beta, gamma = theoretical_rates(cfg.filter.p, cfg.filter.m, alpha)
    return RateReport(
        alpha=alpha,
        beta_hat=float("nan"),
        gamma_hat=float("nan"),
        beta=beta,
        gamma=gamma,
        scales=hs,
        series={"N": Ns, **{f"bias_{m}": v for m, v in biases.items()}},
        slopes=slopes,
    )
