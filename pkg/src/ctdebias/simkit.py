"""Ground-truth trajectories and noisy measurement series."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .dynmodel import FeatureModel
from .errors import ConfigError, IntegrationError


@dataclass
class NoiseModel:
    """Additive white measurement noise with covariance ``sigma_eps``."""

    sigma_eps: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.sigma_eps, dtype=float))
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ConfigError(f"noise covariance must be square, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise ConfigError("noise covariance has non-finite entries")
        if not np.array_equal(S, S.T):
            raise ConfigError("noise covariance must be symmetric")
        if S.size and np.linalg.eigvalsh(S).min() < -1e-12 * max(1.0, np.abs(S).max()):
            raise ConfigError("noise covariance is not positive semidefinite")
        self.sigma_eps = S

    @classmethod
    def isotropic(cls, variance: float, d_x: int) -> "NoiseModel":
        return cls(float(variance) * np.eye(d_x))

    @classmethod
    def from_value(cls, value, d_x: int) -> "NoiseModel":
        """Scalar variance means ``variance * I``; otherwise a full matrix."""
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return cls.isotropic(float(arr), d_x)
        noise = cls(arr)
        if noise.d_x != d_x:
            raise ConfigError(f"noise covariance is {noise.d_x}x{noise.d_x}, model has d_x={d_x}")
        return noise

    @property
    def d_x(self) -> int:
        return self.sigma_eps.shape[0]

    def factor(self) -> np.ndarray:
        """A square root ``L`` with ``L L^T = sigma_eps``."""
        S = self.sigma_eps
        if np.count_nonzero(S - np.diag(np.diagonal(S))) == 0:
            return np.diag(np.sqrt(np.diagonal(S)))
        try:
            return np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            w, V = np.linalg.eigh(S)
            return V * np.sqrt(np.clip(w, 0.0, None))

    def to_list(self):
        return self.sigma_eps.tolist()


@dataclass
class TrajectoryConfig:
    """Initial value problem sampled at ``t_i = t0 + i h``, ``i = 1..n``.

    ``x0`` holds the initial jet ordered by derivative then channel:
    ``(x(0), x'(0), ..., x^(m-1)(0))``.
    """

    model: FeatureModel
    theta0: np.ndarray
    x0: np.ndarray
    n: int
    h: float
    rtol: float = 1e-10
    atol: float = 1e-12
    t0: float = 0.0

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.theta0.shape != (self.model.d_phi, self.model.d_x):
            raise ConfigError(
                f"theta0 must be {self.model.d_phi}x{self.model.d_x}, got {self.theta0.shape}"
            )
        if self.x0.size != self.model.m * self.model.d_x:
            raise ConfigError(
                f"initial jet needs m*d_x={self.model.m * self.model.d_x} values, got {self.x0.size}"
            )
        if self.n < 1 or not self.h > 0:
            raise ConfigError(f"need n >= 1 and h > 0, got n={self.n}, h={self.h}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("integrator tolerances must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(1, self.n + 1)


def integrate(cfg: TrajectoryConfig, full_state: bool = False) -> np.ndarray:
    """Integrate the model with an adaptive Dormand-Prince 5(4) pair.

    Returns the sampled positions, shape ``(n, d_x)``; with ``full_state``
    the whole jet ``(n, m, d_x)`` up to order ``m - 1`` is returned instead.
    """
    model = cfg.model
    m, d_x = model.m, model.d_x
    theta = cfg.theta0

    def f(t, s):
        u = s.reshape(m, d_x)
        top = model.features_at(u, t) @ theta
        return np.concatenate([s[d_x:], top])

    times = cfg.times
    sol = solve_ivp(
        f,
        (cfg.t0, float(times[-1])),
        cfg.x0,
        method="RK45",
        t_eval=times,
        rtol=cfg.rtol,
        atol=cfg.atol,
    )
    if sol.status != 0 or sol.y.shape[1] != cfg.n:
        t_fail = float(sol.t[-1]) if sol.t.size else cfg.t0
        raise IntegrationError(f"integration failed at t={t_fail}: {sol.message}", t_fail=t_fail)
    states = sol.y.T.reshape(cfg.n, m, d_x)
    return states if full_state else states[:, 0, :].copy()


def add_noise(clean, noise: NoiseModel, seed: int) -> np.ndarray:
    """``z_i = x_i + L g_i`` with ``g_i`` standard normal from ``seed``."""
    clean = np.asarray(clean, dtype=float)
    x = clean[:, None] if clean.ndim == 1 else clean
    if x.shape[1] != noise.d_x:
        raise ConfigError(f"series has {x.shape[1]} channels, noise model has {noise.d_x}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(x.shape)
    z = x + g @ noise.factor().T
    return z.reshape(clean.shape)


def save_trajectory(path, times, clean, noisy) -> Path:
    """CSV with columns ``t, x1..xd, z1..zd``."""
    path = Path(path)
    clean = np.asarray(clean).reshape(len(times), -1)
    noisy = np.asarray(noisy).reshape(len(times), -1)
    d = clean.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + [f"z{i + 1}" for i in range(d)])
        for t, xr, zr in zip(times, clean, noisy):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in xr] + [repr(float(v)) for v in zr])
    return path


def load_trajectory(path):
    """Inverse of :func:`save_trajectory`; returns ``(times, clean, noisy)``."""
    with Path(path).open() as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header[0] != "t" or (len(header) - 1) % 2:
        raise ConfigError(f"unexpected trajectory header {header}")
    d = (len(header) - 1) // 2
    return data[:, 0], data[:, 1 : 1 + d], data[:, 1 + d :]
