"""Plug-in estimators: least squares, bias-corrected LS and staggered IV.

All three solve a ``d_phi x d_phi`` system built from averages over the
``n'`` filter times.  Noise enters the filtered jet as a zero-mean
perturbation with covariance ``C = (D D^T) kron Sigma_eps``; the
bias-corrected variants subtract the second-order effect
``1/2 <Hess f, C>`` of that perturbation on quadratic sums.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .dynmodel import FeatureModel
from .errors import ConfigError, CorrectedGramError, SingularGramError
from .lpdiff import FilterBank, FilterSpec, JetSeries, apply, design_filter, design_staggered_pair
from .simkit import NoiseModel

METHODS = ("LS", "BC", "IV")

# Grams with a 2-norm condition number beyond this are treated as singular.
MAX_CONDITION = 1.0 / (1e3 * np.finfo(float).eps)


@dataclass
class RegressionData:
    """Covariates ``Phi`` (n' x d_phi) and responses ``Y`` (n' x d_x).

    ``Phi_tilde``/``Y_tilde`` hold the independent instrument copies used by
    the IV estimator.
    """

    Phi: np.ndarray
    Y: np.ndarray
    Phi_tilde: np.ndarray | None = None
    Y_tilde: np.ndarray | None = None

    def __post_init__(self):
        self.Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        n = self.Phi.shape[0]
        if n == 0:
            raise ConfigError("regression data has no rows")
        if self.Y.shape[0] != n:
            raise ConfigError(f"Phi has {n} rows but Y has {self.Y.shape[0]}")
        arrays = [self.Phi, self.Y]
        if (self.Phi_tilde is None) != (self.Y_tilde is None):
            raise ConfigError("Phi_tilde and Y_tilde must be given together")
        if self.Phi_tilde is not None:
            self.Phi_tilde = np.asarray(self.Phi_tilde, dtype=float)
            self.Y_tilde = np.asarray(self.Y_tilde, dtype=float).reshape(self.Y.shape)
            if self.Phi_tilde.shape != self.Phi.shape:
                raise ConfigError("Phi_tilde must match the shape of Phi")
            arrays += [self.Phi_tilde, self.Y_tilde]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ConfigError("regression data contains non-finite values")

    @property
    def n_prime(self) -> int:
        return self.Phi.shape[0]


@dataclass
class FilterNoiseCov:
    """Covariance of the jet noise, ``K x K`` with ``K = (m+1) d_x``.

    Coordinates are flattened as ``k = d * d_x + l``.
    """

    C: np.ndarray
    d_x: int

    def truncated(self, m: int) -> np.ndarray:
        k = (m + 1) * self.d_x
        return self.C[:k, :k]


@dataclass
class BiasCorrections:
    Sigma_phiphi: np.ndarray
    Sigma_phiy: np.ndarray


@dataclass
class EstimatorOutput:
    theta_hat: np.ndarray
    gram: np.ndarray
    pe_stat: float
    method: str
    n_prime: int
    gram_condition: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "shape": list(self.theta_hat.shape),
            "theta_hat": [float(v) for v in self.theta_hat.reshape(-1)],
            "pe_stat": float(self.pe_stat),
            "n_prime": int(self.n_prime),
            "gram_condition": float(self.gram_condition),
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def pe_diagnostic(Phi) -> float:
    """Persistency of excitation statistic ``sigma_min(Phi) / sqrt(n')``."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    n, k = Phi.shape
    if n < k:
        return 0.0
    return float(np.linalg.svd(Phi, compute_uv=False).min() / np.sqrt(n))


def _jet_points(jet: JetSeries, model: FeatureModel) -> np.ndarray:
    if jet.d_x != model.d_x:
        raise ConfigError(f"jet has d_x={jet.d_x}, model expects {model.d_x}")
    if jet.m < model.m:
        raise ConfigError(f"jet of order {jet.m} cannot feed a model of order {model.m}")
    if jet.n_prime == 0:
        raise ConfigError("empty jet series")
    return jet.values[:, : model.m + 1, :]


def assemble(jet: JetSeries, model: FeatureModel) -> RegressionData:
    """Plug the filtered jet into the features (``Phi``) and responses (``Y``)."""
    U = _jet_points(jet, model)
    return RegressionData(Phi=model.features_at(U, jet.times), Y=U[:, model.m, :].copy())


def filter_noise_cov(bank: FilterBank, noise: NoiseModel) -> FilterNoiseCov:
    """``C[(d,l),(d',l')] = Sigma_eps[l,l'] * sum_k D[d,k] D[d',k]``."""
    return FilterNoiseCov(C=np.kron(bank.D @ bank.D.T, noise.sigma_eps), d_x=noise.d_x)


def _model_cov(C, model: FeatureModel) -> np.ndarray:
    if isinstance(C, FilterNoiseCov):
        if C.d_x != model.d_x:
            raise ConfigError("noise covariance and model disagree on d_x")
        return C.truncated(model.m)
    C = np.asarray(C, dtype=float)
    return C[: model.K, : model.K]


def bias_corrections(data: RegressionData, jet: JetSeries, model: FeatureModel, C) -> BiasCorrections:
    """Second-order noise bias of the quadratic sums ``Phi^T Phi`` and ``Phi^T Y``.

    Applies ``1/2 <Hess(.), C>`` to each product by the Leibniz rule, which
    leaves the feature-curvature terms plus the gradient cross term
    ``grad(phi_a)^T C grad(phi_b)`` (and ``grad(phi_a)^T C e_(c,m)`` against
    the response).
    """
    U = _jet_points(jet, model)
    Ck = _model_cov(C, model)
    n = data.n_prime
    K, d_x, m = model.K, model.d_x, model.m
    M, lead = model._monomials(U, jet.times)
    grad = (M @ model._cg).reshape(n, model.d_phi, K)
    lap = M @ (model._ch.reshape(-1, model.d_phi, K * K) @ Ck.reshape(-1))
    GC = grad @ Ck
    half_lap_phi = 0.5 * (lap.T @ data.Phi) / n
    cross = np.einsum("jak,jbk->ab", GC, grad) / n
    S_pp = half_lap_phi + half_lap_phi.T + cross
    S_pp = 0.5 * (S_pp + S_pp.T)
    S_py = 0.5 * (lap.T @ data.Y) / n + GC[:, :, m * d_x : (m + 1) * d_x].mean(axis=0)
    return BiasCorrections(Sigma_phiphi=S_pp, Sigma_phiy=S_py)


def _solve(gram, rhs, method, pe_stat, n_prime, error=SingularGramError) -> EstimatorOutput:
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise error(
            f"{method}: gram matrix is singular to working precision "
            f"(condition {cond:.3g}, pe_stat {pe_stat:.3g})",
            pe_stat=pe_stat,
            method=method,
        )
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            theta = scipy.linalg.solve(gram, rhs, assume_a="sym")
    except np.linalg.LinAlgError as exc:
        raise error(f"{method}: {exc} (pe_stat {pe_stat:.3g})", pe_stat=pe_stat, method=method) from None
    return EstimatorOutput(
        theta_hat=np.asarray(theta).reshape(gram.shape[0], -1),
        gram=gram,
        pe_stat=pe_stat,
        method=method,
        n_prime=n_prime,
        gram_condition=cond,
    )


def _gram(A, B=None):
    n = A.shape[0]
    if B is None:
        G = A.T @ A / n
        return 0.5 * (G + G.T)
    return A.T @ B / n


def ls_estimate(data: RegressionData) -> EstimatorOutput:
    """Ordinary least squares on the plug-in regression."""
    pe = pe_diagnostic(data.Phi)
    return _solve(_gram(data.Phi), _gram(data.Phi, data.Y), "LS", pe, data.n_prime)


def bc_estimate(data: RegressionData, corrections: BiasCorrections) -> EstimatorOutput:
    """Least squares with the noise bias subtracted from both normal-equation sides."""
    pe = pe_diagnostic(data.Phi)
    gram = _gram(data.Phi) - corrections.Sigma_phiphi
    rhs = _gram(data.Phi, data.Y) - corrections.Sigma_phiy
    return _solve(gram, rhs, "BC", pe, data.n_prime, error=CorrectedGramError)


def iv_assemble(jet_hat: JetSeries, jet_tilde: JetSeries, model: FeatureModel, C_hat, C_tilde) -> RegressionData:
    """Two independent, curvature-corrected copies of the regression."""
    U = _jet_points(jet_hat, model)
    V = _jet_points(jet_tilde, model)
    if jet_hat.times.shape != jet_tilde.times.shape or not np.allclose(
        jet_hat.times, jet_tilde.times, rtol=0, atol=1e-9 * max(jet_hat.h, 1e-300)
    ):
        raise ConfigError("instrument jets are not evaluated on the same time grid")
    Ch = _model_cov(C_hat, model)
    Ct = _model_cov(C_tilde, model)
    phi_hat = model.features_at(U, jet_hat.times) - 0.5 * model.hessian_contraction(U, jet_hat.times, Ch)
    phi_tilde = model.features_at(V, jet_tilde.times) - 0.5 * model.hessian_contraction(V, jet_tilde.times, Ct)
    return RegressionData(
        Phi=phi_hat,
        Y=U[:, model.m, :].copy(),
        Phi_tilde=phi_tilde,
        Y_tilde=V[:, model.m, :].copy(),
    )


def iv_estimate(data: RegressionData) -> EstimatorOutput:
    """Symmetrised instrumental-variables estimate from two staggered copies."""
    if data.Phi_tilde is None:
        raise ConfigError("IV estimation needs Phi_tilde and Y_tilde")
    n = data.n_prime
    X = data.Phi.T @ data.Phi_tilde
    gram = (X + X.T) / (2 * n)
    rhs = (data.Phi_tilde.T @ data.Y + data.Phi.T @ data.Y_tilde) / (2 * n)
    return _solve(gram, rhs, "IV", pe_diagnostic(data.Phi), n)


class Pipeline:
    """Filters and noise covariances for one (model, filter, noise) setting.

    Designing the banks is done once; :meth:`run` then maps a measurement
    series to the requested estimates.  LS and BC share the full-support
    bank, IV uses the staggered pair built from the same spec.
    """

    def __init__(self, model: FeatureModel, spec: FilterSpec, noise: NoiseModel, methods=METHODS):
        if spec.m < model.m:
            raise ConfigError(f"filter order m={spec.m} below model order {model.m}")
        if noise.d_x != model.d_x:
            raise ConfigError("noise covariance and model disagree on d_x")
        self.model = model
        self.spec = spec
        self.noise = noise
        self.methods = tuple(m.upper() for m in methods)
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        self.bank = None
        self.pair = None
        if {"LS", "BC"} & set(self.methods):
            self.bank = design_filter(spec)
            self.C = filter_noise_cov(self.bank, noise)
        if "IV" in self.methods:
            self.pair = design_staggered_pair(spec)
            self.C_pair = tuple(filter_noise_cov(b, noise) for b in self.pair)

    def run(self, z, t_start: float = 0.0) -> dict:
        """Return ``{method: EstimatorOutput}`` for one measurement series."""
        out = {}
        if self.bank is not None:
            jet = apply(self.bank, z, t_start)
            data = assemble(jet, self.model)
            if "LS" in self.methods:
                out["LS"] = ls_estimate(data)
            if "BC" in self.methods:
                corr = bias_corrections(data, jet, self.model, self.C)
                out["BC"] = bc_estimate(data, corr)
        if self.pair is not None:
            jh = apply(self.pair[0], z, t_start)
            jt = apply(self.pair[1], z, t_start)
            data = iv_assemble(jh, jt, self.model, *self.C_pair)
            out["IV"] = iv_estimate(data)
        return {m: out[m] for m in self.methods}
