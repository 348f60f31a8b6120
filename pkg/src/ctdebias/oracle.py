"""Brute-force reference computations for the test suite.

Nothing in the production modules imports this file.  The routines
deliberately avoid the code paths they check: dense SVD least squares
instead of the Legendre/QR filter design, Monte Carlo instead of the
curvature operator, and finite differences instead of analytic model
derivatives.
"""

from __future__ import annotations

from math import factorial

import numpy as np

from .errors import ConfigError, NumericalError


def dense_lsq_jet(window, spec) -> np.ndarray:
    """Jet at the evaluation position from a direct polynomial fit.

    Fits a degree ``p - 1`` polynomial to the supported samples of one
    window (shape ``N`` or ``N x d_x``) with :func:`numpy.linalg.lstsq`,
    then differentiates it analytically.  Returns ``(m + 1, d_x)``.
    """
    w = np.asarray(window, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if spec.N > 200:
        raise ConfigError("dense oracle limited to N <= 200")
    if w.shape[0] != spec.N:
        raise ConfigError(f"window has {w.shape[0]} samples, spec needs N={spec.N}")
    k = np.arange(1, spec.N + 1, dtype=float)
    if spec.support == "odd":
        keep = k % 2 == 1
    elif spec.support == "even":
        keep = k % 2 == 0
    else:
        keep = np.ones(spec.N, dtype=bool)
    scale = max(spec.N - 1, 1) * spec.h / 2
    tau = (k[keep] - spec.i0) * spec.h / scale
    V = np.vander(tau, spec.p, increasing=True)
    coef, _, rank, _ = np.linalg.lstsq(V, w[keep], rcond=None)
    if rank < spec.p:
        raise NumericalError("rank-deficient polynomial fit")
    # derivative d of sum_j c_j (t/scale)^j at t = 0 is d! c_d / scale^d
    return np.array([factorial(d) * coef[d] / scale**d for d in range(spec.m + 1)])


def gaussian_bias_oracle(f, u, C, draws: int = 1_000_000, seed: int = 0, chunk: int = 200_000):
    """Monte Carlo estimate of ``E f(u + eta) - f(u)`` for ``eta ~ N(0, C)``.

    ``f`` maps an array of points ``(k, K)`` to ``k`` values.  Returns the
    estimate and its standard error.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    w, V = np.linalg.eigh(C)
    L = V * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.default_rng(seed)
    base = float(np.asarray(f(u[None, :])).reshape(-1)[0])
    s1 = s2 = 0.0
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        eta = rng.standard_normal((k, u.size)) @ L.T
        d = np.asarray(f(u[None, :] + eta), dtype=float).reshape(-1) - base
        s1 += float(d.sum())
        s2 += float((d * d).sum())
        done += k
    mean = s1 / draws
    var = max(s2 / draws - mean * mean, 0.0)
    return mean, np.sqrt(var / draws)


def fd_derivative_oracle(model, u, t: float = 0.0, step: float = 1e-5):
    """Central-difference gradient and Hessian of ``model.features_at``."""
    u = np.asarray(u, dtype=float)
    shape = (model.m + 1, model.d_x)
    if u.shape == (model.m, model.d_x):
        u = np.vstack([u, np.zeros((1, model.d_x))])
    flat = u.reshape(-1)
    K = flat.size

    def phi(v):
        return np.asarray(model.features_at(v.reshape(shape), t), dtype=float)

    grad = np.zeros((model.d_phi, K))
    hess = np.zeros((model.d_phi, K, K))
    f0 = phi(flat)
    for i in range(K):
        ei = np.zeros(K)
        ei[i] = step
        fp, fm = phi(flat + ei), phi(flat - ei)
        grad[:, i] = (fp - fm) / (2 * step)
        hess[:, i, i] = (fp - 2 * f0 + fm) / step**2
        for j in range(i + 1, K):
            ej = np.zeros(K)
            ej[j] = step
            val = (phi(flat + ei + ej) - phi(flat + ei - ej) - phi(flat - ei + ej) + phi(flat - ei - ej)) / (4 * step**2)
            hess[:, i, j] = hess[:, j, i] = val
    return grad, hess
