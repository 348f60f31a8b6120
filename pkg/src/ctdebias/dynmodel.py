"""Polynomial feature maps and the built-in van der Pol and Lorenz models.

The regression is ``x^(m) = phi(x, x', ..., x^(m-1), t)^T theta``.  Features
are sums of monomials over the extended coordinates ``u[d, l]`` (order ``d``
derivative of channel ``l``) and time.  Gradients and Hessians are taken
with respect to the flattened state coordinates ``k = d * d_x + l``; time is
treated as exact and never differentiated.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

_KEY = re.compile(r"^x(\d+)\.(\d+)$")


@dataclass(frozen=True)
class MonomialTerm:
    """``coeff * prod(u[k] ** e)``; keys are flat coordinate indices or ``"t"``."""

    coeff: float
    exponents: dict = field(default_factory=dict)


class FeatureModel:
    """Feature map ``phi`` with exact first and second derivatives.

    Parameters
    ----------
    d_x : int
        State dimension.
    m : int
        Model order (highest derivative on the left-hand side).
    features : list of list of MonomialTerm
        One list of terms per feature.
    names : list of str, optional
        Human-readable feature labels.
    """

    def __init__(self, d_x, m, features, names=None):
        if d_x < 1 or m < 1:
            raise ConfigError(f"need d_x >= 1 and m >= 1, got d_x={d_x}, m={m}")
        if len(features) < 1:
            raise ConfigError("a model needs at least one feature")
        self.d_x = int(d_x)
        self.m = int(m)
        self.features = [list(f) for f in features]
        self.names = list(names) if names is not None else [f"phi{a + 1}" for a in range(len(features))]
        K = self.K
        for a, terms in enumerate(self.features):
            for term in terms:
                for key, e in term.exponents.items():
                    if key == "t":
                        continue
                    if not (isinstance(key, (int, np.integer)) and 0 <= key < K):
                        raise ConfigError(f"feature {a}: bad coordinate {key!r}")
                    if key >= self.m * self.d_x:
                        raise ConfigError(
                            f"feature {a} depends on the order-{self.m} derivative"
                        )
                    if int(e) != e or e < 0:
                        raise ConfigError(f"feature {a}: exponent {e} is not a natural number")
        self._compile()

    @property
    def K(self) -> int:
        return (self.m + 1) * self.d_x

    @property
    def d_phi(self) -> int:
        return len(self.features)

    def coordinate_name(self, k) -> str:
        if k == "t":
            return "t"
        d, l = divmod(int(k), self.d_x)
        return f"x{l + 1}.{d}"

    def _compile(self):
        # Every feature, gradient entry and Hessian entry is a linear
        # combination of monomials; share one table of exponent vectors.
        K, P = self.K, self.d_phi
        table: dict[tuple, int] = {}

        def slot(exp):
            return table.setdefault(tuple(int(v) for v in exp), len(table))

        f_entries, g_entries, h_entries = [], [], []
        for a, terms in enumerate(self.features):
            for term in terms:
                exp = np.zeros(K + 1, dtype=int)
                for key, e in term.exponents.items():
                    exp[K if key == "t" else key] += int(e)
                f_entries.append((slot(exp), a, term.coeff))
                for i in range(K):
                    if exp[i] == 0:
                        continue
                    gi = exp.copy()
                    gi[i] -= 1
                    g_entries.append((slot(gi), a * K + i, term.coeff * exp[i]))
                    for j in range(K):
                        if gi[j] == 0:
                            continue
                        hij = gi.copy()
                        hij[j] -= 1
                        h_entries.append((slot(hij), (a * K + i) * K + j, term.coeff * exp[i] * gi[j]))
        self._exps = np.array(list(table), dtype=int).reshape(len(table), K + 1)
        T = len(table)
        self._cf = np.zeros((T, P))
        self._cg = np.zeros((T, P * K))
        self._ch = np.zeros((T, P * K * K))
        for s, c, v in f_entries:
            self._cf[s, c] += v
        for s, c, v in g_entries:
            self._cg[s, c] += v
        for s, c, v in h_entries:
            self._ch[s, c] += v

    def _monomials(self, u, t):
        u = np.asarray(u, dtype=float)
        if u.shape[-2:] == (self.m, self.d_x):
            pad = np.zeros(u.shape[:-2] + (1, self.d_x))
            u = np.concatenate([u, pad], axis=-2)
        if u.shape[-2:] != (self.m + 1, self.d_x):
            raise ConfigError(
                f"expected points of shape (..., {self.m + 1}, {self.d_x}), got {u.shape}"
            )
        lead = u.shape[:-2]
        flat = u.reshape(lead + (self.K,))
        t = np.broadcast_to(np.asarray(t, dtype=float), lead)
        ext = np.concatenate([flat, t[..., None]], axis=-1)
        return np.prod(ext[..., None, :] ** self._exps, axis=-1), lead

    def features_at(self, u, t=0.0):
        M, lead = self._monomials(u, t)
        return M @ self._cf

    def gradient_at(self, u, t=0.0):
        M, lead = self._monomials(u, t)
        return (M @ self._cg).reshape(lead + (self.d_phi, self.K))

    def hessian_at(self, u, t=0.0):
        M, lead = self._monomials(u, t)
        return (M @ self._ch).reshape(lead + (self.d_phi, self.K, self.K))

    def all_at(self, u, t=0.0):
        """Features, gradients and Hessians from one monomial evaluation."""
        M, lead = self._monomials(u, t)
        return (
            M @ self._cf,
            (M @ self._cg).reshape(lead + (self.d_phi, self.K)),
            (M @ self._ch).reshape(lead + (self.d_phi, self.K, self.K)),
        )

    def hessian_contraction(self, u, t, C):
        """``<Hess phi_a, C>`` for every feature, without forming Hessians."""
        C = np.asarray(C, dtype=float)
        M, lead = self._monomials(u, t)
        ch = self._ch.reshape(-1, self.d_phi, self.K * self.K) @ C.reshape(-1)
        return M @ ch

    def is_linear(self) -> bool:
        return not np.any(self._ch)

    def to_dict(self) -> dict:
        return {
            "d_x": self.d_x,
            "m": self.m,
            "names": self.names,
            "features": [
                [
                    {
                        "coeff": term.coeff,
                        "powers": {self.coordinate_name(k): int(e) for k, e in term.exponents.items()},
                    }
                    for term in terms
                ]
                for terms in self.features
            ],
        }

    def __repr__(self):
        return f"FeatureModel(d_x={self.d_x}, m={self.m}, d_phi={self.d_phi}, names={self.names})"


def eval_features(model: FeatureModel, u, t=0.0) -> np.ndarray:
    """Evaluate ``phi`` at one point ``u`` of shape ``(m+1, d_x)`` or a batch."""
    return model.features_at(u, t)


def eval_gradient(model: FeatureModel, u, t=0.0) -> np.ndarray:
    return model.gradient_at(u, t)


def eval_hessian(model: FeatureModel, u, t=0.0) -> np.ndarray:
    return model.hessian_at(u, t)


def rhs(model: FeatureModel, theta, u, t=0.0) -> np.ndarray:
    """Right-hand side ``phi(u, t)^T theta`` of the model equation."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.d_phi, model.d_x):
        raise ConfigError(
            f"theta must have shape ({model.d_phi}, {model.d_x}), got {theta.shape}"
        )
    return model.features_at(u, t) @ theta


def parse_model(obj) -> FeatureModel:
    """Build a model from its JSON form, a path to it, or a built-in name."""
    if isinstance(obj, (str, Path)):
        name = str(obj)
        if name in BUILTINS:
            return builtin_model(name)
        obj = json.loads(Path(name).read_text())
    try:
        d_x, m = int(obj["d_x"]), int(obj["m"])
        raw = obj["features"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model config missing field: {exc}") from None
    features = []
    for terms in raw:
        parsed = []
        for term in terms:
            exps = {}
            for key, e in term.get("powers", {}).items():
                if not float(e).is_integer() or e < 0:
                    raise ConfigError(f"exponent {e!r} on {key!r} is not a natural number")
                if key == "t":
                    exps["t"] = int(e)
                    continue
                hit = _KEY.match(key)
                if not hit:
                    raise ConfigError(f"bad coordinate key {key!r}; expected 'x<channel>.<order>' or 't'")
                ch, d = int(hit.group(1)), int(hit.group(2))
                if not (1 <= ch <= d_x) or d > m:
                    raise ConfigError(f"coordinate {key!r} outside d_x={d_x}, m={m}")
                exps[d * d_x + ch - 1] = int(e)
            parsed.append(MonomialTerm(float(term.get("coeff", 1.0)), exps))
        features.append(parsed)
    return FeatureModel(d_x, m, features, names=obj.get("names"))


def van_der_pol() -> FeatureModel:
    """``y'' = theta1 (1 - y^2) y' + theta2 y``."""
    y, yd = 0, 1
    return FeatureModel(
        d_x=1,
        m=2,
        features=[
            [MonomialTerm(1.0, {yd: 1}), MonomialTerm(-1.0, {y: 2, yd: 1})],
            [MonomialTerm(1.0, {y: 1})],
        ],
        names=["(1-y^2)y'", "y"],
    )


def lorenz() -> FeatureModel:
    """``x' = phi(x)^T A`` with ``phi = (x1, x2, x3, x1 x2, x1 x3)``."""
    return FeatureModel(
        d_x=3,
        m=1,
        features=[
            [MonomialTerm(1.0, {0: 1})],
            [MonomialTerm(1.0, {1: 1})],
            [MonomialTerm(1.0, {2: 1})],
            [MonomialTerm(1.0, {0: 1, 1: 1})],
            [MonomialTerm(1.0, {0: 1, 2: 1})],
        ],
        names=["x1", "x2", "x3", "x1*x2", "x1*x3"],
    )


VDP_THETA = np.array([[40.0], [-400.0]])
LORENZ_THETA = np.array(
    [
        [-10.0, 28.0, 0.0],
        [10.0, -1.0, 0.0],
        [0.0, 0.0, -8.0 / 3.0],
        [0.0, 0.0, 1.0],
        [0.0, -1.0, 0.0],
    ]
)

BUILTINS = {"vdp": (van_der_pol, VDP_THETA), "lorenz": (lorenz, LORENZ_THETA)}


def builtin_model(name: str) -> FeatureModel:
    try:
        return BUILTINS[name][0]()
    except KeyError:
        raise ConfigError(f"unknown built-in model {name!r}; choose from {sorted(BUILTINS)}") from None


def builtin_theta(name: str) -> np.ndarray:
    return BUILTINS[name][1].copy()
