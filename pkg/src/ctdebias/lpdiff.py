"""Local-polynomial differentiation filter banks.

A filter bank is an ``(m+1) x N`` matrix ``D`` whose row ``d`` maps a window
of ``N`` consecutive samples to an estimate of the ``d``-th derivative at a
fixed position ``i0`` inside the window.  Rows are the minimum
Frobenius-norm solution of the natural conditions ``D A = B``, i.e. every
polynomial of degree below ``p`` is differentiated exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from math import factorial
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import solve_triangular

from .errors import ConfigError, NumericalError

SUPPORTS = ("full", "odd", "even")


@dataclass(frozen=True)
class FilterSpec:
    """Design parameters of one filter bank.

    Parameters
    ----------
    N : int
        Window length in samples.
    p : int
        Accuracy order; polynomials of degree ``<= p - 1`` are differentiated
        exactly.
    m : int
        Highest derivative order produced.
    i0 : float, optional
        Evaluation position inside the window in 1-based window units. May be
        half-integer. Defaults to the window centre ``(N + 1) / 2``.
    h : float
        Sample period.
    support : {"full", "odd", "even"}
        Which window columns may carry nonzero coefficients.  ``"odd"`` keeps
        the 1-based indices ``1, 3, 5, ...`` and ``"even"`` keeps ``2, 4, ...``.
    """

    N: int
    p: int
    m: int
    i0: float | None = None
    h: float = 1.0
    support: str = "full"

    def __post_init__(self):
        if self.i0 is None:
            object.__setattr__(self, "i0", (self.N + 1) / 2)
        object.__setattr__(self, "i0", float(self.i0))
        object.__setattr__(self, "h", float(self.h))
        if self.support not in SUPPORTS:
            raise ConfigError(f"support must be one of {SUPPORTS}, got {self.support!r}")
        if not (self.p > self.m >= 0):
            raise ConfigError(f"need p > m >= 0, got p={self.p}, m={self.m}")
        if self.N < 1:
            raise ConfigError(f"window length must be positive, got N={self.N}")
        if self.support == "full" and self.N < self.p:
            raise ConfigError(f"N={self.N} samples cannot fix p={self.p} constraints")
        if self.support != "full" and self.N // 2 < self.p:
            raise ConfigError(
                f"parity support of N={self.N} has too few samples for p={self.p}"
            )
        if not 1 <= self.i0 <= self.N:
            raise ConfigError(f"i0={self.i0} outside the window [1, {self.N}]")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ConfigError(f"sample period must be positive, got h={self.h}")

    @property
    def columns(self) -> np.ndarray:
        """0-based window indices allowed to carry coefficients."""
        k = np.arange(self.N)
        if self.support == "odd":
            return k[0::2]
        if self.support == "even":
            return k[1::2]
        return k

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConstraintSystem:
    """Natural conditions ``D A = B``.

    ``A`` has one row per window index; ``rows`` lists the indices that
    belong to the support.  Rows outside the support are kept for reference
    but their coefficients are forced to zero by the design.
    """

    A: np.ndarray
    B: np.ndarray
    rows: np.ndarray

    @property
    def A_support(self) -> np.ndarray:
        return self.A[self.rows]


@dataclass(frozen=True)
class FilterBank:
    spec: FilterSpec
    D: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def m(self) -> int:
        return self.spec.m

    def natural_residual(self) -> float:
        """Largest relative violation of ``D A = B``."""
        cs = build_constraints(self.spec)
        DA = self.D @ cs.A
        scale = np.abs(self.D) @ np.abs(cs.A)
        return float(np.max(np.abs(DA - cs.B) / np.maximum(scale, 1.0)))


@dataclass
class JetSeries:
    """Filtered state and derivatives.

    ``values[j, d, l]`` estimates the ``d``-th derivative of channel ``l`` at
    ``times[j]``.
    """

    values: np.ndarray
    times: np.ndarray
    h: float

    @property
    def n_prime(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1] - 1

    @property
    def d_x(self) -> int:
        return self.values.shape[2]


def build_constraints(spec: FilterSpec) -> ConstraintSystem:
    """Monomial natural conditions ``A_ij = (i - i0)^j h^j / j!``."""
    rows = spec.columns
    if len(rows) < spec.p:
        raise ConfigError(
            f"support has {len(rows)} samples, fewer than p={spec.p} constraints"
        )
    offset = (np.arange(1, spec.N + 1) - spec.i0) * spec.h
    j = np.arange(spec.p)
    A = offset[:, None] ** j / np.array([factorial(int(q)) for q in j], dtype=float)
    B = np.eye(spec.m + 1, spec.p)
    return ConstraintSystem(A=A, B=B, rows=rows)


def _legendre_derivatives_at_zero(p: int, m: int) -> np.ndarray:
    """``out[d, l]`` is the ``d``-th derivative of ``P_l`` at ``s = 0``."""
    out = np.zeros((m + 1, p))
    for l in range(p):
        c = np.zeros(l + 1)
        c[l] = 1.0
        for d in range(min(m, l) + 1):
            out[d, l] = legendre.legval(0.0, legendre.legder(c, d))
    return out


def design_filter(spec: FilterSpec) -> FilterBank:
    """Minimum Frobenius-norm filter bank for ``spec``.

    The least-squares polynomial fit is carried out in a Legendre basis on
    the normalised window coordinate ``s = (k - i0) / ((N - 1) / 2)`` and
    orthogonalised with a QR factorisation; the fit's derivatives at ``s = 0``
    are mapped back to time units by the chain rule.  This avoids forming
    the Hilbert-like monomial gram matrix.
    """
    cols = build_constraints(spec).rows
    half = (spec.N - 1) / 2 if spec.N > 1 else 1.0
    s = (cols + 1.0 - spec.i0) / half
    P = legendre.legvander(s, spec.p - 1)
    Q, R = np.linalg.qr(P)
    diag = np.abs(np.diag(R))
    if diag.min() <= diag.max() * len(s) * np.finfo(float).eps:
        raise NumericalError(f"rank-deficient constraint system for {spec}")
    dP = _legendre_derivatives_at_zero(spec.p, spec.m)
    W = solve_triangular(R, dP.T, trans="T")
    rows = (Q @ W).T
    rows *= (1.0 / (half * spec.h)) ** np.arange(spec.m + 1)[:, None]
    D = np.zeros((spec.m + 1, spec.N))
    D[:, cols] = rows
    return FilterBank(spec=spec, D=D)


def design_filter_oracle(spec: FilterSpec) -> FilterBank:
    """Closed form ``D = B (A^T A)^{-1} A^T`` in exact rational arithmetic.

    Only meant as a test oracle for small windows.
    """
    if spec.N > 25:
        raise ConfigError("oracle design limited to N <= 25")
    cols = [int(c) for c in spec.columns]
    if len(cols) < spec.p:
        raise ConfigError("support smaller than the number of constraints")
    # A = V S with V[r, j] = q_r^j on doubled offsets q = 2 (k - i0), which are
    # integers for the usual integer or half-integer centres, and
    # S = diag((h/2)^j / j!).  Then D = B S^-1 (V^T V)^-1 V^T.
    q = [2 * (c + 1 - Fraction(spec.i0)) for c in cols]
    q = [int(v) if v.denominator == 1 else v for v in q]
    p = spec.p
    V = [[v**j for j in range(p)] for v in q]
    G = [[sum(row[a] * row[b] for row in V) for b in range(p)] for a in range(p)]
    # Gauss-Jordan on [G | I] restricted to the first m+1 right-hand sides,
    # since B only selects rows 0..m of G^{-1}.
    aug = [[Fraction(v) for v in G[a]] + [Fraction(int(a == d)) for d in range(spec.m + 1)] for a in range(p)]
    for col in range(p):
        piv = next((r for r in range(col, p) if aug[r][col] != 0), None)
        if piv is None:
            raise NumericalError("singular A^T A in oracle design")
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [v / pv for v in aug[col]]
        for r in range(p):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [vr - f * vc for vr, vc in zip(aug[r], aug[col])]
    # G is symmetric, so the solved columns are the first m+1 rows of G^{-1}.
    Ginv_rows = [[aug[a][p + d] for a in range(p)] for d in range(spec.m + 1)]
    h = Fraction(spec.h)
    D = np.zeros((spec.m + 1, spec.N))
    for d in range(spec.m + 1):
        inv_s = factorial(d) / (h / 2) ** d
        for r, c in enumerate(cols):
            D[d, c] = float(inv_s * sum(g * v for g, v in zip(Ginv_rows[d], V[r])))
    return FilterBank(spec=spec, D=D)


def design_staggered_pair(spec: FilterSpec) -> tuple[FilterBank, FilterBank]:
    """Two banks with the same ``N, p, m, i0`` on disjoint sample parities.

    The first bank uses the odd 1-based window indices, the second the even
    ones, so their outputs depend on disjoint measurement samples.
    """
    return (
        design_filter(replace(spec, support="odd")),
        design_filter(replace(spec, support="even")),
    )


def apply(bank: FilterBank, z, t_start: float = 0.0) -> JetSeries:
    """Slide ``bank`` over the series ``z`` (shape ``n`` or ``n x d_x``).

    Only full windows are used, giving ``n - N + 1`` output rows; row ``j``
    (0-based) is evaluated at ``t_start + (j + i0 - 1) h`` where ``t_start``
    is the time of ``z[0]``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2:
        raise ConfigError(f"measurement series must be 1-D or 2-D, got shape {z.shape}")
    n, d_x = z.shape
    N = bank.N
    if n < N:
        raise ConfigError(f"series of length {n} shorter than window N={N}")
    spec = bank.spec
    n_prime = n - N + 1
    cols = spec.columns
    out = np.empty((n_prime, spec.m + 1, d_x))
    if spec.support == "full":
        for l in range(d_x):
            zl = np.ascontiguousarray(z[:, l])
            for d in range(spec.m + 1):
                out[:, d, l] = np.correlate(zl, bank.D[d], mode="valid")
    else:
        # zero columns of a parity bank are skipped: correlate the stride-2
        # subsequence that starts at the first supported column
        first = int(cols[0])
        taps = bank.D[:, cols]
        for l in range(d_x):
            for par in (0, 1):
                start = first + par
                sub = np.ascontiguousarray(z[start::2, l])
                rows_j = np.arange(par, n_prime, 2)
                if rows_j.size == 0:
                    continue
                for d in range(spec.m + 1):
                    vals = np.correlate(sub, taps[d], mode="valid")
                    out[rows_j, d, l] = vals[: rows_j.size]
    times = t_start + (np.arange(n_prime) + spec.i0 - 1.0) * spec.h
    return JetSeries(values=out, times=times, h=spec.h)


def row_norms(bank: FilterBank) -> np.ndarray:
    """Euclidean norm of each derivative row."""
    return np.linalg.norm(bank.D, axis=1)


def save_bank(bank: FilterBank, path) -> list[Path]:
    """Write ``<path>.csv`` (``d,k,coeff``) and ``<path>.json`` (spec sidecar)."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    lines = ["d,k,coeff"]
    for d in range(bank.D.shape[0]):
        for k in range(bank.D.shape[1]):
            lines.append(f"{d},{k + 1},{float(bank.D[d, k])!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    json_path.write_text(json.dumps(bank.spec.to_dict(), indent=2) + "\n")
    return [csv_path, json_path]


def load_bank(path) -> FilterBank:
    path = Path(path)
    spec = FilterSpec(**json.loads(path.with_suffix(".json").read_text()))
    rows = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    D = np.zeros((spec.m + 1, spec.N))
    D[rows[:, 0].astype(int), rows[:, 1].astype(int) - 1] = rows[:, 2]
    return FilterBank(spec=spec, D=D)
