"""Acceptance criteria, each reported as one PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in the
terminal summary; every test also asserts its own verdict.
"""

import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from ctdebias.bench import (
    bias_rate_fixed_window,
    experiment_from_dict,
    fluctuation_rate_fixed_step,
    load_config,
    run_mc,
)
from ctdebias.cli import main
from ctdebias.dynmodel import VDP_THETA, FeatureModel, MonomialTerm, van_der_pol
from ctdebias.lpdiff import FilterSpec, apply, design_filter, design_filter_oracle, design_staggered_pair, row_norms
from ctdebias.oracle import gaussian_bias_oracle
from ctdebias.regress import Pipeline
from ctdebias.simkit import NoiseModel, add_noise


def report(k, title, checks, elapsed, limit):
    """Record the verdict line and assert it.

    ``checks`` is a list of ``(label, ok)``; failing labels are listed.
    """
    timing_ok = elapsed < limit
    ok = all(c for _, c in checks) and timing_ok
    failed = [label for label, c in checks if not c]
    if not timing_ok:
        failed.append(f"runtime {elapsed:.1f}s >= {limit:g}s")
    detail = "; ".join(label for label, _ in checks)
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d} {title}: {detail} ({elapsed:.1f}s, limit {limit:g}s)"
    if failed:
        line += " | failed: " + "; ".join(failed)
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_filter_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        N = int(rng.integers(2, 61))
        p = int(rng.integers(1, min(N, 10) + 1))
        m = int(rng.integers(0, p))
        i0 = float(rng.uniform(1, N))
        h = float(10 ** rng.uniform(-3, 0))
        spec = FilterSpec(N=N, p=p, m=m, i0=i0, h=h)
        D = design_filter(spec).D
        off = (np.arange(1, N + 1) - i0) * h
        L = N * h
        # the monomial basis in the window's own time unit spans every
        # polynomial of degree < p; add one random combination on top
        polys = [np.polynomial.Polynomial.basis(j) for j in range(p)]
        polys.append(np.polynomial.Polynomial(rng.standard_normal(p)))
        for q in polys:
            q = q(np.polynomial.Polynomial([0, 1 / L]))  # q(t / L)
            samples = q(off)
            for d in range(m + 1):
                exact = q.deriv(d)(0.0) if d else q(0.0)
                got = D[d] @ samples
                scale = abs(exact) + np.abs(D[d]) @ np.abs(samples)
                worst = max(worst, abs(got - exact) / scale)
    report(1, "filter exactness", [(f"max relative error {worst:.2e} <= 1e-8 over 200 specs", worst <= 1e-8)], time.perf_counter() - t0, 10)


def test_criterion_02_oracle_equivalence():
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for N in range(1, 22):
        for p in range(1, min(N, 8) + 1):
            for m in range(0, min(3, p - 1) + 1):
                spec = FilterSpec(N=N, p=p, m=m)
                D = design_filter(spec).D
                Do = design_filter_oracle(spec).D
                scale = np.abs(Do).max(axis=1, keepdims=True)
                worst = max(worst, float(np.max(np.abs(D - Do) / scale)))
                count += 1
    report(2, "oracle equivalence", [(f"max relative difference {worst:.2e} <= 1e-8 over {count} specs", worst <= 1e-8)], time.perf_counter() - t0, 5)


def test_criterion_03_row_norm_scaling():
    t0 = time.perf_counter()
    checks = []
    for p, m in ((6, 2), (10, 3), (50, 1)):
        scaled = np.array(
            [row_norms(design_filter(FilterSpec(N=N, p=p, m=m, h=1.0))) * N ** (np.arange(m + 1) + 0.5) for N in (101, 201, 401)]
        )
        spread = float((scaled.max(axis=0) / scaled.min(axis=0) - 1).max())
        checks.append((f"p={p},m={m} spread {spread:.2%} < 10%", spread < 0.10))
    report(3, "row norm scaling", checks, time.perf_counter() - t0, 5)


def test_criterion_04_rate_slopes():
    t0 = time.perf_counter()
    p, m = 6, 2
    b_slope, _ = bias_rate_fixed_window(p, m, 50, [0.02, 0.01, 0.005, 0.0025, 0.00125])
    f_slope, _ = fluctuation_rate_fixed_step(p, m, [50, 100, 200, 400, 800], draws=10_000, seed=0)
    checks = [
        (f"bias slope {b_slope:.3f} vs {p - m}", abs(b_slope - (p - m)) <= 0.5),
        (f"fluctuation slope {f_slope:.3f} vs {-(m + 0.5)}", abs(f_slope + m + 0.5) <= 0.5),
    ]
    report(4, "rate slopes", checks, time.perf_counter() - t0, 120)


def test_criterion_05_vdp_reproduction(vdp_clean):
    t0 = time.perf_counter()
    cfg = experiment_from_dict(load_config("vdp_table2"))
    assert cfg.replications == 500
    _, s = run_mc(cfg, clean=vdp_clean)
    b = {m: s.scalar[m]["bias_pct"][:, 0] for m in ("LS", "BC", "IV")}
    e = {m: s.scalar[m]["rmse_pct"][:, 0] for m in ("LS", "BC", "IV")}
    checks = [
        (f"LS th1 {b['LS'][0]:.2f}% in [-29,-21]", -29 <= b["LS"][0] <= -21),
        (f"BC th1 {b['BC'][0]:.2f}%", abs(b["BC"][0]) <= 1.5),
        (f"IV th1 {b['IV'][0]:.2f}%", abs(b["IV"][0]) <= 1.5),
        (f"LS th2 {b['LS'][1]:.2f}% in [-11,-6]", -11 <= b["LS"][1] <= -6),
        (f"BC th2 {b['BC'][1]:.2f}%", abs(b["BC"][1]) <= 1.0),
        (f"IV th2 {b['IV'][1]:.2f}%", abs(b["IV"][1]) <= 1.0),
        ("RMSE BC,IV < LS", bool(np.all(e["BC"] < e["LS"]) and np.all(e["IV"] < e["LS"]))),
    ]
    report(5, "van der Pol 500 reps", checks, time.perf_counter() - t0, 300)


def test_criterion_06_lorenz_reproduction(lorenz_clean):
    t0 = time.perf_counter()
    checks = []
    for name in ("lorenz_table5_sigma0.1", "lorenz_table5_sigma10"):
        cfg = experiment_from_dict(load_config(name))
        assert cfg.replications == 50
        _, s = run_mc(cfg, clean=lorenz_clean)
        mat = s.matrix
        ls, bc, iv = (mat[m]["bias"] for m in ("LS", "BC", "IV"))
        if cfg.noise.sigma_eps[0, 0] == 0.1:
            ratio = mat["LS"]["rmse"] / mat["BC"]["rmse"]
            checks += [
                (f"s2=0.1 LS {ls:.3f}% in [0.3,0.7]", 0.3 <= ls <= 0.7),
                (f"BC {bc:.4f}% <= 0.08", bc <= 0.08),
                (f"IV {iv:.4f}% <= 0.08", iv <= 0.08),
                (f"RMSE ratio {ratio:.2f} >= 2.5", ratio >= 2.5),
            ]
        else:
            checks += [
                (f"s2=10 LS {ls:.2f}% in [24,36]", 24 <= ls <= 36),
                (f"BC {bc:.3f}% <= 1", bc <= 1.0),
                (f"IV {iv:.3f}% <= 0.5 (IV rmsd {mat['IV']['rmsd']:.2f}%)", iv <= 0.5),
            ]
    report(6, "Lorenz 50 reps", checks, time.perf_counter() - t0, 900)


def test_criterion_07_quadratic_bias_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    misses, worst = 0, 0.0
    for i in range(50):
        d_x = int(rng.integers(1, 3))
        m = 1
        K = (m + 1) * d_x
        free = m * d_x  # coordinates a feature may depend on
        # f(u) = c + g.u + u^T Q u on the coordinates a feature may use
        c0 = float(rng.standard_normal())
        g = np.zeros(K)
        g[:free] = rng.standard_normal(free)
        Q = np.zeros((K, K))
        Q[:free, :free] = np.triu(rng.standard_normal((free, free)))
        terms = [MonomialTerm(c0, {})]
        for a in range(free):
            terms.append(MonomialTerm(float(g[a]), {a: 1}))
            for b in range(a, free):
                terms.append(MonomialTerm(float(Q[a, b]), {a: 2} if a == b else {a: 1, b: 1}))
        model = FeatureModel(d_x, m, [terms])
        u = rng.standard_normal(K)
        A = rng.standard_normal((K, K))
        C = 0.3 * A @ A.T
        analytic = 0.5 * model.hessian_contraction(u.reshape(m + 1, d_x), 0.0, C)[0]

        def f(pts, c0=c0, g=g, Q=Q):
            return c0 + pts @ g + np.einsum("ni,ij,nj->n", pts, Q, pts)

        mc, se = gaussian_bias_oracle(f, u, C, draws=1_000_000, seed=1000 + i)
        z = abs(mc - analytic) / se
        worst = max(worst, z)
        misses += z > 3
    report(7, "Gaussian quadratic bias", [(f"{50 - misses}/50 within 3 SE (max {worst:.2f} SE)", misses == 0)], time.perf_counter() - t0, 30)


def test_criterion_08_staggered_independence(vdp_clean):
    t0 = time.perf_counter()
    R = 2000
    spec = FilterSpec(N=50, p=6, m=2, h=1 / 2000)
    odd, even = design_staggered_pair(spec)
    noise = NoiseModel.isotropic(0.01, 1)
    j = 900  # a window in the middle of the record
    hat, tilde = np.empty((R, 3)), np.empty((R, 3))
    window = slice(j, j + spec.N)
    for r in range(R):
        z = add_noise(vdp_clean, noise, seed=r)[window]
        hat[r] = apply(odd, z).values[0, :, 0]
        tilde[r] = apply(even, z).values[0, :, 0]
    hat -= hat.mean(axis=0)
    tilde -= tilde.mean(axis=0)
    corr = (hat.T @ tilde) / np.sqrt(np.outer((hat**2).sum(0), (tilde**2).sum(0)))
    worst = float(np.abs(corr).max())
    bound = 3 / np.sqrt(R)
    report(8, "staggered independence", [(f"max |corr| over orders {worst:.4f} <= {bound:.4f}", worst <= bound)], time.perf_counter() - t0, 60)


def test_criterion_09_degenerate_noise(vdp_clean):
    t0 = time.perf_counter()
    spec = FilterSpec(N=30, p=10, m=2, h=1 / 2000)
    out = Pipeline(van_der_pol(), spec, NoiseModel.isotropic(0.0, 1)).run(vdp_clean, 1 / 2000)
    ls, bc, iv = (out[m].theta_hat for m in ("LS", "BC", "IV"))
    iv_rel = float(np.max(np.abs(iv - ls) / np.abs(ls)))
    err = max(float(np.max(np.abs(t - VDP_THETA) / np.abs(VDP_THETA))) for t in (ls, bc, iv))
    checks = [
        ("BC == LS bitwise", bool(np.array_equal(ls, bc))),
        (f"IV vs LS {iv_rel:.1e} <= 1e-6", iv_rel <= 1e-6),
        (f"max error vs truth {err:.1e} <= 0.5%", err <= 0.005),
    ]
    report(9, "degenerate noise", checks, time.perf_counter() - t0, 10)


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["mc", "--config", "vdp_table2", "--out", str(out), "--workers", "1"]) == 0
        outs.append((out / "summary.csv").read_bytes())
    same = outs[0] == outs[1]
    report(10, "determinism", [(f"vdp_table2 summary.csv byte-identical ({len(outs[0])} bytes)", same)], time.perf_counter() - t0, 600)
