"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion."""

import dataclasses
import time

import numpy as np
import pytest
from scipy import stats

from conftest import TOY, make_state, ode_instance, toy_kernel
from convmogp.experiments import (
    ExperimentConfig,
    msll,
    run_heterotopic,
    run_missing_range,
    run_toy,
    sample_full_gp,
    smse,
    time_per_iteration,
    toy_data,
)
from convmogp.gradients import model_gradcheck
from convmogp.gram import InducingSet, NoiseParams, Variant, full_kff
from convmogp.kernels import Ode1KernelParams
from convmogp.laplace import snr_report
from convmogp.models import ModelState, SparseFactor, log_marginal, sparse_log_marginal
from oracles import GaussianConvolutionQuadrature, composite_legendre
from test_laplace import _symmetric_state, curvature, second_difference


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return emit


def test_c01_kernel_quadrature(report):
    t0 = time.perf_counter()
    # convolution integrals of the unstandardized toy kernel on a tensor grid
    k = toy_kernel(standardize=False)
    q = GaussianConvolutionQuadrature(lo=-3.0, hi=3.0, panels=300)
    var = 1 / TOY["P"][:, 0]
    S = TOY["S"][:, 0]
    x = np.linspace(-1, 1, 5)
    worst_g = 0.0
    for d in range(4):
        Wd = np.array([q.smoother(v, var[d]) for v in x])
        for d2 in range(4):
            W2 = np.array([q.smoother(v, var[d2]) for v in x])
            ref = S[d] * S[d2] * (Wd @ q.Kuu @ W2.T)
            got = k.kff(d, d2, x[:, None], x[:, None])
            worst_g = max(worst_g, np.max(np.abs(got - ref) / np.abs(ref)))
        ref = S[d] * np.array([[q.kfu(a, z, var[d]) for z in x] for a in x])
        got = k.kfu(d, x[:, None], x[:, None])
        worst_g = max(worst_g, np.max(np.abs(got - ref) / np.abs(ref)))

    # first-order ODE responses by tensor Gauss-Legendre quadrature
    ts = np.array([0.0, 0.5, 1.0, 2.0, 5.0])
    worst_o = 0.0
    for ell in (0.5, 1.0):
        for g in (0.5, 1.0, 2.0):
            for g2 in (0.5, 1.0, 2.0):
                kern = Ode1KernelParams([[1.0], [1.0]], [g, g2], [ell])
                got = kern.kff(0, 1, ts[:, None], ts[:, None])
                gotu = kern.kfu(0, ts[:, None], ts[:, None])
                for i, t in enumerate(ts):
                    tau, w = composite_legendre(0.0, t, 40) if t > 0 else (np.zeros(0),) * 2
                    a = w * np.exp(-g * (t - tau))
                    for j, t2 in enumerate(ts):
                        tau2, w2 = composite_legendre(0.0, t2, 40) if t2 > 0 else (np.zeros(0),) * 2
                        b = w2 * np.exp(-g2 * (t2 - tau2))
                        ref = a @ np.exp(-((tau[:, None] - tau2[None, :]) / ell) ** 2) @ b
                        worst_o = max(worst_o, abs(got[i, j] - ref))
                        refu = a @ np.exp(-((tau - t2) / ell) ** 2)
                        worst_o = max(worst_o, abs(gotu[i, j] - refu))
    elapsed = time.perf_counter() - t0
    report("criterion 1 kernel quadrature",
           worst_g <= 1e-4 and worst_o <= 1e-5 and elapsed < 30,
           f"gaussian max rel {worst_g:.2e} (tol 1e-4), ode max abs {worst_o:.2e} (tol 1e-5), "
           f"{elapsed:.1f} s")


def test_c02_gradient_suite(report):
    t0 = time.perf_counter()
    worst, where = 0.0, None
    for variant in ("FULL", "DTC", "FITC", "PITC"):
        for kind in ("gaussian", "ode1"):
            for seed in range(5):
                r = model_gradcheck(make_state(kind, variant, seed, D=3, N=7, K=4))
                if r.max_error > worst:
                    worst, where = r.max_error, (variant, kind, seed)
    elapsed = time.perf_counter() - t0
    report("criterion 2 gradient suite", worst <= 1e-5 and elapsed < 120,
           f"max rel error {worst:.2e} at {where} (tol 1e-5), {elapsed:.1f} s")


def _dense_approximate_covariance(state):
    parts = state.parts()
    Q = parts.Kfu @ np.linalg.solve(parts.Kuu, parts.Kfu.T)
    Kff = full_kff(state.kernel, [b.inputs for b in state.dataset.blocks])
    R = Kff - Q
    mask = np.zeros_like(R)
    if state.variant is Variant.PITC:
        for s in state.dataset.slices():
            mask[s, s] = 1.0
    elif state.variant is Variant.FITC:
        mask = np.eye(len(R))
    return Q + mask * R + np.diag(parts.sigma)


def test_c03_inversion_lemma(report):
    worst = 0.0
    for variant in ("DTC", "FITC", "PITC"):
        for kind in ("gaussian", "ode1"):
            for seed in range(5):
                st = make_state(kind, variant, seed, D=2, N=10, K=3)
                C = _dense_approximate_covariance(st)
                ref = stats.multivariate_normal(np.zeros(len(C)), C).logpdf(st.centered_targets())
                worst = max(worst, abs(sparse_log_marginal(st) - ref) / abs(ref))
    report("criterion 3 inversion lemma", worst <= 1e-8,
           f"max rel difference {worst:.2e} (tol 1e-8)")


def test_c04_variant_structure(report):
    fitc_exact = dtc_zero = True
    worst = 0.0
    for kind in ("gaussian", "ode1"):
        for seed in range(5):
            st = make_state(kind, "PITC", seed)
            pitc = st.parts()
            fitc = st.replace(variant=Variant.FITC).parts()
            dtc = st.replace(variant=Variant.DTC).parts()
            Df, Dp = fitc.D_dense(), pitc.D_dense()
            fitc_exact &= bool(np.array_equal(Df, np.diag(np.diag(Dp))))
            dtc_zero &= bool(np.all(dtc.D_dense() == 0.0))
            y = st.centered_targets()
            diag_only = dataclasses.replace(pitc, D=[np.diag(np.diag(b)) for b in pitc.D])
            a = SparseFactor(diag_only, y).log_marginal()
            b = log_marginal(st.replace(variant=Variant.FITC))
            worst = max(worst, abs(a - b) / abs(b))
    report("criterion 4 variant structure", fitc_exact and dtc_zero and worst <= 1e-10,
           f"D_FITC==diag(D_PITC) {fitc_exact}, D_DTC==0 {dtc_zero}, "
           f"diagonalized PITC vs FITC rel {worst:.2e} (tol 1e-10)")


@pytest.fixture(scope="module")
def toy_result():
    return run_toy(ExperimentConfig())


def test_c05_toy_reproduction(report, toy_result):
    lines, ok = [], True
    smse_band = (0.9e-2, 1.3e-2)
    msll_rule = {"FULL": (-np.inf, -2.1), "PITC": (-np.inf, -2.1),
                 "FITC": (-np.inf, -2.0), "DTC": (-1.6, -0.6)}
    for m, res in toy_result.metrics.items():
        s, l = res.mean("smse"), res.mean("msll")
        s_ok = np.all((s >= smse_band[0]) & (s <= smse_band[1]))
        lo, hi = msll_rule[m]
        l_ok = np.all((l >= lo) & (l <= hi))
        ok &= bool(s_ok and l_ok)
        lines.append(f"{m} smse {np.array2string(s * 100, precision=3)}e-2 "
                     f"msll {np.array2string(l, precision=3)}")
    report("criterion 5 toy reproduction", ok, "; ".join(lines))


def test_c06_timing_order(report):
    cfg = ExperimentConfig()
    train, _, _ = toy_data(cfg, 0).split()
    Xall = train.X
    Z = InducingSet(np.linspace(Xall.min(), Xall.max(), cfg.K)[:, None])
    times = {}
    for m in ("DTC", "FITC", "PITC", "FULL"):
        v = Variant.parse(m)
        st = ModelState(cfg.kernel_params(), cfg.noise_params(), train, v, Z if v.sparse else None)
        times[m] = time_per_iteration(st, repeats=21)
    ok = times["DTC"] < times["FITC"] < times["PITC"] < times["FULL"]
    report("criterion 6 timing order", ok,
           ", ".join(f"{m} {t * 1e3:.2f} ms" for m, t in times.items()))


def test_c07_missing_range(report):
    cfg = ExperimentConfig(variants=("INDEPENDENT", "PITC"), missing={3: (-0.8, 0.0)})
    res = run_missing_range(cfg)
    wins = int(np.sum(res.gap_rmse["PITC"] < res.gap_rmse["INDEPENDENT"]))
    report("criterion 7 missing range", wins >= 8,
           f"PITC gap RMSE below independent in {wins}/10 seeds; "
           f"mean RMSE PITC {np.mean(res.gap_rmse['PITC']):.3f}, "
           f"independent {np.mean(res.gap_rmse['INDEPENDENT']):.3f}")


def test_c08_laplace_curvature(report):
    worst = 0.0
    for variant in ("PITC", "FITC", "DTC", "FULL"):
        for seed in range(3):
            kern, ds, Z, noise = ode_instance(seed, D=5, N=12, K=5)
            st = ModelState(kern, noise, ds, variant, Z if variant != "FULL" else None)
            c = curvature(st).total
            # h balances truncation (h^2) against roundoff (eps |L| / h^2)
            fd = np.array([second_difference(st, d, h=1e-3) for d in range(5)])
            worst = max(worst, np.max(np.abs(c - fd) / np.abs(fd)))
    rep = snr_report(_symmetric_state(), grad_warn=np.inf)
    snr = {e.output: e.snr for e in rep.entries}
    sym = abs(snr[0] - snr[1]) / abs(snr[0])
    report("criterion 8 laplace curvature", worst <= 1e-4 and sym <= 1e-10,
           f"curvature max rel {worst:.2e} (tol 1e-4), symmetric SNR rel diff {sym:.1e}")


def test_c09_metric_definitions(report):
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        ytr = rng.normal(size=40) * 3 + 2
        yte = rng.normal(size=60) * 3 + 2
        mu, var = ytr.mean(), ytr.var()
        worst = max(worst, abs(smse(yte, np.full(60, yte.mean())) - 1.0),
                    abs(msll(yte, np.full(60, mu), np.full(60, var), mu, var)))
    report("criterion 9 metric definitions", worst <= 1e-12,
           f"max deviation {worst:.1e} (tol 1e-12)")


def test_c10_sampler(report):
    k = toy_kernel(standardize=False)
    k = type(k)(TOY["S"][:2], TOY["P"][:2], TOY["L"], standardize=False)
    X = np.array([[-0.3], [-0.1], [0.05], [0.2]])
    s2 = np.array([0.05, 0.1])
    C = full_kff(k, [X, X]) + np.diag(np.repeat(s2, 4))
    n = 2000
    y, _ = sample_full_gp(k, NoiseParams(s2), [X, X], seed=2024, n_draws=n)
    emp = y.T @ y / n
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / n)
    z = np.max(np.abs(emp - C) / se)
    report("criterion 10 sampler", z <= 5.0, f"max |emp - C| / SE = {z:.2f} (tol 5)")


def test_heterotopic_property(report):
    wins = 0
    for seed in range(10):
        r = run_heterotopic(seed, K=50)
        wins += r["PITC"] <= r["INDEPENDENT"]
    report("heterotopic property", wins >= 8, f"PITC MAE <= independent MAE in {wins}/10 seeds")
