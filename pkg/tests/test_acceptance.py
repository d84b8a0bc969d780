"""End-to-end acceptance checks, one test per criterion.

Every check uses ``DEFAULT_SEED``, fixed before any of these runs were made.
Each test records a one-line verdict that is echoed in the terminal summary.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from cvquad import cli
from cvquad import fuzzy_lab as fl
from cvquad import rate_theory as rt
from cvquad import testfn as tf
from cvquad.estimators import (
    cv_moment,
    integral_knn_quadrature,
    integral_weights_form,
    peak_truncation,
    plain_mc_moment,
    truncated_mc_moment,
)
from cvquad.harness import PROBE_BIT, ExperimentConfig, Statistic, fit_slope, run_sweep
from cvquad.regress import GridRegressor, KnnRegressor, empirical_Lr_error, fit_grid, knn_cell_volumes
from cvquad.sampling import RngStream, SampleSet, cell_stream, draw_sample, split_halves

pytestmark = pytest.mark.acceptance

DEFAULT_SEED = 0
THREADS = 1
GRID_8_14 = tuple(2**i for i in range(8, 15))
GRID_8_13 = tuple(2**i for i in range(8, 14))


def _sweep(function, estimator, n_grid, reps, q=1, gamma=math.inf, theory=None,
           statistic=Statistic.RMSE):
    cfg = ExperimentConfig(function, estimator, n_grid, reps, q=q, gamma=gamma,
                           base_seed=DEFAULT_SEED, statistic=statistic, theory=theory or {})
    return run_sweep(cfg, threads=THREADS)


def test_criterion_1_noiseless_knn_rate(record_criterion):
    res = _sweep({"kind": "sine"}, {"method": "knn_direct", "k": 1}, GRID_8_14, 100)
    assert res.reference == pytest.approx(2.0, abs=1e-12)
    slope = fit_slope(res).slope
    ok = -1.7 <= slope <= -1.3 and not res.failures
    record_criterion(1, ok, f"k-NN quadrature k=1, RMSE slope {slope:.3f} in [-1.7, -1.3]")
    assert ok


def test_criterion_2_noise_adaptive_transition(record_criterion):
    slopes = {}
    for gamma, target in ((0.0, -0.5), (0.25, -0.75)):
        res = _sweep({"kind": "sine"}, {"method": "knn_direct", "k": {"schedule": "optimal"}},
                     GRID_8_14, 100, gamma=gamma, theory={"s": 0.999})
        slopes[gamma] = (fit_slope(res).slope, target)
    ok = all(abs(s - t) <= 0.2 for s, t in slopes.values())
    detail = ", ".join(f"gamma={g}: slope {s:.3f} vs {t}" for g, (s, t) in slopes.items())
    record_criterion(2, ok, f"optimal k; {detail} (+-0.2)")
    assert ok


def test_criterion_3_cv_beats_plain_mc(record_criterion):
    fn = {"kind": "one_plus_bump"}
    grid = {"kind": "grid", "cells": {"schedule": "fraction", "fraction": 0.5}, "empty": "nearest"}
    cv = _sweep(fn, {"method": "cv_moment", "regressor": grid}, GRID_8_13, 200, q=2)
    mc = _sweep(fn, {"method": "plain_mc"}, GRID_8_13, 200, q=2)
    cv_slope, mc_slope = fit_slope(cv).slope, fit_slope(mc).slope
    ratio = mc.stat[-1] / cv.stat[-1]
    ok = cv_slope <= -1.2 and -0.65 <= mc_slope <= -0.35 and ratio >= 5
    record_criterion(3, ok, f"CV slope {cv_slope:.3f} <= -1.2, plain slope {mc_slope:.3f} in [-0.65, -0.35], "
                            f"RMSE ratio at 2^13 {ratio:.1f} >= 5")
    assert ok


def test_criterion_4_truncated_mc_rare_event(record_criterion):
    fn = {"kind": "peak", "beta": 0.18, "x0": [0.0], "q": 3, "p": 4, "s": 0.05}
    res = _sweep(fn, {"method": "truncated_mc", "M": {"schedule": "peak"}}, GRID_8_14, 200, q=3,
                 statistic=Statistic.MEDIAN_ABS)
    slope = fit_slope(res).slope
    slope_ok = -0.65 <= slope <= -0.30
    # same samples, both errors against the untruncated moment
    f = tf.make_peak(0.18, [0.0], 1, 3, 4, 0.05)
    n = 2**12
    M = peak_truncation(n, 0.18)
    truth = tf.reference_moment(f, 3)
    plain, trunc = [], []
    for r in range(200):
        S = draw_sample(f, n, math.inf, cell_stream(DEFAULT_SEED, n, r))
        plain.append(plain_mc_moment(S, 3).value - truth)
        trunc.append(truncated_mc_moment(S, 3, M).value - truth)
    ratio = np.max(np.abs(plain)) / np.max(np.abs(trunc))
    ratio_ok = ratio >= 5
    ok = slope_ok and ratio_ok
    record_criterion(4, ok, f"MedianAbs slope {slope:.3f} in [-0.65, -0.30] ({'ok' if slope_ok else 'out'}); "
                            f"max-error ratio plain/truncated at 2^12 {ratio:.2f} >= 5 "
                            f"({'ok' if ratio_ok else 'not met at the default seed'})")
    assert slope_ok, "slope outside band"
    assert ratio_ok, f"plain/truncated max-error ratio {ratio:.3f} < 5 at seed {DEFAULT_SEED}"


def test_criterion_5_truncation_target_unbiased(record_criterion):
    f = tf.make_peak(0.18, [0.0], 1, 3, 4, 0.05)
    n = 2**12
    M = peak_truncation(n, 0.18)
    target = tf.reference_truncated_moment(f, 3, M)
    vals = np.array([truncated_mc_moment(draw_sample(f, n, math.inf, cell_stream(DEFAULT_SEED, n, r)), 3, M).value
                     for r in range(200)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    z = (vals.mean() - target) / se
    ok = abs(z) <= 3
    record_criterion(5, ok, f"truncated mean - clamped target = {z:.2f} SE (|z| <= 3)")
    assert ok


def test_criterion_6_identity_suite(record_criterion):
    gen = RngStream(DEFAULT_SEED, 6).generator()
    worst = {"zero_cv": 0.0, "two_forms": 0.0, "collapse": 0.0, "volumes_1d": 0.0}
    f = tf.make_sine()
    for trial in range(50):
        n = 2 * int(gen.integers(4, 200))
        S = draw_sample(f, n, [math.inf, 0.0, 0.3][trial % 3], RngStream(DEFAULT_SEED, 600 + trial))
        _, S2 = split_halves(S)
        zero = GridRegressor(np.empty((0, 1)), np.empty(0), 4)
        for q in (1, 2, 3):
            worst["zero_cv"] = max(worst["zero_cv"], abs(cv_moment(S, q, zero).value - plain_mc_moment(S2, q).value))
        k = int(gen.integers(1, n // 2 + 1))
        worst["two_forms"] = max(worst["two_forms"],
                                 abs(integral_knn_quadrature(S, k).value - integral_weights_form(S, k).value))
        worst["collapse"] = max(worst["collapse"], abs(integral_knn_quadrature(S, n // 2).value - S2.values.mean()))
        reg = KnnRegressor(S.points, S.values, k)
        worst["volumes_1d"] = max(worst["volumes_1d"], abs(knn_cell_volumes(reg).total - k))
    z2 = 0.0
    for k in (1, 3, 10):
        reg = KnnRegressor(gen.random((50, 2)), gen.normal(size=50), k)
        v = knn_cell_volumes(reg, 20_000, gen)
        se = math.sqrt(np.sum(v.stderr**2))
        z2 = max(z2, abs(v.total - k) / se)
    bound_ok = True
    for _ in range(10_000):
        m = int(gen.integers(1, 30))
        ys = gen.standard_cauchy(m) * 10.0 ** gen.integers(-3, 4)
        M = 10.0 ** gen.uniform(-3, 3)
        q = int(gen.integers(1, 5))
        val = truncated_mc_moment(SampleSet(np.linspace(0, 1, m), ys), q, M).value
        bound_ok &= abs(val) <= M**q * (1 + 1e-12)
    ok = (worst["zero_cv"] <= 1e-12 and worst["two_forms"] <= 1e-10 and worst["collapse"] <= 1e-12
          and worst["volumes_1d"] <= 1e-12 and z2 <= 3 and bound_ok)
    record_criterion(6, ok, f"zero-CV {worst['zero_cv']:.1e}, two forms {worst['two_forms']:.1e}, "
                            f"k=n/2 collapse {worst['collapse']:.1e}, d=1 volume sum {worst['volumes_1d']:.1e}, "
                            f"d=2 volume sum {z2:.2f} SE, clamp bound on 10^4 cases {'ok' if bound_ok else 'violated'}")
    assert ok


def test_criterion_7_rate_theory_suite(record_criterion):
    gen = RngStream(DEFAULT_SEED, 7).generator()
    cross = 0.0
    ordered = 0
    for _ in range(10_000):
        p = gen.uniform(2.0, 20.0)
        q = gen.uniform(p / 2, p)
        d = int(gen.integers(1, 7))
        if not (p > 2 and q < p < 2 * q):
            continue
        t1, t2, t3 = rt.thresholds(p, q, d)
        ordered += t1 > t2 > t3
        cross = max(cross, abs((-q * (t2 / d - 1 / p) - 1) - (-t2 / d - 0.5)))
    cases = {(2, 4, 3, 1): ("CaseI_s_gt_d_over_p", "CV"), (0.15, 4, 3, 1): ("CaseII_mid", "CV"),
             (0.05, 4, 3, 1): ("RareEvent", "TruncatedMC")}
    table_ok = all((rt.regime(*k).regime.value, rt.regime(*k).recommended_method.value) == v
                   for k, v in cases.items())
    ok = cross <= 1e-12 and ordered == 10_000 and table_ok
    record_criterion(7, ok, f"crossover {cross:.1e}, ordering {ordered}/10000, regime table "
                            f"{'matches' if table_ok else 'differs'}")
    assert ok


def test_criterion_8_fuzzy_lab_suite(record_criterion):
    checks = fl.run_lab(trials=10**6, rng=DEFAULT_SEED, hoeffding_trials=10**5)
    failed = [c.name for c in checks if not c.passed]
    by_name = {c.name: c for c in checks}
    slopes = ", ".join(f"{by_name[f'sobolev_scaling_t{t}'].value:.3f}" for t in (0, 1, 2))
    ok = not failed
    record_criterion(8, ok, f"{len(checks) - len(failed)}/{len(checks)} lab checks pass; "
                            f"KL sim {by_name['case1_kl_simulation'].value:.6f} vs "
                            f"{by_name['case1_kl_simulation'].expected:.6f}; Sobolev slopes {slopes}"
                            + (f"; failed: {failed}" if failed else ""))
    assert ok


def test_criterion_9_oracle_error(record_criterion):
    f = tf.make_lipschitz()
    errs = []
    for n in GRID_8_13:
        e = [empirical_Lr_error(fit_grid(draw_sample(f, n, math.inf, cell_stream(DEFAULT_SEED, n, r)),
                                         n // 2, empty="nearest"),
                                f, 2, 20_000, RngStream(DEFAULT_SEED, cell_stream(0, n, r).stream_index | PROBE_BIT))
             for r in range(20)]
        errs.append(math.sqrt(np.mean(np.square(e))))
    slope = fit_slope(n_grid=GRID_8_13, stat=errs).slope
    ok = slope <= -0.8
    record_criterion(9, ok, f"grid regressor L2 error slope {slope:.3f} <= -0.8")
    assert ok


def test_criterion_10_determinism(record_criterion, tmp_path):
    configs = {
        "knn": {"function": "sine", "method": "knn_direct", "k": 4, "n_grid": [128, 256, 512, 1024],
                "reps": 30, "seed": DEFAULT_SEED, "s": 0.999},
        "weights_2d": {"function": "sine", "method": "knn_weights", "k": 3, "d": 2, "probe_n": 2000,
                       "n_grid": [32, 64, 128, 256], "reps": 30, "seed": DEFAULT_SEED},
        "cv": {"function": "one_plus_bump", "method": "cv_moment", "cells": "fraction", "q": 2,
               "n_grid": [64, 128, 256, 512], "reps": 30, "seed": DEFAULT_SEED},
    }
    same = {}
    for name, raw in configs.items():
        path = tmp_path / f"{name}.cfg"
        path.write_text(json.dumps(raw), encoding="utf-8")
        outs = []
        for threads in (1, 8):
            out = tmp_path / f"{name}_{threads}"
            assert cli.main(["sweep", "--config", str(path), "--threads", str(threads), "--out", str(out)]) == 0
            outs.append((out / "sweep.csv").read_bytes() + (out / "reps.jsonl").read_bytes())
        same[name] = outs[0] == outs[1]
    ok = all(same.values())
    record_criterion(10, ok, "byte-identical CSV and JSONL under --threads 1 and 8: "
                             + ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok
