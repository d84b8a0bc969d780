from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from cvquad import testfn as tf
from cvquad.errors import ConfigError, ParameterError
from cvquad.sampling import SampleSet
from cvquad.harness import (
    ExperimentConfig,
    Statistic,
    bind_estimator,
    build_function,
    compare_to_theory,
    error_statistic,
    fit_slope,
    report_for,
    run_sweep,
    theory_exponent,
)

GRID = (64, 128, 256, 512)


def _cfg(**kw):
    base = dict(function={"kind": "sine"}, estimator={"method": "plain_mc"}, n_grid=GRID, reps=30)
    base.update(kw)
    return ExperimentConfig(**base)


def test_sweep_is_deterministic():
    a = run_sweep(_cfg(estimator={"method": "knn_direct", "k": 2}), threads=1)
    b = run_sweep(_cfg(estimator={"method": "knn_direct", "k": 2}), threads=1)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.stat.tobytes() == b.stat.tobytes()


def test_sweep_independent_of_threads():
    cfg = _cfg(estimator={"method": "cv_moment"}, q=2)
    a = run_sweep(cfg, threads=1)
    b = run_sweep(cfg, threads=4)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.stderr.tobytes() == b.stderr.tobytes()


def test_adding_reps_keeps_existing_errors():
    small = run_sweep(_cfg(reps=30), threads=1)
    large = run_sweep(_cfg(reps=45), threads=1)
    np.testing.assert_array_equal(large.errors[:, :30], small.errors)


@pytest.mark.parametrize("estimator,q", [
    ({"method": "plain_mc"}, 2),
    ({"method": "truncated_mc", "M": 5.0}, 2),
    ({"method": "cv_moment"}, 3),
    ({"method": "knn_direct", "k": 3}, 1),
    ({"method": "knn_weights", "k": 3}, 1),
])
def test_constant_function_errors_at_tolerance(estimator, q):
    cfg = _cfg(function={"kind": "constant", "c": 1.7}, estimator=estimator, q=q)
    res = run_sweep(cfg, threads=1)
    assert np.all(np.abs(res.errors) <= 1e-10)
    assert not res.failures


def test_plain_mc_rmse_matches_clt():
    cfg = _cfg(n_grid=(256, 1024, 4096, 16384), reps=200, base_seed=5)
    res = run_sweep(cfg, threads=1)
    f = tf.make_sine()
    predicted = np.sqrt(tf.reference_variance(f) / np.array(cfg.n_grid))
    np.testing.assert_allclose(res.stat, predicted, rtol=0.20)


def test_plain_mc_slope_is_clt():
    cfg = _cfg(n_grid=tuple(2**i for i in range(8, 15)), reps=200, base_seed=6)
    rep = fit_slope(run_sweep(cfg, threads=1))
    assert -0.65 <= rep.slope <= -0.35


def test_failures_recorded_per_cell():
    # k = 40 is too large for n = 64 but fine from n = 128 on
    res = run_sweep(_cfg(estimator={"method": "knn_direct", "k": 40}), threads=1)
    assert res.n_failed.tolist() == [30, 0, 0, 0]
    assert "k must lie" in res.cell_error(0) and res.cell_error(1) == ""
    assert math.isnan(res.stat[0]) and np.all(np.isfinite(res.stat[1:]))


def test_error_statistics():
    e = np.array([3.0, -4.0, np.nan])
    rmse, se = error_statistic(e, Statistic.RMSE)
    assert rmse == pytest.approx(math.sqrt(12.5))
    assert se > 0
    med, _ = error_statistic(np.array([-1.0, 2.0, -3.0, 10.0, 5.0]), Statistic.MEDIAN_ABS)
    assert med == 3.0
    assert all(math.isnan(v) for v in error_statistic(np.array([np.nan]), Statistic.RMSE))


def test_median_se_is_sensible(rng):
    e = rng.normal(size=400)
    med, se = error_statistic(e, Statistic.MEDIAN_ABS)
    # asymptotic SE of the median of |N(0,1)|: 1 / (2 sqrt(n) * 2 phi(0.674))
    expected = 1 / (2 * math.sqrt(400) * 2 * math.exp(-0.6745**2 / 2) / math.sqrt(2 * math.pi))
    assert se == pytest.approx(expected, rel=0.35)
    assert med == pytest.approx(0.6745, abs=4 * expected)


def test_synthetic_slopes_exact():
    ns = np.array([2.0**i for i in range(6, 14)])
    rep = fit_slope(n_grid=ns, stat=ns**-0.5)
    assert rep.slope == pytest.approx(-0.5, abs=1e-12)
    rep = fit_slope(n_grid=ns, stat=3 * ns**-1.5)
    assert rep.slope == pytest.approx(-1.5, abs=1e-12)
    assert rep.intercept == pytest.approx(math.log(3), abs=1e-12)
    assert rep.r2 == pytest.approx(1.0, abs=1e-12)


def test_below_floor_is_flagged():
    rep = fit_slope(n_grid=GRID, stat=[0.0, 0.0, 0.0, 0.0])
    assert rep.below_floor and math.isnan(rep.slope)
    assert rep.with_theory(-0.5, 0.1).verdict is False


def test_fit_slope_rejects():
    with pytest.raises(ParameterError):
        fit_slope(n_grid=[1, 2, 3], stat=[1, 1, 1])
    with pytest.raises(ParameterError):
        fit_slope(n_grid=GRID, stat=[1, np.nan, 1, 1])


def test_theory_exponents():
    assert theory_exponent("knn_direct", 1.0, None, 1, 1, math.inf)[0] == -1.5
    assert theory_exponent("knn_weights", 1.0, None, 1, 1, 0.25)[0] == -0.75
    exp, notes = theory_exponent("truncated_mc", 0.05, 4, 3, 1, math.inf, beta=0.18)
    assert exp == pytest.approx(-0.46) and not notes
    assert theory_exponent("plain_mc", 1.0, None, 1, 1, math.inf)[0] == -0.5
    assert theory_exponent("cv_moment", 1.0, 3, 2, 1, math.inf)[0] == pytest.approx(-1.5)


def test_compare_to_theory_verdict():
    ns = np.array([2.0**i for i in range(6, 12)])
    rep = fit_slope(n_grid=ns, stat=ns**-1.45)
    out = compare_to_theory(rep, "knn_direct", 1.0, None, 1, 1, math.inf, tol=0.1)
    assert out.theory == -1.5 and out.verdict
    out = compare_to_theory(rep, "knn_direct", 1.0, None, 1, 1, math.inf, tol=0.01)
    assert not out.verdict


def test_compare_to_theory_warns_for_cv_in_rare_event_regime():
    ns = np.array([2.0**i for i in range(6, 12)])
    rep = fit_slope(n_grid=ns, stat=ns**-0.4)
    with pytest.warns(UserWarning, match="truncated MC is recommended"):
        out = compare_to_theory(rep, "cv_moment", 0.05, 4, 3, 1, math.inf, tol=0.1)
    assert out.warnings


def test_compare_to_theory_warns_for_truncation_when_bounded():
    rep = fit_slope(n_grid=GRID, stat=[1, 0.5, 0.25, 0.125])
    with pytest.warns(UserWarning, match="CV estimator is recommended"):
        compare_to_theory(rep, "truncated_mc", 2.0, 4, 3, 1, math.inf, tol=0.1)


def test_report_for_uses_config_theory():
    cfg = _cfg(theory={"s": 1.0, "tol": 0.3}, n_grid=(256, 512, 1024, 2048), reps=60)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = report_for(run_sweep(cfg, threads=1))
    assert rep.theory == -0.5 and rep.verdict


@pytest.mark.parametrize("kw,msg", [
    ({"n_grid": (64, 128, 256)}, "at least 4"),
    ({"n_grid": (64, 128, 128, 256)}, "strictly increasing"),
    ({"reps": 29}, "reps"),
    ({"q": 0}, "q must"),
    ({"estimator": {}}, "method"),
])
def test_config_validation(kw, msg):
    with pytest.raises(ConfigError, match=msg):
        _cfg(**kw)


def test_config_roundtrip():
    cfg = _cfg(gamma=None, statistic="MedianAbs")
    d = cfg.to_dict()
    assert d["gamma"] is None and d["statistic"] == "MedianAbs" and d["n_grid"] == list(GRID)
    assert cfg.gamma == math.inf


def test_build_function_kinds():
    for spec in ({"kind": "sine"}, {"kind": "one_plus_bump"}, {"kind": "lipschitz"},
                 {"kind": "linear"}, {"kind": "constant", "c": 2}, {"kind": "bump"},
                 {"kind": "peak", "beta": 0.18, "q": 3, "p": 4, "s": 0.05}):
        f = build_function(spec)
        assert np.all(np.isfinite(f(np.array([[0.3], [0.7]]))))
    with pytest.raises(ConfigError):
        build_function({"kind": "spline"})


def test_schedules():
    f = tf.make_peak(0.18, 0.0, 1, 3, 4, 0.05)
    est = bind_estimator({"method": "truncated_mc", "M": {"schedule": "peak"}}, f, 2**12, q=3)
    big = SampleSet(np.array([0.5]), np.array([1e9]))
    assert est(big).params["M"] == pytest.approx(2 ** (12 * 0.18))
    est = bind_estimator({"method": "knn_direct", "k": {"schedule": "optimal"}}, f, 2**12,
                         gamma=0.25, theory={"s": 0.5})
    S = SampleSet(np.linspace(0, 1, 2**12), np.ones(2**12))
    assert est(S).params["k"] == 8
    with pytest.raises(ConfigError, match="needs 's'"):
        bind_estimator({"method": "knn_direct", "k": {"schedule": "optimal"}}, f, 64)
    with pytest.raises(ConfigError, match="unknown schedule"):
        bind_estimator({"method": "knn_direct", "k": {"schedule": "bogus"}}, f, 64)
    with pytest.raises(ConfigError, match="q = 1"):
        bind_estimator({"method": "knn_direct"}, f, 64, q=2)
    with pytest.raises(ConfigError, match="unknown estimator"):
        bind_estimator({"method": "magic"}, f, 64)
