import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sauc import calib, data, forecaster, qr
from sauc.calib import Cell, CalibratedIntervals, CalibratorModel, Kind
from sauc.dist import PredictiveDistribution
from sauc.errors import DomainError, StateError
from sauc.forecaster import DistortionSpec, ForecastSet

from oracles import pava_minmax, pava_partitions


def nb_fc(mu, alpha=2.0, t0=0):
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    return ForecastSet(PredictiveDistribution.nb(mu, np.full_like(mu, alpha)),
                       tuple(f"n{i}" for i in range(mu.shape[0])), t0, "calib", "m")


def gauss_fc(mu, sigma, t0=0):
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape).copy()
    return ForecastSet(PredictiveDistribution.gaussian(mu, sigma),
                       tuple(f"n{i}" for i in range(mu.shape[0])), t0, "calib", "m")


def same(a: CalibratedIntervals, b: CalibratedIntervals):
    return (a.mu_star.tobytes() == b.mu_star.tobytes() and a.lower.tobytes() == b.lower.tobytes()
            and a.upper.tobytes() == b.upper.tobytes())


@pytest.fixture(scope="module")
def sparse_run():
    spec = data.preset("ccr-1h-like", nodes=20, steps=1500)
    panel, truth = data.generate_synthetic(spec, 3)
    sp = data.split(panel)
    fc = forecaster.oracle_forecast(truth, panel.node_ids, DistortionSpec(1.0, 4.0))
    fc_cal = fc.select(*sp.bounds("calib"), "calib")
    fc_test = fc.select(*sp.bounds("test"), "test")
    return fc_cal, fc_cal.targets(panel), fc_test, fc_test.targets(panel)


# -- SAUC ---------------------------------------------------------------------

def test_single_bin_all_zero_segment():
    mu = np.linspace(0.05, 0.45, 40)
    y = (np.arange(40) % 5 == 0).astype(float)
    model = calib.fit_sauc(nb_fc(mu), y, n_bins=1)
    fitted = [c for c in model.cells if not c.fallback]
    assert len(fitted) == 1 and fitted[0].segment == "zero" and fitted[0].n_points == 40
    assert fitted[0].p05.p == 0.05 and fitted[0].p95.p == 0.95


def test_exact_targets_give_degenerate_intervals():
    rng = np.random.default_rng(0)
    mu = rng.uniform(0.05, 6.0, (3, 100))
    model = calib.fit_sauc(nb_fc(mu), mu, n_bins=4)
    test_mu = rng.uniform(0.1, 5.5, (3, 30))
    out = calib.apply_sauc(model, nb_fc(test_mu))
    np.testing.assert_allclose(out.lower, test_mu, atol=1e-6)
    np.testing.assert_allclose(out.upper, test_mu, atol=1e-6)


def test_both_segments_on_sparse_synthetic(sparse_run):
    fc_cal, y_cal, _, _ = sparse_run
    model = calib.fit_sauc(fc_cal, y_cal)
    by_bin = {}
    for c in model.cells:
        by_bin.setdefault(c.bin, set())
        if not c.fallback:
            by_bin[c.bin].add(c.segment)
    assert any(s == {"zero", "nonzero"} for s in by_bin.values())
    for c in model.cells:
        assert (c.p05 is None) == (c.p95 is None) == (c.n_points == 0)


def test_routing_below_all_thresholds():
    assert calib.route([-5.0, 0.0], [1.0, 2.0]).tolist() == [0, 0]
    assert calib.route([1.0, 1.5, 2.0, 9.0], [1.0, 2.0]).tolist() == [1, 1, 2, 2]


def hand_model(cells, thresholds=(), zero_threshold=0.5, mu_star="midpoint"):
    m = CalibratorModel(Kind.SAUC, n_bins=len(thresholds) + 1, zero_threshold=zero_threshold,
                        mu_star=mu_star, thresholds=list(thresholds), cells=cells)
    m.fitted = True
    return m


def test_identity_fits_give_point_intervals():
    ident = lambda p: qr.QuantileFit(p, 0.0, 1.0, 10)
    model = hand_model([Cell(0, "nonzero", 10, ident(0.05), ident(0.95)),
                        Cell(0, "zero", 10, ident(0.05), ident(0.95))])
    mu = np.array([[0.2, 1.0, 4.5]])
    out = calib.apply_sauc(model, nb_fc(mu))
    np.testing.assert_array_equal(out.lower, mu)
    np.testing.assert_array_equal(out.upper, mu)
    np.testing.assert_array_equal(out.mu_star, mu)


def test_crossing_swapped_and_clamped():
    model = hand_model([Cell(0, "nonzero", 5, qr.QuantileFit(0.05, 3.0, 0.0, 5), qr.QuantileFit(0.95, 1.0, 0.0, 5)),
                        Cell(0, "zero", 5, qr.QuantileFit(0.05, -2.0, 0.0, 5), qr.QuantileFit(0.95, -1.0, 0.0, 5))])
    out = calib.apply_sauc(model, nb_fc([[0.1, 2.0]]))
    assert out.lower.tolist() == [[0.0, 1.0]] and out.upper.tolist() == [[0.0, 3.0]]
    assert out.mu_star.tolist() == [[0.0, 2.0]]


def test_empty_cell_falls_back_to_identity():
    model = hand_model([Cell(0, "nonzero", 5, qr.QuantileFit(0.05, 1.0, 0.0, 5), qr.QuantileFit(0.95, 2.0, 0.0, 5)),
                        Cell(0, "zero", 0, None, None)])
    fc = nb_fc([[0.2, 3.0]])
    out = calib.apply_sauc(model, fc)
    pre = calib.identity_intervals(fc)
    assert out.lower[0, 0] == pre.lower[0, 0] and out.upper[0, 0] == pre.upper[0, 0]
    assert out.mu_star[0, 0] == pre.mu_star[0, 0]
    assert (out.lower[0, 1], out.upper[0, 1], out.mu_star[0, 1]) == (1.0, 2.0, 1.5)


def test_passthrough_keeps_mu_hat(sparse_run):
    fc_cal, y_cal, fc_test, _ = sparse_run
    out = calib.apply_sauc(calib.fit_sauc(fc_cal, y_cal, mu_star="passthrough"), fc_test)
    np.testing.assert_array_equal(out.mu_star, fc_test.dist.mean())


def test_sauc_one_bin_no_split_equals_qr(sparse_run):
    fc_cal, y_cal, fc_test, _ = sparse_run
    a = calib.apply_sauc(calib.fit_sauc(fc_cal, y_cal, n_bins=1, zero_threshold=None), fc_test)
    b = calib.fit_apply_qr_baseline(fc_cal, y_cal, fc_test)
    c = calib.apply_sauc(calib.fit_sauc(fc_cal, y_cal, n_bins=1, zero_threshold=-math.inf), fc_test)
    assert same(a, b) and same(a, c)


def test_qr_equals_sauc_when_one_segment():
    rng = np.random.default_rng(4)
    mu = rng.uniform(1.0, 5.0, (2, 80))
    y = rng.poisson(mu).astype(float)
    test = nb_fc(rng.uniform(1.0, 5.0, (2, 20)))
    a = calib.apply_sauc(calib.fit_sauc(nb_fc(mu), y, n_bins=1), test)
    assert same(a, calib.fit_apply_qr_baseline(nb_fc(mu), y, test))


def test_qr_constant_targets():
    mu = np.linspace(0.1, 4.0, 50)
    out = calib.fit_apply_qr_baseline(nb_fc(mu), np.full(50, 2.0), nb_fc(mu[:10]))
    np.testing.assert_allclose(out.lower, 2.0, atol=1e-12)
    np.testing.assert_allclose(out.upper, 2.0, atol=1e-12)


def test_sauc_differs_from_qr_on_two_populations():
    rng = np.random.default_rng(6)
    mu = np.concatenate([rng.uniform(0.05, 0.45, 300), rng.uniform(1.0, 6.0, 300)])
    y = np.concatenate([np.zeros(300), mu[300:] + rng.normal(0, 3, 300) ** 2])
    fc_test = nb_fc([[0.2, 0.3, 2.0, 5.0]])
    a = calib.apply_sauc(calib.fit_sauc(nb_fc(mu), y, n_bins=1), fc_test)
    b = calib.fit_apply_qr_baseline(nb_fc(mu), y, fc_test)
    assert np.max(np.abs(a.upper - b.upper)) > 0.5
    np.testing.assert_allclose(a.upper[0, :2], 0.0, atol=1e-9)     # zero segment: all targets zero


def test_unfitted_model_state_error():
    fc = nb_fc([[1.0]])
    for kind in (Kind.SAUC, Kind.PLATT):
        with pytest.raises(StateError):
            calib.apply_calibrator(CalibratorModel(kind), fc)


def test_model_validation():
    with pytest.raises(DomainError):
        CalibratorModel(Kind.SAUC, n_bins=0)
    with pytest.raises(DomainError):
        CalibratorModel(Kind.SAUC, zero_threshold=0.0)
    with pytest.raises(DomainError):
        CalibratorModel(Kind.SAUC, bin_on="y")
    with pytest.raises(ValueError):
        CalibratorModel("Bayes")
    with pytest.raises(DomainError):
        calib.fit_sauc(nb_fc(np.empty((1, 0))), [])
    assert CalibratorModel(Kind.SAUC, bin_on="y_calib_thresholds_applied_to_mu_hat").bin_on == "y_calib"


def test_bin_on_y_calib_uses_target_quantiles():
    rng = np.random.default_rng(2)
    mu = rng.uniform(0.1, 5.0, 200)
    y = rng.poisson(mu).astype(float)
    model = calib.fit_sauc(nb_fc(mu), y, n_bins=4, bin_on="y_calib")
    np.testing.assert_array_equal(model.thresholds, np.quantile(y, [0.25, 0.5, 0.75]))
    calib.apply_sauc(model, nb_fc(mu[:5]))


# -- Identity ----------------------------------------------------------------

def test_identity_round_trip(sparse_run):
    fc_cal, y_cal, fc_test, _ = sparse_run
    model = calib.fit_calibrator("Identity", fc_cal, y_cal)
    pre = calib.identity_intervals(fc_test)
    assert same(calib.apply_calibrator(model, fc_test), pre)


# -- point-map baselines -------------------------------------------------------

def test_platt_examples():
    mu = np.linspace(0.5, 7.0, 30)
    m = calib.fit_platt(gauss_fc(mu, 1.0), 2 * mu + 1)
    assert m.params["a"] == pytest.approx(2.0, abs=1e-9) and m.params["b"] == pytest.approx(1.0, abs=1e-9)
    m = calib.fit_platt(gauss_fc(mu, 1.0), mu)
    assert m.params["a"] == pytest.approx(1.0, abs=1e-9) and m.params["b"] == pytest.approx(0.0, abs=1e-9)


def test_platt_normal_equations():
    rng = np.random.default_rng(9)
    for _ in range(20):
        mu = rng.gamma(1.0, 2.0, 100)
        y = rng.poisson(1.3 * mu + 0.4).astype(float)
        m = calib.fit_platt(nb_fc(mu), y)
        X = np.column_stack([mu, np.ones_like(mu)])
        a, b = np.linalg.solve(X.T @ X, X.T @ y)
        assert abs(m.params["a"] - a) <= 1e-9 * max(1, abs(a))
        assert abs(m.params["b"] - b) <= 1e-9 * max(1, abs(b))


def test_platt_constant_mu_keeps_widths():
    m = calib.fit_platt(nb_fc(np.full(10, 2.0)), np.arange(10.0))
    assert m.params == {"a": 1.0, "b": 2.5}


def test_platt_transforms_endpoints():
    fc = gauss_fc([[1.0, 3.0]], 0.5)
    m = calib.fit_platt(gauss_fc(np.arange(1.0, 6.0), 1.0), 2 * np.arange(1.0, 6.0) + 1)
    out = calib.apply_point_map(m, fc)
    pre = calib.identity_intervals(fc)
    np.testing.assert_allclose(out.lower, 2 * pre.lower + 1)
    np.testing.assert_allclose(out.upper, 2 * pre.upper + 1)
    np.testing.assert_allclose(out.mu_star, [[3.0, 7.0]])


def test_temperature_examples():
    mu = np.linspace(0.5, 7.0, 30)
    assert calib.fit_temp(nb_fc(mu), mu).params["T"] == pytest.approx(1.0)
    assert calib.fit_temp(nb_fc(mu), mu / 2).params["T"] == pytest.approx(2.0)
    assert calib.fit_temp(nb_fc(mu), np.zeros(30)).params["T"] == 1.0


def test_temperature_closed_form():
    rng = np.random.default_rng(3)
    mu = rng.gamma(1.0, 2.0, 500)
    y = rng.poisson(0.7 * mu).astype(float)
    t = calib.fit_temp(nb_fc(mu), y).params["T"]
    assert abs(t - np.sum(mu * mu) / np.sum(mu * y)) <= 1e-9 * t
    out = calib.fit_apply_temp(nb_fc(mu), y, nb_fc(mu[:4]))
    np.testing.assert_allclose(out.mu_star.ravel(), mu[:4] / t)


def test_isotonic_small_example():
    m = calib.fit_isotonic(nb_fc([1.0, 2.0, 3.0]), [3.0, 1.0, 2.0])
    assert m.params["values"] == [2.0, 2.0, 2.0]
    np.testing.assert_array_equal(m.params["values"], pava_partitions([3, 1, 2], [1, 1, 1]))


def test_isotonic_sorted_input_is_identity():
    x = np.array([0.5, 1.0, 2.0, 4.0])
    m = calib.fit_isotonic(nb_fc(x), x)
    assert m.params["values"] == x.tolist() and m.params["knots"] == x.tolist()


def test_isotonic_matches_pava_oracles():
    rng = np.random.default_rng(12)
    for trial in range(50):
        n = int(rng.integers(1, 31))
        x = np.sort(rng.uniform(0.1, 5.0, n))
        y = rng.poisson(x).astype(float)
        m = calib.fit_isotonic(nb_fc(x), y)
        np.testing.assert_allclose(m.params["values"], pava_minmax(y, np.ones(n)), rtol=0, atol=1e-12)
        if n <= 10:
            np.testing.assert_allclose(m.params["values"], pava_partitions(y, np.ones(n)), atol=1e-12)


def test_isotonic_pools_tied_mu():
    m = calib.fit_isotonic(nb_fc([1.0, 1.0, 2.0]), [4.0, 0.0, 3.0])
    assert m.params["knots"] == [1.0, 2.0] and m.params["values"] == [2.0, 3.0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 10), st.integers(0, 12)), min_size=1, max_size=40),
       st.lists(st.floats(0.0, 12.0), min_size=2, max_size=20))
def test_isotonic_monotone(pairs, test_points):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs], dtype=float)
    m = calib.fit_isotonic(nb_fc(x), y)
    assert np.all(np.diff(m.params["values"]) >= 0) and np.all(np.diff(m.params["knots"]) > 0)
    v = np.sort(np.array(test_points))
    assert np.all(np.diff(calib.isotonic_map(m.params["knots"], m.params["values"], v)) >= 0)
    out = calib.apply_point_map(m, nb_fc(v + 1e-3))
    assert np.all(np.diff(out.mu_star.ravel()) >= 0)


def test_histbin_identity_and_shift():
    mu = np.linspace(0.5, 7.0, 30)
    assert calib.fit_histbin(nb_fc(mu), mu).params["corrections"] == [0.0] * 15
    out = calib.fit_apply_histbin(gauss_fc(mu, 1.0), mu + 2.0, gauss_fc([[1.0, 9.0]], 1.0), n_bins=1)
    pre = calib.identity_intervals(gauss_fc([[1.0, 9.0]], 1.0))
    np.testing.assert_allclose(out.mu_star, [[3.0, 11.0]])
    np.testing.assert_allclose(out.lower, pre.lower + 2.0)


def test_histbin_six_point_example():
    x = np.array([1.0, 2.0, 3.0, 10.0, 11.0, 12.0])
    y = np.array([2.0, 4.0, 3.0, 9.0, 9.0, 12.0])
    m = calib.fit_histbin(gauss_fc(x, 1.0), y, n_bins=2)
    # by hand: bin 0 mean y 3, mean x 2 -> +1; bin 1 mean y 10, mean x 11 -> -1
    assert m.thresholds == [6.5]
    assert m.params["corrections"] == [1.0, -1.0]
    out = calib.apply_point_map(m, gauss_fc([[0.0, 6.0, 7.0, 20.0]], 1.0))
    assert out.mu_star.tolist() == [[1.0, 7.0, 6.0, 19.0]]


# -- common properties ---------------------------------------------------------

@pytest.mark.parametrize("kind", calib.ALL_KINDS)
def test_every_kind_valid_and_deterministic(sparse_run, kind):
    fc_cal, y_cal, fc_test, _ = sparse_run
    a = calib.apply_calibrator(calib.fit_calibrator(kind, fc_cal, y_cal), fc_test)
    b = calib.apply_calibrator(calib.fit_calibrator(kind, fc_cal, y_cal), fc_test)
    assert same(a, b)
    assert np.all(a.lower <= a.upper) and np.all(a.lower >= 0)
    assert a.calibrator_id == kind and a.mu_star.shape == fc_test.dist.shape


@pytest.mark.parametrize("kind", calib.ALL_KINDS)
def test_model_json_round_trip(tmp_path, sparse_run, kind):
    fc_cal, y_cal, fc_test, _ = sparse_run
    model = calib.fit_calibrator(kind, fc_cal, y_cal)
    model.write(tmp_path / "m.json")
    back = CalibratorModel.read(tmp_path / "m.json")
    assert back.to_dict() == model.to_dict()
    assert same(calib.apply_calibrator(back, fc_test), calib.apply_calibrator(model, fc_test))


def test_intervals_csv_round_trip(tmp_path, sparse_run):
    fc_cal, y_cal, fc_test, _ = sparse_run
    out = calib.apply_calibrator(calib.fit_calibrator("SAUC", fc_cal, y_cal), fc_test)
    out.write(tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_text().startswith("node_id,timestep,mu_star,lower,upper\n")
    back = CalibratedIntervals.read(tmp_path / "i.csv")
    assert same(out, back) and back.t0 == out.t0 and back.node_ids == out.node_ids


# -- empirical CDF -------------------------------------------------------------

def test_empirical_cdf_within_dkw_band():
    rng = np.random.default_rng(21)
    n = 10_000
    mu = rng.normal(0, 3, (1, n))
    sigma = rng.uniform(0.5, 2.0, (1, n))
    y = rng.normal(mu, sigma)
    curve = calib.empirical_cdf_curve(gauss_fc(mu, sigma), y)
    eps = math.sqrt(math.log(2 / 0.05) / (2 * n))
    assert len(curve) == 99
    assert max(abs(p - f) for p, f in curve) <= eps


def test_empirical_cdf_extremes():
    curve = calib.empirical_cdf_curve(gauss_fc([[0.0, 1.0]], 1.0), [[-100.0, -100.0]])
    assert all(f == 1.0 for _, f in curve)
    curve = calib.empirical_cdf_curve(gauss_fc([[0.0]], 1.0), [[0.0]])     # F = 0.5
    assert all(f == (1.0 if p >= 0.5 else 0.0) for p, f in curve)
