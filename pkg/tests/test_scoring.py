import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import trapezoid

from hypad import hypgeo, scoring
from hypad.errors import ConfigError, ShapeError


def test_re_pointwise_examples():
    x = np.array([1.0, 2.0, 3.0])
    assert scoring.re_pointwise(x, x) == 0.0
    assert scoring.re_pointwise(x, np.array([1.0, 2.0, 4.0])) == pytest.approx(1 / 3)
    assert scoring.re_pointwise(2 * x, 2 * np.array([1.0, 2.0, 4.0])) == pytest.approx(2 / 3)
    with pytest.raises(ShapeError):
        scoring.re_pointwise(x, x[:2])


def test_re_area_examples():
    x = np.zeros(10)
    assert scoring.re_area(x, x) == 0.0
    assert scoring.re_area(x + 1, x) == pytest.approx(9 / 20)
    r = np.r_[np.ones(5), -np.ones(5)]
    assert scoring.re_area(r, np.zeros(10)) < scoring.re_pointwise(r, np.zeros(10))


def test_re_area_hand_trapezoid_and_padding():
    r = np.arange(13.0)
    padded = np.r_[r, np.full(7, r[-1])]
    expected = np.mean([abs(trapezoid(padded[i:i + 10])) / 20 for i in (0, 10)])
    assert scoring.re_area(r, np.zeros(13)) == pytest.approx(expected)


def test_re_dtw_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert scoring.re_dtw(a, a) == 0.0
    assert scoring.re_dtw(a, np.array([2.0, 3.0, 4.0])) == 2.0
    two = np.stack([np.c_[a, a], np.c_[a, a + 1]])
    np.testing.assert_allclose(scoring.re_dtw(two, np.stack([np.c_[a, a]] * 2)), [0.0, 2.0])


def test_batched_variants_match_single(rng):
    X, Y = rng.normal(size=(5, 20, 2)), rng.normal(size=(5, 20, 2))
    for fn in (scoring.re_pointwise, scoring.re_area, scoring.re_dtw):
        batch = fn(X, Y)
        np.testing.assert_allclose(batch, [fn(X[i], Y[i]) for i in range(5)])


@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-5, 5)))
def test_dtw_at_most_pointwise_total(x):
    y = np.roll(x, 1)
    assert scoring.re_dtw(x, y) <= scoring.re_pointwise(x, y) * len(x) + 1e-9


def test_z_normalize():
    np.testing.assert_allclose(scoring.z_normalize([1.0, 2.0, 3.0]), [-1.224744871391589, 0, 1.224744871391589])
    np.testing.assert_array_equal(scoring.z_normalize([4.0] * 5), 0.0)
    with pytest.raises(ValueError):
        scoring.z_normalize([1.0])


@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e3, 1e3)))
def test_z_normalize_moments(s):
    z = scoring.z_normalize(s)
    if s.std() >= 1e-12:
        assert abs(z.mean()) < 1e-9 and abs(z.std() - 1) < 1e-9


def test_combine_scores():
    assert scoring.combine_scores(2.0, 1.5) == 3.0
    assert scoring.combine_scores(2.0, 1.5, 1.0) == 0.0
    assert scoring.combine_scores(2.0, 1.5, 0.5) == 1.5
    zr, zc = np.array([0.3, -1.0, 2.0]), np.array([1.0, 2.0, -0.5])
    np.testing.assert_array_equal(scoring.combine_scores(zr, zc, np.zeros(3)), scoring.combine_scores(zr, zc))


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 10), st.floats(0, 1))
def test_combine_monotone_in_re(a, delta, zc, u):
    assert scoring.combine_scores(a + delta, zc, u) >= scoring.combine_scores(a, zc, u)


def test_aggregate_examples():
    out = scoring.aggregate_to_timestamps([7.0], [0], T=5, width=5)
    np.testing.assert_array_equal(out, 7.0)
    # T=3, width=2: windows at 0 and 1; timestamp 1 is covered by both
    out = scoring.aggregate_to_timestamps([1.0, 5.0], [0, 1], T=3, width=2)
    np.testing.assert_array_equal(out, [1.0, 3.0, 5.0])
    out = scoring.aggregate_to_timestamps([1.0, 5.0, 2.0], [0, 1, 2], T=5, width=3)
    assert out[2] == 2.0 and len(out) == 5
    assert scoring.aggregate_to_timestamps([1.0, 5.0, 2.0], [0, 1, 2], 5, 3, how="mean")[2] == pytest.approx(8 / 3)
    with pytest.raises(ConfigError):
        scoring.aggregate_to_timestamps([1.0], [0], 3, 3, how="mode")


@given(st.integers(3, 60), st.integers(1, 10), st.integers(1, 4), st.randoms(use_true_random=False))
def test_aggregate_matches_direct_median(T, width, stride, rnd):
    if T < width:
        return
    origins = np.arange(0, T - width + 1, stride)
    scores = np.array([rnd.uniform(-1, 1) for _ in origins])
    out = scoring.aggregate_to_timestamps(scores, origins, T, width)
    for t in range(T):
        cover = [s for o, s in zip(origins, scores) if o <= t < o + width]
        if cover:
            assert out[t] == pytest.approx(np.median(cover))
        else:
            assert np.isfinite(out[t])


def test_detect_examples(rng):
    assert scoring.detect_intervals(np.ones(30)).intervals == []
    trace = rng.normal(scale=0.05, size=200)
    trace[50] = 5.0
    det = scoring.detect_intervals(trace, k=3)
    scan = [t for t in range(200) if trace[t] > trace.mean() + 3 * trace.std()]
    assert [(a, b) for a, b, _ in det.intervals] == [(min(scan), max(scan))] and scan == [50]
    two = np.zeros(40)
    two[[10, 11, 13, 14]] = 10.0
    assert [(a, b) for a, b, _ in scoring.detect_intervals(two, k=1, min_gap=1).intervals] == [(10, 14)]
    assert len(scoring.detect_intervals(two, k=1, min_gap=0).intervals) == 2
    with pytest.raises(ValueError):
        scoring.detect_intervals(np.array([1.0, np.nan]))


@given(arrays(np.float64, st.integers(2, 80), elements=st.floats(-10, 10)), st.floats(0, 3), st.integers(0, 3))
def test_detect_interval_properties(trace, k, gap):
    det = scoring.detect_intervals(trace, k=k, min_gap=gap)
    theta = det.threshold
    prev_end = -10
    for s, e, peak in det.intervals:
        assert s <= e and s > prev_end + gap
        assert trace[s] > theta and trace[e] > theta
        assert peak == trace[s:e + 1].max()
        if s > 0:
            assert trace[s - 1] <= theta
        if e < len(trace) - 1:
            assert trace[e + 1] <= theta
        below = np.flatnonzero(trace[s:e + 1] <= theta)
        if below.size:  # only merged gaps of at most min_gap points
            runs = np.split(below, np.flatnonzero(np.diff(below) > 1) + 1)
            assert max(len(r) for r in runs) <= gap
        prev_end = e


def test_uncertainty_profile():
    rng = np.random.default_rng(0)
    h = hypgeo.clamp_to_ball(rng.normal(size=(200, 3)) * 0.4)
    p = scoring.uncertainty_profile(h, h)
    np.testing.assert_allclose(p.mean_cosine[p.occupied], 0.0, atol=1e-12)
    assert p.count.sum() == 200 and np.all(np.isnan(p.mean_cosine[~p.occupied]))
    np.testing.assert_allclose(np.r_[p.bin_lo, p.bin_hi[-1]], np.linspace(0, 1, 11))
    q = scoring.uncertainty_profile(np.array([[0.5, 0.0]]), np.array([[0.0, 0.5]]))
    assert q.mean_cosine[q.occupied][0] == pytest.approx(1.0)
    z = scoring.uncertainty_profile(np.array([[0.0, 0.0], [0.1, 0]]), np.array([[0.2, 0.0], [0.1, 0]]))
    assert z.skipped == 1 and z.count.sum() == 1


def fake_outputs(rng, n=60, w=10, hyperbolic=True):
    windows = rng.normal(size=(n, w, 1))
    rec = windows + rng.normal(scale=0.1, size=windows.shape)
    critic = rng.normal(size=n)
    h = hypgeo.clamp_to_ball(rng.normal(size=(n, 3)) * 0.3) if hyperbolic else None
    h_rec = hypgeo.clamp_to_ball(h + rng.normal(scale=0.05, size=h.shape)) if hyperbolic else None
    return windows, rec, critic, h, h_rec


@pytest.mark.parametrize("mode", scoring.SCORE_MODES)
def test_build_trace_contract(rng, mode, tmp_path):
    hyper = mode.startswith("hyperbolic")
    windows, rec, critic, h, h_rec = fake_outputs(rng, hyperbolic=hyper)
    T = 60 + 10 - 1
    ts = np.arange(T) + 1000
    tr = scoring.build_trace(mode, ts, np.arange(60), 10, windows, rec, critic, h, h_rec)
    for arr in (tr.re_raw, tr.critic_raw, tr.z_re, tr.z_critic, tr.combined):
        assert arr.shape == (T,)
    assert (tr.uncertainty is not None) == hyper
    if hyper:
        assert np.all((tr.uncertainty >= 0) & (tr.uncertainty <= 1))
    scoring.write_trace_csv(tr, tmp_path / "s.csv", digest="abc")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("# config_digest=abc")
    assert lines[1] == "timestamp,re,critic,uncertainty,combined,flagged"
    unc_col = lines[2].split(",")[3]
    assert (unc_col != "") == hyper
    scoring.write_intervals_csv(tr.detected, tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_text().startswith("start,end,score_peak")


def test_uncertainty_variant_differs_only_by_certainty(rng):
    windows, rec, critic, h, h_rec = fake_outputs(rng)
    args = (np.arange(69), np.arange(60), 10, windows, rec, critic, h, h_rec)
    a = scoring.build_trace("hyperbolic", *args)
    b = scoring.build_trace("hyperbolic_uncertainty", *args)
    np.testing.assert_allclose(b.combined, a.combined * (1 - b.uncertainty))


def test_critic_sign_flipped(rng):
    windows, rec, critic, *_ = fake_outputs(rng, hyperbolic=False)
    tr = scoring.build_trace("euclidean_pointwise", np.arange(69), np.arange(60), 10, windows, rec, critic)
    one = scoring.aggregate_to_timestamps(-critic, np.arange(60), 69, 10)
    np.testing.assert_array_equal(tr.critic_raw, one)


def test_mode_errors(rng):
    windows, rec, critic, *_ = fake_outputs(rng, hyperbolic=False)
    with pytest.raises(ConfigError):
        scoring.build_trace("hyperbolic", np.arange(69), np.arange(60), 10, windows, rec, critic)
    with pytest.raises(ConfigError):
        scoring.training_mode("cosine")
