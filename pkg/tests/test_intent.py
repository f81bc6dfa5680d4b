import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from helpers import FRIED_DELTA, FRIED_MODEL, FRIED_P, FRIED_PITCH, random_model
from xctrl.data import BinKey, apply_iqr_mask, make_bin
from xctrl.gmm import GaussianComponent, MixtureModel
from xctrl.intent import (BinScore, RankingRow, ScoringError, StrikeZone, aggregate_xctrl, density_grid,
                          euclidean_delta, pitcher_overall, posterior, rank_bins, ranking_csv, score_bin,
                          score_pitch, score_points, total_variation, zone_sidecar)


def iso(weight, mean, var=4.0):
    return GaussianComponent(weight, mean, (var, 0.0, var))


def test_euclidean_delta():
    assert euclidean_delta((0, 0), (0, 0)) == 0
    assert euclidean_delta((0, 0), (3, 4)) == 5
    assert euclidean_delta((-6, 24), (6, 30)) == pytest.approx(math.sqrt(180), rel=1e-15)


def test_single_component_posterior_is_one():
    m = MixtureModel((iso(1.0, (0, 30)),))
    for pitch in [(0, 30), (50, -20), (1e4, 1e4)]:
        assert posterior(pitch, m).probabilities.tolist() == [1.0]


def test_symmetric_posterior_is_half():
    m = MixtureModel((iso(0.5, (-5, 30)), iso(0.5, (5, 30))))
    np.testing.assert_allclose(posterior((0, 12), m).probabilities, [0.5, 0.5], atol=1e-15)


def test_fried_fixture_reproduces_worked_example():
    post = posterior(FRIED_PITCH, FRIED_MODEL)
    np.testing.assert_allclose(post.probabilities, FRIED_P, atol=0.005)
    np.testing.assert_allclose(post.distances, FRIED_DELTA, atol=0.05)
    assert round(score_pitch(FRIED_PITCH, FRIED_MODEL).xctrl, 2) == 8.76


def test_fried_dot_product():
    assert aggregate_xctrl(FRIED_P, FRIED_DELTA) == pytest.approx(8.7579, abs=5e-5)
    assert round(aggregate_xctrl(FRIED_P, FRIED_DELTA), 2) == 8.76


def test_pitch_at_mean_scores_zero():
    m = MixtureModel((iso(1.0, (2, 31)),))
    assert score_pitch((2, 31), m).xctrl == 0.0


def brute_force(pitch, model):
    dens = [c.weight * math.exp(-0.5 * float(np.subtract(pitch, c.mean) @ np.linalg.inv(c.cov_matrix)
                                              @ np.subtract(pitch, c.mean)))
            / (2 * math.pi * math.sqrt(np.linalg.det(c.cov_matrix))) for c in model.components]
    tot = sum(dens)
    if not tot > 1e-250:
        return None, None
    p = [d / tot for d in dens]
    return p, sum(pk * math.dist(pitch, c.mean) for pk, c in zip(p, model.components))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_against_independent_bayes_evaluation(seed):
    r = np.random.default_rng(seed)
    m = random_model(r)
    pitch = (r.uniform(-20, 20), r.uniform(5, 55))
    p, x = brute_force(pitch, m)
    assume(p is not None)  # the direct fraction underflowed
    post = posterior(pitch, m)
    np.testing.assert_allclose(post.probabilities, p, atol=1e-9)
    assert score_pitch(pitch, m).xctrl == pytest.approx(x, abs=1e-9)
    assert min(post.distances) - 1e-12 <= score_pitch(pitch, m).xctrl <= max(post.distances) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(-100, 100))
def test_translation_invariance(seed, tx, tz):
    r = np.random.default_rng(seed)
    m = random_model(r)
    pitch = np.array([r.uniform(-20, 20), r.uniform(5, 55)])
    moved = MixtureModel.from_arrays(m.weights, m.means + [tx, tz], m.covs)
    a, b = score_pitch(pitch, m), score_pitch(pitch + [tx, tz], moved)
    np.testing.assert_allclose(a.posterior.probabilities, b.posterior.probabilities, atol=1e-9)
    assert a.xctrl == pytest.approx(b.xctrl, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * math.pi))
def test_far_pitches_concentrate_posterior(seed, angle):
    m = random_model(np.random.default_rng(seed))
    far = (1e5 * math.cos(angle), 30 + 1e5 * math.sin(angle))
    post = posterior(far, m)
    assert np.isfinite(post.probabilities).all()
    assert post.probabilities.max() > 1 - 1e-6


def test_score_bin_includes_outliers():
    rng = np.random.default_rng(3)
    pts = np.vstack([rng.normal([0, 30], 1.0, (40, 2)), [[40.0, 30.0]]])
    b = apply_iqr_mask(make_bin(pts))
    assert not b.fit_mask[-1]
    m = MixtureModel((iso(1.0, (0, 30)),))
    s = score_bin(b, m, keep_per_pitch=True)
    assert s.n_scored == 41
    assert s.mean_xctrl == pytest.approx(np.mean([p.xctrl for p in s.per_pitch]), abs=1e-12)
    assert s.per_pitch[-1].was_fit_outlier and s.per_pitch[-1].xctrl == pytest.approx(40.0)


def test_score_bin_one_pitch_and_empty():
    m = MixtureModel((iso(1.0, (0, 30)),))
    assert score_bin(make_bin(np.array([[0.0, 30.0]])), m).mean_xctrl == 0.0
    with pytest.raises(ScoringError):
        score_bin(make_bin(np.empty((0, 2))), m)


def test_score_bin_translation_invariant():
    rng = np.random.default_rng(5)
    pts = rng.normal([0, 30], 3, (100, 2))
    m = random_model(rng, 3)
    t = np.array([7.0, -4.0])
    moved = MixtureModel.from_arrays(m.weights, m.means + t, m.covs)
    assert score_bin(make_bin(pts), m).mean_xctrl == pytest.approx(score_bin(make_bin(pts + t), moved).mean_xctrl,
                                                                   abs=1e-9)


def _bs(hand, value, n=300, pid="p"):
    return BinScore(BinKey(pid, 2023, "FF", hand), value, n)


def test_pitcher_overall():
    assert pitcher_overall(_bs("L", 8.0), _bs("R", 10.0)).xctrl == 9.0
    assert pitcher_overall(_bs("L", 7.05), _bs("R", 7.05)).xctrl == pytest.approx(7.05)
    one = pitcher_overall(None, _bs("R", 9.3))
    assert one.xctrl == 9.3 and one.partial and one.hands == "R"
    w = pitcher_overall(_bs("L", 8.0, 100), _bs("R", 10.0, 300), weighted=True)
    assert w.xctrl == pytest.approx(9.5)
    with pytest.raises(ScoringError):
        pitcher_overall(_bs("L", 8.0, pid="a"), _bs("R", 9.0, pid="b"))


def test_rank_bins():
    rows = rank_bins([_bs("R", 9.0, pid="B"), _bs("R", 7.0, pid="A")])
    assert [r.pitcher_id for r in rows] == ["A", "B"]
    rows = rank_bins([_bs("R", 8.0, 300, "x"), _bs("R", 8.0, 400, "y")])
    assert [r.pitcher_id for r in rows] == ["y", "x"]
    assert len(rank_bins([_bs("R", 8.0)])) == 1


def test_ranking_csv_two_decimals():
    text = ranking_csv([RankingRow("a", 2023, "FF", 7.054, 300, 6.5, 7.51), RankingRow("b", 2023, "FF", 8.0, 10)])
    lines = text.splitlines()
    assert lines[0] == "pitcher_id,season,pitch_type,xctrl_in,ci_low,ci_high,n"
    assert lines[1] == "a,2023,FF,7.05,6.50,7.51,300"
    assert lines[2] == "b,2023,FF,8.00,,,10"


def test_density_grid_peak_and_mass():
    m = MixtureModel((iso(1.0, (0, 30), 4.0),))
    g = density_grid(m, (-10, 10), (20, 40), 21)
    j, i = np.unravel_index(np.argmax(g.density), g.density.shape)
    assert (g.xs[i], g.zs[j]) == (pytest.approx(0), pytest.approx(30))
    fine = density_grid(m, (-12, 12), (18, 42), 400)
    assert fine.mass == pytest.approx(1.0, abs=1e-3)
    masses = [density_grid(m, (-w, w), (30 - w, 30 + w), 200).mass for w in (1, 2, 4, 8)]
    assert all(a < b for a, b in zip(masses, masses[1:])) and masses[-1] <= 1.0


def test_density_grid_errors_and_csv():
    m = MixtureModel((iso(1.0, (0, 30)),))
    with pytest.raises(ValueError):
        density_grid(m, (0, 1), (0, 1), 1)
    with pytest.raises(ValueError):
        density_grid(m, (1, 1), (0, 1), 10)
    g = density_grid(m, (-5, 5), (25, 35), (4, 3))
    assert g.density.shape == (3, 4) and len(g.to_csv().splitlines()) == 13
    assert '"left_in": -8.5' in zone_sidecar(StrikeZone(), g)


def test_total_variation_bounds():
    a = MixtureModel((iso(1.0, (0, 30)),))
    b = MixtureModel((iso(1.0, (30, 30)),))
    assert total_variation(a, a, (-20, 50), (10, 50)) == 0.0
    assert total_variation(a, b, (-20, 50), (10, 50)) == pytest.approx(1.0, abs=1e-3)


def test_vectorised_scores_match_single():
    rng = np.random.default_rng(9)
    m = random_model(rng, 4)
    pts = rng.normal([0, 30], 8, (50, 2))
    np.testing.assert_allclose(score_points(pts, m), [score_pitch(p, m).xctrl for p in pts], atol=1e-12)
