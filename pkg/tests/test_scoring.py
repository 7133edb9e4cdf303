import math
import random

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from editforge import scoring
from editforge.errors import DimensionMismatch, EmptyGroundTruth, MissingMetric, ZeroVector
from editforge.models import AtomicTask, MetricVector, PreferencePair
from editforge.scoring import AccuracyParams
from editforge.taxonomy import BASIC_METRICS, COMPLEX_METRICS, Metric

mpmath.mp.dps = 50
scores = st.floats(0, 10, allow_nan=False)


def mp_geo(values):
    if any(v == 0 for v in values):
        return mpmath.mpf(0)
    prod = mpmath.fprod([mpmath.mpf(v) for v in values])
    return prod ** (mpmath.mpf(1) / len(values))


def mp_loss(beta, tw, rw, tl, rl):
    margin = mpmath.mpf(beta) * ((mpmath.mpf(tw) - rw) - (mpmath.mpf(tl) - rl))
    return mpmath.log(1 + mpmath.exp(-margin))


def pair(beta, tw, rw, tl, rl):
    return PreferencePair("ctx", beta, tw, rw, tl, rl)


# -- geometric score ----------------------------------------------------------


def test_geometric_examples():
    assert scoring.geometric_score(MetricVector(8, 8, 8), BASIC_METRICS) == pytest.approx(8.0, abs=1e-15)
    assert round(scoring.geometric_score(MetricVector(9, 7, 8, 8), COMPLEX_METRICS), 4) == 7.9686
    assert scoring.geometric_score(MetricVector(9, 0, 8), BASIC_METRICS) == 0.0


def test_geometric_missing_metric():
    with pytest.raises(MissingMetric):
        scoring.geometric_score(MetricVector(9, 7, 8), COMPLEX_METRICS)
    with pytest.raises(MissingMetric):
        scoring.geometric_score(MetricVector(9, 7, 8), [])


@given(scores, scores, scores, scores)
def test_geometric_matches_mp_and_bounds(a, b, c, d):
    v = MetricVector(a, b, c, d)
    got = scoring.geometric_score(v, COMPLEX_METRICS)
    want = mp_geo([a, b, c, d])
    assert abs(got - float(want)) <= 1e-12 * max(1.0, float(want))
    assert min(a, b, c, d) - 1e-12 <= got <= max(a, b, c, d) + 1e-12


@given(scores, scores, scores, st.floats(0, 1))
def test_geometric_monotone_and_permutation_invariant(a, b, c, bump):
    base = scoring.geometric_score(MetricVector(a, b, c), BASIC_METRICS)
    up = scoring.geometric_score(MetricVector(min(10, a + bump), b, c), BASIC_METRICS)
    assert up >= base - 1e-12
    metrics = [Metric.VQ, Metric.IF, Metric.NC]
    assert scoring.geometric_score(MetricVector(a, b, c), metrics) == pytest.approx(base, rel=1e-15, abs=0)


# -- VIEScore -----------------------------------------------------------------


def test_viescore_examples():
    assert scoring.viescore_overall(0, 7.3) == 0.0
    assert scoring.viescore_overall(9, 4) == 6.0
    with pytest.raises(ValueError):
        scoring.viescore_overall(11, 1)


@given(st.lists(st.tuples(scores, scores), min_size=1, max_size=30))
def test_viescore_dataset_bound(rows):
    summary = scoring.viescore_dataset([r[0] for r in rows], [r[1] for r in rows])
    assert summary.overall <= summary.overall_bound + 1e-9


# -- alignment accuracy -------------------------------------------------------


def test_alignment_examples():
    gt = {("car", "paint red"), ("sky", "make pink")}
    assert scoring.alignment_accuracy(gt, gt) == 1.0
    assert scoring.alignment_accuracy(gt, gt | {("dog", "add")}) == 0.75
    assert scoring.alignment_accuracy(gt, {("dog", "add"), ("cat", "remove")}) == -0.5


def test_alignment_weight_and_errors():
    gt = [("a", "b")]
    assert scoring.alignment_accuracy(gt, [("a", "b"), ("c", "d")], AccuracyParams(w=0.0)) == 1.0
    with pytest.raises(EmptyGroundTruth):
        scoring.alignment_accuracy([], gt)
    with pytest.raises(ValueError):
        AccuracyParams(w=-0.1)


def test_alignment_case_and_duplicate_invariance():
    rng = random.Random(0)
    words = ["car", "sky", "dog", "tree", "hat", "lamp"]
    actions = ["add", "remove", "paint red", "enlarge"]
    for _ in range(200):
        gt = [(rng.choice(words), rng.choice(actions)) for _ in range(rng.randint(1, 4))]
        gen = [(rng.choice(words), rng.choice(actions)) for _ in range(rng.randint(0, 5))]
        base = scoring.alignment_accuracy(gt, gen)
        shouted = [(o.upper(), "  " + a.title()) for o, a in gen]
        assert scoring.alignment_accuracy(gt, shouted) == base
        assert scoring.alignment_accuracy(gt, gen + gen[: rng.randint(0, len(gen))]) == base
        assert scoring.alignment_accuracy([AtomicTask(*t) for t in gt], gen) == base


# -- facial consistency -------------------------------------------------------


def test_facial_examples():
    assert scoring.facial_consistency([0.3, 0.4], [0.3, 0.4]) == pytest.approx(1.0, abs=1e-15)
    assert scoring.facial_consistency([1, 0], [0, 1]) == 0.0
    assert round(scoring.facial_consistency([1, 0], [math.sqrt(2) / 2, math.sqrt(2) / 2]), 5) == 0.70711
    with pytest.raises(ZeroVector):
        scoring.facial_consistency([0, 0], [1, 0])
    with pytest.raises(DimensionMismatch):
        scoring.facial_consistency([1, 0], [1, 0, 0])
    assert scoring.mean_facial_consistency([([1, 0], [1, 0]), ([1, 0], [0, 1])]) == 0.5


# -- preference loss ----------------------------------------------------------


def test_advantage_examples():
    assert scoring.policy_advantage(pair(1, -1, -1, -1, -1), "winner") == 0.0
    assert scoring.policy_advantage(pair(1, -1, -2, -1, -1), "winner") == 1.0
    assert scoring.policy_advantage(pair(2, -1, -1, -3, -1), "loser") == -4.0
    with pytest.raises(ValueError):
        scoring.policy_advantage(pair(1, -1, -1, -1, -1), "neither")


def test_loss_examples():
    assert abs(scoring.d2po_loss(pair(3.7, -2, -5, -1, -4)) - math.log(2)) <= 1e-12
    assert round(scoring.d2po_loss(pair(1, -1, -1, -2, -1)), 6) == 0.313262
    assert round(scoring.d2po_loss(pair(2, -1, -2, -3, -1)), 7) == 0.0024757


def test_grad_examples():
    g = scoring.d2po_grad(pair(1, -1, -1, -1, -1))
    assert g.as_tuple() == (-0.5, 0.5, 0.5, -0.5)
    g = scoring.d2po_grad(pair(1, 0, -800, -800, 0))
    assert all(abs(x) < 1e-300 for x in g.as_tuple())


@given(st.floats(0.01, 5), *[st.floats(-30, 0)] * 4)
def test_loss_matches_mp_oracle(beta, tw, rw, tl, rl):
    got = scoring.d2po_loss(pair(beta, tw, rw, tl, rl))
    want = mp_loss(beta, tw, rw, tl, rl)
    assert abs(got - float(want)) <= 1e-12 * max(1.0, float(want))
    assert got > 0 or float(want) < 1e-300
    margin = scoring.advantage_margin(pair(beta, tw, rw, tl, rl))
    if abs(margin) > 1e-9:  # below that the loss rounds to ln 2 in double precision
        assert (got < math.log(2)) == (margin > 0)


@given(st.floats(0.01, 5), *[st.floats(-30, 0)] * 4)
def test_grad_sign_structure(beta, tw, rw, tl, rl):
    g = scoring.d2po_grad(pair(beta, tw, rw, tl, rl))
    assert g.logp_theta_w == -g.logp_theta_l
    assert g.logp_ref_w == -g.logp_theta_w and g.logp_ref_l == -g.logp_theta_l


def test_softplus_sigmoid_extremes():
    assert scoring.softplus(1000.0) == 1000.0
    assert scoring.softplus(-1000.0) == 0.0
    assert scoring.sigmoid(-1000.0) == 0.0 and scoring.sigmoid(1000.0) == 1.0


def test_mean_loss():
    assert scoring.mean_d2po_loss([pair(1, -1, -1, -1, -1)] * 3) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(ValueError):
        scoring.mean_d2po_loss([])


def test_round_half_up():
    assert scoring.round_half_up(2.675, 2) == 2.68
    assert scoring.round_half_up(-30.025, 2) == -30.03
    assert scoring.round_half_up(7.96859, 4) == 7.9686
