"""Closed-form scores: benchmark geometric mean, VIEScore combinator, alignment
accuracy, facial consistency, and the differential preference loss with its gradient."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .errors import DimensionMismatch, EmptyGroundTruth, MissingMetric, ZeroVector
from .models import AtomicTask, MetricVector, PreferencePair
from .taxonomy import Metric


def round_half_up(x: float, places: int = 2) -> float:
    """Decimal rounding as printed in report tables (2.675 -> 2.68, not banker's rounding)."""
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


# -- benchmark score ----------------------------------------------------------


def geometric_score(v: MetricVector, metrics: Iterable) -> float:
    """Geometric mean of the applicable metrics; any zero component gives 0."""
    values = []
    for m in metrics:
        x = v.get(Metric(m))
        if x is None:
            raise MissingMetric(f"metric {Metric(m).value} missing from vector")
        values.append(x)
    if not values:
        raise MissingMetric("empty metric set")
    if any(x == 0 for x in values):
        return 0.0
    # a fixed multiplication order keeps the result independent of metric order
    return math.prod(sorted(values)) ** (1.0 / len(values))


def viescore_overall(sc: float, pq: float) -> float:
    if not (0 <= sc <= 10 and 0 <= pq <= 10):
        raise ValueError(f"SC and PQ must lie in [0, 10], got {sc}, {pq}")
    return math.sqrt(sc * pq)


@dataclass(frozen=True)
class VieScoreSummary:
    sc: float
    pq: float
    overall: float
    n: int

    @property
    def overall_bound(self) -> float:
        """sqrt(mean SC * mean PQ); the mean of per-sample overalls never exceeds it."""
        return math.sqrt(self.sc * self.pq)


def viescore_dataset(sc: Sequence[float], pq: Sequence[float]) -> VieScoreSummary:
    if len(sc) != len(pq) or not sc:
        raise ValueError("SC and PQ need the same, non-zero length")
    overall = [viescore_overall(s, p) for s, p in zip(sc, pq)]
    n = len(sc)
    return VieScoreSummary(math.fsum(sc) / n, math.fsum(pq) / n, math.fsum(overall) / n, n)


# -- alignment accuracy -------------------------------------------------------


@dataclass(frozen=True)
class AccuracyParams:
    w: float = 0.5

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("redundancy weight w must be >= 0")


def _task_set(tasks) -> set:
    return {t if isinstance(t, AtomicTask) else AtomicTask(*t) for t in tasks}


def alignment_accuracy(t_gt, t_gen, params: AccuracyParams = AccuracyParams()) -> float:
    """Coverage of ground-truth atomic tasks minus ``w`` times the extraneous ones,
    both normalized by the ground-truth count. Not clamped; negative values are kept.

    Tasks may be AtomicTask values or (object, action) pairs; duplicates collapse.
    """
    gt, gen = _task_set(t_gt), _task_set(t_gen)
    if not gt:
        raise EmptyGroundTruth("ground truth has no atomic tasks")
    return len(gt & gen) / len(gt) - params.w * len(gen - gt) / len(gt)


# -- facial consistency -------------------------------------------------------


def facial_consistency(e1: Sequence[float], e2: Sequence[float]) -> float:
    if len(e1) != len(e2):
        raise DimensionMismatch(f"embedding sizes differ: {len(e1)} vs {len(e2)}")
    n1 = math.sqrt(math.fsum(x * x for x in e1))
    n2 = math.sqrt(math.fsum(x * x for x in e2))
    if n1 == 0 or n2 == 0:
        raise ZeroVector("cosine similarity is undefined for a zero embedding")
    dot = math.fsum(a * b for a, b in zip(e1, e2))
    return max(-1.0, min(1.0, dot / (n1 * n2)))


def mean_facial_consistency(pairs: Iterable[tuple]) -> float:
    values = [facial_consistency(a, b) for a, b in pairs]
    if not values:
        raise ValueError("no embedding pairs")
    return math.fsum(values) / len(values)


# -- preference loss ----------------------------------------------------------


@dataclass(frozen=True)
class D2poGrad:
    logp_theta_w: float
    logp_ref_w: float
    logp_theta_l: float
    logp_ref_l: float

    def as_tuple(self) -> tuple:
        return (self.logp_theta_w, self.logp_ref_w, self.logp_theta_l, self.logp_ref_l)


def policy_advantage(pair: PreferencePair, which: str) -> float:
    """beta * (log pi_theta(p) - log pi_ref(p)) for the winner or the loser."""
    if which == "winner":
        return pair.beta * (pair.logp_theta_w - pair.logp_ref_w)
    if which == "loser":
        return pair.beta * (pair.logp_theta_l - pair.logp_ref_l)
    raise ValueError(f"which must be 'winner' or 'loser', got {which!r}")


def advantage_margin(pair: PreferencePair) -> float:
    return policy_advantage(pair, "winner") - policy_advantage(pair, "loser")


def softplus(x: float) -> float:
    """log(1 + e^x) without overflow."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def d2po_loss(pair: PreferencePair) -> float:
    """-log sigmoid(A_w - A_l), evaluated as softplus(-(A_w - A_l))."""
    return softplus(-advantage_margin(pair))


def d2po_grad(pair: PreferencePair) -> D2poGrad:
    g = pair.beta * sigmoid(-advantage_margin(pair))  # beta * (1 - sigmoid(margin))
    return D2poGrad(logp_theta_w=-g, logp_ref_w=g, logp_theta_l=g, logp_ref_l=-g)


def mean_d2po_loss(pairs: Iterable[PreferencePair]) -> float:
    losses = [d2po_loss(p) for p in pairs]
    if not losses:
        raise ValueError("no preference pairs")
    return math.fsum(losses) / len(losses)


def finite_difference_grad(pair: PreferencePair, h: float = 1e-5) -> tuple:
    """Central differences of d2po_loss in each of the four log-probabilities.

    Perturbations are applied to the raw values, so the validity check of
    PreferencePair (log-probs <= 0) is bypassed on purpose.
    """
    base = list(pair.logps)

    def loss_at(logps):
        tw, rw, tl, rl = logps
        return softplus(-pair.beta * ((tw - rw) - (tl - rl)))

    out = []
    for i in range(4):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        out.append((loss_at(up) - loss_at(down)) / (2 * h))
    return tuple(out)


def gradient_check(pair: PreferencePair, h: float = 1e-5, rel_tol: float = 1e-6) -> bool:
    analytic = d2po_grad(pair).as_tuple()
    numeric = finite_difference_grad(pair, h)
    for a, n in zip(analytic, numeric):
        scale = max(abs(a), abs(n))
        if scale == 0:
            continue
        if abs(a - n) > rel_tol * scale:
            return False
    return True
