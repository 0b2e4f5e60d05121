"""The complexity-compensated OOD score and the four ways of acting on it.

All quantities are bits per dimension; higher scores mean more out-of-distribution.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from .data import DIMS
from .errors import ValidationError


class Decision(str, Enum):
    OOD = "ood"
    IN_DISTRIBUTION = "in_distribution"


@dataclass(frozen=True)
class ScoreRecord:
    id: str
    nll_bpd: float
    complexity_bpd: float
    s: float
    decision: Decision | None = None

    @classmethod
    def build(cls, id: str, nll_bpd: float, complexity_bpd: float) -> ScoreRecord:
        return cls(id, nll_bpd, complexity_bpd, s_score(nll_bpd, complexity_bpd))


@dataclass(frozen=True)
class ScoreConfig:
    prior_m0: float = 0.5
    prior_m: float = 0.5

    def __post_init__(self):
        _check_priors(self.prior_m0, self.prior_m)
        if not math.isclose(self.prior_m0 + self.prior_m, 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValidationError(f"priors must sum to 1, got {self.prior_m0} + {self.prior_m}")


@dataclass(frozen=True)
class SignDecision:
    decision: Decision
    evidence: float


@dataclass(frozen=True)
class FprThreshold:
    threshold: float
    achieved_fpr: float
    achieved_tpr: float


def _finite(name: str, x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValidationError(f"{name} must be finite, got {x}")
    return x


def _check_priors(prior_m0: float, prior_m: float) -> None:
    if not (prior_m0 > 0 and prior_m > 0):
        raise ValidationError(f"priors must be positive, got {prior_m0}, {prior_m}")


def s_score(nll_bpd: float, complexity_bpd: float) -> float:
    """Model code length minus compressor code length."""
    return _finite("nll_bpd", nll_bpd) - _finite("complexity_bpd", complexity_bpd)


def bayes_ratio(nll_bpd: float, complexity_bpd: float, prior_m0: float = 0.5,
                prior_m: float = 0.5, dims: int = DIMS) -> float:
    """log2 of p(M0 | x) / p(M | x) divided by ``dims``."""
    _check_priors(prior_m0, prior_m)
    return s_score(nll_bpd, complexity_bpd) + math.log2(prior_m0 / prior_m) / dims


def decide_sign(s: float, cfg: ScoreConfig | None = None) -> SignDecision:
    """OOD iff s > 0; s == 0 carries no evidence and stays in-distribution."""
    s = _finite("s", s)
    return SignDecision(Decision.OOD if s > 0 else Decision.IN_DISTRIBUTION, abs(s))


def _check_quantile(q: float) -> None:
    if not 0 < q < 1:
        raise ValidationError(f"quantile must lie in (0, 1), got {q}")


def null_threshold(train_scores: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the ``ceil(q * n)``-th smallest score (1-based).

    ``q`` is taken at its shortest decimal repr so that e.g. 0.07 * 100 ranks 7, not 8.
    """
    _check_quantile(q)
    scores = sorted(_finite("score", s) for s in train_scores)
    if not scores:
        raise ValidationError("null_threshold needs at least one score")
    rank = math.ceil(Fraction(repr(float(q))) * len(scores))
    return scores[max(rank, 1) - 1]


def fpr_threshold(in_scores: Sequence[float], ood_scores: Sequence[float],
                  target_fpr: float) -> FprThreshold:
    """Smallest in-distribution score ``t`` with ``#{s > t} / n <= target_fpr``.

    Samples are flagged OOD when their score is strictly above the threshold.
    """
    if not 0 < target_fpr < 1:
        raise ValidationError(f"target_fpr must lie in (0, 1), got {target_fpr}")
    neg = sorted(_finite("score", s) for s in in_scores)
    pos = sorted(_finite("score", s) for s in ood_scores)
    if not neg or not pos:
        raise ValidationError("fpr_threshold needs non-empty in- and out-of-distribution scores")
    n = len(neg)
    allowed = math.floor(Fraction(repr(float(target_fpr))) * n)
    # the fraction above neg[i] is (n - bisect_right(neg, neg[i])) / n; pick the first that fits
    t = next(v for v in neg if n - bisect_right(neg, v) <= allowed)
    fpr = (n - bisect_right(neg, t)) / n
    tpr = (len(pos) - bisect_right(pos, t)) / len(pos)
    return FprThreshold(t, fpr, tpr)


def rank_topk(records: Iterable[ScoreRecord], k: int) -> list[str]:
    """Ids of the ``k`` highest scores, descending; ties go to the smaller id."""
    records = list(records)
    if not 0 <= k <= len(records):
        raise ValidationError(f"k must be in [0, {len(records)}], got {k}")
    ordered = sorted(records, key=lambda r: (-r.s, r.id))
    return [r.id for r in ordered[:k]]


def apply_threshold(records: Iterable[ScoreRecord], threshold: float) -> list[ScoreRecord]:
    return [
        ScoreRecord(r.id, r.nll_bpd, r.complexity_bpd, r.s,
                    Decision.OOD if r.s > threshold else Decision.IN_DISTRIBUTION)
        for r in records
    ]
