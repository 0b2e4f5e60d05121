"""Evaluation battery: AUROC, Pearson correlation, mean log-likelihoods, the
two-tail baseline and the pooling sweep, plus report serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .codecs import complexity_many
from .data import POOL_FACTORS, Dataset, NllRecord, avg_pool_upsample
from .density import ContextModel, nll_bpd_many
from .errors import UndefinedCorrelationError, ValidationError


@dataclass(frozen=True)
class RocInput:
    pos: Sequence[float]  # OOD
    neg: Sequence[float]  # in-distribution

    def __post_init__(self):
        if len(self.pos) == 0 or len(self.neg) == 0:
            raise ValidationError("AUROC needs at least one score in each class")


def auroc(data: RocInput | None = None, *, pos: Sequence[float] | None = None,
          neg: Sequence[float] | None = None) -> float:
    """P(pos > neg) + 0.5 P(pos == neg), via the Mann-Whitney rank sum."""
    if data is None:
        data = RocInput(pos, neg)  # type: ignore[arg-type]
    p = np.asarray(data.pos, dtype=np.float64)
    n = np.asarray(data.neg, dtype=np.float64)
    if np.isnan(p).any() or np.isnan(n).any():
        raise ValidationError("scores must not be NaN")
    ranks = rankdata(np.concatenate([p, n]), method="average")
    # ranks are half-integers, so these sums are exact in float64 for any realistic size
    u = ranks[: p.size].sum() - p.size * (p.size + 1) / 2
    return float(u / (p.size * n.size))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("pearson needs two 1-D sequences of equal length")
    if x.size < 3:
        raise ValidationError(f"pearson needs at least 3 points, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def two_tail_score(nll_bpd: float, mean_train_loglik_bpd: float) -> float:
    """|mean log-likelihood - log-likelihood|: far from the training mean in either direction."""
    return abs(mean_train_loglik_bpd - (-nll_bpd))


def mean_loglik(records: Iterable[NllRecord | float]) -> float:
    """Mean log2-likelihood per dimension (the negated mean NLL)."""
    vals = [r.nll_bpd if isinstance(r, NllRecord) else float(r) for r in records]
    if not vals:
        raise ValidationError("mean_loglik needs at least one record")
    return -math.fsum(vals) / len(vals)


@dataclass(frozen=True)
class PoolingRow:
    factor: int
    complexity_bpd: Mapping[str, float]
    nll_bpd: float


def pooling_sweep(noise: Dataset, model: ContextModel, codecs: Sequence[str],
                  factors: Sequence[int] = POOL_FACTORS, workers: int = 1) -> list[PoolingRow]:
    if len(noise) == 0:
        raise ValidationError("pooling sweep needs a non-empty dataset")
    rows = []
    for f in sorted(factors):
        pooled = [avg_pool_upsample(im, f) for im in noise]
        per_codec = {str(c): float(np.mean(complexity_many(pooled, c, workers))) for c in codecs}
        rows.append(PoolingRow(f, per_codec, float(np.mean(nll_bpd_many(model, pooled)))))
    return rows


@dataclass(frozen=True)
class ScatterPoint:
    complexity_bpd: float
    loglik_bpd: float
    dataset: str


def correlation_study(datasets: Sequence[Dataset], model: ContextModel, codec: str,
                      workers: int = 1) -> tuple[float, list[ScatterPoint]]:
    """Pearson r between complexity and log-likelihood, pooled over all datasets."""
    points: list[ScatterPoint] = []
    for ds in datasets:
        comp = complexity_many(ds.images, codec, workers)
        ll = -nll_bpd_many(model, ds)
        points.extend(ScatterPoint(c, float(l), ds.name) for c, l in zip(comp, ll))
    r = pearson([p.complexity_bpd for p in points], [p.loglik_bpd for p in points])
    return r, points


def histogram(values: Sequence[float], bins: int = 64) -> list[tuple[float, float, int]]:
    """Uniform bins over the observed range; rows are ``(left, right, count)``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("histogram of an empty sequence")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


@dataclass
class EvalReport:
    auroc_by_dataset: dict[str, dict[str, float]] = field(default_factory=dict)
    pearson_by_codec: dict[str, float] = field(default_factory=dict)
    mean_nll_by_dataset: dict[str, float] = field(default_factory=dict)  # mean log-likelihood, bits/dim
    t_baseline_auroc: dict[str, float] = field(default_factory=dict)
    pooling_table: list[PoolingRow] = field(default_factory=list)

    def validate(self) -> None:
        for name, cols in self.auroc_by_dataset.items():
            for col, v in cols.items():
                if not 0 <= v <= 1:
                    raise ValidationError(f"AUROC {name}/{col} = {v} outside [0, 1]")
        for v in self.t_baseline_auroc.values():
            if not 0 <= v <= 1:
                raise ValidationError(f"T-baseline AUROC {v} outside [0, 1]")
        for codec, r in self.pearson_by_codec.items():
            if not -1 <= r <= 1:
                raise ValidationError(f"pearson r for {codec} = {r} outside [-1, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pooling_table"] = [asdict(r) for r in self.pooling_table]
        return d

    def write(self, out_dir: str | Path) -> list[Path]:
        """Write ``summary.json`` and one CSV per populated section."""
        self.validate()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "summary.json"]
        written[0].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if self.auroc_by_dataset:
            cols = sorted({c for v in self.auroc_by_dataset.values() for c in v})
            written.append(_write_csv(out / "auroc.csv", ["dataset", *cols],
                                      ([k, *(v.get(c, "") for c in cols)]
                                       for k, v in sorted(self.auroc_by_dataset.items()))))
        if self.pearson_by_codec:
            written.append(_write_csv(out / "pearson.csv", ["codec", "pearson_r"],
                                      sorted(self.pearson_by_codec.items())))
        if self.mean_nll_by_dataset:
            written.append(_write_csv(out / "mean_loglik.csv", ["dataset", "mean_loglik_bpd"],
                                      sorted(self.mean_nll_by_dataset.items())))
        if self.pooling_table:
            written.append(write_pooling_csv(out / "pooling.csv", self.pooling_table))
        return written


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def write_pooling_csv(path: str | Path, rows: Sequence[PoolingRow]) -> Path:
    codecs = list(rows[0].complexity_bpd) if rows else []
    return _write_csv(Path(path), ["factor", *(f"complexity_{c}" for c in codecs), "nll_bpd"],
                      ([r.factor, *(r.complexity_bpd[c] for c in codecs), r.nll_bpd] for r in rows))


def write_histogram_csv(path: str | Path, values: Sequence[float], bins: int = 64) -> Path:
    return _write_csv(Path(path), ["bin_left", "bin_right", "count"], histogram(values, bins))


def write_scatter_csv(path: str | Path, points: Sequence[ScatterPoint]) -> Path:
    return _write_csv(Path(path), ["complexity_bpd", "loglik_bpd", "dataset"],
                      ([p.complexity_bpd, p.loglik_bpd, p.dataset] for p in points))
