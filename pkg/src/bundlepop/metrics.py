"""Bundle popularity metrics and percentile categories.

Five per-bundle metrics (explicit purchases, implicit purchases, number
of never-played games, total playtime, diversity) plus catalog-level
coverage.  Each metric is split into three categories at the 60th and
80th percentiles of the bundle population.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import Bundle, Catalog, GameStats
from .embeddings import EmbeddingMatrix, usable_members

logger = logging.getLogger(__name__)

METRICS = ("P_eb", "P_mb", "N0_b", "P_B_b", "D_b")
ALIASES = {"N0": "N0_b", "PB": "P_B_b", "D": "D_b", "P_e": "P_eb", "P_m": "P_mb"}
# categorized on the negated value so Cat3 always means "more popular"
LOWER_IS_BETTER = frozenset({"N0_b"})


def canonical_metric(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in METRICS:
        raise ValueError(f"unknown metric {name!r}; expected one of {METRICS} or {sorted(ALIASES)}")
    return name


class Category(IntEnum):
    UNPOPULAR = 1
    POPULAR = 2
    VERY_POPULAR = 3


@dataclass(frozen=True)
class CategoryLabel:
    metric: str
    category: Category


@dataclass(frozen=True)
class PopularityScores:
    bundle_id: str
    P_eb: int
    P_mb: int
    N0_b: int
    P_B_b: int
    D_b: float

    def get(self, metric: str) -> float:
        return getattr(self, canonical_metric(metric))


# ----------------------------------------------------------------- metrics

def explicit_purchases(bundle: Bundle) -> int:
    return len(bundle.purchaser_ids)


def owns_bundle(owned: int, size: int) -> bool:
    """True when owning ``owned`` of ``size`` items is strictly above 80%."""
    return 5 * owned > 4 * size


def implicit_purchases(bundle: Bundle, catalog: Catalog) -> int:
    items = set(bundle.item_ids)
    n = len(items)
    return sum(owns_bundle(len(items.intersection(u.holdings)), n) for u in catalog.large_users)


def _stats_for(bundle: Bundle, stats: Mapping[str, GameStats]) -> list[GameStats]:
    missing = [g for g in bundle.item_ids if g not in stats]
    if missing:
        raise KeyError(f"bundle {bundle.bundle_id!r}: no stats for {missing}")
    return [stats[g] for g in bundle.item_ids]


def zero_playtime_count(bundle: Bundle, stats: Mapping[str, GameStats]) -> int:
    return sum(s.total_playtime == 0 for s in _stats_for(bundle, stats))


def total_playtime(bundle: Bundle, stats: Mapping[str, GameStats]) -> int:
    return sum(s.total_playtime for s in _stats_for(bundle, stats))


def _similarity_sum(item_ids: Iterable[str], matrix: EmbeddingMatrix) -> tuple[float, int]:
    members = usable_members(item_ids, matrix)
    if not members:
        return 0.0, 0
    u = matrix.unit[[matrix.index[g] for g in members]]
    s = u.sum(axis=0)
    # sum over all ordered pairs (self-pairs included) of cosines
    return float(s @ s), len(members)


def diversity(bundle: Bundle | Sequence[str], matrix: EmbeddingMatrix) -> float:
    """One minus the mean cosine over all n*n ordered member pairs, self-pairs included."""
    item_ids = bundle.item_ids if isinstance(bundle, Bundle) else bundle
    total, n = _similarity_sum(item_ids, matrix)
    if n == 0:
        raise ValueError("bundle has no embeddable members")
    return 1.0 - total / (n * n)


def coverage(bundles: Iterable[Bundle], matrix: EmbeddingMatrix) -> float:
    num = 0.0
    den = 0
    count = 0
    for b in bundles:
        count += 1
        total, n = _similarity_sum(b.item_ids, matrix)
        num += total
        den += n * n
    if count == 0:
        raise ValueError("coverage of an empty bundle set")
    if den == 0:
        raise ValueError("no bundle has embeddable members")
    return 1.0 - num / den


def score_bundle(bundle: Bundle, catalog: Catalog, matrix: EmbeddingMatrix,
                 stats: Mapping[str, GameStats] | None = None) -> PopularityScores:
    stats = catalog.stats() if stats is None else stats
    try:
        d = diversity(bundle, matrix)
    except ValueError:
        logger.warning("bundle %s has no embeddable members; diversity set to NaN", bundle.bundle_id)
        d = math.nan
    return PopularityScores(
        bundle_id=bundle.bundle_id,
        P_eb=explicit_purchases(bundle),
        P_mb=implicit_purchases(bundle, catalog),
        N0_b=zero_playtime_count(bundle, stats),
        P_B_b=total_playtime(bundle, stats),
        D_b=d,
    )


def score_bundles(catalog: Catalog, matrix: EmbeddingMatrix,
                  bundles: Iterable[Bundle] | None = None) -> list[PopularityScores]:
    bundles = catalog.bundles.values() if bundles is None else bundles
    stats = catalog.stats()
    return [score_bundle(b, catalog, matrix, stats) for b in bundles]


# -------------------------------------------------------------- categories

@dataclass(frozen=True)
class PercentileCutoffs:
    metric: str
    lower_pct: float = 60.0
    upper_pct: float = 80.0
    lower_value: float = 0.0
    upper_value: float = 0.0
    negate: bool = False

    def __post_init__(self):
        if not 0 < self.lower_pct < self.upper_pct < 100:
            raise ValueError(f"need 0 < lower_pct < upper_pct < 100, got {self.lower_pct}, {self.upper_pct}")
        if self.lower_value > self.upper_value:
            raise ValueError("lower_value exceeds upper_value")

    def category(self, value: float) -> Category:
        if value is None or math.isnan(value):
            return Category.UNPOPULAR
        v = -value if self.negate else value
        if v <= self.lower_value:
            return Category.UNPOPULAR
        if v <= self.upper_value:
            return Category.POPULAR
        return Category.VERY_POPULAR

    def to_dict(self) -> dict:
        return {"metric": self.metric, "lower_pct": self.lower_pct, "upper_pct": self.upper_pct,
                "lower_value": self.lower_value, "upper_value": self.upper_value, "negate": self.negate}

    @classmethod
    def from_dict(cls, d: dict) -> "PercentileCutoffs":
        return cls(**d)


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[rank - 1]


def fit_cutoffs(values: Iterable[float], metric: str, lower_pct: float = 60.0,
                upper_pct: float = 80.0, negate: bool | None = None) -> PercentileCutoffs:
    """Nearest-rank percentile values of the (training) population."""
    if negate is None:
        negate = metric in LOWER_IS_BETTER
    vals = [float(v) for v in values if v is not None and not math.isnan(v)]
    if not vals:
        raise ValueError(f"{metric}: no finite values to fit cutoffs on")
    vals = sorted(-v for v in vals) if negate else sorted(vals)
    return PercentileCutoffs(metric, lower_pct, upper_pct,
                             nearest_rank(vals, lower_pct), nearest_rank(vals, upper_pct), negate)


def categorize(values: Mapping[str, float], cutoffs: PercentileCutoffs) -> dict[str, CategoryLabel]:
    """Cat1 up to the lower cutoff, Cat2 up to the upper, Cat3 above; ties go down."""
    if not values:
        raise ValueError("nothing to categorize")
    finite = {v for v in values.values() if v is not None and not math.isnan(v)}
    if len(finite) <= 1:
        logger.warning("%s: all values equal; every bundle is Cat1", cutoffs.metric)
        return {k: CategoryLabel(cutoffs.metric, Category.UNPOPULAR) for k in values}
    return {k: CategoryLabel(cutoffs.metric, cutoffs.category(v)) for k, v in values.items()}


def category_counts(labels: Mapping[str, CategoryLabel]) -> tuple[int, int, int]:
    counts = [0, 0, 0]
    for lab in labels.values():
        counts[int(lab.category) - 1] += 1
    return tuple(counts)  # type: ignore[return-value]


def label_bundles(scores: Sequence[PopularityScores], cutoffs: Mapping[str, PercentileCutoffs] | None = None,
                  lower_pct: float = 60.0, upper_pct: float = 80.0
                  ) -> tuple[dict[str, dict[str, CategoryLabel]], dict[str, PercentileCutoffs]]:
    """Categorize every metric; fits cutoffs on ``scores`` unless given."""
    fitted = dict(cutoffs or {})
    labels: dict[str, dict[str, CategoryLabel]] = {}
    for m in METRICS:
        values = {s.bundle_id: s.get(m) for s in scores}
        if m not in fitted:
            fitted[m] = fit_cutoffs(values.values(), m, lower_pct, upper_pct)
        labels[m] = categorize(values, fitted[m])
    return labels, fitted


def aggregate_sums(labels: Mapping[str, Mapping[str, CategoryLabel]]) -> dict[str, int]:
    """Sum of the five category numbers per bundle (range 5..15)."""
    missing = [m for m in METRICS if m not in labels]
    if missing:
        raise ValueError(f"missing metric labels: {missing}")
    ids = set(labels[METRICS[0]])
    for m in METRICS:
        if set(labels[m]) != ids:
            raise ValueError(f"metric {m} labels a different bundle set")
    return {b: sum(int(labels[m][b].category) for m in METRICS) for b in sorted(ids)}


def aggregate_category(per_metric: Mapping[str, CategoryLabel], cutoffs: PercentileCutoffs) -> CategoryLabel:
    missing = [m for m in METRICS if m not in per_metric]
    if missing:
        raise ValueError(f"missing metric label(s): {missing}")
    total = sum(int(per_metric[m].category) for m in METRICS)
    return CategoryLabel("aggregate", cutoffs.category(total))


# --------------------------------------------------------------------- CSV

def metrics_csv(scores: Sequence[PopularityScores], labels: Mapping[str, Mapping[str, CategoryLabel]],
                coverage_value: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bundle_id", *METRICS, *(f"cat_{m}" for m in METRICS)])
    for s in scores:
        w.writerow([s.bundle_id, s.P_eb, s.P_mb, s.N0_b, s.P_B_b, repr(s.D_b),
                    *(int(labels[m][s.bundle_id].category) for m in METRICS)])
    w.writerow(["coverage", repr(coverage_value)])
    return buf.getvalue()


def read_metrics_csv(path) -> tuple[list[PopularityScores], dict[str, dict[str, CategoryLabel]], float]:
    scores: list[PopularityScores] = []
    labels: dict[str, dict[str, CategoryLabel]] = {m: {} for m in METRICS}
    cov = math.nan
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            if row[0] == "coverage" and len(row) == 2:
                cov = float(row[1])
                continue
            rec = dict(zip(header, row))
            scores.append(PopularityScores(rec["bundle_id"], int(rec["P_eb"]), int(rec["P_mb"]),
                                           int(rec["N0_b"]), int(rec["P_B_b"]), float(rec["D_b"])))
            for m in METRICS:
                labels[m][rec["bundle_id"]] = CategoryLabel(m, Category(int(rec[f"cat_{m}"])))
    return scores, labels, cov


def bundle_size_summary(bundles: Iterable[Bundle]) -> tuple[float, float, int, float]:
    """(mean, median, max, std) of bundle sizes."""
    sizes = np.array([len(b.item_ids) for b in bundles], dtype=float)
    return float(sizes.mean()), float(np.median(sizes)), int(sizes.max()), float(sizes.std(ddof=1))
