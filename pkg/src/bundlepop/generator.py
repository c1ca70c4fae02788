"""Greedy bundle improvement by embedding-guided sampling.

A move removes and/or inserts one game; inserted games are drawn with a
softmax over cosine similarity to the bundle centroid.  The popularity
models judge the candidate and only strict improvements are kept.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import Bundle, Catalog
from .embeddings import EmbeddingMatrix, bundle_centroid, usable_members
from .io import derive_seed, rng_for
from .metrics import METRICS, LOWER_IS_BETTER, PercentileCutoffs, canonical_metric
from .popmodel import FeatureBuilder, LogisticModel, ModelError, RegressionModel

logger = logging.getLogger(__name__)

VALUE_EPS = 1e-9
SHIFTS = ("Cat1->Cat2", "Cat1->Cat3", "Cat2->Cat3")
OBJECTIVES = (*METRICS, "aggregate")


class Strategy(str, Enum):
    ADD = "Add"
    REPLACE = "Replace"
    DELETE = "Delete"
    SEED = "Seed"

    @classmethod
    def parse(cls, value: "Strategy | str") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        for s in cls:
            if s.value.lower() == str(value).lower():
                return s
        raise ValueError(f"unknown strategy {value!r}; expected one of {[s.value for s in cls]}")


TABLE_STRATEGIES = (Strategy.REPLACE, Strategy.ADD, Strategy.DELETE)


@dataclass(frozen=True)
class OptimizationConfig:
    strategy: Strategy = Strategy.REPLACE
    removal_prob: float = 0.5
    temperature: float = 0.2
    max_iters: int = 200
    candidate_pool: str = "all_games"
    min_size: int = 2
    max_size: int = 89
    seed: int = 0
    objective: str = "aggregate"
    mode: str = "category"
    target_value: float | None = None
    exclude_unplayed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if self.objective != "aggregate":
            object.__setattr__(self, "objective", canonical_metric(self.objective))
        if not 0.0 <= self.removal_prob <= 1.0:
            raise ValueError("removal_prob must be in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError("need 1 <= min_size <= max_size")
        if self.candidate_pool not in ("all_games", "same_cluster"):
            raise ValueError(f"candidate_pool must be 'all_games' or 'same_cluster', got {self.candidate_pool!r}")
        if self.mode not in ("category", "value"):
            raise ValueError("mode must be 'category' or 'value'")
        if self.mode == "value" and self.objective == "aggregate":
            raise ValueError("the aggregate objective is only defined in category mode")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d


@dataclass(frozen=True)
class MoveLog:
    iteration: int
    kind: str
    added: str | None
    removed: str | None
    before: float
    after: float
    accepted: bool
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ scoring

@dataclass
class PopularityModels:
    """Trained per-metric models plus the shared feature builder.

    ``aggregate_cutoffs`` re-categorizes the sum of the five predicted
    categories for the aggregate objective.
    """

    builder: FeatureBuilder
    classifiers: dict[str, LogisticModel] = field(default_factory=dict)
    regressors: dict[str, RegressionModel] = field(default_factory=dict)
    aggregate_cutoffs: PercentileCutoffs | None = None

    def _x(self, metric, item_ids, price, discount):
        return self.builder.vector(item_ids, price, discount, metric)

    def category(self, objective: str, item_ids: Sequence[str], price: float, discount: float) -> int:
        if objective == "aggregate":
            if self.aggregate_cutoffs is None:
                raise ModelError("aggregate objective needs aggregate cutoffs")
            full = self.builder.full_vector(item_ids, price, discount)
            total = 0
            for m in METRICS:
                model = self._classifier(m)
                total += int(model.predict(full[self.builder.mask(m)])[0])
            return int(self.aggregate_cutoffs.category(total))
        model = self._classifier(objective)
        return int(model.predict(self._x(objective, item_ids, price, discount))[0])

    def value(self, objective: str, item_ids: Sequence[str], price: float, discount: float) -> float:
        """Predicted metric value, sign-flipped where lower is better so larger always wins."""
        model = self.regressors.get(objective)
        if model is None:
            raise ModelError(f"no regressor trained for {objective}")
        v = float(model.predict(self._x(objective, item_ids, price, discount))[0])
        return -v if objective in LOWER_IS_BETTER or objective == "D_b" else v

    def _classifier(self, metric: str) -> LogisticModel:
        model = self.classifiers.get(metric)
        if model is None:
            raise ModelError(f"no classifier trained for {metric}")
        return model

    def score(self, config: OptimizationConfig, item_ids: Sequence[str], price: float, discount: float) -> float:
        if config.mode == "value":
            return self.value(config.objective, item_ids, price, discount)
        return float(self.category(config.objective, item_ids, price, discount))


# ----------------------------------------------------------------- sampling

def candidate_probabilities(centroid: np.ndarray, pool: Iterable[str], matrix: EmbeddingMatrix,
                            temperature: float, exclude: Iterable[str] = ()) -> tuple[list[str], np.ndarray]:
    """Eligible games and their softmax(cosine / temperature) probabilities."""
    skip = set(exclude)
    ids = sorted((g for g in pool if g not in skip and matrix.usable(g)), key=matrix.index.__getitem__)
    if not ids:
        raise ValueError("candidate pool is empty after exclusions")
    c = np.asarray(centroid, dtype=float)
    norm = np.linalg.norm(c)
    if norm == 0:
        sims = np.zeros(len(ids))
    else:
        sims = matrix.unit[[matrix.index[g] for g in ids]] @ (c / norm)
    z = sims / temperature
    z -= z.max()
    p = np.exp(z)
    return ids, p / p.sum()


def sample_candidate_game(centroid: np.ndarray, pool: Iterable[str], matrix: EmbeddingMatrix,
                          temperature: float, rng: np.random.Generator, exclude: Iterable[str] = ()) -> str:
    ids, p = candidate_probabilities(centroid, pool, matrix, temperature, exclude)
    k = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return ids[min(k, len(ids) - 1)]


class _Context:
    """Per-run cache of the candidate pool."""

    def __init__(self, catalog: Catalog, matrix: EmbeddingMatrix, models: PopularityModels,
                 config: OptimizationConfig):
        self.catalog = catalog
        self.matrix = matrix
        self.models = models
        self.config = config
        skip = catalog.unplayed() if config.exclude_unplayed else set()
        reduced = models.builder.reduced.index
        self.pool = [g for g in matrix.ids if matrix.usable(g) and g not in skip and g in reduced]

    def pool_for(self, item_ids: Sequence[str]) -> list[str]:
        if self.config.candidate_pool == "all_games":
            return self.pool
        primary = {self.catalog.games[g].genres[0] for g in item_ids if self.catalog.games[g].genres}
        return [g for g in self.pool if self.catalog.games[g].genres
                and self.catalog.games[g].genres[0] in primary]

    def draw(self, item_ids: Sequence[str], rng: np.random.Generator, exclude: Iterable[str]) -> str | None:
        members = usable_members(item_ids, self.matrix)
        if not members:
            return None
        centroid = bundle_centroid(members, self.matrix)
        try:
            return sample_candidate_game(centroid, self.pool_for(item_ids), self.matrix,
                                         self.config.temperature, rng, exclude)
        except ValueError:
            return None

    def score(self, item_ids, discount) -> float:
        price = self.catalog.bundle_price(item_ids, discount)
        return self.models.score(self.config, item_ids, price, discount)


def _improves(config: OptimizationConfig, before: float, after: float) -> bool:
    if config.mode == "value":
        return after > before + VALUE_EPS
    return after > before


def _move(bundle: Bundle, strategy: Strategy, ctx: _Context, rng: np.random.Generator,
          current: float, iteration: int) -> tuple[Bundle, MoveLog]:
    cfg = ctx.config
    items = list(bundle.item_ids)

    def skip(kind, note):
        return bundle, MoveLog(iteration, kind, None, None, current, current, False, note)

    removed = added = None
    kind = strategy.value
    if strategy is Strategy.ADD:
        if len(items) >= cfg.max_size:
            return skip(kind, "inapplicable: bundle at max_size")
    elif strategy is Strategy.DELETE:
        if len(items) <= cfg.min_size:
            return skip(kind, "inapplicable: bundle at min_size")
        if rng.random() >= cfg.removal_prob:
            return skip(kind, "no removal drawn")
        removed = items.pop(int(rng.integers(len(items))))
    elif strategy is Strategy.REPLACE:
        if rng.random() >= cfg.removal_prob:
            return skip(kind, "no removal drawn")
        removed = items.pop(int(rng.integers(len(items))))
    else:
        raise ValueError("the Seed strategy builds new bundles; use generate_from_seed")

    if strategy in (Strategy.ADD, Strategy.REPLACE):
        basis = items if usable_members(items, ctx.matrix) else list(bundle.item_ids)
        exclude = set(bundle.item_ids)
        added = ctx.draw(basis, rng, exclude)
        if added is None:
            return skip(kind, "inapplicable: candidate pool exhausted")
        items.append(added)

    try:
        after = ctx.score(items, bundle.discount_pct)
    except ModelError as exc:
        return skip(kind, f"unscorable candidate: {exc}")
    if not _improves(cfg, current, after):
        return bundle, MoveLog(iteration, kind, added, removed, current, after, False)
    new = Bundle(bundle.bundle_id, bundle.name, tuple(items),
                 ctx.catalog.bundle_price(items, bundle.discount_pct), bundle.discount_pct, bundle.purchaser_ids)
    return new, MoveLog(iteration, kind, added, removed, current, after, True)


def apply_move(bundle: Bundle, strategy: Strategy | str, config: OptimizationConfig, models: PopularityModels,
               catalog: Catalog, matrix: EmbeddingMatrix, rng: np.random.Generator,
               iteration: int = 0) -> tuple[Bundle, MoveLog]:
    """One Add / Delete / Replace step, kept only if the objective strictly improves."""
    ctx = _Context(catalog, matrix, models, config)
    current = ctx.score(bundle.item_ids, bundle.discount_pct) if len(bundle.item_ids) else -math.inf
    return _move(bundle, Strategy.parse(strategy), ctx, rng, current, iteration)


def _reached_goal(config: OptimizationConfig, score: float) -> bool:
    if config.mode == "category":
        return score >= 3
    if config.target_value is None:
        return False
    target = -config.target_value if config.objective in LOWER_IS_BETTER or config.objective == "D_b" \
        else config.target_value
    return score >= target


def _optimize(bundle: Bundle, ctx: _Context, rng: np.random.Generator,
              strategy: Strategy | None = None) -> tuple[Bundle, list[MoveLog], float, float]:
    cfg = ctx.config
    strategy = strategy or cfg.strategy
    start = ctx.score(bundle.item_ids, bundle.discount_pct)
    current = start
    log: list[MoveLog] = []
    for it in range(cfg.max_iters):
        if _reached_goal(cfg, current):
            break
        bundle, entry = _move(bundle, strategy, ctx, rng, current, it)
        log.append(entry)
        if entry.accepted:
            current = entry.after
    return bundle, log, start, current


def optimize_bundle(bundle: Bundle, config: OptimizationConfig, models: PopularityModels, catalog: Catalog,
                    matrix: EmbeddingMatrix, rng: np.random.Generator | None = None
                    ) -> tuple[Bundle, list[MoveLog]]:
    """Repeat moves until the objective reaches Cat3 (or ``target_value``) or ``max_iters`` runs out."""
    rng = rng if rng is not None else rng_for(config.seed, "optimize", bundle.bundle_id)
    ctx = _Context(catalog, matrix, models, config)
    out, log, _, _ = _optimize(bundle, ctx, rng)
    return out, log


def median_discount(catalog: Catalog) -> float:
    ds = [b.discount_pct for b in catalog.bundles.values()]
    return float(np.median(ds)) if ds else 0.0


def generate_from_seed(seed_game: str, target_size: int, config: OptimizationConfig, models: PopularityModels,
                       catalog: Catalog, matrix: EmbeddingMatrix, rng: np.random.Generator | None = None,
                       taken_ids: Iterable[str] = (), optimize: bool = True) -> Bundle:
    """Grow a bundle outward from ``seed_game`` by similarity sampling, then improve it.

    Built bundles carry the catalog-median discount and a fresh id.
    """
    if not matrix.usable(seed_game):
        raise ValueError(f"seed game {seed_game!r} has no usable embedding")
    if target_size < config.min_size or target_size > config.max_size:
        raise ValueError(f"target_size {target_size} outside [{config.min_size}, {config.max_size}]")
    rng = rng if rng is not None else rng_for(config.seed, "seed", seed_game)
    ctx = _Context(catalog, matrix, models, config)
    items = [seed_game]
    while len(items) < target_size:
        g = ctx.draw(items, rng, items)
        if g is None:
            raise ValueError(f"candidate pool exhausted at size {len(items)} (target {target_size})")
        items.append(g)
    taken = set(catalog.bundles) | set(taken_ids)
    k = 0
    while f"new-{seed_game}-{k}" in taken:
        k += 1
    discount = median_discount(catalog)
    bundle = Bundle(f"new-{seed_game}-{k}", f"New bundle from {catalog.games[seed_game].title}", tuple(items),
                    catalog.bundle_price(items, discount), discount, frozenset())
    if optimize:
        strategy = Strategy.REPLACE if config.strategy is Strategy.SEED else config.strategy
        bundle, _, _, _ = _optimize(bundle, ctx, rng, strategy)
    return bundle


# ----------------------------------------------------------------- campaign

@dataclass(frozen=True)
class ShiftStat:
    objective: str
    strategy: str
    shift: str
    mean: float
    lower: float
    upper: float
    n_eligible: int
    per_rep: tuple[float, ...] = ()


@dataclass
class GenerationReport:
    stats: list[ShiftStat]
    seeds: dict[str, int]
    reps: int
    final_bundles: dict[tuple[str, str], list[Bundle]] = field(default_factory=dict, repr=False)
    logs: dict[tuple[str, str], list[dict]] = field(default_factory=dict, repr=False)

    def get(self, objective: str, strategy: str, shift: str) -> ShiftStat:
        for s in self.stats:
            if (s.objective, s.strategy, s.shift) == (objective, strategy, shift):
                return s
        raise KeyError((objective, strategy, shift))

    def objectives(self) -> list[str]:
        return list(dict.fromkeys(s.objective for s in self.stats))

    def strategies(self) -> list[str]:
        return list(dict.fromkeys(s.strategy for s in self.stats))

    def to_csv(self) -> str:
        """Rows per (objective, shift); mean and 95% bounds per strategy column."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        strategies = self.strategies()
        header = ["objective", "shift"]
        for s in strategies:
            header += [f"{s}_mean", f"{s}_lower", f"{s}_upper"]
        header.append("n_eligible")
        w.writerow(header)
        for obj in self.objectives():
            for shift in SHIFTS:
                row: list = [obj, shift]
                n = 0
                for s in strategies:
                    st = self.get(obj, s, shift)
                    row += [f"{st.mean:.4f}", f"{st.lower:.4f}", f"{st.upper:.4f}"]
                    n = st.n_eligible
                row.append(n)
                w.writerow(row)
        return buf.getvalue()


def _shift_rates(before: Sequence[int], after: Sequence[int]) -> tuple[dict[str, float], dict[str, int]]:
    b = np.asarray(before)
    a = np.asarray(after)
    c1, c2 = b == 1, b == 2
    n = {"Cat1->Cat2": int(c1.sum()), "Cat1->Cat3": int(c1.sum()), "Cat2->Cat3": int(c2.sum())}
    hits = {"Cat1->Cat2": int(np.sum(c1 & (a >= 2))), "Cat1->Cat3": int(np.sum(c1 & (a == 3))),
            "Cat2->Cat3": int(np.sum(c2 & (a == 3)))}
    return {k: (100.0 * hits[k] / n[k] if n[k] else 0.0) for k in SHIFTS}, n


def bootstrap_interval(values: Sequence[float], rng: np.random.Generator, n_boot: int = 1000,
                       level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return 0.0, 0.0
    idx = rng.integers(0, len(v), size=(n_boot, len(v)))
    means = v[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    return float(np.quantile(means, alpha)), float(np.quantile(means, 1.0 - alpha))


_WORKER: dict = {}


def _init_worker(catalog, matrix, models, bundles):
    _WORKER.update(catalog=catalog, matrix=matrix, models=models, bundles=bundles)


def _run_task(task):
    objective, strategy, rep, cfg = task
    catalog, matrix, models, bundles = (_WORKER[k] for k in ("catalog", "matrix", "models", "bundles"))
    cfg = replace(cfg, objective=objective, strategy=strategy)
    ctx = _Context(catalog, matrix, models, cfg)
    before, after, finals, logs = [], [], [], []
    for b in bundles:
        rng = rng_for(cfg.seed, "campaign", objective, strategy.value, rep, b.bundle_id)
        out, log, start, end = _optimize(b, ctx, rng)
        before.append(int(start))
        after.append(int(end))
        finals.append(out)
        logs.extend({"bundle_id": b.bundle_id, "objective": objective, "strategy": strategy.value, "rep": rep,
                     **e.to_dict()} for e in log)
    return before, after, finals, logs


def run_campaign(catalog: Catalog, config: OptimizationConfig, models: PopularityModels,
                 matrix: EmbeddingMatrix, objectives: Sequence[str] = OBJECTIVES,
                 strategies: Sequence[Strategy | str] = TABLE_STRATEGIES, reps: int = 30,
                 bundles: Sequence[Bundle] | None = None, threads: int = 1,
                 keep_logs: bool = False) -> GenerationReport:
    """Optimize every bundle under every (objective, strategy) ``reps`` times and
    summarize the category upgrades with bootstrap 95% intervals over repetitions.

    Results do not depend on ``threads``: every task has its own derived seed.
    """
    if config.mode != "category":
        raise ValueError("campaigns report category shifts; use mode='category'")
    strategies = [Strategy.parse(s) for s in strategies]
    objectives = [o if o == "aggregate" else canonical_metric(o) for o in objectives]
    bundles = sorted(catalog.bundles.values() if bundles is None else bundles, key=lambda b: b.bundle_id)
    tasks = [(o, s, r, config) for o in objectives for s in strategies for r in range(reps)]

    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(catalog, matrix, models, bundles)) as ex:
            results = list(ex.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        _init_worker(catalog, matrix, models, bundles)
        results = [_run_task(t) for t in tasks]

    stats: list[ShiftStat] = []
    finals: dict[tuple[str, str], list[Bundle]] = {}
    logs: dict[tuple[str, str], list[dict]] = {}
    pos = 0
    for o in objectives:
        for s in strategies:
            rates = {k: [] for k in SHIFTS}
            n_elig: dict[str, int] = {}
            for r in range(reps):
                before, after, final, log = results[pos]
                pos += 1
                per, n_elig = _shift_rates(before, after)
                for k in SHIFTS:
                    rates[k].append(per[k])
                if r == 0:
                    finals[(o, s.value)] = final
                    if keep_logs:
                        logs[(o, s.value)] = log
            for k in SHIFTS:
                vals = rates[k]
                lo, hi = bootstrap_interval(vals, rng_for(config.seed, "bootstrap", o, s.value, k))
                stats.append(ShiftStat(o, s.value, k, float(np.mean(vals)) if vals else 0.0, lo, hi,
                                       n_elig.get(k, 0), tuple(vals)))
    seeds = {"optimize": config.seed, "bootstrap": derive_seed(config.seed, "bootstrap")}
    return GenerationReport(stats, seeds, reps, finals, logs)


# ---------------------------------------------------------- regression view

def regression_improvement_report(catalog: Catalog, before: Sequence[Bundle], after: Sequence[Bundle],
                                  regressors: Mapping[str, RegressionModel],
                                  builder: FeatureBuilder) -> dict[str, dict[str, float]]:
    """Mean predicted metric over existing vs updated bundles and the percentage gain.

    Gains are signed so a positive number is always an improvement; the
    zero-playtime count and diversity improve downward.
    """
    if not before or not after:
        raise ValueError("need non-empty bundle sets")
    table: dict[str, dict[str, float]] = {"existing": {}, "updated": {}, "improvement_pct": {}}
    for m in METRICS:
        model = regressors[m]

        def mean_pred(bs):
            X = np.vstack([builder.vector(b.item_ids, b.price, b.discount_pct, m) for b in bs])
            return float(model.predict(X).mean())

        old, new = mean_pred(before), mean_pred(after)
        table["existing"][m] = old
        table["updated"][m] = new
        delta = (old - new) if (m in LOWER_IS_BETTER or m == "D_b") else (new - old)
        if delta == 0:
            table["improvement_pct"][m] = 0.0
        else:
            table["improvement_pct"][m] = 100.0 * delta / abs(old) if old != 0 else math.inf
    return table


def regression_report_csv(table: Mapping[str, Mapping[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", *METRICS])
    for row in ("existing", "updated", "improvement_pct"):
        w.writerow([row, *(repr(float(table[row][m])) for m in METRICS)])
    return buf.getvalue()
