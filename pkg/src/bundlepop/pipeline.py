"""End-to-end wiring used by the CLI: embed, score, label, train."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .catalog import Catalog
from .embeddings import EmbeddingConfig, EmbeddingMatrix, ReducedEmbedding, WordVectorTable, build_embedding, pca_reduce
from .generator import PopularityModels
from .metrics import (METRICS, CategoryLabel, PercentileCutoffs, PopularityScores, aggregate_sums, coverage,
                      fit_cutoffs, label_bundles, score_bundles)
from .popmodel import FeatureBuilder, ModelConfig, train_classifier, train_regressor

logger = logging.getLogger(__name__)


@dataclass
class PipelineState:
    catalog: Catalog
    matrix: EmbeddingMatrix
    reduced: ReducedEmbedding
    scores: list[PopularityScores]
    labels: dict[str, dict[str, CategoryLabel]]
    cutoffs: dict[str, PercentileCutoffs]
    coverage: float
    models: PopularityModels | None = None


def score_and_label(catalog: Catalog, matrix: EmbeddingMatrix, reduced: ReducedEmbedding | None = None,
                    lower_pct: float = 60.0, upper_pct: float = 80.0) -> PipelineState:
    reduced = reduced if reduced is not None else pca_reduce(matrix)
    scores = score_bundles(catalog, matrix)
    labels, cutoffs = label_bundles(scores, lower_pct=lower_pct, upper_pct=upper_pct)
    return PipelineState(catalog, matrix, reduced, scores, labels, cutoffs, coverage(catalog.bundles.values(), matrix))


def aggregate_cutoffs(labels, lower_pct: float = 60.0, upper_pct: float = 80.0) -> PercentileCutoffs:
    return fit_cutoffs(aggregate_sums(labels).values(), "aggregate", lower_pct, upper_pct, negate=False)


def train_models(state: PipelineState, config: ModelConfig = ModelConfig(), metrics=METRICS,
                 regressors: bool = True) -> PopularityModels:
    """Fit one classifier (and optionally one regressor) per metric on all bundles."""
    builder = FeatureBuilder(state.catalog, state.reduced, config)
    models = PopularityModels(builder)
    bundles = [state.catalog.bundles[s.bundle_id] for s in state.scores]
    for m in metrics:
        fvs = [builder.features(b, m) for b in bundles]
        labels = [state.labels[m][b.bundle_id] for b in bundles]
        if len({int(l.category) for l in labels}) < 2:
            logger.warning("%s: single category in training labels; classifier skipped", m)
        else:
            models.classifiers[m] = train_classifier(fvs, labels, config, m)
        if regressors:
            rows = [(f, s.get(m)) for f, s in zip(fvs, state.scores) if math.isfinite(s.get(m))]
            if len(rows) < len(fvs):
                logger.warning("%s: %d bundle(s) without a finite value left out of the regressor",
                               m, len(fvs) - len(rows))
            models.regressors[m] = train_regressor([f for f, _ in rows], [t for _, t in rows], config, m)
    if all(m in models.classifiers for m in METRICS):
        models.aggregate_cutoffs = aggregate_cutoffs(state.labels)
    state.models = models
    return models


def build_state(catalog: Catalog, emb_config: EmbeddingConfig = EmbeddingConfig(),
                model_config: ModelConfig | None = ModelConfig(), table: WordVectorTable | None = None,
                lower_pct: float = 60.0, upper_pct: float = 80.0) -> PipelineState:
    matrix = build_embedding(catalog, emb_config, table)
    state = score_and_label(catalog, matrix, lower_pct=lower_pct, upper_pct=upper_pct)
    if model_config is not None:
        train_models(state, model_config)
    return state
