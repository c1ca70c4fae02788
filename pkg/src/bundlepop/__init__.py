"""Estimate and improve the popularity of game bundles.

Typical use::

    from bundlepop import generate_synthetic_catalog, EmbeddingConfig, build_state
    state = build_state(generate_synthetic_catalog(seed=1), EmbeddingConfig())
"""

__version__ = "0.1.0"

from .catalog import (Bundle, Catalog, CatalogError, Game, GameStats, UserLibrary, compute_game_stats,
                      dump_catalog, generate_synthetic_catalog, load_catalog, load_catalog_dir)
from .embeddings import (EmbeddingConfig, EmbeddingError, EmbeddingMatrix, ReducedEmbedding, WordVectorTable,
                         build_embedding, bundle_centroid, compose_text, content_embedding, cosine,
                         load_word_vectors, pca_reduce, train_skipgram)
from .generator import (MoveLog, OptimizationConfig, PopularityModels, Strategy, apply_move,
                        generate_from_seed, optimize_bundle, run_campaign, sample_candidate_game)
from .metrics import (METRICS, Category, CategoryLabel, PercentileCutoffs, PopularityScores, aggregate_category,
                      categorize, coverage, diversity, fit_cutoffs, label_bundles, score_bundle, score_bundles)
from .pipeline import PipelineState, build_state, train_models
from .popmodel import (EvalReport, FeatureBuilder, FeatureVector, LogisticModel, ModelConfig, ModelError,
                       RegressionModel, build_features, predict_category, predict_value, train_and_evaluate,
                       train_classifier, train_regressor)
