"""Bundle features and the popularity models served to the optimizer.

Classifiers are one-vs-rest logistic regressions and regressors are ridge
regressions, both fit by full-batch gradient descent on standardized
features.  Features that would leak the target metric are removed from
the schema per target.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .catalog import Bundle, Catalog
from .embeddings import ReducedEmbedding
from .io import atomic_write_text
from .metrics import METRICS, Category, CategoryLabel, canonical_metric

logger = logging.getLogger(__name__)

CLASSES = (1, 2, 3)
PLAYTIME_LEAKY = frozenset({"P_mb", "P_B_b", "N0_b"})
USAGE_FEATURES = ("total_purchases", "playtime_per_download_mean")
EMB_FEATURES = ("emb_mean_1", "emb_mean_2")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    l2: float = 0.01
    epochs: int = 3000
    learning_rate: float = 1.0
    tol: float = 1e-8
    seed: int = 0
    top_tags: int = 20
    top_genres: int = 10
    top_specs: int = 10
    diversity_drops_embedding: bool = True
    class_weights: bool = True

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class FeatureVector:
    bundle_id: str
    values: np.ndarray
    schema: tuple[str, ...]


# ----------------------------------------------------------------- features

def _top_k(counter: Counter, k: int) -> list[str]:
    return [name for name, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


class FeatureBuilder:
    """Precomputes per-game quantities so bundle feature vectors are cheap.

    One builder serves every target metric; :meth:`schema` and
    :meth:`vector` apply the per-target leakage mask.
    """

    def __init__(self, catalog: Catalog, reduced: ReducedEmbedding, config: ModelConfig = ModelConfig()):
        self.catalog = catalog
        self.reduced = reduced
        self.config = config
        stats = catalog.stats()
        games = catalog.games

        self.fields = {}
        for name, attr, k in (("tag", "tags", config.top_tags), ("genre", "genres", config.top_genres),
                              ("spec", "specs", config.top_specs)):
            freq = Counter(v for g in games.values() for v in set(getattr(g, attr)))
            top = _top_k(freq, k)
            rank = {v: i for i, v in enumerate(_top_k(freq, len(freq)))}
            self.fields[name] = (attr, top, {v: i for i, v in enumerate(top)}, rank)

        known = [g.sentiment for g in games.values() if g.sentiment is not None]
        self.sentiment_fill = float(np.median(known)) if known else 3.0
        self.sentiment = {gid: float(g.sentiment) if g.sentiment is not None else self.sentiment_fill
                          for gid, g in games.items()}
        self.age = {gid: s.age_years for gid, s in stats.items()}
        self.downloads = {gid: s.download_count for gid, s in stats.items()}
        self.ppd = {gid: s.playtime_per_download for gid, s in stats.items()}

        self.full_schema: tuple[str, ...] = (
            *EMB_FEATURES, "bundle_price", "bundle_age_years", "discount_pct",
            *(f"tag={t}" for t in self.fields["tag"][1]),
            *(f"genre={t}" for t in self.fields["genre"][1]),
            *(f"spec={t}" for t in self.fields["spec"][1]),
            "mean_sentiment", *USAGE_FEATURES,
        )
        self._offsets = {}
        pos = len(EMB_FEATURES) + 3
        for name in ("tag", "genre", "spec"):
            self._offsets[name] = pos
            pos += len(self.fields[name][1])
        self._masks: dict[str, np.ndarray] = {}

    def dropped(self, target: str) -> set[str]:
        target = canonical_metric(target)
        out: set[str] = set()
        if target in PLAYTIME_LEAKY:
            out.update(USAGE_FEATURES)
        if target == "D_b" and self.config.diversity_drops_embedding:
            out.update(EMB_FEATURES)
        return out

    def mask(self, target: str) -> np.ndarray:
        if target not in self._masks:
            drop = self.dropped(target)
            self._masks[target] = np.array([n not in drop for n in self.full_schema])
        return self._masks[target]

    def schema(self, target: str) -> tuple[str, ...]:
        m = self.mask(target)
        return tuple(n for n, keep in zip(self.full_schema, m) if keep)

    def modal(self, item_ids: Sequence[str], name: str) -> str | None:
        attr, _, _, rank = self.fields[name]
        counts = Counter(v for g in item_ids for v in set(getattr(self.catalog.games[g], attr)))
        if not counts:
            return None
        return min(counts, key=lambda v: (-counts[v], rank.get(v, len(rank)), v))

    def full_vector(self, item_ids: Sequence[str], price: float, discount_pct: float) -> np.ndarray:
        coords = [self.reduced.coords[self.reduced.index[g]] for g in item_ids if g in self.reduced.index]
        if not item_ids:
            raise ModelError("empty bundle")
        x = np.zeros(len(self.full_schema))
        # no embedded member: leave the block at the PCA centre
        if coords:
            x[0:2] = np.mean(coords, axis=0)
        x[2] = price
        x[3] = np.mean([self.age[g] for g in item_ids])
        x[4] = discount_pct
        for name in ("tag", "genre", "spec"):
            mode = self.modal(item_ids, name)
            slot = self.fields[name][2].get(mode) if mode is not None else None
            if slot is not None:
                x[self._offsets[name] + slot] = 1.0
        x[-3] = np.mean([self.sentiment[g] for g in item_ids])
        x[-2] = sum(self.downloads[g] for g in item_ids)
        x[-1] = np.mean([self.ppd[g] for g in item_ids])
        return x

    def vector(self, item_ids: Sequence[str], price: float, discount_pct: float, target: str) -> np.ndarray:
        return self.full_vector(item_ids, price, discount_pct)[self.mask(target)]

    def features(self, bundle: Bundle, target: str) -> FeatureVector:
        return FeatureVector(bundle.bundle_id,
                             self.vector(bundle.item_ids, bundle.price, bundle.discount_pct, target),
                             self.schema(target))


def build_features(bundle: Bundle, catalog: Catalog, reduced: ReducedEmbedding, target_metric: str,
                   config: ModelConfig = ModelConfig()) -> FeatureVector:
    return FeatureBuilder(catalog, reduced, config).features(bundle, target_metric)


# ------------------------------------------------------------ loss kernels

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                       sample_weight: np.ndarray, l2: float) -> tuple[float, np.ndarray, float]:
    """Weighted mean binary cross-entropy plus ``l2/2 * |w|^2`` and its gradient."""
    sw = sample_weight / sample_weight.sum()
    z = X @ w + b
    # log(1+e^z) - y*z, stable
    loss = float(sw @ (np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    r = sw * (_sigmoid(z) - y)
    return loss, X.T @ r + l2 * w, float(r.sum())


def ridge_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                    sample_weight: np.ndarray, l2: float) -> tuple[float, np.ndarray, float]:
    sw = sample_weight / sample_weight.sum()
    r = X @ w + b - y
    loss = 0.5 * float(sw @ (r * r)) + 0.5 * l2 * float(w @ w)
    g = sw * r
    return loss, X.T @ g + l2 * w, float(g.sum())


def _descend(kernel, X, y, sw, l2, config: ModelConfig, curvature: float,
             b0: float = 0.0) -> tuple[np.ndarray, float, list[float]]:
    """Plain gradient descent; the step is capped at 1/L of the smoothness bound
    so the loss never increases."""
    p = X.shape[1]
    if p:
        swn = sw / sw.sum()
        lam = float(np.linalg.eigvalsh((X * swn[:, None]).T @ X)[-1])
    else:
        lam = 0.0
    smooth = curvature * (lam + 1.0) + l2  # +1 covers the intercept direction
    step = min(config.learning_rate, 1.0 / smooth)
    w = np.zeros(p)
    b = b0
    loss, gw, gb = kernel(w, b, X, y, sw, l2)
    history = [loss]
    for _ in range(config.epochs):
        w = w - step * gw
        b = b - step * gb
        new, gw, gb = kernel(w, b, X, y, sw, l2)
        history.append(new)
        if abs(loss - new) < config.tol:
            break
        loss = new
    return w, b, history


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    active = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(active, std, 1.0)
    return mean, std, active


def _fingerprint(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return h.hexdigest()[:16]


def _stack(features: Sequence[FeatureVector]) -> tuple[np.ndarray, tuple[str, ...]]:
    if not features:
        raise ModelError("no training rows")
    schema = features[0].schema
    for f in features:
        if f.schema != schema:
            raise ModelError(f"schema mismatch in training rows ({f.bundle_id})")
    X = np.vstack([f.values for f in features])
    if not np.all(np.isfinite(X)):
        raise ModelError("non-finite feature values")
    return X, schema


# ------------------------------------------------------------------ models

@dataclass
class LogisticModel:
    metric: str
    schema: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    active: np.ndarray
    weights: np.ndarray        # (3, p) in standardized units, zero where inactive
    intercepts: np.ndarray     # (3,)
    config: ModelConfig
    training_fingerprint: str = ""
    loss_history: dict[int, list[float]] = field(default_factory=dict, repr=False)

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Per-class sigmoid scores normalized to sum to one; rows of ``X`` are raw features."""
        Z = (np.atleast_2d(X) - self.mean) / self.std
        raw = _sigmoid(Z @ self.weights.T + self.intercepts)
        return raw / raw.sum(axis=1, keepdims=True)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(X) - self.mean) / self.std
        return _sigmoid(Z @ self.weights.T + self.intercepts)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1) + 1

    def to_dict(self) -> dict:
        return {
            "kind": "logistic",
            "metric": self.metric,
            "schema": list(self.schema),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist(),
                                "active": self.active.tolist()},
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
            "classes": list(CLASSES),
            "config": asdict(self.config),
            "training_fingerprint": self.training_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        st = d["standardization"]
        return cls(d["metric"], tuple(d["schema"]), np.array(st["mean"]), np.array(st["std"]),
                   np.array(st["active"], dtype=bool), np.array(d["weights"]), np.array(d["intercepts"]),
                   ModelConfig.from_dict(d["config"]), d.get("training_fingerprint", ""))


@dataclass
class RegressionModel:
    metric: str
    schema: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    active: np.ndarray
    weights: np.ndarray
    intercept: float
    target_mean: float
    target_std: float
    config: ModelConfig
    training_fingerprint: str = ""
    loss_history: list[float] = field(default_factory=list, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(X) - self.mean) / self.std
        return self.target_mean + self.target_std * (Z @ self.weights + self.intercept)

    @property
    def coef_(self) -> np.ndarray:
        """Coefficients on the raw feature scale."""
        return self.weights * self.target_std / self.std

    @property
    def intercept_(self) -> float:
        return float(self.target_mean + self.target_std * self.intercept - self.coef_ @ self.mean)

    def to_dict(self) -> dict:
        return {
            "kind": "regression",
            "metric": self.metric,
            "schema": list(self.schema),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist(),
                                "active": self.active.tolist(),
                                "target_mean": self.target_mean, "target_std": self.target_std},
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "config": asdict(self.config),
            "training_fingerprint": self.training_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionModel":
        st = d["standardization"]
        return cls(d["metric"], tuple(d["schema"]), np.array(st["mean"]), np.array(st["std"]),
                   np.array(st["active"], dtype=bool), np.array(d["weights"]), float(d["intercept"]),
                   float(st["target_mean"]), float(st["target_std"]),
                   ModelConfig.from_dict(d["config"]), d.get("training_fingerprint", ""))


def save_model(model: LogisticModel | RegressionModel, path) -> None:
    atomic_write_text(path, json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> LogisticModel | RegressionModel:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("kind") == "logistic":
        return LogisticModel.from_dict(d)
    if d.get("kind") == "regression":
        return RegressionModel.from_dict(d)
    raise ModelError(f"{path}: unknown model kind {d.get('kind')!r}")


def _label_array(labels: Sequence) -> np.ndarray:
    out = []
    for lab in labels:
        c = lab.category if isinstance(lab, CategoryLabel) else lab
        out.append(int(c))
    return np.array(out, dtype=int)


def inverse_frequency_weights(y: np.ndarray) -> np.ndarray:
    classes, counts = np.unique(y, return_counts=True)
    per = {c: len(y) / (len(classes) * n) for c, n in zip(classes, counts)}
    return np.array([per[c] for c in y])


def train_classifier(features: Sequence[FeatureVector], labels: Sequence, config: ModelConfig = ModelConfig(),
                     metric: str = "") -> LogisticModel:
    X, schema = _stack(features)
    y = _label_array(labels)
    if len(y) != len(X):
        raise ModelError("features and labels differ in length")
    if len(X) < 20:
        raise ModelError(f"need at least 20 training rows, got {len(X)}")
    present = set(np.unique(y).tolist())
    if len(present) < 2:
        raise ModelError("training labels contain a single class")
    mean, std, active = _standardize(X)
    Z = ((X - mean) / std)[:, active]
    sw = inverse_frequency_weights(y) if config.class_weights else np.ones(len(y))
    weights = np.zeros((3, len(schema)))
    intercepts = np.zeros(3)
    history = {}
    for k, c in enumerate(CLASSES):
        if c not in present:
            # never observed: score ~0 so it is never predicted
            intercepts[k] = -30.0
            continue
        w, b, hist = _descend(logistic_loss_grad, Z, (y == c).astype(float), sw, config.l2, config, 0.25)
        weights[k, active] = w
        intercepts[k] = b
        history[c] = hist
    return LogisticModel(metric, schema, mean, std, active, weights, intercepts, config,
                         _fingerprint(X, y), history)


def train_regressor(features: Sequence[FeatureVector], targets: Sequence[float],
                    config: ModelConfig = ModelConfig(), metric: str = "") -> RegressionModel:
    X, schema = _stack(features)
    t = np.asarray(targets, dtype=float)
    if len(t) != len(X):
        raise ModelError("features and targets differ in length")
    if len(X) < 20:
        raise ModelError(f"need at least 20 training rows, got {len(X)}")
    if not np.all(np.isfinite(t)):
        raise ModelError("non-finite targets")
    mean, std, active = _standardize(X)
    Z = ((X - mean) / std)[:, active]
    t_mean = float(t.mean())
    t_std = float(t.std())
    if t_std == 0.0:
        t_std = 1.0
    ys = (t - t_mean) / t_std
    w, b, hist = _descend(ridge_loss_grad, Z, ys, np.ones(len(ys)), config.l2, config, 1.0)
    weights = np.zeros(len(schema))
    weights[active] = w
    return RegressionModel(metric, schema, mean, std, active, weights, b, t_mean, t_std, config,
                           _fingerprint(X, t), hist)


def _check_schema(model, fv: FeatureVector) -> None:
    if tuple(fv.schema) != tuple(model.schema):
        raise ModelError(f"feature schema does not match model for {model.metric or 'model'}")


def predict_category(model: LogisticModel, fv: FeatureVector) -> tuple[CategoryLabel, np.ndarray]:
    _check_schema(model, fv)
    p = model.scores(fv.values)[0]
    return CategoryLabel(model.metric, Category(int(np.argmax(p)) + 1)), p


def predict_value(model: RegressionModel, fv: FeatureVector) -> float:
    _check_schema(model, fv)
    return float(model.predict(fv.values)[0])


# -------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    metric: str
    auc_macro: float
    f1_macro: float
    precision: dict[int, float]
    recall: dict[int, float]
    split_seed: int | None = None
    n_train: int = 0
    n_test: int = 0

    def to_dict(self) -> dict:
        return {"metric": self.metric, "auc_macro": self.auc_macro, "f1_macro": self.f1_macro,
                "precision": {str(k): v for k, v in self.precision.items()},
                "recall": {str(k): v for k, v in self.recall.items()},
                "split_seed": self.split_seed, "n_train": self.n_train, "n_test": self.n_test}


def roc_auc(scores: Sequence[float], positives: Sequence[bool]) -> float:
    """Area under the ROC curve by the trapezoid rule over distinct score thresholds."""
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(positives, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    # last index of each run of tied scores
    cut = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(pos)[cut]
    fp = np.cumsum(~pos)[cut]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, classes=CLASSES) -> tuple[float, dict, dict]:
    precision, recall, f1s = {}, {}, []
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision[c], recall[c] = p, r
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return float(np.mean(f1s)), precision, recall


def stratified_split(labels: Sequence, train_frac: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split leaving at least one row of every class on each side."""
    y = _label_array(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            raise ModelError(f"class {c} has {len(idx)} row(s); cannot place it in both splits")
        idx = rng.permutation(idx)
        n_train = min(max(1, int(round(train_frac * len(idx)))), len(idx) - 1)
        train.extend(idx[:n_train])
        test.extend(idx[n_train:])
    return np.sort(np.array(train)), np.sort(np.array(test))


def evaluate(model: LogisticModel, features: Sequence[FeatureVector], labels: Sequence,
             split_seed: int | None = None, n_train: int = 0) -> EvalReport:
    X, schema = _stack(features)
    if schema != model.schema:
        raise ModelError("feature schema does not match model")
    y = _label_array(labels)
    P = model.scores(X)
    present = [c for c in CLASSES if np.any(y == c)]
    aucs = [roc_auc(P[:, c - 1], y == c) for c in present if np.any(y != c)]
    f1, precision, recall = macro_f1(y, np.argmax(P, axis=1) + 1, present)
    return EvalReport(model.metric, float(np.mean(aucs)) if aucs else math.nan, f1,
                      precision, recall, split_seed, n_train, len(y))


def train_and_evaluate(features: Sequence[FeatureVector], labels: Sequence, config: ModelConfig = ModelConfig(),
                       metric: str = "", train_frac: float = 0.8,
                       seed: int = 0) -> tuple[LogisticModel, EvalReport]:
    """Stratified split, fit on the training part, report on the held-out part."""
    tr, te = stratified_split(labels, train_frac, seed)
    labels = list(labels)
    model = train_classifier([features[i] for i in tr], [labels[i] for i in tr], config, metric)
    report = evaluate(model, [features[i] for i in te], [labels[i] for i in te], seed, len(tr))
    return model, report


__all__ = [
    "METRICS", "ModelConfig", "FeatureVector", "FeatureBuilder", "build_features", "LogisticModel",
    "RegressionModel", "train_classifier", "train_regressor", "predict_category", "predict_value",
    "EvalReport", "evaluate", "roc_auc", "macro_f1", "stratified_split", "train_and_evaluate",
    "logistic_loss_grad", "ridge_loss_grad", "save_model", "load_model", "ModelError",
]
