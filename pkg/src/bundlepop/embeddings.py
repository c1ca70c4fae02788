"""Per-game vectors from text (word-vector averaging) and co-purchases (Prod2Vec, MetaProd2Vec).

Word vectors come either from a pretrained text file or from the
skip-gram trainer in this module.  A 2-D PCA projection feeds the
popularity models.
"""

from __future__ import annotations

import json
import logging
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import Bundle, Catalog, Game
from .io import atomic_write_text

logger = logging.getLogger(__name__)

CONTENT_FIELDS = ("title", "tags", "genres", "specs")
SOURCES = ("content", "prod2vec", "metaprod2vec")
META_PREFIX = "meta:"

_PUNCT = str.maketrans("", "", string.punctuation.replace("_", ""))


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    source: str = "content"
    content_fields: tuple[str, ...] = ("title", "genres")
    dimension: int = 64
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0
    exclude_unplayed: bool = True

    def __post_init__(self):
        if self.source not in SOURCES:
            raise EmbeddingError(f"unknown embedding source {self.source!r}; expected one of {SOURCES}")
        bad = set(self.content_fields) - set(CONTENT_FIELDS)
        if bad:
            raise EmbeddingError(f"unknown content field(s) {sorted(bad)}")
        if "title" not in self.content_fields:
            raise EmbeddingError("content_fields must include 'title'")
        for name in ("dimension", "window", "negatives", "epochs"):
            if getattr(self, name) <= 0:
                raise EmbeddingError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise EmbeddingError("learning_rate must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["content_fields"] = list(self.content_fields)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingConfig":
        d = dict(d)
        if "content_fields" in d:
            d["content_fields"] = tuple(d["content_fields"])
        return cls(**d)


@dataclass
class WordVectorTable:
    dimension: int
    vectors: dict[str, np.ndarray]
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        for tok, v in self.vectors.items():
            if v.shape != (self.dimension,):
                raise EmbeddingError(f"vector for {tok!r} has shape {v.shape}, expected ({self.dimension},)")
            if not np.all(np.isfinite(v)):
                raise EmbeddingError(f"vector for {tok!r} has non-finite components")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


class EmbeddingMatrix:
    """Game vectors from one source, stored as a dense array with an id index.

    Rows that are exactly zero (games with no in-vocabulary tokens) are
    ``flagged`` and excluded from centroids and diversity.
    """

    def __init__(self, config: EmbeddingConfig, rows: dict[str, np.ndarray] | None = None,
                 ids: Sequence[str] | None = None, array: np.ndarray | None = None):
        self.config = config
        if rows is not None:
            ids = list(rows)
            array = np.array([rows[g] for g in ids], dtype=float).reshape(len(ids), -1)
        assert ids is not None and array is not None
        if array.ndim != 2 or array.shape[0] != len(ids):
            raise EmbeddingError("array shape does not match ids")
        if not np.all(np.isfinite(array)):
            raise EmbeddingError("embedding contains non-finite values")
        self.ids = list(ids)
        self.array = array
        self.dimension = array.shape[1]
        self.index = {g: i for i, g in enumerate(self.ids)}
        norms = np.linalg.norm(array, axis=1)
        self.flagged = {g for g, n in zip(self.ids, norms) if n == 0.0}
        with np.errstate(invalid="ignore", divide="ignore"):
            self.unit = np.where(norms[:, None] > 0, array / np.where(norms > 0, norms, 1.0)[:, None], 0.0)

    @property
    def rows(self) -> dict[str, np.ndarray]:
        return {g: self.array[i] for i, g in enumerate(self.ids)}

    def __contains__(self, game_id: str) -> bool:
        return game_id in self.index

    def __len__(self) -> int:
        return len(self.ids)

    def usable(self, game_id: str) -> bool:
        return game_id in self.index and game_id not in self.flagged

    def vector(self, game_id: str) -> np.ndarray:
        return self.array[self.index[game_id]]

    def save(self, path) -> None:
        header = json.dumps({"config": self.config.to_dict(), "dimension": self.dimension}, sort_keys=True)
        lines = [header]
        for g, row in zip(self.ids, self.array):
            lines.append(g + " " + " ".join(repr(float(x)) for x in row))
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            ids, vals = [], []
            for lineno, line in enumerate(fh, start=2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != header["dimension"] + 1:
                    raise EmbeddingError(f"{path}:{lineno}: expected {header['dimension']} values")
                ids.append(parts[0])
                vals.append([float(x) for x in parts[1:]])
        array = np.array(vals, dtype=float).reshape(len(ids), header["dimension"])
        return cls(EmbeddingConfig.from_dict(header["config"]), ids=ids, array=array)


@dataclass
class ReducedEmbedding:
    parent: EmbeddingMatrix
    ids: list[str]
    coords: np.ndarray            # (n, 2)
    projection: np.ndarray        # (2, D), orthonormal rows
    mean: np.ndarray              # (D,)
    eigenvalues: np.ndarray       # all covariance eigenvalues, descending
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {g: i for i, g in enumerate(self.ids)}

    @property
    def rows(self) -> dict[str, np.ndarray]:
        return {g: self.coords[i] for i, g in enumerate(self.ids)}

    @property
    def explained_variance_ratio(self) -> float:
        total = self.eigenvalues.sum()
        k = self.projection.shape[0]
        return float(self.eigenvalues[:k].sum() / total) if total > 0 else 0.0

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) @ self.projection.T

    def __contains__(self, game_id: str) -> bool:
        return game_id in self.index


# ---------------------------------------------------------------- text

def _words(text: str) -> list[str]:
    return text.lower().translate(_PUNCT).split()


def field_tokens(game: Game, fields: Iterable[str]) -> list[str]:
    wanted = set(fields)
    tokens: list[str] = []
    for name in CONTENT_FIELDS:
        if name not in wanted:
            continue
        if name == "title":
            tokens.extend(_words(game.title))
            continue
        for phrase in getattr(game, name):
            words = _words(phrase)
            tokens.extend(words)
            if len(words) > 1:
                tokens.append("_".join(words))
    return tokens


def compose_text(game: Game, fields: Iterable[str]) -> list[str]:
    """Lower-cased tokens of the chosen fields in title, tags, genres, specs order.

    Multi-word tags/genres/specs also yield one underscore-joined token,
    so "Open World" gives ``open``, ``world``, ``open_world``.
    """
    fields = set(fields)
    if not fields <= set(CONTENT_FIELDS):
        raise EmbeddingError(f"unknown content field(s) {sorted(fields - set(CONTENT_FIELDS))}")
    if "title" not in fields:
        raise EmbeddingError("content fields must include 'title'")
    return field_tokens(game, fields)


# ------------------------------------------------------------ skip-gram

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def train_skipgram(sentences: Sequence[Sequence[str]], config: EmbeddingConfig) -> WordVectorTable:
    """Skip-gram with negative sampling, single worker, deterministic in ``config.seed``.

    Negatives are drawn from the unigram distribution raised to 0.75 and
    the learning rate decays linearly to 1e-4 of its initial value.  Each
    returned vector is the token's input vector plus its output vector:
    input vectors alone only encode shared contexts, so tokens that merely
    co-occur (a game and its tags, two co-purchased games) would not end up
    close.  The mean loss of every epoch is kept in ``loss_history``.
    """
    if config.dimension <= 0:
        raise EmbeddingError("dimension must be positive")
    sentences = [list(s) for s in sentences if len(s) > 0]
    if not any(len(s) >= 2 for s in sentences):
        raise EmbeddingError("corpus needs at least one sentence with two or more tokens")

    counts = Counter(tok for s in sentences for tok in s)
    vocab = sorted(counts, key=lambda t: (-counts[t], t))
    index = {t: i for i, t in enumerate(vocab)}
    encoded = [np.array([index[t] for t in s], dtype=np.int64) for s in sentences]

    rng = np.random.default_rng(config.seed)
    V, D, W, K = len(vocab), config.dimension, config.window, config.negatives
    w_in = (rng.random((V, D)) - 0.5) / D
    w_out = np.zeros((V, D))
    noise = np.array([counts[t] for t in vocab], dtype=float) ** 0.75
    noise /= noise.sum()

    pairs_per_epoch = 0
    for s in encoded:
        n = len(s)
        for i in range(n):
            pairs_per_epoch += min(n - 1, i + W) - max(0, i - W)
    total = pairs_per_epoch * config.epochs
    lr0, lr_min = config.learning_rate, config.learning_rate * 1e-4

    labels = np.zeros(K + 1)
    labels[0] = 1.0
    history: list[float] = []
    done = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(encoded))
        negs = rng.choice(V, size=(pairs_per_epoch, K), p=noise)
        k = 0
        loss = 0.0
        for si in order:
            s = encoded[si]
            n = len(s)
            for i in range(n):
                center = s[i]
                h = w_in[center]
                for j in range(max(0, i - W), min(n, i + W + 1)):
                    if j == i:
                        continue
                    lr = lr0 - (lr0 - lr_min) * (done / total)
                    targets = np.empty(K + 1, dtype=np.int64)
                    targets[0] = s[j]
                    targets[1:] = negs[k]
                    out = w_out[targets]
                    scores = out @ h
                    loss -= _log_sigmoid(scores[0]) + _log_sigmoid(-scores[1:]).sum()
                    g = (labels - _sigmoid(scores)) * lr
                    grad_h = g @ out
                    np.add.at(w_out, targets, np.outer(g, h))
                    h += grad_h
                    k += 1
                    done += 1
        history.append(loss / max(k, 1))
    logger.debug("skip-gram epoch losses: %s", history)
    vec = w_in + w_out
    return WordVectorTable(D, {t: vec[i].copy() for t, i in index.items()}, [float(x) for x in history])


def load_word_vectors(path) -> WordVectorTable:
    """Read the "V D" header text format, one ``token v1 .. vD`` line per word."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}:1: expected header 'V D'")
        n, dim = int(header[0]), int(header[1])
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    if len(vectors) != n:
        logger.warning("%s: header says %d vectors, read %d", path, n, len(vectors))
    return WordVectorTable(dim, vectors)


def save_word_vectors(table: WordVectorTable, path) -> None:
    lines = [f"{len(table.vectors)} {table.dimension}"]
    lines += [t + " " + " ".join(repr(float(x)) for x in v) for t, v in table.vectors.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ------------------------------------------------------------ game vectors

def content_embedding(catalog: Catalog, table: WordVectorTable, fields: Iterable[str],
                      config: EmbeddingConfig | None = None) -> EmbeddingMatrix:
    fields = tuple(f for f in CONTENT_FIELDS if f in set(fields))
    if len(table) == 0:
        raise EmbeddingError("word vector table is empty")
    config = config or EmbeddingConfig(source="content", content_fields=fields, dimension=table.dimension)
    ids = list(catalog.games)
    array = np.zeros((len(ids), table.dimension))
    for row, gid in enumerate(ids):
        vecs = [table.vectors[t] for t in compose_text(catalog.games[gid], fields) if t in table.vectors]
        if not vecs:
            continue
        mean = np.mean(vecs, axis=0)
        norm = np.linalg.norm(mean)
        if norm > 0:
            array[row] = mean / norm
    matrix = EmbeddingMatrix(config, ids=ids, array=array)
    if len(matrix.flagged) == len(ids):
        raise EmbeddingError("every game is out of vocabulary; embedding would be degenerate")
    if matrix.flagged:
        logger.warning("%d game(s) have no in-vocabulary tokens and get the zero vector", len(matrix.flagged))
    return matrix


def purchase_sentences(catalog: Catalog, exclude_unplayed: bool = True) -> list[list[str]]:
    """One sentence per large-dataset user: owned games by descending playtime, id tie-break.

    Users left with fewer than two games are dropped since they yield no
    skip-gram pairs.
    """
    skip = catalog.unplayed() if exclude_unplayed else set()
    sentences = []
    for user in catalog.large_users:
        owned = [(g, m) for g, m in user.holdings.items() if g not in skip]
        owned.sort(key=lambda gm: (-gm[1], gm[0]))
        if len(owned) >= 2:
            sentences.append([g for g, _ in owned])
    return sentences


def _context_matrix(sentences, table: WordVectorTable, catalog: Catalog, config) -> EmbeddingMatrix:
    seen = {t for s in sentences for t in s if t in catalog.games}
    ids = [g for g in catalog.games if g in seen]
    array = np.array([table.vectors[g] for g in ids])
    return EmbeddingMatrix(config, ids=ids, array=array)


def build_prod2vec(catalog: Catalog, config: EmbeddingConfig) -> EmbeddingMatrix:
    sentences = purchase_sentences(catalog, config.exclude_unplayed)
    if not sentences:
        raise EmbeddingError("no user holds two or more (played) games; Prod2Vec has nothing to learn")
    table = train_skipgram(sentences, config)
    return _context_matrix(sentences, table, catalog, config)


def build_metaprod2vec(catalog: Catalog, config: EmbeddingConfig,
                       meta_fields: Iterable[str] = ("tags", "genres")) -> EmbeddingMatrix:
    """Prod2Vec over user sentences with each game followed by its ``meta:`` tokens."""
    meta_fields = tuple(f for f in CONTENT_FIELDS if f in set(meta_fields))
    base = purchase_sentences(catalog, config.exclude_unplayed)
    if not base:
        raise EmbeddingError("no user holds two or more (played) games; MetaProd2Vec has nothing to learn")
    meta = {g: [META_PREFIX + t for t in field_tokens(catalog.games[g], meta_fields)]
            for g in catalog.games} if meta_fields else {}
    sentences = []
    for s in base:
        out: list[str] = []
        for g in s:
            out.append(g)
            out.extend(meta.get(g, ()))
        sentences.append(out)
    table = train_skipgram(sentences, config)
    return _context_matrix(base, table, catalog, config)


def build_embedding(catalog: Catalog, config: EmbeddingConfig, table: WordVectorTable | None = None,
                    meta_fields: Iterable[str] | None = None) -> EmbeddingMatrix:
    """Dispatch on ``config.source``.  Content vectors are trained on the
    composed game texts unless a pretrained ``table`` is passed."""
    if config.source == "content":
        if table is None:
            corpus = [compose_text(g, config.content_fields) for g in catalog.games.values()]
            table = train_skipgram(corpus, config)
        return content_embedding(catalog, table, config.content_fields, config)
    if config.source == "prod2vec":
        return build_prod2vec(catalog, config)
    fields = config.content_fields if meta_fields is None else meta_fields
    return build_metaprod2vec(catalog, config, fields)


# ------------------------------------------------------------------ kernels

def pca_reduce(matrix: EmbeddingMatrix, target_dim: int = 2) -> ReducedEmbedding:
    """Project usable rows onto the top principal components.

    Components come from the covariance eigendecomposition in descending
    eigenvalue order; each is signed so its largest-magnitude loading is
    positive.
    """
    ids = [g for g in matrix.ids if g not in matrix.flagged]
    if len(ids) < target_dim + 1:
        raise EmbeddingError(f"need at least {target_dim + 1} embedded games, have {len(ids)}")
    if matrix.dimension < target_dim:
        raise EmbeddingError(f"embedding dimension {matrix.dimension} < target {target_dim}")
    x = matrix.array[[matrix.index[g] for g in ids]]
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(ids) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order[:target_dim]].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return ReducedEmbedding(matrix, ids, centered @ comps.T, comps, mean, evals)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def usable_members(item_ids: Iterable[str], matrix: EmbeddingMatrix) -> list[str]:
    return [g for g in item_ids if matrix.usable(g)]


def bundle_centroid(bundle: Bundle | Sequence[str], matrix: EmbeddingMatrix) -> np.ndarray:
    item_ids = bundle.item_ids if isinstance(bundle, Bundle) else bundle
    members = usable_members(item_ids, matrix)
    if not members:
        raise EmbeddingError("bundle has no embeddable members")
    return matrix.array[[matrix.index[g] for g in members]].mean(axis=0)
