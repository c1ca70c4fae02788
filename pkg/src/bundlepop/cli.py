"""Command-line pipeline: synth/ingest -> embed -> metrics -> train -> evaluate -> optimize -> report.

Every stage reads and writes artifacts under one output directory::

    <out>/data/*.jsonl            synthetic input (synth)
    <out>/catalog/*.jsonl         validated catalog (ingest)
    <out>/game_stats.csv
    <out>/embeddings/<name>.emb   game vectors (embed)
    <out>/embeddings/<name>.pca.json
    <out>/metrics.csv, cutoffs.json
    <out>/models/*.json
    <out>/eval/report.json, grid.csv
    <out>/optimize/bundles.jsonl, movelog.jsonl, report.csv, regression.csv
    <out>/report/table.csv
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import (CATALOG_FILES, CatalogError, bundle_to_record, compute_game_stats, dump_catalog,
                      generate_synthetic_catalog, load_catalog, load_catalog_dir, write_jsonl)
from .embeddings import (CONTENT_FIELDS, SOURCES, EmbeddingConfig, EmbeddingError, EmbeddingMatrix,
                         ReducedEmbedding, build_embedding, load_word_vectors, pca_reduce)
from .generator import (OBJECTIVES, SHIFTS, TABLE_STRATEGIES, OptimizationConfig, PopularityModels, Strategy,
                        generate_from_seed, regression_improvement_report, regression_report_csv, run_campaign)
from .io import atomic_write_text, derive_seed, rng_for
from .metrics import (METRICS, PercentileCutoffs, canonical_metric, coverage, label_bundles, metrics_csv,
                      read_metrics_csv, score_bundles)
from .pipeline import PipelineState, aggregate_cutoffs, train_models
from .popmodel import (FeatureBuilder, ModelConfig, ModelError, load_model, save_model, train_and_evaluate)

logger = logging.getLogger("bundlepop")

EXIT_OK, EXIT_INVALID, EXIT_MISSING = 0, 1, 2


class ConfigError(ValueError):
    pass


class MissingArtifact(RuntimeError):
    pass


# ------------------------------------------------------------------- config

def _defaults() -> dict:
    emb = EmbeddingConfig().to_dict()
    emb.pop("seed")
    emb.update(name=None, pretrained=None, meta_fields=None)
    opt = OptimizationConfig().to_dict()
    opt.pop("seed")
    opt.update(reps=30, objectives=list(OBJECTIVES), strategies=[s.value for s in TABLE_STRATEGIES])
    model = asdict(ModelConfig())
    model.pop("seed")
    return {
        "paths": {"games": None, "users": None, "bundles": None, "out": "run"},
        "reference_date": "2023-08-30",
        "synth": {"n_games": 200, "n_users": 50, "n_bundles": 40, "clusters": 5},
        "embedding": emb,
        "cutoffs": {"lower_pct": 60.0, "upper_pct": 80.0, "per_metric": {}},
        "model": model,
        "evaluate": {"train_frac": 0.8},
        "optimization": opt,
        "seed": 0,
        "threads": os.cpu_count() or 1,
        "log_level": "INFO",
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and key != "per_metric":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be an object")
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value
    return base


def load_run_config(path: str | None) -> dict:
    cfg = _defaults()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"--config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config {path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"--config {path}: top level must be an object")
        _merge(cfg, data)
    return cfg


def _apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    flag_map = {
        "out": ("paths", "out"), "games": ("paths", "games"), "users": ("paths", "users"),
        "bundles": ("paths", "bundles"), "seed": ("seed",), "threads": ("threads",),
        "log_level": ("log_level",), "reference_date": ("reference_date",),
        "n_games": ("synth", "n_games"), "n_users": ("synth", "n_users"),
        "n_bundles": ("synth", "n_bundles"), "clusters": ("synth", "clusters"),
        "source": ("embedding", "source"), "fields": ("embedding", "content_fields"),
        "meta_fields": ("embedding", "meta_fields"), "dim": ("embedding", "dimension"),
        "window": ("embedding", "window"), "negatives": ("embedding", "negatives"),
        "epochs_emb": ("embedding", "epochs"), "lr": ("embedding", "learning_rate"),
        "pretrained": ("embedding", "pretrained"), "name": ("embedding", "name"),
        "embedding_source": ("embedding", "name"),
        "l2": ("model", "l2"), "epochs": ("model", "epochs"),
        "train_frac": ("evaluate", "train_frac"),
        "strategy": ("optimization", "strategies"), "objective": ("optimization", "objectives"),
        "iters": ("optimization", "max_iters"), "temp": ("optimization", "temperature"),
        "removal_prob": ("optimization", "removal_prob"), "reps": ("optimization", "reps"),
        "pool": ("optimization", "candidate_pool"),
    }
    for attr, path in flag_map.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    return cfg


def _embedding_config(cfg: dict) -> EmbeddingConfig:
    e = cfg["embedding"]
    kwargs = {f.name: e[f.name] for f in fields(EmbeddingConfig) if f.name in e}
    kwargs["content_fields"] = tuple(kwargs["content_fields"])
    kwargs["seed"] = derive_seed(cfg["seed"], "embedding")
    try:
        return EmbeddingConfig(**kwargs)
    except (EmbeddingError, TypeError) as exc:
        raise ConfigError(f"embedding config: {exc}") from exc


def embedding_name(cfg: dict) -> str:
    e = cfg["embedding"]
    if e.get("name"):
        return e["name"]
    if e["source"] == "content":
        return "content_" + "+".join(f for f in CONTENT_FIELDS if f in e["content_fields"])
    if e["source"] == "metaprod2vec":
        meta = e["meta_fields"] if e.get("meta_fields") is not None else e["content_fields"]
        return "metaprod2vec_" + ("+".join(f for f in CONTENT_FIELDS if f in meta) or "none")
    return e["source"]


def _model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig(**cfg["model"], seed=derive_seed(cfg["seed"], "train"))
    except TypeError as exc:
        raise ConfigError(f"model config: {exc}") from exc


def _optimization_config(cfg: dict, strategy=None, objective=None) -> OptimizationConfig:
    o = dict(cfg["optimization"])
    for k in ("reps", "objectives", "strategies"):
        o.pop(k)
    strategies = _as_list(cfg["optimization"]["strategies"])
    objectives = _as_list(cfg["optimization"]["objectives"])
    o["strategy"] = strategy or strategies[0]
    o["objective"] = objective or objectives[0]
    try:
        return OptimizationConfig(**o, seed=derive_seed(cfg["seed"], "optimize"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optimization config: {exc}") from exc


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


# ---------------------------------------------------------------- artifacts

class Workspace:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["paths"]["out"])

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def require(self, path: Path, what: str, hint: str) -> Path:
        if not path.exists():
            raise MissingArtifact(f"missing {what} artifact {path} (run `{hint}` first)")
        return path

    @property
    def reference_date(self) -> date:
        try:
            return date.fromisoformat(self.cfg["reference_date"])
        except ValueError as exc:
            raise ConfigError(f"reference_date: {exc}") from exc

    def catalog(self):
        d = self.path("catalog")
        for name in CATALOG_FILES:
            self.require(d / name, "catalog", "ingest")
        return load_catalog_dir(d, self.reference_date)

    def embedding_name(self) -> str:
        """Configured embedding name; a bare source name picks its single artifact."""
        name = embedding_name(self.cfg)
        d = self.path("embeddings")
        if not (d / f"{name}.emb").exists() and name in SOURCES:
            found = sorted(d.glob(f"{name}_*.emb"))
            if len(found) == 1:
                return found[0].name[:-4]
        return name

    def embedding(self, name: str | None = None) -> tuple[EmbeddingMatrix, ReducedEmbedding]:
        name = name or self.embedding_name()
        path = self.require(self.path("embeddings", f"{name}.emb"), "embedding", f"embed --name {name}")
        matrix = EmbeddingMatrix.load(path)
        pca = self.require(self.path("embeddings", f"{name}.pca.json"), "embedding", f"embed --name {name}")
        with open(pca, encoding="utf-8") as fh:
            d = json.load(fh)
        reduced = ReducedEmbedding(matrix, d["ids"], np.array(d["coords"]).reshape(-1, 2),
                                   np.array(d["projection"]), np.array(d["mean"]), np.array(d["eigenvalues"]))
        return matrix, reduced

    def metrics(self):
        path = self.require(self.path("metrics.csv"), "metrics", "metrics")
        scores, labels, cov = read_metrics_csv(path)
        with open(self.require(self.path("cutoffs.json"), "metrics", "metrics"), encoding="utf-8") as fh:
            meta = json.load(fh)
        cutoffs = {m: PercentileCutoffs.from_dict(meta["cutoffs"][m]) for m in METRICS}
        return scores, labels, cov, cutoffs, meta

    def models(self, builder: FeatureBuilder) -> PopularityModels:
        d = self.require(self.path("models"), "model", "train")
        models = PopularityModels(builder)
        for m in METRICS:
            clf, reg = d / f"{m}.clf.json", d / f"{m}.reg.json"
            if clf.exists():
                models.classifiers[m] = load_model(clf)
            if reg.exists():
                models.regressors[m] = load_model(reg)
        agg = d / "aggregate.json"
        if agg.exists():
            with open(agg, encoding="utf-8") as fh:
                models.aggregate_cutoffs = PercentileCutoffs.from_dict(json.load(fh))
        if not models.classifiers:
            raise MissingArtifact(f"no trained classifiers under {d} (run `train` first)")
        return models


def _write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# -------------------------------------------------------------- subcommands

def cmd_synth(cfg: dict, args) -> None:
    s = cfg["synth"]
    ws = Workspace(cfg)
    catalog = generate_synthetic_catalog(cfg["seed"], s["n_games"], s["n_users"], s["n_bundles"],
                                         s["clusters"], ws.reference_date)
    paths = dump_catalog(catalog, ws.path("data"))
    logger.info("wrote %d games, %d users, %d bundles under %s", len(catalog.games),
                len(catalog.large_users), len(catalog.bundles), paths[0].parent)


def cmd_ingest(cfg: dict, args) -> None:
    ws = Workspace(cfg)
    p = cfg["paths"]
    sources = [Path(p[k]) if p[k] else ws.path("data", name)
               for k, name in zip(("games", "users", "bundles"), CATALOG_FILES)]
    for flag, src in zip(("--games", "--users", "--bundles"), sources):
        if not src.exists():
            raise MissingArtifact(f"{flag}: input file {src} does not exist")
    catalog = load_catalog(*sources, reference_date=ws.reference_date)
    dump_catalog(catalog, ws.path("catalog"))
    stats = compute_game_stats(catalog)
    rows = [["game_id", "total_playtime", "download_count", "playtime_per_download", "age_years"]]
    rows += [[s.game_id, s.total_playtime, s.download_count, repr(s.playtime_per_download), repr(s.age_years)]
             for s in stats.values()]
    atomic_write_text(ws.path("game_stats.csv"), _csv_text(rows))
    logger.info("catalog: %d games, %d users, %d bundles (%d unplayed games)", len(catalog.games),
                len(catalog.large_users), len(catalog.bundles), len(catalog.unplayed()))


def cmd_embed(cfg: dict, args) -> None:
    ws = Workspace(cfg)
    catalog = ws.catalog()
    config = _embedding_config(cfg)
    table = None
    pretrained = cfg["embedding"].get("pretrained")
    if pretrained:
        if config.source != "content":
            raise ConfigError("--pretrained only applies to --source content")
        if not Path(pretrained).exists():
            raise MissingArtifact(f"--pretrained: file {pretrained} does not exist")
        table = load_word_vectors(pretrained)
    meta = cfg["embedding"].get("meta_fields")
    matrix = build_embedding(catalog, config, table, meta)
    reduced = pca_reduce(matrix)
    name = embedding_name(cfg)
    matrix.save(ws.path("embeddings", f"{name}.emb"))
    _write_json(ws.path("embeddings", f"{name}.pca.json"), {
        "ids": reduced.ids, "coords": reduced.coords.tolist(), "projection": reduced.projection.tolist(),
        "mean": reduced.mean.tolist(), "eigenvalues": reduced.eigenvalues.tolist(),
        "explained_variance_ratio": reduced.explained_variance_ratio})
    logger.info("embedding %s: %d games x %d dims, %d flagged; 2-D PCA keeps %.1f%% variance", name,
                len(matrix), matrix.dimension, len(matrix.flagged), 100 * reduced.explained_variance_ratio)


def _fit_labels(cfg: dict, scores):
    c = cfg["cutoffs"]
    labels, cutoffs = label_bundles(scores, lower_pct=c["lower_pct"], upper_pct=c["upper_pct"])
    overrides = c.get("per_metric") or {}
    if overrides:
        from .metrics import categorize, fit_cutoffs
        for m, pct in overrides.items():
            m = canonical_metric(m)
            unknown = set(pct) - {"lower_pct", "upper_pct"}
            if unknown:
                raise ConfigError(f"unknown config key 'cutoffs.per_metric.{m}.{sorted(unknown)[0]}'")
            values = {s.bundle_id: s.get(m) for s in scores}
            cutoffs[m] = fit_cutoffs(values.values(), m, pct.get("lower_pct", c["lower_pct"]),
                                     pct.get("upper_pct", c["upper_pct"]))
            labels[m] = categorize(values, cutoffs[m])
    return labels, cutoffs


def cmd_metrics(cfg: dict, args) -> None:
    ws = Workspace(cfg)
    catalog = ws.catalog()
    matrix, _ = ws.embedding()
    scores = score_bundles(catalog, matrix)
    labels, cutoffs = _fit_labels(cfg, scores)
    cov = coverage(catalog.bundles.values(), matrix)
    atomic_write_text(ws.path("metrics.csv"), metrics_csv(scores, labels, cov))
    _write_json(ws.path("cutoffs.json"), {"embedding": ws.embedding_name(),
                                          "cutoffs": {m: c.to_dict() for m, c in cutoffs.items()}})
    from .metrics import category_counts
    for m in METRICS:
        logger.info("%-6s categories %s", m, category_counts(labels[m]))
    logger.info("coverage %.4f", cov)


def _state(ws: Workspace) -> PipelineState:
    catalog = ws.catalog()
    matrix, reduced = ws.embedding()
    scores, labels, cov, cutoffs, meta = ws.metrics()
    if meta.get("embedding") != ws.embedding_name():
        logger.warning("metrics were computed with embedding %s, using %s", meta.get("embedding"),
                       ws.embedding_name())
    return PipelineState(catalog, matrix, reduced, scores, labels, cutoffs, cov)


def _targets(value) -> list[str]:
    out = []
    for t in _as_list(value):
        out.extend(METRICS if t == "aggregate" else [canonical_metric(t)])
    return list(dict.fromkeys(out))


def cmd_train(cfg: dict, args) -> None:
    ws = Workspace(cfg)
    ws.require(ws.path("embeddings", f"{ws.embedding_name()}.emb"), "embedding", "embed")
    ws.require(ws.path("metrics.csv"), "metrics", "metrics")
    state = _state(ws)
    target = getattr(args, "target", None) or "aggregate"
    metrics = _targets(target)
    models = train_models(state, _model_config(cfg), metrics)
    for m in metrics:
        if m in models.classifiers:
            save_model(models.classifiers[m], ws.path("models", f"{m}.clf.json"))
        if m in models.regressors:
            save_model(models.regressors[m], ws.path("models", f"{m}.reg.json"))
    if target == "aggregate":
        c = cfg["cutoffs"]
        _write_json(ws.path("models", "aggregate.json"),
                    aggregate_cutoffs(state.labels, c["lower_pct"], c["upper_pct"]).to_dict())
    logger.info("trained %d classifier(s), %d regressor(s)", len(models.classifiers), len(models.regressors))


def cmd_evaluate(cfg: dict, args) -> None:
    ws = Workspace(cfg)
    catalog = ws.catalog()
    scores, labels, _, _, _ = ws.metrics()
    emb_dir = ws.require(ws.path("embeddings"), "embedding", "embed")
    names = sorted(p.name[:-4] for p in emb_dir.glob("*.emb"))
    if not names:
        raise MissingArtifact(f"no embeddings under {emb_dir} (run `embed` first)")
    mconf = _model_config(cfg)
    split_seed = derive_seed(cfg["seed"], "evaluate")
    reports, grid = [], [["embedding", "metric", "auc_x100", "f1_x100", "n_train", "n_test"]]
    bundles = [catalog.bundles[s.bundle_id] for s in scores]
    for name in names:
        matrix, reduced = ws.embedding(name)
        # diversity labels depend on the embedding being evaluated
        local_scores = score_bundles(catalog, matrix, bundles)
        local_labels, _ = _fit_labels(cfg, local_scores)
        builder = FeatureBuilder(catalog, reduced, mconf)
        for m in METRICS:
            fvs = [builder.features(b, m) for b in bundles]
            labs = [local_labels[m][b.bundle_id] for b in bundles]
            try:
                _, rep = train_and_evaluate(fvs, labs, mconf, m, cfg["evaluate"]["train_frac"], split_seed)
            except ModelError as exc:
                logger.warning("%s/%s not evaluated: %s", name, m, exc)
                grid.append([name, m, "", "", "", ""])
                continue
            reports.append({"embedding": name, **rep.to_dict()})
            grid.append([name, m, f"{100 * rep.auc_macro:.1f}", f"{100 * rep.f1_macro:.1f}",
                         rep.n_train, rep.n_test])
    _write_json(ws.path("eval", "report.json"), reports)
    atomic_write_text(ws.path("eval", "grid.csv"), _csv_text(grid))
    logger.info("evaluated %d embedding(s) x %d metrics", len(names), len(METRICS))


def cmd_optimize(cfg: dict, args) -> None:
    ws = Workspace(cfg)
    state = _state(ws)
    builder = FeatureBuilder(state.catalog, state.reduced, _model_config(cfg))
    models = ws.models(builder)
    strategies = [Strategy.parse(s) for s in _as_list(cfg["optimization"]["strategies"])]
    objectives = [o if o == "aggregate" else canonical_metric(o)
                  for o in _as_list(cfg["optimization"]["objectives"])]
    for o in objectives:
        if o == "aggregate" and models.aggregate_cutoffs is None:
            raise MissingArtifact(f"missing model artifact {ws.path('models', 'aggregate.json')} "
                                  "(run `train --target aggregate` first)")
        if o != "aggregate" and o not in models.classifiers:
            raise MissingArtifact(f"missing model artifact {ws.path('models', o + '.clf.json')} "
                                  f"(run `train --target {o}` first)")
    out = ws.path("optimize")
    base = _optimization_config(cfg, objective=objectives[0])
    reps = int(cfg["optimization"]["reps"])
    threads = int(cfg["threads"])
    table_strats = [s for s in strategies if s is not Strategy.SEED]

    if table_strats:
        report = run_campaign(state.catalog, base, models, state.matrix, objectives, table_strats, reps,
                              threads=threads, keep_logs=True)
        atomic_write_text(out / "report.csv", report.to_csv())
        key = (objectives[0], table_strats[0].value)
        updated = report.final_bundles[key]
        write_jsonl(out / "bundles.jsonl", (bundle_to_record(b) for b in updated))
        write_jsonl(out / "movelog.jsonl", report.logs[key])
        if all(m in models.regressors for m in METRICS):
            before = sorted(state.catalog.bundles.values(), key=lambda b: b.bundle_id)
            table = regression_improvement_report(state.catalog, before, updated, models.regressors, builder)
            atomic_write_text(out / "regression.csv", regression_report_csv(table))
        logger.info("campaign: %d objective(s) x %d strategies x %d reps", len(objectives), len(table_strats), reps)

    if Strategy.SEED in strategies:
        cfg_seed = _optimization_config(cfg, strategy=Strategy.SEED, objective=objectives[0])
        rng = rng_for(cfg_seed.seed, "seed-bundles")
        pool = [g for g in state.matrix.ids if state.matrix.usable(g) and g in state.reduced.index
                and g not in state.catalog.unplayed()]
        sizes = [len(b.item_ids) for b in state.catalog.bundles.values()]
        target = max(cfg_seed.min_size, int(np.median(sizes)))
        made = []
        for k in range(min(len(state.catalog.bundles), len(pool))):
            seed_game = pool[int(rng.integers(len(pool)))]
            made.append(generate_from_seed(seed_game, target, cfg_seed, models, state.catalog, state.matrix,
                                           rng, taken_ids=[b.bundle_id for b in made]))
        write_jsonl(out / "seed_bundles.jsonl", (bundle_to_record(b) for b in made))
        logger.info("seed strategy: built %d new bundles of size %d", len(made), target)


def _fmt_interval(lo: str, hi: str) -> str:
    return f"({float(lo):.0f}%-{float(hi):.0f}%)"


def cmd_report(cfg: dict, args) -> None:
    ws = Workspace(cfg)
    path = ws.require(ws.path("optimize", "report.csv"), "campaign report", "optimize")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    strategies = [h[:-5] for h in rows[0].keys() if h.endswith("_mean")] if rows else []
    table = [["metric", "category_shift", *strategies]]
    for r in rows:
        table.append([r["objective"], r["shift"],
                      *(_fmt_interval(r[f"{s}_lower"], r[f"{s}_upper"]) for s in strategies)])
    text = _csv_text(table)
    atomic_write_text(ws.path("report", "table.csv"), text)
    reg = ws.path("optimize", "regression.csv")
    if reg.exists():
        atomic_write_text(ws.path("report", "regression.csv"), reg.read_text(encoding="utf-8"))
    sys.stdout.write(text)


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "embed": cmd_embed, "metrics": cmd_metrics,
    "train": cmd_train, "evaluate": cmd_evaluate, "optimize": cmd_optimize, "report": cmd_report,
}


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    d = _defaults()
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON run config; flags take precedence (default: none)")
    g.add_argument("--out", help=f"output directory (default: {d['paths']['out']})")
    g.add_argument("--seed", type=int, help=f"global seed (default: {d['seed']})")
    g.add_argument("--threads", type=int, help="worker processes; 1 forces the deterministic "
                                               "single-process path (default: CPU count)")
    g.add_argument("--log-level", dest="log_level", help=f"logging level (default: {d['log_level']})")
    g.add_argument("--reference-date", dest="reference_date",
                   help=f"date ages are computed against (default: {d['reference_date']})")

    parser = argparse.ArgumentParser(prog="bundlepop", description="Bundle popularity estimation and generation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic clustered catalog")
    s = d["synth"]
    p.add_argument("--n-games", dest="n_games", type=int, help=f"games (default: {s['n_games']})")
    p.add_argument("--n-users", dest="n_users", type=int, help=f"users (default: {s['n_users']})")
    p.add_argument("--n-bundles", dest="n_bundles", type=int, help=f"bundles (default: {s['n_bundles']})")
    p.add_argument("--clusters", type=int, help=f"genre/tag clusters (default: {s['clusters']})")

    p = sub.add_parser("ingest", parents=[common], help="validate JSON-lines input into the catalog")
    p.add_argument("--games", help="games.jsonl (default: <out>/data/games.jsonl)")
    p.add_argument("--users", help="users.jsonl (default: <out>/data/users.jsonl)")
    p.add_argument("--bundles", help="bundles.jsonl (default: <out>/data/bundles.jsonl)")

    e = d["embedding"]
    emb_flags = argparse.ArgumentParser(add_help=False)
    emb_flags.add_argument("--name", help="embedding artifact name (default: derived from source and fields)")
    emb_flags.add_argument("--embedding-source", dest="embedding_source",
                           help="alias of --name; a bare source name such as content selects its single artifact "
                                "(default: derived from source and fields)")
    p = sub.add_parser("embed", parents=[common, emb_flags], help="build game embeddings and their 2-D PCA")
    p.add_argument("--source", choices=SOURCES, help=f"embedding source (default: {e['source']})")
    p.add_argument("--fields", nargs="+", choices=CONTENT_FIELDS,
                   help=f"content fields, title required (default: {' '.join(e['content_fields'])})")
    p.add_argument("--meta-fields", dest="meta_fields", nargs="*", choices=CONTENT_FIELDS,
                   help="MetaProd2Vec side-information fields (default: same as --fields)")
    p.add_argument("--dim", type=int, help=f"vector dimension (default: {e['dimension']})")
    p.add_argument("--window", type=int, help=f"skip-gram window (default: {e['window']})")
    p.add_argument("--negatives", type=int, help=f"negative samples (default: {e['negatives']})")
    p.add_argument("--epochs", dest="epochs_emb", type=int, help=f"training epochs (default: {e['epochs']})")
    p.add_argument("--lr", type=float, help=f"initial learning rate (default: {e['learning_rate']})")
    p.add_argument("--pretrained", help="word vectors in 'V D' text format (default: train in-repo)")

    c = d["cutoffs"]
    p = sub.add_parser("metrics", parents=[common, emb_flags], help="score bundles and assign categories")

    m = d["model"]
    p = sub.add_parser("train", parents=[common, emb_flags], help="fit popularity classifiers and regressors")
    p.add_argument("--target", choices=["P_eb", "P_mb", "N0", "PB", "D", "aggregate"],
                   help="metric to model; aggregate fits all five (default: aggregate)")
    p.add_argument("--l2", type=float, help=f"L2 penalty (default: {m['l2']})")
    p.add_argument("--epochs", type=int, help=f"gradient-descent epoch cap (default: {m['epochs']})")

    p = sub.add_parser("evaluate", parents=[common, emb_flags],
                       help="held-out AUC/F1 for every embedding x metric")
    p.add_argument("--train-frac", dest="train_frac", type=float,
                   help=f"training share of the stratified split (default: {d['evaluate']['train_frac']})")
    p.add_argument("--l2", type=float, help=f"L2 penalty (default: {m['l2']})")
    p.add_argument("--epochs", type=int, help=f"gradient-descent epoch cap (default: {m['epochs']})")

    o = d["optimization"]
    p = sub.add_parser("optimize", parents=[common, emb_flags], help="improve bundles and report category shifts")
    p.add_argument("--strategy", nargs="+", choices=[s.value for s in Strategy],
                   help=f"strategies (default: {' '.join(o['strategies'])})")
    p.add_argument("--objective", nargs="+", choices=[*OBJECTIVES, "N0", "PB", "D"],
                   help=f"objectives (default: {' '.join(o['objectives'])})")
    p.add_argument("--iters", type=int, help=f"moves per bundle (default: {o['max_iters']})")
    p.add_argument("--temp", type=float, help=f"sampling temperature (default: {o['temperature']})")
    p.add_argument("--removal-prob", dest="removal_prob", type=float,
                   help=f"removal probability (default: {o['removal_prob']})")
    p.add_argument("--reps", type=int, help=f"seeded repetitions per bundle (default: {o['reps']})")
    p.add_argument("--pool", choices=["all_games", "same_cluster"],
                   help=f"candidate pool (default: {o['candidate_pool']})")

    sub.add_parser("report", parents=[common], help="format the campaign table (category shifts with 95%% bounds)")
    return parser


def _normalize(cfg: dict) -> dict:
    o = cfg["optimization"]
    o["objectives"] = [x if x == "aggregate" else canonical_metric(x) for x in _as_list(o["objectives"])]
    o["strategies"] = [Strategy.parse(x).value for x in _as_list(o["strategies"])]
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _normalize(_apply_flags(load_run_config(args.config), args))
        logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
        COMMANDS[args.command](cfg, args)
    except MissingArtifact as exc:
        logger.error("%s", exc)
        return EXIT_MISSING
    except CatalogError as exc:
        for problem in exc.problems:
            logger.error("%s", problem)
        return EXIT_INVALID
    except (ConfigError, EmbeddingError, ModelError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
