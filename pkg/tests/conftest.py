import json

import pytest

from bundlepop.catalog import generate_synthetic_catalog
from bundlepop.embeddings import EmbeddingConfig, build_embedding, pca_reduce
from bundlepop.pipeline import score_and_label, train_models
from bundlepop.popmodel import ModelConfig


@pytest.fixture(scope="session")
def catalog():
    return generate_synthetic_catalog(seed=1, n_games=200, n_users=50, n_bundles=40, cluster_count=5)


@pytest.fixture(scope="session")
def matrix(catalog):
    return build_embedding(catalog, EmbeddingConfig())


@pytest.fixture(scope="session")
def reduced(matrix):
    return pca_reduce(matrix)


@pytest.fixture(scope="session")
def state(catalog, matrix, reduced):
    st = score_and_label(catalog, matrix, reduced)
    train_models(st, ModelConfig())
    return st


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def tiny_files(tmp_path):
    games = [
        {"game_id": f"g{i}", "title": f"Game {i}", "tags": ["Action"], "genres": ["Indie"], "specs": [],
         "price": 10.0, "release_date": "2021-08-30", "developer": "dev", "sentiment": 3}
        for i in (1, 2, 3)
    ]
    users = [{"user_id": "u1", "items": [{"game_id": "g1", "playtime_min": 10},
                                         {"game_id": "g2", "playtime_min": 0}]}]
    bundles = [{"bundle_id": "b1", "name": "Pair", "items": ["g1", "g2"], "price": 15.0,
                "discount_pct": 25, "purchasers": ["s1"]}]
    return (write_lines(tmp_path / "games.jsonl", games), write_lines(tmp_path / "users.jsonl", users),
            write_lines(tmp_path / "bundles.jsonl", bundles))


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
