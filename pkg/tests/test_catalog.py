import json
import logging
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bundlepop.catalog import (Bundle, Catalog, CatalogError, Game, UserLibrary, age_years, compute_game_stats,
                               dump_catalog, generate_synthetic_catalog, load_catalog, load_catalog_dir,
                               synthetic_cluster)
from conftest import write_lines


def test_minimal_catalog(tiny_files):
    cat = load_catalog(*tiny_files)
    assert len(cat.games) == 3 and len(cat.bundles) == 1
    assert cat.bundles["b1"].item_ids == ("g1", "g2")
    assert cat.small_users == ["s1"]


def test_dangling_reference_names_game_and_line(tiny_files, tmp_path):
    games, users, _ = tiny_files
    bad = write_lines(tmp_path / "bad.jsonl", [
        {"bundle_id": "b1", "name": "ok", "items": ["g1"], "price": 1, "discount_pct": 0, "purchasers": []},
        {"bundle_id": "b2", "name": "x", "items": ["g1", "g99"], "price": 1, "discount_pct": 0, "purchasers": []},
    ])
    with pytest.raises(CatalogError) as err:
        load_catalog(games, users, bad)
    msg = str(err.value)
    assert "g99" in msg and "bad.jsonl:2" in msg


def test_all_problems_reported_together(tiny_files, tmp_path):
    games, users, bundles = tiny_files
    text = games.read_text() + "{not json\n" + json.dumps({"game_id": "g1", "title": "dup"}) + "\n"
    games.write_text(text)
    with pytest.raises(CatalogError) as err:
        load_catalog(games, users, bundles)
    assert len(err.value.problems) >= 2
    assert any("games.jsonl:4" in p for p in err.value.problems)
    assert any("g1" in p for p in err.value.problems)


def test_unknown_field_warns(tiny_files, caplog):
    games, users, bundles = tiny_files
    recs = [json.loads(l) for l in games.read_text().splitlines()]
    recs[0]["metacritic"] = 90
    write_lines(games, recs)
    with caplog.at_level(logging.WARNING):
        cat = load_catalog(games, users, bundles)
    assert len(cat.games) == 3
    assert "metacritic" in caplog.text


def test_fixture_counts(catalog):
    assert (len(catalog.games), len(catalog.large_users), len(catalog.bundles)) == (200, 50, 40)


def test_stats_examples():
    games = {g: Game(g, g.upper(), release_date=date(2021, 8, 30)) for g in ("a", "b")}
    users = [UserLibrary("u1", {"a": 10}), UserLibrary("u2", {"a": 0}), UserLibrary("u3", {"a": 5})]
    cat = Catalog(games, users, {}, reference_date=date(2023, 8, 30))
    stats = compute_game_stats(cat)
    assert (stats["a"].total_playtime, stats["a"].download_count, stats["a"].playtime_per_download) == (15, 3, 5.0)
    assert (stats["b"].total_playtime, stats["b"].download_count, stats["b"].playtime_per_download) == (0, 0, 0.0)
    assert stats["a"].age_years == pytest.approx(2.0, abs=1 / 365)


def test_age_not_negative():
    assert age_years(date(2024, 1, 1), date(2023, 8, 30)) == 0.0
    assert age_years(None, date(2023, 8, 30)) == 0.0


def test_synthetic_deterministic(tmp_path):
    a = dump_catalog(generate_synthetic_catalog(seed=1), tmp_path / "a")
    b = dump_catalog(generate_synthetic_catalog(seed=1), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_synthetic_seed_sensitivity():
    a, b = generate_synthetic_catalog(seed=1), generate_synthetic_catalog(seed=2)
    assert [u.holdings for u in a.large_users] != [u.holdings for u in b.large_users]


def test_cluster_purity(catalog):
    for u in catalog.large_users:
        clusters = [synthetic_cluster(catalog.games[g]) for g in u.holdings]
        top = max(clusters.count(c) for c in set(clusters))
        assert top / len(clusters) >= 0.8, u.user_id


def test_stats_sum_identity(catalog):
    stats = catalog.stats()
    assert sum(s.total_playtime for s in stats.values()) == sum(
        t for u in catalog.large_users for t in u.holdings.values())
    assert sum(s.download_count for s in stats.values()) == sum(len(u.holdings) for u in catalog.large_users)


def test_synthetic_rejects_bad_sizes():
    with pytest.raises(ValueError):
        generate_synthetic_catalog(seed=1, n_games=3, cluster_count=5)


ids = st.text(alphabet="abcdefgh0123456789", min_size=1, max_size=6)


@st.composite
def catalogs(draw):
    game_ids = draw(st.lists(ids, min_size=1, max_size=8, unique=True))
    games = {}
    for g in game_ids:
        games[g] = Game(g, draw(st.text(alphabet="Zombie Rain:'éß9", min_size=1, max_size=12).filter(str.strip)),
                        tuple(draw(st.lists(st.sampled_from(["RPG", "Co-op", "Open World"]), max_size=3))),
                        ("Indie",), (), draw(st.floats(0, 100, allow_nan=False)),
                        draw(st.one_of(st.none(), st.dates(date(1990, 1, 1), date(2023, 1, 1)))),
                        draw(st.one_of(st.none(), st.text(min_size=1, max_size=5))),
                        draw(st.one_of(st.none(), st.sampled_from([1, 2, 3, 5]))))
    users = [UserLibrary(f"u{i}", draw(st.dictionaries(st.sampled_from(game_ids), st.integers(0, 10**6))))
             for i in range(draw(st.integers(0, 4)))]
    bundles = {}
    for i in range(draw(st.integers(0, 3))):
        items = draw(st.lists(st.sampled_from(game_ids), min_size=1, unique=True))
        bundles[f"b{i}"] = Bundle(f"b{i}", f"Bundle {i}", tuple(items), draw(st.floats(0, 500, allow_nan=False)),
                                  draw(st.floats(0, 99, allow_nan=False)),
                                  frozenset(draw(st.lists(ids, max_size=3))))
    return Catalog(games, users, bundles)


@settings(max_examples=40, deadline=None)
@given(catalogs())
def test_round_trip(tmp_path_factory, cat):
    d = tmp_path_factory.mktemp("rt")
    dump_catalog(cat, d)
    back = load_catalog_dir(d)
    assert back == cat
    dump_catalog(back, d / "again")
    assert (d / "games.jsonl").read_bytes() == (d / "again" / "games.jsonl").read_bytes()


@settings(max_examples=40, deadline=None)
@given(catalogs())
def test_stats_properties(cat):
    stats = compute_game_stats(cat)
    assert sum(s.total_playtime for s in stats.values()) == sum(t for u in cat.large_users for t in u.holdings.values())
    for s in stats.values():
        assert all(map(lambda v: v == v and abs(v) != float("inf"),
                       (s.total_playtime, s.download_count, s.playtime_per_download, s.age_years)))
