"""Games, user libraries and bundles: data model, JSON-lines I/O and per-game stats."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

logger = logging.getLogger(__name__)

SENTIMENT_CODES = (1, 2, 3, 5)
DAYS_PER_YEAR = 365.25

GAME_FIELDS = ("game_id", "title", "tags", "genres", "specs", "price",
               "release_date", "developer", "sentiment")
USER_FIELDS = ("user_id", "items")
BUNDLE_FIELDS = ("bundle_id", "name", "items", "price", "discount_pct", "purchasers")


class CatalogError(ValueError):
    """Raised when catalog files cannot be read or fail validation.

    ``problems`` holds one human-readable line per offending record,
    prefixed with ``file:line`` where a line is known.
    """

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        head = self.problems[0] if self.problems else "invalid catalog"
        more = len(self.problems) - 1
        super().__init__(head if more <= 0 else f"{head} (+{more} more)")


@dataclass(frozen=True)
class Game:
    game_id: str
    title: str
    tags: tuple[str, ...] = ()
    genres: tuple[str, ...] = ()
    specs: tuple[str, ...] = ()
    price: float = 0.0
    release_date: date | None = None
    developer: str | None = None
    sentiment: int | None = None


@dataclass(frozen=True)
class UserLibrary:
    user_id: str
    holdings: dict[str, int]  # game_id -> lifetime playtime in minutes


@dataclass(frozen=True)
class Bundle:
    bundle_id: str
    name: str
    item_ids: tuple[str, ...]
    price: float = 0.0
    discount_pct: float = 0.0
    purchaser_ids: frozenset[str] = frozenset()

    def with_items(self, item_ids: Iterable[str]) -> "Bundle":
        return Bundle(self.bundle_id, self.name, tuple(item_ids), self.price,
                      self.discount_pct, self.purchaser_ids)


@dataclass(frozen=True)
class GameStats:
    game_id: str
    total_playtime: int
    download_count: int
    playtime_per_download: float
    age_years: float


@dataclass
class Catalog:
    games: dict[str, Game]
    large_users: list[UserLibrary]
    bundles: dict[str, Bundle]
    reference_date: date = date(2023, 8, 30)
    _stats: dict[str, GameStats] | None = field(default=None, repr=False, compare=False)

    @property
    def small_users(self) -> list[str]:
        """Bundle purchasers; the small dataset only records user-bundle purchases."""
        return sorted({u for b in self.bundles.values() for u in b.purchaser_ids})

    def stats(self) -> dict[str, GameStats]:
        if self._stats is None:
            self._stats = compute_game_stats(self)
        return self._stats

    def unplayed(self) -> set[str]:
        return {g for g, s in self.stats().items() if s.total_playtime == 0}

    def bundle_price(self, item_ids: Iterable[str], discount_pct: float) -> float:
        total = sum(self.games[g].price for g in item_ids)
        return round(total * (1.0 - discount_pct / 100.0), 2)


# ---------------------------------------------------------------- validation

def _check_str_list(value, name: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValueError(f"'{name}' must be a list of strings")
    return tuple(value)


def _nonneg_number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"'{name}' must be a number")
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"'{name}' must be finite and >= 0, got {value}")
    return float(value)


def _require_id(obj: dict, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise ValueError(f"missing or empty '{key}'")
    return value


def game_from_record(obj: dict) -> Game:
    game_id = _require_id(obj, "game_id")
    title = obj.get("title")
    if not isinstance(title, str) or not title.strip():
        raise ValueError(f"game {game_id!r}: title must be a non-empty string")
    release = obj.get("release_date")
    release_date = None
    if release is not None:
        try:
            release_date = date.fromisoformat(release)
        except (TypeError, ValueError):
            raise ValueError(f"game {game_id!r}: bad release_date {release!r}") from None
    sentiment = obj.get("sentiment")
    if sentiment is not None and (isinstance(sentiment, bool) or sentiment not in SENTIMENT_CODES):
        raise ValueError(f"game {game_id!r}: sentiment must be one of {SENTIMENT_CODES} or null")
    developer = obj.get("developer")
    if developer is not None and not isinstance(developer, str):
        raise ValueError(f"game {game_id!r}: developer must be a string")
    return Game(
        game_id=game_id,
        title=title,
        tags=_check_str_list(obj.get("tags"), "tags"),
        genres=_check_str_list(obj.get("genres"), "genres"),
        specs=_check_str_list(obj.get("specs"), "specs"),
        price=_nonneg_number(obj.get("price", 0.0), "price"),
        release_date=release_date,
        developer=developer,
        sentiment=sentiment,
    )


def user_from_record(obj: dict) -> UserLibrary:
    user_id = _require_id(obj, "user_id")
    items = obj.get("items", [])
    if not isinstance(items, list):
        raise ValueError(f"user {user_id!r}: 'items' must be a list")
    holdings: dict[str, int] = {}
    for it in items:
        if not isinstance(it, dict):
            raise ValueError(f"user {user_id!r}: each item must be an object")
        gid = _require_id(it, "game_id")
        minutes = it.get("playtime_min", 0)
        if isinstance(minutes, bool) or not isinstance(minutes, int) or minutes < 0:
            raise ValueError(f"user {user_id!r}: playtime_min for {gid!r} must be an integer >= 0")
        if gid in holdings:
            raise ValueError(f"user {user_id!r}: game {gid!r} listed twice")
        holdings[gid] = minutes
    return UserLibrary(user_id, holdings)


def bundle_from_record(obj: dict) -> Bundle:
    bundle_id = _require_id(obj, "bundle_id")
    items = obj.get("items")
    if not isinstance(items, list) or not items or not all(isinstance(i, str) for i in items):
        raise ValueError(f"bundle {bundle_id!r}: 'items' must be a non-empty list of game ids")
    if len(set(items)) != len(items):
        raise ValueError(f"bundle {bundle_id!r}: duplicate items")
    discount = _nonneg_number(obj.get("discount_pct", 0.0), "discount_pct")
    if discount > 100:
        raise ValueError(f"bundle {bundle_id!r}: discount_pct must be in [0, 100]")
    purchasers = _check_str_list(obj.get("purchasers", []), "purchasers")
    name = obj.get("name") or ""
    if not isinstance(name, str):
        raise ValueError(f"bundle {bundle_id!r}: name must be a string")
    return Bundle(
        bundle_id=bundle_id,
        name=name,
        item_ids=tuple(items),
        price=_nonneg_number(obj.get("price", 0.0), "price"),
        discount_pct=discount,
        purchaser_ids=frozenset(purchasers),
    )


def _read_jsonl(path: Path, known: tuple[str, ...], parse, problems: list[str]) -> Iterator[tuple[int, object]]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise CatalogError(f"{path}: cannot read ({exc.strerror})") from exc
    warned: set[str] = set()
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"{path}:{lineno}: malformed JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict):
                problems.append(f"{path}:{lineno}: expected a JSON object")
                continue
            for key in obj.keys() - set(known) - warned:
                logger.warning("%s: ignoring unknown field %r (first seen line %d)", path, key, lineno)
                warned.add(key)
            try:
                yield lineno, parse(obj)
            except ValueError as exc:
                problems.append(f"{path}:{lineno}: {exc}")


def load_catalog(games_path, large_users_path, bundles_path,
                 reference_date: date = date(2023, 8, 30)) -> Catalog:
    """Read and validate the three JSON-lines files.

    Every problem found is collected; if any exist a single
    :class:`CatalogError` is raised listing them with file and line.
    """
    games_path, users_path, bundles_path = map(Path, (games_path, large_users_path, bundles_path))
    problems: list[str] = []

    games: dict[str, Game] = {}
    for lineno, game in _read_jsonl(games_path, GAME_FIELDS, game_from_record, problems):
        if game.game_id in games:
            problems.append(f"{games_path}:{lineno}: duplicate game_id {game.game_id!r}")
            continue
        games[game.game_id] = game

    users: list[UserLibrary] = []
    seen_users: set[str] = set()
    for lineno, user in _read_jsonl(users_path, USER_FIELDS, user_from_record, problems):
        if user.user_id in seen_users:
            problems.append(f"{users_path}:{lineno}: duplicate user_id {user.user_id!r}")
            continue
        missing = sorted(g for g in user.holdings if g not in games)
        if missing:
            problems.append(f"{users_path}:{lineno}: user {user.user_id!r} references unknown game(s) "
                            + ", ".join(repr(g) for g in missing))
            continue
        seen_users.add(user.user_id)
        users.append(user)

    bundles: dict[str, Bundle] = {}
    for lineno, bundle in _read_jsonl(bundles_path, BUNDLE_FIELDS, bundle_from_record, problems):
        if bundle.bundle_id in bundles:
            problems.append(f"{bundles_path}:{lineno}: duplicate bundle_id {bundle.bundle_id!r}")
            continue
        missing = [g for g in bundle.item_ids if g not in games]
        if missing:
            problems.append(f"{bundles_path}:{lineno}: bundle {bundle.bundle_id!r} references unknown game(s) "
                            + ", ".join(repr(g) for g in missing))
            continue
        bundles[bundle.bundle_id] = bundle

    if problems:
        for p in problems:
            logger.error(p)
        raise CatalogError(problems)
    return Catalog(games, users, bundles, reference_date)


# ------------------------------------------------------------- serialization

def game_to_record(g: Game) -> dict:
    return {
        "game_id": g.game_id,
        "title": g.title,
        "tags": list(g.tags),
        "genres": list(g.genres),
        "specs": list(g.specs),
        "price": g.price,
        "release_date": g.release_date.isoformat() if g.release_date else None,
        "developer": g.developer,
        "sentiment": g.sentiment,
    }


def user_to_record(u: UserLibrary) -> dict:
    return {"user_id": u.user_id,
            "items": [{"game_id": g, "playtime_min": m} for g, m in u.holdings.items()]}


def bundle_to_record(b: Bundle) -> dict:
    return {
        "bundle_id": b.bundle_id,
        "name": b.name,
        "items": list(b.item_ids),
        "price": b.price,
        "discount_pct": b.discount_pct,
        "purchasers": sorted(b.purchaser_ids),
    }


def write_jsonl(path, records: Iterable[dict]) -> None:
    from .io import atomic_write_text
    atomic_write_text(path, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))


CATALOG_FILES = ("games.jsonl", "users.jsonl", "bundles.jsonl")


def dump_catalog(catalog: Catalog, directory) -> tuple[Path, Path, Path]:
    """Write ``games.jsonl``, ``users.jsonl`` and ``bundles.jsonl`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = tuple(directory / name for name in CATALOG_FILES)
    write_jsonl(paths[0], (game_to_record(g) for g in catalog.games.values()))
    write_jsonl(paths[1], (user_to_record(u) for u in catalog.large_users))
    write_jsonl(paths[2], (bundle_to_record(b) for b in catalog.bundles.values()))
    return paths  # type: ignore[return-value]


def load_catalog_dir(directory, reference_date: date = date(2023, 8, 30)) -> Catalog:
    directory = Path(directory)
    return load_catalog(*(directory / name for name in CATALOG_FILES), reference_date=reference_date)


# -------------------------------------------------------------------- stats

def age_years(release: date | None, reference: date) -> float:
    if release is None:
        return 0.0
    days = (reference - release).days
    if days < 0:
        logger.debug("release date %s after reference date %s; age clamped to 0", release, reference)
        return 0.0
    return days / DAYS_PER_YEAR


def compute_game_stats(catalog: Catalog) -> dict[str, GameStats]:
    """Per-game playtime totals and download counts over the large-dataset users.

    Bundle purchasers carry no playtime and do not contribute.
    """
    playtime = {g: 0 for g in catalog.games}
    downloads = {g: 0 for g in catalog.games}
    for user in catalog.large_users:
        for gid, minutes in user.holdings.items():
            playtime[gid] += minutes
            downloads[gid] += 1
    return {
        gid: GameStats(
            game_id=gid,
            total_playtime=playtime[gid],
            download_count=downloads[gid],
            playtime_per_download=playtime[gid] / max(downloads[gid], 1),
            age_years=age_years(game.release_date, catalog.reference_date),
        )
        for gid, game in catalog.games.items()
    }


# ---------------------------------------------------------------- synthetic

_CLUSTER_THEMES = [
    ("Strategy", ["empire", "siege", "legion", "crown", "frontier", "conquest", "dynasty", "fleet"],
     ["Turn-Based", "Grand Strategy", "Historical", "Tactical", "4X", "Base Building"]),
    ("Horror", ["dead", "shadow", "asylum", "night", "crypt", "hollow", "fear", "grave"],
     ["Zombies", "Survival Horror", "Dark", "Gore", "Psychological", "Atmospheric"]),
    ("Racing", ["turbo", "drift", "rally", "speed", "circuit", "nitro", "motor", "track"],
     ["Driving", "Arcade", "Cars", "Fast-Paced", "Motorsport", "Split Screen"]),
    ("RPG", ["dragon", "quest", "realm", "rune", "saga", "knight", "myth", "sword"],
     ["Fantasy", "Open World", "Story Rich", "Loot", "Character Customization", "Magic"]),
    ("Sports", ["goal", "league", "striker", "court", "pitch", "slam", "champion", "season"],
     ["Football", "Basketball", "Team-Based", "Competitive", "Management", "Realistic"]),
    ("Puzzle", ["block", "logic", "maze", "tile", "riddle", "prism", "gear", "cube"],
     ["Relaxing", "Minimalist", "Casual", "Colorful", "Physics", "Puzzle-Platformer"]),
    ("Simulation", ["farm", "city", "train", "builder", "harbor", "tycoon", "flight", "garden"],
     ["Economy", "Sandbox", "Crafting", "Life Sim", "Management Sim", "Building"]),
    ("Shooter", ["bullet", "strike", "squad", "sniper", "recon", "blast", "ops", "trigger"],
     ["FPS", "Military", "Multiplayer", "Action", "Tactical Shooter", "War"]),
]
_SHARED_TAGS = ["Indie", "Singleplayer", "Great Soundtrack", "Difficult"]
_SPECS = ["Single-player", "Multi-player", "Steam Achievements", "Steam Cloud",
          "Full controller support", "Steam Trading Cards", "Co-op"]
_GENERIC_WORDS = ["legend", "rise", "origins", "the", "of", "lost", "chronicles", "edge", "world", "ii"]


def _theme(c: int) -> tuple[str, list[str], list[str]]:
    genre, words, tags = _CLUSTER_THEMES[c % len(_CLUSTER_THEMES)]
    if c >= len(_CLUSTER_THEMES):
        k = c // len(_CLUSTER_THEMES)
        genre = f"{genre} {k}"
        words = [f"{w}{k}" for w in words]
        tags = [f"{t} {k}" for t in tags]
    return genre, words, tags


def synthetic_cluster(game: Game) -> str:
    """Cluster label of a generated game (its primary genre)."""
    return game.genres[0]


def generate_synthetic_catalog(seed: int = 1, n_games: int = 200, n_users: int = 50,
                               n_bundles: int = 40, cluster_count: int = 5,
                               reference_date: date = date(2023, 8, 30)) -> Catalog:
    """Deterministic clustered catalog standing in for the Steam data.

    Each cluster owns a primary genre, a title vocabulary and a tag set.
    Users buy almost exclusively inside one home cluster; cluster and game
    popularity both follow power laws, and popular games skew toward high
    sentiment, so some bundles are planted as popular and cross-cluster
    bundles are reliably unpopular.
    """
    if min(n_games, n_users, n_bundles, cluster_count) < 1:
        raise ValueError("all counts must be >= 1")
    if cluster_count > n_games:
        raise ValueError(f"cluster_count ({cluster_count}) exceeds n_games ({n_games})")
    rng = np.random.default_rng(seed)

    order = rng.permutation(n_games)
    cluster_of = np.empty(n_games, dtype=int)
    cluster_of[order] = np.arange(n_games) % cluster_count
    members = [np.flatnonzero(cluster_of == c) for c in range(cluster_count)]
    # popularity rank inside each cluster; rank 0 is the head
    rank = np.empty(n_games, dtype=int)
    for idx in members:
        rank[idx] = rng.permutation(len(idx))
    game_weight = 1.0 / (rank + 1.0) ** 1.1

    games: dict[str, Game] = {}
    ids = [f"g{i:04d}" for i in range(n_games)]
    for i in range(n_games):
        c = int(cluster_of[i])
        genre, words, ctags = _theme(c)
        n_words = int(rng.integers(2, 4))
        title_words = rng.choice(words, size=n_words - 1, replace=False).tolist()
        title_words.insert(int(rng.integers(0, n_words)), str(rng.choice(_GENERIC_WORDS)))
        title = " ".join(w.capitalize() for w in title_words) + f" {i}"
        tags = rng.choice(ctags, size=int(rng.integers(2, 5)), replace=False).tolist()
        if rng.random() < 0.4:
            tags.append(str(rng.choice(_SHARED_TAGS)))
        genres = [genre]
        if rng.random() < 0.3:
            genres.append("Indie" if rng.random() < 0.5 else "Action")
        specs = sorted(rng.choice(_SPECS, size=int(rng.integers(1, 4)), replace=False).tolist())
        rel = len(members[c])
        frac = rank[i] / max(rel - 1, 1)
        if rng.random() < 0.05:
            sentiment = None
        elif frac < 0.25:
            sentiment = 5
        elif frac < 0.55:
            sentiment = 3
        elif frac < 0.8:
            sentiment = 2
        else:
            sentiment = 1
        release = reference_date - timedelta(days=int(rng.integers(200, 18 * 365)))
        price = round(float(np.exp(rng.normal(2.2, 0.6))), 2)
        games[ids[i]] = Game(ids[i], title, tuple(tags), tuple(genres), tuple(specs),
                             price, release, f"Studio {c}-{int(rng.integers(0, 4))}", sentiment)

    cluster_share = 1.0 / (np.arange(cluster_count) + 1.0)
    cluster_share /= cluster_share.sum()
    # owned but never launched by anyone, more common in the tail
    frac_rank = rank / np.maximum(np.array([len(members[c]) for c in cluster_of]) - 1, 1)
    never_played = rng.random(n_games) < 0.15 + 0.45 * frac_rank
    users: list[UserLibrary] = []
    for u in range(n_users):
        home = int(rng.choice(cluster_count, p=cluster_share))
        pool = members[home]
        n_home = int(min(len(pool), rng.integers(8, 21)))
        w = game_weight[pool] / game_weight[pool].sum()
        picks = list(rng.choice(pool, size=n_home, replace=False, p=w))
        others = np.flatnonzero(cluster_of != home)
        n_foreign = min(int(rng.binomial(n_home, 0.08)), n_home // 5, len(others))
        if n_foreign:
            wo = game_weight[others] / game_weight[others].sum()
            picks += list(rng.choice(others, size=n_foreign, replace=False, p=wo))
        holdings = {}
        for g in sorted(picks):
            if never_played[g] or rng.random() < 0.1:
                minutes = 0
            else:
                minutes = int(np.exp(rng.normal(5.5 + 2.0 * game_weight[g], 1.2)))
            holdings[ids[g]] = minutes
        users.append(UserLibrary(f"u{u:04d}", holdings))

    bundles: dict[str, Bundle] = {}
    discounts = (10.0, 15.0, 20.0, 25.0, 33.0, 40.0, 50.0)
    for b in range(n_bundles):
        size = int(min(n_games, rng.choice([2, 2, 3, 3, 4])))
        if rng.random() < 0.7 or cluster_count == 1:
            c = int(rng.choice(cluster_count, p=cluster_share))
            pool = members[c]
            size = min(size, len(pool))
            if rng.random() < 0.5:
                w = game_weight[pool] / game_weight[pool].sum()
                items = rng.choice(pool, size=size, replace=False, p=w)
            else:
                items = rng.choice(pool, size=size, replace=False)
        else:
            cs = rng.choice(cluster_count, size=min(size, cluster_count), replace=False)
            items = np.array([rng.choice(members[int(c)]) for c in cs])
        item_ids = tuple(ids[int(i)] for i in items)
        discount = float(rng.choice(discounts))
        owned = np.array([sum(g in u.holdings for g in item_ids) / len(item_ids) for u in users])
        buy = rng.random(n_users) < 0.03 + 0.6 * owned ** 2
        purchasers = frozenset(users[k].user_id for k in np.flatnonzero(buy))
        price = round(sum(games[g].price for g in item_ids) * (1 - discount / 100.0), 2)
        bid = f"b{b:04d}"
        bundles[bid] = Bundle(bid, f"Bundle {b}", item_ids, price, discount, purchasers)

    return Catalog(games, users, bundles, reference_date)
