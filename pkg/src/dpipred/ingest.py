"""Parsing and joining of the Big Data Bowl 2021 source tables.

Three inputs are read: ``games.csv``, ``plays.csv`` and the weekly tracking
files ``week1.csv`` .. ``week17.csv``. Tracking rows become immutable
:class:`TrackingRecord` objects grouped per ``(game_id, play_id)``.
"""

from __future__ import annotations

import csv
import io
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import IO, Iterable, Mapping, NamedTuple

FIELD_LENGTH = 120.0
FIELD_WIDTH = 53.34

TRACKING_COLUMNS = (
    "x", "y", "s", "a", "o", "dir", "event", "nflId", "frameId",
    "team", "gameId", "playId", "playDirection", "time",
)
GAME_COLUMNS = ("gameId", "homeTeamAbbr", "visitorTeamAbbr", "week")
PLAY_COLUMNS = ("gameId", "playId", "possessionTeam")

BALL = "ball"
_NA = {"", "NA", "nan", "NaN"}


class IngestError(Exception):
    """Base class for ingest failures."""


class MissingColumn(IngestError):
    def __init__(self, name: str, source: str = "tracking"):
        super().__init__(f"required column {name!r} missing from {source} header")
        self.name = name


class MissingFile(IngestError):
    pass


@dataclass(frozen=True)
class RowParse:
    """A malformed row: reported, never silently dropped."""

    line_no: int
    reason: str
    source: str = ""


@dataclass(frozen=True, slots=True)
class TrackingRecord:
    game_id: int
    play_id: int
    frame_id: int
    timestamp_ms: int
    nfl_id: int | None  # None for the ball
    side: str | None  # home / away / ball; None until resolved against GameMeta
    x: float
    y: float
    speed: float
    accel: float
    orientation_deg: float | None
    direction_deg: float | None
    event: str | None
    play_direction: str
    team_code: str = ""

    @property
    def is_ball(self) -> bool:
        return self.nfl_id is None


@dataclass(frozen=True)
class PlayMeta:
    game_id: int
    play_id: int
    possession_team: str
    is_dpi: bool | None
    penalty_codes: str | None = None


@dataclass(frozen=True)
class GameMeta:
    game_id: int
    home_team: str
    visitor_team: str
    week: int

    def __post_init__(self):
        if self.home_team == self.visitor_team:
            raise ValueError(f"game {self.game_id}: home and visitor team are both {self.home_team!r}")
        if not 1 <= self.week <= 17:
            raise ValueError(f"game {self.game_id}: week {self.week} outside [1, 17]")


@dataclass(frozen=True)
class JoinFailure:
    game_id: int
    play_id: int
    rows: int
    reason: str


@dataclass
class LoadReport:
    rows_parsed: int = 0
    rows_joined: int = 0
    rows_skipped: int = 0
    plays_loaded: int = 0
    clamped_coordinates: int = 0
    row_errors: list[RowParse] = field(default_factory=list)
    join_failures: list[JoinFailure] = field(default_factory=list)
    plays_without_tracking: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows_parsed": self.rows_parsed,
            "rows_skipped": self.rows_skipped,
            "plays_loaded": self.plays_loaded,
            "clamped_coordinates": self.clamped_coordinates,
            "rows_joined": self.rows_joined,
            "row_errors": [
                {"source": e.source, "line_no": e.line_no, "reason": e.reason} for e in self.row_errors
            ],
            "join_failures": [
                {"game_id": j.game_id, "play_id": j.play_id, "rows": j.rows, "reason": j.reason}
                for j in self.join_failures
            ],
            "plays_without_tracking": [list(k) for k in self.plays_without_tracking],
        }


@dataclass(frozen=True)
class RawDataset:
    plays: Mapping[tuple[int, int], tuple[TrackingRecord, ...]]
    play_meta: Mapping[tuple[int, int], PlayMeta]
    game_meta: Mapping[int, GameMeta]
    report: LoadReport


class ParsedTracking(NamedTuple):
    records: list[TrackingRecord]
    errors: list[RowParse]


# ---------------------------------------------------------------------------
# time handling

_TIME_CACHE: dict[str, int] = {}


def parse_time_ms(text: str) -> int:
    """ISO-8601 UTC string (``2018-09-07T01:07:14.599Z``) to epoch milliseconds."""
    cached = _TIME_CACHE.get(text)
    if cached is not None:
        return cached
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    ms = (delta.days * 86_400 + delta.seconds) * 1000 + delta.microseconds // 1000
    if len(_TIME_CACHE) < 1_000_000:
        _TIME_CACHE[text] = ms
    return ms


def format_time_ms(ms: int) -> str:
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms % 1000:03d}Z"


# ---------------------------------------------------------------------------
# field helpers


def _opt_float(v: str) -> float | None:
    v = v.strip()
    return None if v in _NA else float(v)


def _req_float(v: str, name: str) -> float:
    v = v.strip()
    if v in _NA:
        raise ValueError(f"missing mandatory field {name!r}")
    return float(v)


def _req_int(v: str, name: str) -> int:
    v = v.strip()
    if v in _NA:
        raise ValueError(f"missing mandatory field {name!r}")
    return int(float(v)) if "." in v else int(v)


def _norm_team(code: str) -> str:
    return code.strip().upper()


def _fmt(v: float | None) -> str:
    return "NA" if v is None else repr(v)


def _parse_row(row: dict[str, str]) -> TrackingRecord:
    team = row["team"].strip()
    is_ball = team.lower() == "football"
    x = _req_float(row["x"], "x")
    y = _req_float(row["y"], "y")
    speed = _req_float(row["s"], "s")
    accel = _req_float(row["a"], "a")
    if speed < 0 or accel < 0:
        raise ValueError("negative speed or acceleration")
    direction = row["playDirection"].strip().lower()
    if direction not in ("left", "right"):
        raise ValueError(f"playDirection must be left/right, got {direction!r}")
    event = row["event"].strip()
    if is_ball:
        nfl_id = None
        side = BALL
        orientation = heading = None
    else:
        nfl_id = _req_int(row["nflId"], "nflId")
        lowered = team.lower()
        side = lowered if lowered in ("home", "away") else None
        orientation = _opt_float(row["o"])
        heading = _opt_float(row["dir"])
    return TrackingRecord(
        game_id=_req_int(row["gameId"], "gameId"),
        play_id=_req_int(row["playId"], "playId"),
        frame_id=_req_int(row["frameId"], "frameId"),
        timestamp_ms=parse_time_ms(row["time"]),
        nfl_id=nfl_id,
        side=side,
        x=x,
        y=y,
        speed=speed,
        accel=accel,
        orientation_deg=orientation,
        direction_deg=heading,
        event=None if event in _NA else event,
        play_direction=direction,
        team_code=team,
    )


def parse_tracking_file(stream: IO[bytes] | IO[str], source: str = "") -> ParsedTracking:
    """Parse one tracking CSV.

    Rows keep file order. Malformed rows are returned in ``errors`` with
    their 1-based line number (header is line 1); the remaining rows parse.

    Raises:
        MissingColumn: a required header column is absent.
    """
    if isinstance(stream, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(stream, "mode", ""):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    for col in TRACKING_COLUMNS:
        if col not in header:
            raise MissingColumn(col, source or "tracking")
    records: list[TrackingRecord] = []
    errors: list[RowParse] = []
    for line_no, row in enumerate(reader, start=2):
        try:
            if None in row.values():
                raise ValueError("row has fewer fields than the header")
            records.append(_parse_row(row))
        except (ValueError, KeyError) as exc:
            errors.append(RowParse(line_no, str(exc), source))
    return ParsedTracking(records, errors)


def record_to_fields(rec: TrackingRecord) -> dict[str, str]:
    """Serialize a record back to tracking CSV fields (inverse of parsing)."""
    return {
        "time": format_time_ms(rec.timestamp_ms),
        "x": repr(rec.x),
        "y": repr(rec.y),
        "s": repr(rec.speed),
        "a": repr(rec.accel),
        "o": _fmt(rec.orientation_deg),
        "dir": _fmt(rec.direction_deg),
        "event": "NA" if rec.event is None else rec.event,
        "nflId": "NA" if rec.nfl_id is None else str(rec.nfl_id),
        "frameId": str(rec.frame_id),
        "team": rec.team_code or ("football" if rec.is_ball else rec.side or ""),
        "gameId": str(rec.game_id),
        "playId": str(rec.play_id),
        "playDirection": rec.play_direction,
    }


# ---------------------------------------------------------------------------
# metadata


def _truthy(v: str) -> bool | None:
    v = v.strip().lower()
    if v in ("true", "1", "yes", "t"):
        return True
    if v in ("false", "0", "no", "f"):
        return False
    return None


def resolve_label(meta: PlayMeta) -> bool:
    """DPI label: dedicated flag when set, else a ``DPI`` token in the penalty codes."""
    if meta.is_dpi is not None:
        return meta.is_dpi
    if not meta.penalty_codes:
        return False
    tokens = (t.strip().upper() for t in re.split(r"[;,]", meta.penalty_codes))
    return "DPI" in tokens


def _read_table(path: Path, required: Iterable[str]) -> list[dict[str, str]]:
    if not path.is_file():
        raise MissingFile(str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in required:
            if col not in (reader.fieldnames or []):
                raise MissingColumn(col, path.name)
        return list(reader)


def read_games(path: Path) -> dict[int, GameMeta]:
    games = {}
    for row in _read_table(path, GAME_COLUMNS):
        g = GameMeta(
            game_id=int(row["gameId"]),
            home_team=_norm_team(row["homeTeamAbbr"]),
            visitor_team=_norm_team(row["visitorTeamAbbr"]),
            week=int(row["week"]),
        )
        games[g.game_id] = g
    return games


def read_plays(path: Path) -> dict[tuple[int, int], PlayMeta]:
    plays = {}
    for row in _read_table(path, PLAY_COLUMNS):
        penalty = (row.get("penaltyCodes") or "").strip()
        flag = row.get("isDefensivePI")
        meta = PlayMeta(
            game_id=int(row["gameId"]),
            play_id=int(row["playId"]),
            possession_team=_norm_team(row["possessionTeam"]),
            is_dpi=None if flag is None else _truthy(flag),
            penalty_codes=None if penalty in _NA else penalty,
        )
        plays[(meta.game_id, meta.play_id)] = meta
    return plays


def possession_side(meta: PlayMeta, game: GameMeta) -> str:
    if meta.possession_team == game.home_team:
        return "home"
    if meta.possession_team == game.visitor_team:
        return "away"
    raise ValueError(
        f"play ({meta.game_id}, {meta.play_id}): possession team {meta.possession_team!r} "
        f"is neither {game.home_team!r} nor {game.visitor_team!r}"
    )


def _week_number(path: Path) -> int:
    return int(re.fullmatch(r"week(\d+)\.csv", path.name).group(1))


def week_files(data_dir: Path) -> list[Path]:
    files = [p for p in data_dir.iterdir() if re.fullmatch(r"week\d+\.csv", p.name)]
    return sorted(files, key=_week_number)


def _parse_path(path: Path) -> ParsedTracking:
    with path.open("rb") as fh:
        return parse_tracking_file(fh, source=path.name)


def _clamp(rec: TrackingRecord) -> tuple[TrackingRecord, int]:
    x = min(max(rec.x, 0.0), FIELD_LENGTH)
    y = min(max(rec.y, 0.0), FIELD_WIDTH)
    n = (x != rec.x) + (y != rec.y)
    return (replace(rec, x=x, y=y) if n else rec), n


def load_dataset(data_dir: str | Path, workers: int = 1) -> RawDataset:
    """Load games, plays and every ``weekN.csv`` under ``data_dir``.

    Weekly files parse independently (in a process pool when ``workers > 1``)
    and are merged in week order, so the result does not depend on
    ``workers``. Plays come out sorted by key and frames by
    ``(timestamp_ms, frame_id)``.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise MissingFile(str(data_dir))
    games = read_games(data_dir / "games.csv")
    metas = read_plays(data_dir / "plays.csv")
    weeks = week_files(data_dir)
    if not weeks:
        raise MissingFile(str(data_dir / "week1.csv"))
    if len(weeks) > 17:
        raise IngestError(f"expected at most 17 week files, found {len(weeks)}")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parsed = list(pool.map(_parse_path, weeks))
    else:
        parsed = [_parse_path(p) for p in weeks]

    report = LoadReport()
    grouped: dict[tuple[int, int], list[TrackingRecord]] = {}
    for result in parsed:
        report.row_errors.extend(result.errors)
        report.rows_parsed += len(result.records)
        for rec in result.records:
            grouped.setdefault((rec.game_id, rec.play_id), []).append(rec)

    plays: dict[tuple[int, int], tuple[TrackingRecord, ...]] = {}
    for key in sorted(grouped):
        rows = grouped[key]
        meta = metas.get(key)
        game = games.get(key[0])
        reason = None
        if meta is None:
            reason = "play missing from plays.csv"
        elif game is None:
            reason = "game missing from games.csv"
        if reason is None:
            try:
                resolved = _resolve_sides(rows, game)
            except ValueError as exc:
                reason = str(exc)
        if reason is not None:
            report.join_failures.append(JoinFailure(key[0], key[1], len(rows), reason))
            report.rows_skipped += len(rows)
            continue
        clamped = []
        for rec in resolved:
            rec, n = _clamp(rec)
            report.clamped_coordinates += n
            clamped.append(rec)
        clamped.sort(key=lambda r: (r.timestamp_ms, r.frame_id))
        plays[key] = tuple(clamped)
        report.rows_joined += len(clamped)

    report.plays_without_tracking = sorted(k for k in metas if k not in grouped)
    report.plays_loaded = len(plays)
    used_meta = {k: metas[k] for k in plays}
    return RawDataset(
        plays=MappingProxyType(plays),
        play_meta=MappingProxyType(used_meta),
        game_meta=MappingProxyType(dict(sorted(games.items()))),
        report=report,
    )


def _resolve_sides(rows: list[TrackingRecord], game: GameMeta) -> list[TrackingRecord]:
    out = []
    for rec in rows:
        if rec.side is not None:
            out.append(rec)
            continue
        code = _norm_team(rec.team_code)
        if code == game.home_team:
            out.append(replace(rec, side="home"))
        elif code == game.visitor_team:
            out.append(replace(rec, side="away"))
        else:
            raise ValueError(f"team code {rec.team_code!r} matches neither side of game {game.game_id}")
    return out
