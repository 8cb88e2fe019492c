"""Synthetic Big Data Bowl style seasons with a controllable DPI rate.

Each play has a pre-snap segment, a dropback ending in ``pass_forward``, a
ball flight to the targeted receiver and a terminal event sequence. On DPI
plays the covering defender closes to contact distance shortly before the
ball arrives; on other plays the duel keeps a larger gap (with some overlap).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .ingest import FIELD_LENGTH, FIELD_WIDTH, format_time_ms

TEAMS = (
    "ARI", "ATL", "BAL", "BUF", "CAR", "CHI", "CIN", "CLE", "DAL", "DEN", "DET", "GB",
    "HOU", "IND", "JAX", "KC", "LA", "LAC", "MIA", "MIN", "NE", "NO", "NYG", "NYJ",
    "OAK", "PHI", "PIT", "SEA", "SF", "TB", "TEN", "WAS",
)
TRACKING_HEADER = (
    "time", "x", "y", "s", "a", "dis", "o", "dir", "event", "nflId", "displayName",
    "jerseyNumber", "position", "frameId", "team", "gameId", "playId", "playDirection", "route",
)
GAMES_HEADER = ("gameId", "gameDate", "gameTimeEastern", "homeTeamAbbr", "visitorTeamAbbr", "week")
PLAYS_HEADER = (
    "gameId", "playId", "playDescription", "quarter", "down", "yardsToGo", "possessionTeam",
    "playType", "penaltyCodes", "penaltyJerseyNumbers", "passResult", "isDefensivePI",
)
PATHOLOGIES = ("duplicate_timestamps", "missing_ball_frames", "no_end_event", "multiple_pass_forward")
SEASON_START_MS = 1536282000000  # 2018-09-07T01:00:00Z
PLAYS_PER_GAME = 20


@dataclass(frozen=True)
class SynthConfig:
    n_plays: int = 1000
    dpi_rate: float = 0.0146
    seed: int = 0
    players_per_side: int = 3
    frame_rate_hz: int = 10

    def __post_init__(self):
        if self.n_plays < 1:
            raise ValueError("n_plays must be positive")
        if not 0.0 < self.dpi_rate < 1.0:
            raise ValueError("dpi_rate must lie in (0, 1)")
        if not 2 <= self.players_per_side <= 11:
            raise ValueError("players_per_side must lie in [2, 11]")
        if self.frame_rate_hz != 10:
            raise ValueError("only 10 Hz tracking is supported")

    @property
    def n_dpi(self) -> int:
        return int(math.floor(self.n_plays * self.dpi_rate + 0.5))


@dataclass
class SynthSeason:
    games: list[dict]
    plays: list[dict]
    weeks: dict[int, list[dict]]
    play_frames: dict[tuple[int, int], dict] = field(default_factory=dict)

    def files(self) -> dict[str, str]:
        out = {"games.csv": _to_csv(GAMES_HEADER, self.games), "plays.csv": _to_csv(PLAYS_HEADER, self.plays)}
        for week in sorted(self.weeks):
            out[f"week{week}.csv"] = _to_csv(TRACKING_HEADER, self.weeks[week])
        return out

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in self.files().items():
            p = out_dir / name
            p.write_text(text, encoding="utf-8")
            paths.append(p)
        return paths

    @property
    def dpi_keys(self) -> list[tuple[int, int]]:
        return [(p["gameId"], p["playId"]) for p in self.plays if p["isDefensivePI"] == "TRUE"]


def _to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _heading_deg(dx: float, dy: float) -> float:
    # tracking convention: 0 deg along +y, clockwise positive
    return (90.0 - math.degrees(math.atan2(dy, dx))) % 360.0


def _kinematics(path: np.ndarray, rng, dt: float = 0.1, noise: float = 0.03):
    """Speed, acceleration, per-frame distance and direction along a path (n, 2)."""
    step = np.diff(path, axis=0, prepend=path[:1])
    dis = np.hypot(step[:, 0], step[:, 1])
    if len(path) > 1:
        dis[0] = dis[1]
        step[0] = step[1]
    speed = dis / dt * (1.0 + rng.uniform(-noise, noise, len(dis)))
    accel = np.abs(np.diff(speed, prepend=speed[:1])) / dt
    accel = np.minimum(accel, 15.0)
    heading = np.zeros(len(path))
    last = rng.uniform(0, 360)
    for i, (dx, dy) in enumerate(step):
        if math.hypot(dx, dy) > 1e-6:
            last = _heading_deg(dx, dy)
        heading[i] = last
    return speed, accel, dis, heading


def _clip_path(path: np.ndarray) -> np.ndarray:
    path[:, 0] = np.clip(path[:, 0], 0.5, FIELD_LENGTH - 0.5)
    path[:, 1] = np.clip(path[:, 1], 0.5, FIELD_WIDTH - 0.5)
    return path


def _route(start, n_frames, snap, rng, speed=None):
    """Piecewise-linear route: stationary until the snap, a stem, then a break."""
    speed = rng.uniform(5.5, 8.0) if speed is None else speed
    stem = rng.integers(6, 14)
    brk = math.radians(rng.uniform(-70, 70))
    pos = np.empty((n_frames, 2))
    p = np.array(start, dtype=float)
    for k in range(n_frames):
        if k > snap:
            moved = k - snap
            heading = 0.0 if moved <= stem else brk
            v = speed * 0.1 * min(1.0, moved / 4)
            p = p + v * np.array([math.cos(heading), math.sin(heading)])
        pos[k] = p
    return pos


def _play_rows(cfg: SynthConfig, rng, game: dict, play_id: int, possession: str, is_dpi: bool, t0: int):
    """Rows for one play in native (possibly left-moving) coordinates."""
    n_side = cfg.players_per_side
    snap = int(rng.integers(3, 6))
    dropback = int(rng.integers(8, 14))
    flight = int(rng.integers(9, 18))
    pf = snap + dropback
    arrive = pf + flight
    caught = rng.random() < (0.4 if is_dpi else 0.6)
    outcome = "pass_outcome_caught" if caught else "pass_outcome_incomplete"
    events = {snap: "ball_snap", pf: "pass_forward", arrive: "pass_arrived", arrive + 1: outcome}
    tail = arrive + 2
    # contact after the catch is common on every play; on incompletions only DPI always has it
    if caught or is_dpi or rng.random() < 0.25:
        events[tail] = "first_contact"
        tail += 1
    if outcome == "pass_outcome_caught":
        tail += int(rng.integers(1, 4))
        events[tail] = "tackle" if rng.random() < 0.8 else "out_of_bounds"
    n_frames = tail + 1 + int(rng.integers(0, 3))

    los = rng.uniform(25.0, 75.0)
    lanes = np.sort(rng.choice(np.linspace(6.0, 47.0, 8), size=n_side - 1, replace=False))
    target = int(rng.integers(0, n_side - 1))

    qb = np.empty((n_frames, 2))
    qb_y = rng.uniform(22.0, 31.0)
    for k in range(n_frames):
        back = min(max(k - snap, 0), dropback) * 0.5
        qb[k] = (los - 1.0 - back, qb_y)

    receivers = [_route((los, lanes[j]), n_frames, snap, rng) for j in range(n_side - 1)]
    rec_path = receivers[target]

    # covering defender: offset from the target that shrinks to the final duel gap
    cushion = rng.uniform(2.5, 6.5)
    start_off = np.array([cushion, rng.uniform(-1.5, 1.5)])
    if is_dpi:
        end_gap = rng.uniform(0.2, 0.9)
        close_at = arrive - int(rng.integers(2, 6))
    else:
        end_gap = rng.uniform(0.8, 4.5) if rng.random() < 0.85 else rng.uniform(0.5, 1.2)
        close_at = arrive
    ang = rng.uniform(0, 2 * math.pi)
    end_off = end_gap * np.array([math.cos(ang), math.sin(ang)])
    ang = rng.uniform(0, 2 * math.pi)
    apart_off = rng.uniform(1.5, 4.0) * np.array([math.cos(ang), math.sin(ang)])
    cover = np.empty((n_frames, 2))
    jitter = np.zeros(2)
    for k in range(n_frames):
        # mirrors the receiver at the cushion until the throw, closes in flight,
        # separates again once the ball is dead
        if k <= pf:
            w = 0.0
        else:
            w = min(1.0, (k - pf) / max(close_at - pf, 1))
        jitter = 0.6 * jitter + rng.normal(0, 0.08, 2)
        off = (1 - w) * start_off + w * end_off
        if k > pf and w < 1.0:
            off = off + jitter
        if k > arrive + 1:
            u = min(1.0, (k - arrive - 1) / 3)
            off = (1 - u) * end_off + u * apart_off
        cover[k] = rec_path[k] + off
    defenders = []
    for j in range(n_side - 1):
        if j == target:
            defenders.append(cover)
        else:
            trail = rng.uniform(2.0, 5.0)
            defenders.append(receivers[j] + np.array([trail, rng.uniform(-1.0, 1.0)]))
    safety = np.array([[los + rng.uniform(14, 20), rng.uniform(15, 38)]] * n_frames)
    defenders.append(safety + np.cumsum(rng.normal(0, 0.05, (n_frames, 2)), axis=0))

    ball = np.empty((n_frames, 2))
    for k in range(n_frames):
        if k <= pf:
            ball[k] = qb[k]
        elif k <= arrive:
            w = (k - pf) / (arrive - pf)
            ball[k] = (1 - w) * qb[pf] + w * rec_path[arrive]
        elif outcome == "pass_outcome_caught":
            ball[k] = rec_path[k]
        else:
            ball[k] = ball[k - 1]

    offense = [qb] + receivers
    home_off = possession == "home"
    entities = []
    team_ids = game["_ids"]
    for j, path in enumerate(offense):
        pos = "QB" if j == 0 else "WR"
        entities.append(("home" if home_off else "away", team_ids["home" if home_off else "away"][j], pos, path))
    for j, path in enumerate(defenders):
        pos = "CB" if j < n_side - 1 else "FS"
        entities.append(("away" if home_off else "home", team_ids["away" if home_off else "home"][j], pos, path))

    left = rng.random() < 0.5
    direction = "left" if left else "right"
    rows = []
    per_entity = []
    for side, nfl_id, position, path in entities:
        path = _clip_path(path.copy())
        speed, accel, dis, heading = _kinematics(path, rng)
        orient = (heading + rng.normal(0, 12.0, len(heading))) % 360.0
        per_entity.append((side, nfl_id, position, path, speed, accel, dis, heading, orient))
    ball = _clip_path(ball)
    b_speed, b_accel, b_dis, _ = _kinematics(ball, rng)

    for k in range(n_frames):
        t = format_time_ms(t0 + 100 * k)
        ev = events.get(k, "None")
        for side, nfl_id, position, path, speed, accel, dis, heading, orient in per_entity:
            x, y = path[k]
            o, d = orient[k], heading[k]
            if left:
                x, y, o, d = FIELD_LENGTH - x, FIELD_WIDTH - y, (o + 180.0) % 360.0, (d + 180.0) % 360.0
            rows.append({
                "time": t, "x": f"{x:.2f}", "y": f"{y:.2f}", "s": f"{speed[k]:.2f}", "a": f"{accel[k]:.2f}",
                "dis": f"{dis[k]:.2f}", "o": f"{o:.2f}", "dir": f"{d:.2f}", "event": ev, "nflId": str(nfl_id),
                "displayName": f"Player {nfl_id}", "jerseyNumber": str(nfl_id % 100), "position": position,
                "frameId": str(k + 1), "team": side, "gameId": str(game["gameId"]), "playId": str(play_id),
                "playDirection": direction, "route": "",
            })
        x, y = ball[k]
        if left:
            x, y = FIELD_LENGTH - x, FIELD_WIDTH - y
        rows.append({
            "time": t, "x": f"{x:.2f}", "y": f"{y:.2f}", "s": f"{b_speed[k]:.2f}", "a": f"{b_accel[k]:.2f}",
            "dis": f"{b_dis[k]:.2f}", "o": "NA", "dir": "NA", "event": ev, "nflId": "NA",
            "displayName": "Football", "jerseyNumber": "NA", "position": "NA", "frameId": str(k + 1),
            "team": "football", "gameId": str(game["gameId"]), "playId": str(play_id),
            "playDirection": direction, "route": "",
        })
    layout = {"n_frames": n_frames, "pass_forward": pf, "arrive": arrive, "entities": len(entities) + 1}
    return rows, layout, outcome


def generate_season(config: SynthConfig) -> SynthSeason:
    """Deterministic season for ``config`` (same config, same bytes)."""
    rng = np.random.default_rng(config.seed)
    n_games = math.ceil(config.n_plays / PLAYS_PER_GAME)
    dpi_flags = np.zeros(config.n_plays, dtype=bool)
    dpi_flags[rng.permutation(config.n_plays)[: config.n_dpi]] = True

    games = []
    for g in range(n_games):
        home, visitor = rng.choice(len(TEAMS), size=2, replace=False)
        week = g % 17 + 1
        game_id = 2018090600 + g
        start = SEASON_START_MS + (week - 1) * 7 * 86_400_000 + g * 3 * 3_600_000
        ids = {
            "home": [int(10_000 + home * 100 + j) for j in range(config.players_per_side + 1)],
            "away": [int(10_000 + visitor * 100 + j) for j in range(config.players_per_side + 1)],
        }
        games.append({
            "gameId": game_id, "gameDate": format_time_ms(start)[:10], "gameTimeEastern": "13:00:00",
            "homeTeamAbbr": TEAMS[home], "visitorTeamAbbr": TEAMS[visitor], "week": week,
            "_start": start, "_ids": ids,
        })

    plays, weeks, layouts = [], {}, {}
    for i in range(config.n_plays):
        game = games[i // PLAYS_PER_GAME]
        play_id = 100 + (i % PLAYS_PER_GAME) * 25
        possession = "home" if rng.random() < 0.5 else "away"
        is_dpi = bool(dpi_flags[i])
        t0 = game["_start"] + (i % PLAYS_PER_GAME) * 40_000
        rows, layout, outcome = _play_rows(config, rng, game, play_id, possession, is_dpi, t0)
        weeks.setdefault(game["week"], []).extend(rows)
        layouts[(game["gameId"], play_id)] = layout
        other = ""
        if not is_dpi and rng.random() < 0.03:
            other = "OPI" if rng.random() < 0.5 else "DH"
        plays.append({
            "gameId": game["gameId"], "playId": play_id,
            "playDescription": "synthetic pass play", "quarter": 1 + (i % PLAYS_PER_GAME) // 5,
            "down": int(rng.integers(1, 4)), "yardsToGo": int(rng.integers(1, 15)),
            "possessionTeam": game["homeTeamAbbr"] if possession == "home" else game["visitorTeamAbbr"],
            "playType": "play_type_pass", "penaltyCodes": "DPI" if is_dpi else (other or "NA"),
            "penaltyJerseyNumbers": "NA",
            "passResult": "C" if outcome == "pass_outcome_caught" else "I",
            "isDefensivePI": "TRUE" if is_dpi else "FALSE",
        })
    clean_games = [{k: v for k, v in g.items() if not k.startswith("_")} for g in games]
    return SynthSeason(clean_games, plays, weeks, layouts)


# ---------------------------------------------------------------------------
# pathologies


def _frame_rows(rows: list[dict], key: tuple[int, int]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    g, p = str(key[0]), str(key[1])
    for idx, r in enumerate(rows):
        if r["gameId"] == g and r["playId"] == p:
            out.setdefault(int(r["frameId"]) - 1, []).append(idx)
    return out


def inject_pathologies(
    season: SynthSeason, kinds: Iterable[str], per_kind: int = 3, seed: int = 0
) -> tuple[SynthSeason, dict[str, list[tuple[int, int]]]]:
    """Corrupt ``per_kind`` distinct plays per pathology; returns the new season and the corrupted keys."""
    kinds = list(kinds)
    unknown = set(kinds) - set(PATHOLOGIES)
    if unknown:
        raise ValueError(f"unknown pathologies {sorted(unknown)}; choose from {PATHOLOGIES}")
    rng = np.random.default_rng(seed)
    keys = sorted(season.play_frames)
    if per_kind * len(kinds) > len(keys):
        raise ValueError("not enough plays to corrupt")
    chosen = rng.permutation(len(keys))[: per_kind * len(kinds)]
    weeks = {w: [dict(r) for r in rows] for w, rows in season.weeks.items()}
    week_of = {(g["gameId"]): g["week"] for g in season.games}
    report: dict[str, list[tuple[int, int]]] = {}
    for n, kind in enumerate(kinds):
        picked = sorted(keys[i] for i in chosen[n * per_kind:(n + 1) * per_kind])
        report[kind] = picked
        for key in picked:
            rows = weeks[week_of[key[0]]]
            frames = _frame_rows(rows, key)
            lay = season.play_frames[key]
            pf, arrive = lay["pass_forward"], lay["arrive"]
            if kind == "duplicate_timestamps":
                k = pf + 2
                t = rows[frames[k - 1][0]]["time"]
                for idx in frames[k]:
                    rows[idx]["time"] = t
            elif kind == "missing_ball_frames":
                drop = {idx for k in (pf + 1, pf + 2) for idx in frames[k] if rows[idx]["team"] == "football"}
                rows[:] = [r for i, r in enumerate(rows) if i not in drop]
            elif kind == "no_end_event":
                for k, idxs in frames.items():
                    if k > pf:
                        for idx in idxs:
                            rows[idx]["event"] = "None"
            elif kind == "multiple_pass_forward":
                for idx in frames[pf - 2]:
                    rows[idx]["event"] = "pass_forward"
    return replace(season, weeks=weeks), report
