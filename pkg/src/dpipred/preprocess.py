"""Event-driven cleaning and segmentation of plays.

Chain applied per play: build frames, dedup timestamps, keep plays with a
forward pass, trim to the pass window, locate the end-of-play event.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import groupby
from typing import Iterable, Sequence

from .ingest import RawDataset, TrackingRecord, possession_side, resolve_label

PASS_FORWARD = "pass_forward"
DEDUP_STEP_MS = 10
MAX_ENTITIES_PER_FRAME = 23


class PreprocessError(Exception):
    pass


class DedupOverflow(PreprocessError):
    pass


class NoEndEvent(PreprocessError):
    pass


class FrameOverflow(PreprocessError):
    pass


class _NoPass(PreprocessError):
    pass


@dataclass(frozen=True)
class Frame:
    timestamp_ms: int
    frame_id: int
    records: tuple[TrackingRecord, ...]

    @property
    def event(self) -> str | None:
        for rec in self.records:
            if rec.event is not None:
                return rec.event
        return None


def is_null_event(event: str | None) -> bool:
    return event is None or event == "None"


@dataclass(frozen=True)
class PlayFrames:
    game_id: int
    play_id: int
    frames: tuple[Frame, ...]
    play_direction: str = "right"
    possession_side: str | None = None
    is_dpi: bool = False
    pass_forward_index: int | None = None
    end_event_index: int | None = None
    end_event_name: str | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.game_id, self.play_id)

    @property
    def events(self) -> list[str | None]:
        return [f.event for f in self.frames]


@dataclass
class PreprocessReport:
    plays_in: int = 0
    plays_without_pass_forward: int = 0
    plays_without_end_event: int = 0
    duplicate_timestamp_groups: int = 0
    multiple_pass_forward: int = 0
    dedup_overflow: int = 0
    frame_overflow: int = 0
    excluded: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "plays_in": self.plays_in,
            "plays_without_pass_forward": self.plays_without_pass_forward,
            "plays_without_end_event": self.plays_without_end_event,
            "duplicate_timestamp_groups": self.duplicate_timestamp_groups,
            "multiple_pass_forward": self.multiple_pass_forward,
            "dedup_overflow": self.dedup_overflow,
            "frame_overflow": self.frame_overflow,
            "excluded": self.excluded,
        }


def build_frames(records: Iterable[TrackingRecord]) -> tuple[Frame, ...]:
    """Group a play's records (sorted by timestamp, frame id) into frames."""
    frames = []
    for (ts, fid), group in groupby(records, key=lambda r: (r.timestamp_ms, r.frame_id)):
        recs = tuple(group)
        if len(recs) > MAX_ENTITIES_PER_FRAME:
            raise FrameOverflow(f"frame {fid} at {ts} has {len(recs)} entity records")
        frames.append(Frame(ts, fid, recs))
    return tuple(frames)


def count_duplicate_groups(frames: Sequence[Frame]) -> int:
    return sum(1 for _, g in groupby(frames, key=lambda f: f.timestamp_ms) if len(list(g)) > 1)


def dedup_timestamps(frames: Sequence[Frame]) -> tuple[Frame, ...]:
    """Re-stamp frames sharing a timestamp as t, t+10, t+20, ... ms in frame-id order.

    Raises:
        DedupOverflow: a re-stamped value would reach the next native timestamp.
    """
    ordered = sorted(frames, key=lambda f: (f.timestamp_ms, f.frame_id))
    groups = [(ts, list(g)) for ts, g in groupby(ordered, key=lambda f: f.timestamp_ms)]
    out: list[Frame] = []
    for gi, (ts, group) in enumerate(groups):
        next_native = groups[gi + 1][0] if gi + 1 < len(groups) else None
        for k, frame in enumerate(group):
            if k == 0:
                out.append(frame)
                continue
            new_ts = ts + DEDUP_STEP_MS * k
            if next_native is not None and new_ts >= next_native:
                raise DedupOverflow(
                    f"{len(group)} frames share timestamp {ts}; next native stamp is {next_native}"
                )
            recs = tuple(replace(r, timestamp_ms=new_ts) for r in frame.records)
            out.append(Frame(new_ts, frame.frame_id, recs))
    return tuple(out)


def first_pass_forward(frames: Sequence[Frame]) -> int | None:
    for i, f in enumerate(frames):
        if f.event == PASS_FORWARD:
            return i
    return None


def filter_forward_pass_plays(plays: Iterable[PlayFrames]) -> list[PlayFrames]:
    """Drop plays without a ``pass_forward`` frame; index the first occurrence."""
    kept = []
    for play in plays:
        idx = first_pass_forward(play.frames)
        if idx is not None:
            kept.append(replace(play, pass_forward_index=idx))
    return kept


def trim_to_pass_window(play: PlayFrames) -> PlayFrames:
    if play.pass_forward_index is None:
        raise PreprocessError(f"play {play.key} has no pass_forward index")
    return replace(play, frames=play.frames[play.pass_forward_index:], pass_forward_index=0)


def find_end_event(play: PlayFrames) -> tuple[int, str]:
    """First frame after the throw carrying a real event tag."""
    for i in range(1, len(play.frames)):
        ev = play.frames[i].event
        if not is_null_event(ev):
            return i, ev
    raise NoEndEvent(f"play {play.key} has no event after pass_forward")


def play_from_records(
    key: tuple[int, int],
    records: Sequence[TrackingRecord],
    possession: str | None = None,
    is_dpi: bool = False,
) -> PlayFrames:
    direction = records[0].play_direction if records else "right"
    return PlayFrames(
        game_id=key[0],
        play_id=key[1],
        frames=build_frames(records),
        play_direction=direction,
        possession_side=possession,
        is_dpi=is_dpi,
    )


def preprocess_play(play: PlayFrames, report: PreprocessReport | None = None) -> PlayFrames:
    """Full chain for one play. Raises on exclusion (NoEndEvent, DedupOverflow, ...)."""
    report = report if report is not None else PreprocessReport()
    report.duplicate_timestamp_groups += count_duplicate_groups(play.frames)
    play = replace(play, frames=dedup_timestamps(play.frames))
    kept = filter_forward_pass_plays([play])
    if not kept:
        raise _NoPass(play.key)
    play = kept[0]
    if sum(1 for f in play.frames if f.event == PASS_FORWARD) > 1:
        report.multiple_pass_forward += 1
    play = trim_to_pass_window(play)
    idx, name = find_end_event(play)
    return replace(play, end_event_index=idx, end_event_name=name)


def preprocess_dataset(raw: RawDataset) -> tuple[list[PlayFrames], PreprocessReport]:
    """Run the preprocessing chain over every loaded play, in key order."""
    report = PreprocessReport()
    out = []
    for key, records in raw.plays.items():
        report.plays_in += 1
        meta = raw.play_meta[key]
        try:
            side = possession_side(meta, raw.game_meta[key[0]])
            play = play_from_records(key, records, side, resolve_label(meta))
            out.append(preprocess_play(play, report))
        except _NoPass:
            report.plays_without_pass_forward += 1
        except NoEndEvent as exc:
            report.plays_without_end_event += 1
            report.excluded.append({"game_id": key[0], "play_id": key[1], "reason": str(exc)})
        except DedupOverflow as exc:
            report.dedup_overflow += 1
            report.excluded.append({"game_id": key[0], "play_id": key[1], "reason": str(exc)})
        except (FrameOverflow, ValueError) as exc:
            report.frame_overflow += isinstance(exc, FrameOverflow)
            report.excluded.append({"game_id": key[0], "play_id": key[1], "reason": str(exc)})
    return out, report
