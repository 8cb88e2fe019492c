"""Duel sequences: selection, direction normalization, feature assembly,
proximity filtering, stratified splitting, scaling and class weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .ingest import FIELD_LENGTH, FIELD_WIDTH, TrackingRecord
from .preprocess import Frame, PlayFrames

EVENT_FLAGS = (
    "pass_arrived",
    "pass_outcome_caught",
    "tackle",
    "first_contact",
    "pass_outcome_incomplete",
    "out_of_bounds",
)
CONTINUOUS_FEATURES = (
    "att_speed", "att_accel", "att_orient_deg", "att_dir_deg",
    "def_speed", "def_accel", "def_orient_deg", "def_dir_deg",
    "ball_speed", "ball_accel",
    "dist_att_def", "dist_att_ball", "dist_def_ball",
)
FEATURE_ORDER = CONTINUOUS_FEATURES + EVENT_FLAGS
N_FEATURES = len(FEATURE_ORDER)
N_CONTINUOUS = len(CONTINUOUS_FEATURES)
DIST_ATT_DEF = FEATURE_ORDER.index("dist_att_def")

DEFAULT_FRACTIONS = (0.56, 0.14, 0.30)
DEFAULT_SEQ_LEN = 60
SCALE_EPS = 1e-8


class FeatureError(Exception):
    pass


class MissingBall(FeatureError):
    pass


class EmptySide(FeatureError):
    pass


class EmptySequence(FeatureError):
    pass


class NoDpiPlays(FeatureError):
    pass


class ClassTooSmall(FeatureError):
    pass


class ZeroCount(FeatureError):
    pass


@dataclass(frozen=True, eq=False)
class PlaySequence:
    game_id: int
    play_id: int
    attacker_id: int
    defender_id: int
    label: bool
    steps: np.ndarray  # (n_steps, 19)
    dropped_frames: int = 0

    def __post_init__(self):
        self.steps.setflags(write=False)

    @property
    def key(self) -> tuple[int, int]:
        return (self.game_id, self.play_id)

    @property
    def max_duel_distance(self) -> float:
        return float(self.steps[:, DIST_ATT_DEF].max())


@dataclass(frozen=True)
class ClassWeightSpec:
    n_inst: int
    n_classes: int
    n_inst_class: tuple[int, ...]
    w_class: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "n_inst": self.n_inst,
            "n_classes": self.n_classes,
            "n_inst_class": list(self.n_inst_class),
            "w_class": list(self.w_class),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClassWeightSpec":
        return cls(d["n_inst"], d["n_classes"], tuple(d["n_inst_class"]), tuple(d["w_class"]))


@dataclass(frozen=True)
class Scaler:
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"means": list(self.means), "stds": list(self.stds)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scaler":
        return cls(tuple(d["means"]), tuple(d["stds"]))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[PlaySequence, ...]
    validation: tuple[PlaySequence, ...]
    test: tuple[PlaySequence, ...]
    scaler: Scaler
    weights: ClassWeightSpec | None
    seed: int
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS

    def splits(self) -> dict[str, tuple[PlaySequence, ...]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass
class FeatureReport:
    plays_in: int = 0
    missing_ball: int = 0
    empty_side: int = 0
    empty_sequence: int = 0
    dropped_frames: int = 0
    excluded: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "plays_in": self.plays_in,
            "missing_ball": self.missing_ball,
            "empty_side": self.empty_side,
            "empty_sequence": self.empty_sequence,
            "dropped_frames": self.dropped_frames,
            "excluded": self.excluded,
        }


# ---------------------------------------------------------------------------
# geometry


def euclidean(p: Sequence[float], q: Sequence[float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _flip_angle(a: float | None) -> float | None:
    return None if a is None else (a + 180.0) % 360.0


def _mirror(rec: TrackingRecord) -> TrackingRecord:
    return replace(
        rec,
        x=FIELD_LENGTH - rec.x,
        y=FIELD_WIDTH - rec.y,
        orientation_deg=_flip_angle(rec.orientation_deg),
        direction_deg=_flip_angle(rec.direction_deg),
        play_direction="right",
    )


def normalize_direction(play: PlayFrames) -> PlayFrames:
    """Rotate left-moving plays by 180 degrees about the field centre so every attack runs right."""
    if play.play_direction == "right":
        return play
    frames = tuple(
        Frame(f.timestamp_ms, f.frame_id, tuple(_mirror(r) for r in f.records)) for f in play.frames
    )
    return replace(play, frames=frames, play_direction="right")


def select_duel(play: PlayFrames, end_event_index: int | None = None) -> tuple[int, int]:
    """Attacker and defender nearest the ball at the end-of-play frame.

    Ties break toward the smaller player id.
    """
    idx = play.end_event_index if end_event_index is None else end_event_index
    if play.possession_side not in ("home", "away"):
        raise EmptySide(f"play {play.key}: possession side unknown")
    frame = play.frames[idx]
    ball = next((r for r in frame.records if r.is_ball), None)
    if ball is None:
        raise MissingBall(f"play {play.key}: no ball at end frame {idx}")
    bxy = (ball.x, ball.y)
    best: dict[bool, tuple[float, int]] = {}
    for r in frame.records:
        if r.is_ball:
            continue
        attacking = r.side == play.possession_side
        cand = (euclidean((r.x, r.y), bxy), r.nfl_id)
        if attacking not in best or cand < best[attacking]:
            best[attacking] = cand
    if True not in best or False not in best:
        raise EmptySide(f"play {play.key}: a side has no player at end frame {idx}")
    return best[True][1], best[False][1]


# ---------------------------------------------------------------------------
# assembly


def event_flags(events: Sequence[str | None]) -> np.ndarray:
    present = set(events)
    return np.array([1.0 if name in present else 0.0 for name in EVENT_FLAGS])


def assemble_sequence(play: PlayFrames, duel: tuple[int, int], label: bool | None = None) -> PlaySequence:
    """One 19-value step per frame holding the attacker, defender and ball.

    Frames missing any of the three, or a player's orientation/direction,
    are dropped and counted in ``dropped_frames``.
    """
    att_id, def_id = duel
    flags = event_flags(play.events)
    rows = []
    dropped = 0
    for frame in play.frames:
        att = dfd = ball = None
        for r in frame.records:
            if r.is_ball:
                ball = r
            elif r.nfl_id == att_id:
                att = r
            elif r.nfl_id == def_id:
                dfd = r
        if (
            att is None or dfd is None or ball is None
            or att.orientation_deg is None or att.direction_deg is None
            or dfd.orientation_deg is None or dfd.direction_deg is None
        ):
            dropped += 1
            continue
        axy, dxy, bxy = (att.x, att.y), (dfd.x, dfd.y), (ball.x, ball.y)
        rows.append([
            att.speed, att.accel, att.orientation_deg, att.direction_deg,
            dfd.speed, dfd.accel, dfd.orientation_deg, dfd.direction_deg,
            ball.speed, ball.accel,
            euclidean(axy, dxy), euclidean(axy, bxy), euclidean(dxy, bxy),
            *flags,
        ])
    if not rows:
        raise EmptySequence(f"play {play.key}: every frame lacks the duel or the ball")
    return PlaySequence(
        game_id=play.game_id,
        play_id=play.play_id,
        attacker_id=att_id,
        defender_id=def_id,
        label=play.is_dpi if label is None else bool(label),
        steps=np.asarray(rows, dtype=np.float64),
        dropped_frames=dropped,
    )


def build_sequences(plays: Sequence[PlayFrames]) -> tuple[list[PlaySequence], FeatureReport]:
    """Direction-normalize, select the duel and assemble each preprocessed play."""
    report = FeatureReport()
    out = []
    for play in plays:
        report.plays_in += 1
        try:
            play = normalize_direction(play)
            duel = select_duel(play)
            seq = assemble_sequence(play, duel)
        except MissingBall as exc:
            report.missing_ball += 1
            report.excluded.append({"game_id": play.game_id, "play_id": play.play_id, "reason": str(exc)})
            continue
        except EmptySide as exc:
            report.empty_side += 1
            report.excluded.append({"game_id": play.game_id, "play_id": play.play_id, "reason": str(exc)})
            continue
        except EmptySequence as exc:
            report.empty_sequence += 1
            report.excluded.append({"game_id": play.game_id, "play_id": play.play_id, "reason": str(exc)})
            continue
        report.dropped_frames += seq.dropped_frames
        out.append(seq)
    return out, report


# ---------------------------------------------------------------------------
# filtering and splitting


def compute_proximity_threshold(sequences: Sequence[PlaySequence], quantile: float = 0.90) -> float:
    """Linear-interpolation quantile of max duel distance over DPI plays only."""
    dists = [s.max_duel_distance for s in sequences if s.label]
    if not dists:
        raise NoDpiPlays("no DPI sequences to derive a proximity threshold from")
    return float(np.quantile(np.asarray(dists), quantile, method="linear"))


def filter_by_proximity(sequences: Sequence[PlaySequence], threshold: float) -> list[PlaySequence]:
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return [s for s in sequences if s.max_duel_distance <= threshold]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(
    sequences: Sequence[PlaySequence],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> DatasetSplit:
    """Stratified train/validation/test split.

    Each class is ordered by play key, shuffled with a seeded generator and
    cut so that validation and test receive ``round(f * n)`` members and
    training the remainder.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts: list[list[PlaySequence]] = [[], [], []]
    for label in (False, True):
        members = sorted((s for s in sequences if s.label == label), key=lambda s: s.key)
        if not members:
            continue
        if len(members) < 3:
            raise ClassTooSmall(f"class {int(label)} has {len(members)} member(s); need at least 3")
        order = rng.permutation(len(members))
        n = len(members)
        n_val = _round_half_up(fractions[1] * n)
        n_test = _round_half_up(fractions[2] * n)
        n_train = n - n_val - n_test
        shuffled = [members[i] for i in order]
        parts[0] += shuffled[:n_train]
        parts[1] += shuffled[n_train:n_train + n_val]
        parts[2] += shuffled[n_train + n_val:]
    train, val, test = (tuple(sorted(p, key=lambda s: s.key)) for p in parts)
    counts = (sum(not s.label for s in train), sum(s.label for s in train))
    weights = class_weights(counts) if all(counts) else None
    return DatasetSplit(
        train=train,
        validation=val,
        test=test,
        scaler=fit_scaler(train) if train else identity_scaler(),
        weights=weights,
        seed=seed,
        fractions=tuple(fractions),
    )


def class_weights(counts: Sequence[int]) -> ClassWeightSpec:
    """Inverse-frequency weights: ``n_inst / (n_classes * n_inst_class)``."""
    counts = tuple(int(c) for c in counts)
    if not counts or any(c <= 0 for c in counts):
        raise ZeroCount(f"every class count must be positive, got {counts}")
    n_inst = sum(counts)
    k = len(counts)
    return ClassWeightSpec(
        n_inst=n_inst,
        n_classes=k,
        n_inst_class=counts,
        w_class=tuple(n_inst / (k * c) for c in counts),
    )


# ---------------------------------------------------------------------------
# scaling and padding


def identity_scaler() -> Scaler:
    return Scaler((0.0,) * N_FEATURES, (1.0,) * N_FEATURES)


def fit_scaler(train: Sequence[PlaySequence]) -> Scaler:
    """Per-feature z-score statistics over every training step; flags keep (0, 1)."""
    stacked = np.concatenate([s.steps for s in train], axis=0)
    means = stacked[:, :N_CONTINUOUS].mean(axis=0)
    stds = stacked[:, :N_CONTINUOUS].std(axis=0)
    flag_ids = identity_scaler()
    return Scaler(
        means=tuple(float(m) for m in means) + flag_ids.means[N_CONTINUOUS:],
        stds=tuple(float(s) for s in stds) + flag_ids.stds[N_CONTINUOUS:],
    )


def apply_scaler(scaler: Scaler, steps: np.ndarray) -> np.ndarray:
    mu = np.asarray(scaler.means)
    sd = np.asarray(scaler.stds)
    safe = np.where(sd < SCALE_EPS, 1.0, sd)
    out = (steps - mu) / safe
    out[..., sd < SCALE_EPS] = 0.0
    return out


def pad_or_truncate(steps: np.ndarray, seq_len: int = DEFAULT_SEQ_LEN) -> tuple[np.ndarray, np.ndarray]:
    """Keep the last ``seq_len`` steps; left-pad shorter sequences with zeros."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    steps = np.asarray(steps, dtype=np.float64)
    n = steps.shape[0]
    out = np.zeros((seq_len, steps.shape[1]))
    mask = np.zeros(seq_len)
    if n >= seq_len:
        out[:] = steps[n - seq_len:]
        mask[:] = 1.0
    else:
        out[seq_len - n:] = steps
        mask[seq_len - n:] = 1.0
    return out, mask
