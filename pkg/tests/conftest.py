import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dpipred.dataset import build_from_raw
from dpipred.ingest import TrackingRecord
from dpipred.preprocess import Frame, PlayFrames
from dpipred.synth import SynthConfig, generate_season


def rec(nfl_id, x, y, *, side="home", frame_id=1, ts=1000, event=None, game_id=1, play_id=1,
        speed=1.0, accel=0.5, o=90.0, d=90.0, direction="right"):
    ball = nfl_id is None
    return TrackingRecord(
        game_id=game_id,
        play_id=play_id,
        frame_id=frame_id,
        timestamp_ms=ts,
        nfl_id=nfl_id,
        side="ball" if ball else side,
        x=float(x),
        y=float(y),
        speed=speed,
        accel=accel,
        orientation_deg=None if ball else o,
        direction_deg=None if ball else d,
        event=event,
        play_direction=direction,
        team_code="football" if ball else side,
    )


def make_play(events, positions=None, *, direction="right", possession="home", is_dpi=False,
              start_ts=1000, end_event_index=None):
    """Play whose frame k carries ``events[k]``.

    ``positions[k]`` maps nfl_id (None = ball) to (x, y, side); the default is
    one attacker (10, home), one defender (20, away) and the ball.
    """
    frames = []
    for k, ev in enumerate(events):
        pos = positions[k] if positions is not None else {
            10: (30.0 + k, 20.0, "home"), 20: (31.0 + k, 21.0, "away"), None: (29.0 + k, 20.5, "ball")
        }
        recs = []
        for j, (nid, (x, y, side)) in enumerate(sorted(pos.items(), key=lambda kv: (kv[0] is None, kv[0] or 0))):
            recs.append(rec(nid, x, y, side=side, frame_id=k + 1, ts=start_ts + 100 * k,
                            event=ev, direction=direction))
        frames.append(Frame(start_ts + 100 * k, k + 1, tuple(recs)))
    return PlayFrames(1, 1, tuple(frames), direction, possession, is_dpi, end_event_index=end_event_index)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    generate_season(SynthConfig(n_plays=300, dpi_rate=0.1, seed=3)).write(d)
    return d


@pytest.fixture(scope="session")
def small_dataset(small_synth_dir):
    ds, _ = build_from_raw(small_synth_dir, seed=0)
    return ds


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
