from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpipred.ingest import load_dataset
from dpipred.preprocess import (
    DedupOverflow,
    Frame,
    FrameOverflow,
    NoEndEvent,
    build_frames,
    dedup_timestamps,
    filter_forward_pass_plays,
    find_end_event,
    preprocess_dataset,
    trim_to_pass_window,
)
from conftest import make_play, rec


def _frames(stamps, ids=None):
    ids = ids or list(range(1, len(stamps) + 1))
    return tuple(Frame(t, f, (rec(10, 1, 1, frame_id=f, ts=t),)) for t, f in zip(stamps, ids))


def test_dedup_two_frames():
    out = dedup_timestamps(_frames([1000, 1000], [7, 8]))
    assert [f.timestamp_ms for f in out] == [1000, 1010]
    assert all(r.timestamp_ms == f.timestamp_ms for f in out for r in f.records)


def test_dedup_identity_when_unique():
    frames = _frames([1000, 1100, 1200])
    assert dedup_timestamps(frames) == frames


@pytest.mark.parametrize("n", range(1, 10))
def test_dedup_chains(n):
    out = dedup_timestamps(_frames([1000] * n + [1100]))
    assert [f.timestamp_ms for f in out] == [1000 + 10 * k for k in range(n)] + [1100]


def test_dedup_overflow():
    with pytest.raises(DedupOverflow):
        dedup_timestamps(_frames([1000] * 11 + [1100]))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=30))
def test_dedup_idempotent_and_strict(slots):
    stamps = sorted(1000 + 100 * s for s in slots)
    try:
        once = dedup_timestamps(_frames(stamps))
    except DedupOverflow:
        return
    assert dedup_timestamps(once) == once
    ts = [f.timestamp_ms for f in once]
    assert all(a < b for a, b in zip(ts, ts[1:]))


def test_filter_forward_pass():
    kept = filter_forward_pass_plays([
        make_play([None, "pass_forward", None, "tackle"]),
        make_play([None, "handoff", "tackle"]),
    ])
    assert len(kept) == 1 and kept[0].pass_forward_index == 1


def test_first_of_two_pass_forwards():
    events = [None, "pass_forward", None, "pass_forward", "tackle"]
    (play,) = filter_forward_pass_plays([make_play(events)])
    assert play.pass_forward_index == events.index("pass_forward")


def test_trim_lengths():
    play = filter_forward_pass_plays([make_play([None] * 25 + ["pass_forward"] + [None] * 14)])[0]
    assert len(trim_to_pass_window(play).frames) == 15
    at0 = filter_forward_pass_plays([make_play(["pass_forward", None, "tackle"])])[0]
    assert trim_to_pass_window(at0).frames == at0.frames


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 40), st.data())
def test_trim_removes_exactly_pass_index(n, data):
    idx = data.draw(st.integers(0, n - 1))
    events = [None] * n
    events[idx] = "pass_forward"
    play = filter_forward_pass_plays([make_play(events)])[0]
    assert len(play.frames) - len(trim_to_pass_window(play).frames) == idx


@pytest.mark.parametrize("events, expected", [
    (["pass_forward", None, None, "pass_outcome_caught", "tackle"], (3, "pass_outcome_caught")),
    (["pass_forward", "tackle"], (1, "tackle")),
    (["pass_forward", "None", "pass_arrived"], (2, "pass_arrived")),
])
def test_find_end_event(events, expected):
    assert find_end_event(make_play(events)) == expected


def test_no_end_event():
    with pytest.raises(NoEndEvent):
        find_end_event(make_play(["pass_forward", None, None]))


def test_frame_overflow():
    recs = [rec(i, 1, 1) for i in range(24)]
    with pytest.raises(FrameOverflow):
        build_frames(recs)


def test_chain_postconditions(small_synth_dir):
    raw = load_dataset(small_synth_dir)
    plays, report = preprocess_dataset(raw)
    assert report.plays_in == len(raw.plays)
    for play in plays:
        assert play.frames[0].event == "pass_forward"
        assert play.end_event_index is not None and play.end_event_index > 0
        ts = [f.timestamp_ms for f in play.frames]
        assert all(a < b for a, b in zip(ts, ts[1:]))
        assert all(len(f.records) <= 23 for f in play.frames)
        # records inside a frame are the loaded ones, same order
        loaded = {}
        for r in raw.plays[play.key]:
            loaded.setdefault(r.frame_id, []).append(r)
        for f in play.frames:
            assert list(f.records) == loaded[f.frame_id]


def test_preprocess_never_mutates_frames():
    play = make_play(["pass_forward", None, "tackle"])
    frames = play.frames
    trim_to_pass_window(replace(play, pass_forward_index=0))
    assert play.frames is frames
