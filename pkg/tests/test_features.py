import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpipred.features import (
    CONTINUOUS_FEATURES,
    DIST_ATT_DEF,
    EVENT_FLAGS,
    FEATURE_ORDER,
    N_CONTINUOUS,
    N_FEATURES,
    ClassTooSmall,
    MissingBall,
    PlaySequence,
    ZeroCount,
    apply_scaler,
    assemble_sequence,
    build_sequences,
    class_weights,
    compute_proximity_threshold,
    euclidean,
    filter_by_proximity,
    fit_scaler,
    normalize_direction,
    pad_or_truncate,
    select_duel,
    split_dataset,
)
from dpipred.ingest import load_dataset
from dpipred.preprocess import preprocess_dataset
from conftest import make_play


def seq(i, label, steps=None, dist=1.0):
    if steps is None:
        steps = np.zeros((3, N_FEATURES))
        steps[:, DIST_ATT_DEF] = dist
    return PlaySequence(1 + i // 1000, i % 1000, 1, 2, bool(label), np.asarray(steps, dtype=float))


def test_feature_layout():
    assert len(FEATURE_ORDER) == N_FEATURES == 19
    assert FEATURE_ORDER[:N_CONTINUOUS] == CONTINUOUS_FEATURES
    assert FEATURE_ORDER[N_CONTINUOUS:] == EVENT_FLAGS


# ---------------------------------------------------------------- direction


def test_right_play_identity():
    play = make_play(["pass_forward", "tackle"])
    assert normalize_direction(play) is play


def test_left_point_mirrored():
    pos = [{10: (30.0, 10.0, "home"), 20: (31, 11, "away"), None: (29, 12, "ball")}] * 2
    out = normalize_direction(make_play(["pass_forward", "tackle"], pos, direction="left"))
    r = out.frames[0].records[0]
    assert r.nfl_id == 10 and (r.x, r.y) == pytest.approx((90.0, 43.34), abs=1e-12)
    assert r.orientation_deg == 270.0


def test_isometry_1000_pairs(rng):
    pts = rng.uniform([0, 0], [120, 53.34], size=(1000, 2, 2))
    for a, b in pts:
        pos = [{10: (a[0], a[1], "home"), 20: (b[0], b[1], "away"), None: (60, 20, "ball")}]
        play = normalize_direction(make_play(["pass_forward"], pos, direction="left"))
        ra, rb = play.frames[0].records[:2]
        assert abs(euclidean((ra.x, ra.y), (rb.x, rb.y)) - euclidean(a, b)) < 1e-9


# ---------------------------------------------------------------- duel


def test_duel_example():
    pos = {1: (11.0, 20, "home"), 2: (14.0, 20, "home"), 3: (11.2, 20, "away"), 4: (16.0, 20, "away"),
           None: (10.0, 20, "ball")}
    play = make_play(["pass_forward", "pass_arrived"], [pos, pos])
    assert select_duel(play, 1) == (1, 3)


def test_duel_single_player_each_side():
    pos = {5: (80.0, 5, "home"), 6: (1.0, 50, "away"), None: (10.0, 20, "ball")}
    assert select_duel(make_play(["pass_forward"], [pos]), 0) == (5, 6)


def test_duel_tie_smaller_id():
    pos = {7: (11.0, 20, "home"), 3: (9.0, 20, "home"), 8: (10, 21, "away"), None: (10.0, 20, "ball")}
    assert select_duel(make_play(["pass_forward"], [pos]), 0) == (3, 8)


def test_duel_missing_ball():
    pos = {1: (11.0, 20, "home"), 2: (12.0, 20, "away")}
    with pytest.raises(MissingBall):
        select_duel(make_play(["pass_forward"], [pos]), 0)


def test_duel_brute_force(rng):
    for trial in range(1000):
        n = int(rng.integers(1, 12))
        pos = {None: (*rng.uniform([0, 0], [120, 53.34]), "ball")}
        for k in range(n):
            pos[100 + k] = (*rng.uniform([0, 0], [120, 53.34]), "home")
            pos[200 + k] = (*rng.uniform([0, 0], [120, 53.34]), "away")
        play = make_play(["pass_forward"], [pos])
        bx, by = pos[None][:2]

        def best(side):
            cands = [(math.dist((x, y), (bx, by)), i) for i, (x, y, s) in pos.items() if s == side]
            return min(cands)[1]

        assert select_duel(play, 0) == (best("home"), best("away"))


# ---------------------------------------------------------------- distance


def test_euclidean_examples():
    assert euclidean((3.0, 4.0), (3.0, 4.0)) == 0.0
    assert euclidean((0, 0), (3, 4)) == 5.0


def test_euclidean_extended_precision(rng):
    mpmath.mp.dps = 50
    for p, q in rng.uniform(-200, 200, size=(1000, 2, 2)):
        exact = mpmath.sqrt((mpmath.mpf(p[0]) - q[0]) ** 2 + (mpmath.mpf(p[1]) - q[1]) ** 2)
        assert abs(euclidean(p, q) - float(exact)) <= 1e-12 * max(1.0, float(exact))


# ---------------------------------------------------------------- assembly


def test_assemble_twelve_frames():
    s = assemble_sequence(make_play(["pass_forward"] + [None] * 10 + ["tackle"]), (10, 20))
    assert s.steps.shape == (12, 19) and s.dropped_frames == 0


def test_assemble_missing_defender():
    pos = []
    for k in range(12):
        p = {10: (30.0 + k, 20, "home"), 20: (31.0 + k, 21, "away"), None: (29.0 + k, 20.5, "ball")}
        if k in (3, 7):
            del p[20]
        pos.append(p)
    s = assemble_sequence(make_play(["pass_forward"] + [None] * 10 + ["tackle"], pos), (10, 20))
    assert s.steps.shape[0] == 10 and s.dropped_frames == 2


def test_event_flag_scan():
    events = ["pass_forward", None, "pass_arrived", "first_contact", "tackle"]
    s = assemble_sequence(make_play(events), (10, 20), label=True)
    flags = s.steps[:, N_CONTINUOUS:]
    expected = [1.0 if name in events else 0.0 for name in EVENT_FLAGS]
    assert np.all(flags == expected) and s.label


def test_synth_sequences_invariants(small_synth_dir):
    raw = load_dataset(small_synth_dir)
    plays, _ = preprocess_dataset(raw)
    seqs, report = build_sequences(plays)
    assert len(seqs) + len(report.excluded) == len(plays)
    labels = {p.key: p.is_dpi for p in plays}
    for s in seqs:
        d = s.steps[:, N_CONTINUOUS - 3:N_CONTINUOUS]
        assert np.all(d >= 0)
        ad, ab, db = d.T
        assert np.all(ad <= ab + db + 1e-6) and np.all(ab <= ad + db + 1e-6) and np.all(db <= ad + ab + 1e-6)
        assert np.all(s.steps[:, N_CONTINUOUS:] == s.steps[0, N_CONTINUOUS:])
        assert s.label == labels[s.key]
        assert s.max_duel_distance == s.steps[:, DIST_ATT_DEF].max()


def test_isometry_preserves_duel_distances(small_synth_dir):
    raw = load_dataset(small_synth_dir)
    plays, _ = preprocess_dataset(raw)
    for play in plays:
        if play.play_direction != "left":
            continue
        duel = select_duel(play)
        a = assemble_sequence(play, duel).steps[:, N_CONTINUOUS - 3:N_CONTINUOUS]
        b = assemble_sequence(normalize_direction(play), duel).steps[:, N_CONTINUOUS - 3:N_CONTINUOUS]
        assert np.max(np.abs(a - b)) < 1e-9


# ---------------------------------------------------------------- proximity


def test_threshold_examples():
    assert compute_proximity_threshold([seq(i, 1, dist=2.5) for i in range(5)]) == 2.5
    assert compute_proximity_threshold([seq(i, 1, dist=float(i + 1)) for i in range(10)]) == pytest.approx(9.1)


def test_threshold_ignores_non_dpi():
    seqs = [seq(0, 1, dist=1.0), seq(1, 0, dist=100.0)]
    assert compute_proximity_threshold(seqs) == 1.0


def test_filter_identity_and_recount(rng):
    seqs = [seq(i, rng.random() < 0.1, dist=float(rng.uniform(0, 10))) for i in range(500)]
    assert filter_by_proximity(seqs, math.inf) == seqs
    t = 5.0
    assert len(filter_by_proximity(seqs, t)) == sum(1 for s in seqs if s.steps[:, DIST_ATT_DEF].max() <= t)


# ---------------------------------------------------------------- split


def _pool(n_neg, n_pos):
    return [seq(i, 0) for i in range(n_neg)] + [seq(n_neg + i, 1) for i in range(n_pos)]


def test_split_table1_counts():
    sp = split_dataset(_pool(9529, 231), seed=0)
    count = lambda part, lab: sum(s.label == lab for s in part)
    assert [count(p, False) for p in (sp.train, sp.validation, sp.test)] == [5336, 1334, 2859]
    assert [count(p, True) for p in (sp.train, sp.validation, sp.test)] == [130, 32, 69]


def test_split_one_class():
    sp = split_dataset(_pool(100, 0), seed=1)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (56, 14, 30)
    assert sp.weights is None


def test_split_seed_determinism():
    pool = _pool(300, 30)
    members = lambda sp: tuple(tuple(s.key for s in p) for p in (sp.train, sp.validation, sp.test))
    counts = lambda sp: tuple((len(p), sum(s.label for s in p)) for p in (sp.train, sp.validation, sp.test))
    ref = split_dataset(pool, seed=0)
    for s in range(20):
        a, b = split_dataset(pool, seed=s), split_dataset(pool, seed=s)
        assert members(a) == members(b)
        assert counts(a) == counts(ref)
        if s:
            assert members(a) != members(ref)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 400), st.integers(3, 60), st.integers(0, 2**31))
def test_split_disjoint_and_stratified(n_neg, n_pos, seed):
    sp = split_dataset(_pool(n_neg, n_pos), seed=seed)
    keys = [s.key for p in (sp.train, sp.validation, sp.test) for s in p]
    assert len(keys) == len(set(keys)) == n_neg + n_pos
    for part, frac in zip((sp.train, sp.validation, sp.test), (0.56, 0.14, 0.30)):
        for lab, n in ((False, n_neg), (True, n_pos)):
            assert abs(sum(s.label == lab for s in part) - frac * n) <= 1 + 1e-9


def test_split_too_small():
    with pytest.raises(ClassTooSmall):
        split_dataset(_pool(50, 2))


# ---------------------------------------------------------------- weights


def test_class_weights_examples():
    w = class_weights((9529, 231))
    assert w.w_class == pytest.approx((0.5121, 21.1255), abs=1e-4)
    assert class_weights((40, 40)).w_class == (1.0, 1.0)
    with pytest.raises(ZeroCount):
        class_weights((10, 0))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(1, 10**6), min_size=2, max_size=5), st.integers(2, 50))
def test_class_weights_identities(counts, k):
    w = class_weights(counts)
    assert sum(wc * c for wc, c in zip(w.w_class, counts)) == pytest.approx(sum(counts), rel=1e-12)
    assert class_weights([c * k for c in counts]).w_class == pytest.approx(w.w_class, rel=1e-12)


# ---------------------------------------------------------------- scaling and padding


def test_scaler_definitions(rng):
    train = [seq(i, 0, steps=rng.normal(3, 2, size=(int(rng.integers(2, 20)), N_FEATURES))) for i in range(40)]
    const = np.zeros((4, N_FEATURES))
    const[:, 0] = 7.0
    train.append(seq(99, 0, steps=const))
    sc = fit_scaler(train)
    stacked = np.concatenate([s.steps for s in train])
    z = apply_scaler(sc, stacked)
    assert np.allclose(z[:, :N_CONTINUOUS].mean(axis=0), 0, atol=1e-9)
    assert np.allclose(z[:, :N_CONTINUOUS].std(axis=0), 1, atol=1e-6)
    assert np.array_equal(z[:, N_CONTINUOUS:], stacked[:, N_CONTINUOUS:])
    other = rng.normal(3, 2, size=(100, N_FEATURES))
    zo = apply_scaler(sc, other)
    mu, sd = stacked.mean(axis=0), stacked.std(axis=0)
    for r, c in zip(rng.integers(0, 100, 100), rng.integers(0, N_CONTINUOUS, 100)):
        assert abs(zo[r, c] - (other[r, c] - mu[c]) / sd[c]) < 1e-9


def test_constant_feature_scales_to_zero():
    train = [seq(i, 0, steps=np.full((3, N_FEATURES), 4.0)) for i in range(3)]
    z = apply_scaler(fit_scaler(train), np.full((3, N_FEATURES), 4.0))
    assert np.all(z[:, :N_CONTINUOUS] == 0.0)


def test_pad_examples():
    x = np.arange(60 * 19, dtype=float).reshape(60, 19)
    out, mask = pad_or_truncate(x)
    assert np.array_equal(out, x) and mask.sum() == 60
    y = np.arange(73 * 19, dtype=float).reshape(73, 19)
    out, _ = pad_or_truncate(y)
    assert np.array_equal(out, y[13:])


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 120))
def test_pad_recount(n):
    x = np.ones((n, 19))
    out, mask = pad_or_truncate(x)
    k = min(n, 60)
    assert mask.sum() == k and np.all(mask[60 - k:] == 1) and np.all(mask[:60 - k] == 0)
    assert np.all(out[:60 - k] == 0) and np.all(out[60 - k:] == 1)
