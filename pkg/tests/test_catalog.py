import json
import random
import zlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shotit.catalog import (
    Catalog,
    ConflictError,
    MediaState,
    NotFoundError,
    TransitionError,
    encode_entry,
    parse_journal,
    replay,
)

ORDER = ["UPLOADED", "HASHING", "HASHED", "LOADING", "LOADED"]


def oracle_replay(journal: bytes) -> dict[int, str]:
    """Independent fold: complete, checksummed lines only, stop at the first bad one."""
    states: dict[int, str] = {}
    for raw in journal.split(b"\n")[:-1]:
        try:
            e = json.loads(raw)
            body = json.dumps(
                [e["seq"], e["media_id"], e["field"], e["value"], e["ts"]], sort_keys=True, separators=(",", ":")
            )
        except ValueError:
            break
        if zlib.crc32(body.encode()) != e["crc"]:
            break
        mid = e["media_id"]
        if e["field"] == "create":
            states.setdefault(mid, "UPLOADED")
        elif e["field"] == "state" and mid in states:
            if ORDER.index(e["value"]) == ORDER.index(states[mid]) + 1:
                states[mid] = e["value"]
    return states


def test_happy_path(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        rec = cat.create_media("/in/a.mp4", "media/a.mp4")
        assert rec.media_id == 1 and rec.state is MediaState.UPLOADED
        for s in ORDER[1:]:
            rec = cat.transition(rec.media_id, s)
        assert rec.state is MediaState.LOADED
        cat.set_media_info(1, 24.0, 10.0)
    back = Catalog(tmp_path)
    r = back.get(1)
    assert r.state is MediaState.LOADED and r.fps == 24.0 and r.duration == 10.0
    assert back.summary()["LOADED"] == 1
    back.close()


def test_duplicate_key_conflict(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        cat.create_media("a", "media/a")
        with pytest.raises(ConflictError):
            cat.create_media("b", "media/a")
        assert len(cat.list_media()) == 1


def test_unknown_media(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        with pytest.raises(NotFoundError):
            cat.get(5)
        with pytest.raises(NotFoundError):
            cat.transition(5, MediaState.HASHING)
        assert cat.find(5) is None


@pytest.mark.parametrize("target", ["HASHED", "LOADED", "UPLOADED"])
def test_illegal_transition_names_states(tmp_path, target):
    with Catalog(tmp_path, fsync=False) as cat:
        cat.create_media("a", "k")
        with pytest.raises(TransitionError) as ei:
            cat.transition(1, target)
        assert "UPLOADED" in str(ei.value) and target in str(ei.value)
        assert cat.get(1).state is MediaState.UPLOADED


def test_list_media_filters_and_sorts(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        for i in range(5):
            cat.create_media(f"s{i}", f"k{i}")
        cat.transition(2, "HASHING")
        cat.transition(4, "HASHING")
        assert [r.media_id for r in cat.list_media("HASHING")] == [2, 4]
        assert [r.media_id for r in cat.list_media()] == [1, 2, 3, 4, 5]


def test_compact_preserves_state_and_ids(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        cat.create_media("a", "ka")
        cat.create_media("b", "kb")
        cat.transition(1, "HASHING")
        cat.compact()
        assert cat.journal_path.read_bytes() == b""
        cat.transition(1, "HASHED")
    with Catalog(tmp_path) as cat:
        assert cat.get(1).state is MediaState.HASHED
        assert cat.create_media("c", "kc").media_id == 3
        with pytest.raises(ConflictError):
            cat.create_media("d", "kb")


def test_stale_journal_after_snapshot_is_harmless(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        cat.create_media("a", "ka")
        cat.transition(1, "HASHING")
        saved = cat.journal_path.read_bytes()
        cat.compact()
    # crash between snapshot and journal swap: the old journal reappears
    (tmp_path / "journal.ndjson").write_bytes(saved)
    assert replay(tmp_path)[1].state is MediaState.HASHING


def test_replay_is_idempotent():
    from shotit.catalog import apply_entry

    lines = [
        encode_entry(1, 1, "create", {"media_id": 1, "source_path": "a", "store_key": "k", "state": "UPLOADED",
                                       "fps": None, "duration": None, "updated_at": 0.0}, 1.0),
        encode_entry(2, 1, "state", "HASHING", 2.0),
        encode_entry(3, 1, "state", "HASHED", 3.0),
    ]
    entries, n = parse_journal(b"".join(lines))
    assert n == sum(map(len, lines))
    recs: dict = {}
    for e in entries:
        apply_entry(recs, e)
    once = dict(recs)
    for e in entries:
        apply_entry(recs, e)
    assert recs == once
    assert recs[1].state is MediaState.HASHED


def test_corrupt_middle_line_stops_replay(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        cat.create_media("a", "ka")
        cat.transition(1, "HASHING")
        cat.transition(1, "HASHED")
    data = (tmp_path / "journal.ndjson").read_bytes().split(b"\n")
    data[1] = data[1].replace(b"HASHING", b"HASHINX")
    (tmp_path / "journal.ndjson").write_bytes(b"\n".join(data))
    with Catalog(tmp_path) as cat:
        assert cat.get(1).state is MediaState.UPLOADED


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from(ORDER)), max_size=40))
def test_fuzzed_transitions_follow_chain(tmp_path_factory, ops):
    d = tmp_path_factory.mktemp("cat")
    model: dict[int, str] = {}
    with Catalog(d, fsync=False) as cat:
        for i in range(4):
            cat.create_media(f"s{i}", f"k{i}")
            model[i + 1] = "UPLOADED"
        for idx, target in ops:
            mid = idx + 1
            legal = ORDER.index(target) == ORDER.index(model[mid]) + 1
            if legal:
                assert cat.transition(mid, target).state.value == target
                model[mid] = target
            else:
                with pytest.raises(TransitionError):
                    cat.transition(mid, target)
            assert cat.get(mid).state.value == model[mid]
    assert {k: v.state.value for k, v in replay(d).items()} == model


def test_kill_at_random_offsets_recovers_prefix(tmp_path):
    src = tmp_path / "src"
    rng = random.Random(7)
    with Catalog(src, fsync=False) as cat:
        for i in range(6):
            cat.create_media(f"s{i}", f"k{i}")
        for _ in range(40):
            mid = rng.randint(1, 6)
            nxt = cat.get(mid).state.successor()
            if nxt is not None:
                cat.transition(mid, nxt)
    journal = (src / "journal.ndjson").read_bytes()
    for trial, cut in enumerate(sorted(rng.sample(range(len(journal) + 1), 50))):
        d = tmp_path / f"t{trial}"
        d.mkdir()
        (d / "journal.ndjson").write_bytes(journal[:cut])
        expected = oracle_replay(journal[:cut])
        with Catalog(d) as cat:
            got = {r.media_id: r.state.value for r in cat.list_media()}
            assert got == expected
            # the torn tail is gone and appends continue cleanly
            assert parse_journal(cat.journal_path.read_bytes())[1] == cat.journal_path.stat().st_size
            cat.create_media("new", "new-key")
        assert "new-key" in {r.store_key for r in replay(d).values()}


def test_empty_catalog(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        assert cat.list_media() == [] and cat.list_media("LOADED") == []


def test_filter_single_loaded(tmp_path):
    with Catalog(tmp_path, fsync=False) as cat:
        for k in "abc":
            cat.create_media(k, k)
        for s in ORDER[1:]:
            cat.transition(2, s)
        assert [r.store_key for r in cat.list_media("LOADED")] == ["b"]
        with pytest.raises(TransitionError):
            cat.transition(2, "HASHING")


def test_create_survives_crash(tmp_path):
    cat = Catalog(tmp_path)
    cat.create_media("a", "ka")
    # no close: the entry must already be on disk
    assert replay(tmp_path)[1].state is MediaState.UPLOADED
    cat.close()


def test_10k_records_match_replay_oracle(tmp_path):
    rng = random.Random(3)
    with Catalog(tmp_path, fsync=False) as cat:
        for i in range(10_000):
            cat.create_media(f"s{i}", f"k{i}")
        for _ in range(5_000):
            mid = rng.randint(1, 10_000)
            nxt = cat.get(mid).state.successor()
            if nxt is not None:
                cat.transition(mid, nxt)
        listed = {r.media_id: r.state.value for r in cat.list_media()}
    assert listed == oracle_replay((tmp_path / "journal.ndjson").read_bytes())
