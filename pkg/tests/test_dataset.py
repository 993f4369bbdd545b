import json
import random
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stimkit.core import ClassLabel, Frame, VideoClip
from stimkit.dataset import (DatasetError, DatasetManifest, ManifestEntry, SplitRatios, atomic_write_text,
                             compute_stats, load_entry_clip, load_manifest, read_segments, save_manifest, scan,
                             split, split_counts, split_summary, trim, trim_dataset, write_clip)

from conftest import random_clip

AF, HB, SP = ClassLabel.ArmFlapping, ClassLabel.HeadBanging, ClassLabel.Spinning


def entry(cid, label=SP, frames=10, w=8, h=6, fps=30.0, split=None):
    return ManifestEntry(cid, f"{label.name}/{cid}", label, frames, w, h, fps, split)


def manifest_of(counts):
    return DatasetManifest([entry(f"{lab.name}_{k:04d}", lab) for lab, n in counts.items() for k in range(n)])


# ---------------------------------------------------------------- scan

def test_scan_empty_root(tmp_path):
    assert len(scan(tmp_path)) == 0


def test_scan_one_per_class(make_root):
    root = make_root({AF: 1, HB: 1, SP: 1}, size=(5, 4), n_frames=2, fps=25)
    m = scan(root)
    assert len(m) == 3
    assert [e.clip_id for e in m.entries] == sorted(e.clip_id for e in m.entries)
    e = m.entries[0]
    assert (e.width, e.height, e.frame_count, e.fps) == (5, 4, 2, 25.0)
    assert m.resolve(e) == root / e.label.name / e.clip_id


def test_scan_duplicate_id_across_classes(tmp_path, rng):
    clip = random_clip(rng, clip_id="same", label=AF)
    write_clip(clip, tmp_path / "ArmFlapping" / "same")
    write_clip(VideoClip(clip.frames, 30, HB, "same"), tmp_path / "HeadBanging" / "same")
    with pytest.raises(DatasetError, match="same"):
        scan(tmp_path)


def test_scan_unknown_class(tmp_path):
    (tmp_path / "Clapping" / "c1").mkdir(parents=True)
    with pytest.raises(DatasetError, match="Clapping"):
        scan(tmp_path)


def test_scan_malformed_descriptor(make_root):
    root = make_root({SP: 2})
    bad = root / "Spinning" / "clip_Spinning_001" / "clip.json"
    bad.write_text("{not json")
    with pytest.raises(DatasetError, match="clip_Spinning_001"):
        scan(root)


def test_scan_missing_frames(make_root):
    root = make_root({SP: 1}, n_frames=3)
    (root / "Spinning" / "clip_Spinning_000" / "frame_000002.png").unlink()
    with pytest.raises(DatasetError, match="clip_Spinning_000"):
        scan(root)


def test_scan_ignores_stray_files(make_root):
    root = make_root({AF: 2})
    (root / "README.txt").write_text("notes")
    (root / ".cache").mkdir()
    assert len(scan(root)) == 2


def test_clip_round_trip(make_root):
    root = make_root({HB: 1}, size=(7, 3), n_frames=4)
    m = scan(root)
    clip = load_entry_clip(m, m.entries[0])
    again = load_entry_clip(m, m.entries[0])
    assert clip.frames == again.frames and clip.width == 7
    assert clip.label is HB and clip.frame_count == 4


# ---------------------------------------------------------------- manifest I/O

def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([entry("a", split="train"), entry("b", AF, fps=29.97)])
    path = tmp_path / "sub" / "manifest.json"
    path.parent.mkdir()
    save_manifest(m, path)
    back = load_manifest(path)
    assert [e.to_dict() for e in back.entries] == [e.to_dict() for e in m.entries]
    doc = json.loads(path.read_text())
    assert doc["schema_version"] == 1
    assert set(doc["entries"][0]) >= {"clip_id", "path", "label", "frame_count", "width", "height", "fps",
                                      "split", "provenance"}


def test_manifest_rejects_duplicates():
    with pytest.raises(DatasetError):
        DatasetManifest([entry("a"), entry("a", AF)])


@pytest.mark.parametrize("kw", [dict(frames=0), dict(w=0), dict(h=0), dict(split="holdout")])
def test_entry_invariants(kw):
    with pytest.raises((ValueError, DatasetError)):
        entry("x", **kw)


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "out.txt"
    atomic_write_text(p, "one")
    atomic_write_text(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in tmp_path.iterdir()] == ["out.txt"]
    plain = tmp_path / "plain.txt"
    plain.write_text("x")
    assert p.stat().st_mode & 0o777 == plain.stat().st_mode & 0o777


# ---------------------------------------------------------------- trim

def counting_clip(n):
    return VideoClip([Frame.filled(1, 1, (k % 256, k // 256, 0)) for k in range(n)], 30, AF, "src")


def test_trim_full_segment():
    clip = counting_clip(100)
    (out,) = trim(clip, [(0, 100)])
    assert out.frames == clip.frames and out.fps == clip.fps and out.label is clip.label


def test_trim_partition():
    clip = counting_clip(100)
    a, b = trim(clip, [(0, 50), (50, 100)])
    assert a.frame_count == b.frame_count == 50
    assert a.frames + b.frames == clip.frames


def test_trim_sub_segments():
    clip = counting_clip(100)
    a, b = trim(clip, [(10, 20), (30, 35)])
    assert (a.frame_count, b.frame_count) == (10, 5)
    assert a.frames == tuple(clip.frames[10:20])
    assert a.clip_id == "src_10-20" and a.provenance.segment == (10, 20) and a.provenance.source == "src"


@pytest.mark.parametrize("seg", [[(5, 5)], [(6, 5)], [(-1, 3)], [(0, 101)], []])
def test_trim_rejects(seg):
    with pytest.raises(ValueError):
        trim(counting_clip(100), seg)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.data())
def test_trim_conserves_frames(n, data):
    cuts = sorted(data.draw(st.sets(st.integers(1, n - 1), max_size=6)) if n > 1 else [])
    bounds = [0, *cuts, n]
    clip = counting_clip(n)
    parts = trim(clip, list(zip(bounds, bounds[1:])))
    assert tuple(f for p in parts for f in p.frames) == clip.frames


def test_read_segments(tmp_path):
    p = tmp_path / "seg.txt"
    p.write_text("# header\nc1 0 10\n\nc1 20 30  # second\nc2 5 9\n")
    assert read_segments(p) == {"c1": [(0, 10), (20, 30)], "c2": [(5, 9)]}
    p.write_text("c1 0\n")
    with pytest.raises(ValueError, match=":1:"):
        read_segments(p)


def test_trim_dataset(make_root, tmp_path):
    root = make_root({AF: 2}, n_frames=6)
    m = scan(root)
    out = trim_dataset(m, {"clip_ArmFlapping_000": [(0, 2), (2, 6)]}, tmp_path / "trimmed")
    assert [e.clip_id for e in out.entries] == ["clip_ArmFlapping_000_0-2", "clip_ArmFlapping_000_2-6",
                                                "clip_ArmFlapping_001"]
    assert [e.frame_count for e in out.entries] == [2, 4, 6]
    with pytest.raises(DatasetError, match="ghost"):
        trim_dataset(m, {"ghost": [(0, 1)]}, tmp_path / "t2")


# ---------------------------------------------------------------- split

NINE = [
    ((25, 25, 25), [(17, 4, 4)] * 3),
    ((29, 41, 54), [(20, 5, 4), (28, 7, 6), (37, 9, 8)]),
    ((203, 287, 378), [(142, 31, 30), (200, 44, 43), (264, 57, 57)]),
]


@pytest.mark.parametrize("sizes,expected", NINE)
@pytest.mark.parametrize("seed", [0, 7, 2024])
def test_split_reproduces_reported_counts(sizes, expected, seed):
    out = split(manifest_of(dict(zip(ClassLabel, sizes))), SplitRatios(seed=seed))
    summary = split_summary(out)
    got = [(summary[lab.name]["train"], summary[lab.name]["test"], summary[lab.name]["val"]) for lab in ClassLabel]
    assert got == expected


def default_rule(n):
    # integer-only restatement of the 70:15:15 rounding
    train = 7 * n // 10
    rest = n - train
    return {"train": train, "test": -(-rest // 2), "val": rest // 2}


@given(st.integers(3, 2000))
def test_split_counts_match_rule(n):
    assert split_counts(n) == default_rule(n)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=3, max_size=3), st.integers(0, 2**31))
def test_split_partitions_each_class(sizes, seed):
    m = manifest_of(dict(zip(ClassLabel, sizes)))
    out = split(m, SplitRatios(seed=seed))
    assert {e.clip_id for e in out.entries} == {e.clip_id for e in m.entries}
    for lab, n in zip(ClassLabel, sizes):
        tally = Counter(e.split for e in out.entries if e.label is lab)
        assert sum(tally.values()) == n
        if n >= 3:
            assert {k: tally.get(k, 0) for k in ("train", "test", "val")} == default_rule(n)


def test_split_deterministic_and_order_invariant():
    m = manifest_of({AF: 12, HB: 9, SP: 20})
    a = split(m, SplitRatios(seed=7))
    b = split(m, SplitRatios(seed=7))
    shuffled = list(m.entries)
    random.Random(3).shuffle(shuffled)
    c = split(DatasetManifest(shuffled), SplitRatios(seed=7))
    assign = lambda x: {e.clip_id: e.split for e in x.entries}
    assert assign(a) == assign(b) == assign(c)
    assert assign(a) != assign(split(m, SplitRatios(seed=8)))


def test_split_refuses_preassigned():
    m = DatasetManifest([entry("a", split="train"), entry("b"), entry("c")])
    with pytest.raises(DatasetError, match="force"):
        split(m)
    assert all(e.split for e in split(m, force=True).entries)


def test_split_ratios_parse():
    r = SplitRatios.parse("70:15:15", seed=3)
    assert (r.train, r.val, r.test, r.seed) == (Fraction(7, 10), Fraction(3, 20), Fraction(3, 20), 3)
    assert SplitRatios.parse("8:1:1").train == Fraction(4, 5)
    for bad in ("70:30", "1:0:0", "a:b:c"):
        with pytest.raises(ValueError):
            SplitRatios.parse(bad)
    with pytest.raises(ValueError):
        SplitRatios(Fraction(1, 2), Fraction(1, 2), Fraction(1, 2))


def test_split_general_ratios():
    # 80:10:10 over 11 clips: floor(8.8) = 8 train, remaining 3 split 2 test / 1 val
    assert split_counts(11, SplitRatios.parse("80:10:10")) == {"train": 8, "val": 1, "test": 2}
    # uneven tail: 60:10:30 over 10 clips, remainder 4 split 3 test / 1 val
    assert split_counts(10, SplitRatios.parse("60:10:30")) == {"train": 6, "val": 1, "test": 3}


# ---------------------------------------------------------------- stats

def test_stats_frame_counts():
    s = compute_stats(DatasetManifest([entry("a", AF, frames=44), entry("b", AF, frames=713)]))[AF]
    assert (s.min_frames, s.max_frames, s.avg_frames) == (44, 713, 378.5)


def test_stats_duration():
    s = compute_stats(DatasetManifest([entry("a", frames=120, fps=24)]))[SP]
    assert s.avg_duration == 5.0 and s.n_videos == 1


def test_stats_avg_size():
    s = compute_stats(DatasetManifest([entry("a", HB, w=100, h=200), entry("b", HB, w=300, h=400)]))[HB]
    assert s.avg_size == (200, 300)
    assert s.min_size == (100, 200) and s.max_size == (300, 400)


def test_stats_empty_class_is_absent():
    table = compute_stats(DatasetManifest([entry("a", AF)]))
    s = table[SP]
    assert s.n_videos == 0
    assert all(getattr(s, k) is None for k in s.to_dict() if k != "n_videos")
    rows = table.rows()
    assert rows[0] == ["statistic", "ArmFlapping", "HeadBanging", "Spinning"]
    assert all(r[3] == "" for r in rows[1:-1]) and rows[-1] == ["Number of videos", "1", "0", "0"]


def test_stats_mean_duration_with_mixed_fps():
    s = compute_stats(DatasetManifest([entry("a", frames=30, fps=30), entry("b", frames=30, fps=10)]))[SP]
    assert s.avg_duration == pytest.approx(2.0)


entries_st = st.lists(
    st.tuples(st.sampled_from(list(ClassLabel)), st.integers(1, 2000), st.integers(1, 1920),
              st.integers(1, 1080), st.sampled_from([10, 24, 25, 29.97, 30, 60])),
    max_size=30)


@settings(max_examples=100, deadline=None)
@given(entries_st)
def test_stats_against_brute_force(rows):
    m = DatasetManifest([entry(f"c{k}", lab, fr, w, h, fps) for k, (lab, fr, w, h, fps) in enumerate(rows)])
    table = compute_stats(m)
    for lab in ClassLabel:
        mine = [r for r in rows if r[0] is lab]
        s = table[lab]
        assert s.n_videos == len(mine)
        if not mine:
            assert s.avg_frames is None
            continue
        frames = [r[1] for r in mine]
        durs = [r[1] / r[4] for r in mine]
        assert s.min_frames == min(frames) and s.max_frames == max(frames)
        assert s.avg_frames == pytest.approx(sum(frames) / len(frames))
        assert s.avg_duration == pytest.approx(sum(durs) / len(durs))
        assert s.min_frames <= s.avg_frames <= s.max_frames
        assert s.min_duration <= s.avg_duration + 1e-12 and s.avg_duration <= s.max_duration + 1e-12
        for axis in (0, 1):
            assert s.min_size[axis] <= s.avg_size[axis] <= s.max_size[axis]
