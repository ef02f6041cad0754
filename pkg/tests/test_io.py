import json
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from trackmine import io
from trackmine.core import BBox
from trackmine.records import ClusterAssignment, ProposalRecord, Track, TrackElement

tmp_ok = settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=40)

finite = st.floats(-1e4, 1e4, allow_nan=False)
bboxes = st.builds(BBox, finite, finite, st.floats(0.5, 500), st.floats(0.5, 500))
centroids = st.none() | st.tuples(finite, finite, finite)


def _proposal(seq, frame, idx, x=0.0):
    return ProposalRecord(seq, frame, BBox(x, 1.0, 10.0, 20.0), 0.5, {"car": 0.7}, idx, None, idx)


@st.composite
def proposal_lists(draw):
    n = draw(st.integers(0, 20))
    frames = sorted(draw(st.lists(st.integers(0, 50), min_size=n, max_size=n)))
    out = []
    for i, f in enumerate(frames):
        scores = draw(st.dictionaries(st.sampled_from(["car", "person", "dog"]), st.floats(0, 1), max_size=3))
        out.append(ProposalRecord("s", f, draw(bboxes), draw(st.floats(0, 1)), scores, i, draw(centroids), i))
    return out


@st.composite
def track_lists(draw):
    tracks = []
    for tid in range(draw(st.integers(0, 6))):
        frames = sorted(set(draw(st.lists(st.integers(0, 100), min_size=1, max_size=8))))
        els = tuple(TrackElement(f, draw(st.integers(0, 999)), draw(bboxes), draw(st.integers(0, 999)),
                                 draw(centroids)) for f in frames)
        tracks.append(Track(tid, draw(st.sampled_from(["a", "b"])), els,
                            draw(st.none() | st.sampled_from(["car", "person"])), "greedy-iou"))
    return tracks


class TestProposals:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "p.ndjson"
        p.write_text("")
        assert io.read_proposals(p) == []

    def test_header_only(self, tmp_path):
        p = tmp_path / "p.ndjson"
        io.write_proposals([], p)
        assert io.read_proposals(p) == []

    def test_three_records_two_frames(self, tmp_path):
        recs = [_proposal("s", 0, 0), _proposal("s", 0, 1, 5.0), _proposal("s", 1, 2)]
        p = tmp_path / "p.ndjson"
        io.write_proposals(recs, p)
        back = io.read_proposals(p, embedding_count=3)
        assert back == recs
        groups = io.group_frames(back)
        assert [(f, len(rs)) for f, rs in groups["s"]] == [(0, 2), (1, 1)]

    def test_index_out_of_range_names_index(self, tmp_path):
        p = tmp_path / "p.ndjson"
        io.write_proposals([_proposal("s", 0, 0), _proposal("s", 0, 7)], p)
        with pytest.raises(IndexError, match="embedding_index 7"):
            io.read_proposals(p, embedding_count=3)

    def test_malformed_line_reports_line_number(self, tmp_path):
        p = tmp_path / "p.ndjson"
        io.write_proposals([_proposal("s", 0, 0)], p)
        with open(p, "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(io.FormatError, match=":3:"):
            io.read_proposals(p)

    def test_frames_out_of_order(self, tmp_path):
        p = tmp_path / "p.ndjson"
        io.write_proposals([_proposal("s", 3, 0), _proposal("s", 1, 1)], p)
        with pytest.raises(io.FormatError, match="out of order"):
            io.read_proposals(p)

    def test_duplicate_embedding_index(self, tmp_path):
        p = tmp_path / "p.ndjson"
        io.write_proposals([_proposal("s", 0, 4), _proposal("s", 1, 4)], p)
        with pytest.raises(io.FormatError, match="duplicate"):
            io.read_proposals(p)

    @tmp_ok
    @given(proposal_lists())
    def test_round_trip(self, tmp_path, recs):
        p = tmp_path / "p.ndjson"
        io.write_proposals(recs, p)
        assert io.read_proposals(p) == recs


class TestEmbeddings:
    def test_empty_matrix_keeps_dim(self, tmp_path):
        p = tmp_path / "e.bin"
        io.write_embeddings(np.zeros((0, 128), np.float32), p)
        m = io.read_embeddings(p)
        assert m.shape == (0, 128)

    def test_two_by_three(self, tmp_path):
        data = np.array([[1.5, -2.0, 3.25], [0.0, 1e-7, -1e30]], dtype=np.float32)
        p = tmp_path / "e.bin"
        io.write_embeddings(data, p)
        raw = p.read_bytes()
        assert raw[:8] == b"TMEMB\x00\x00\x01"
        assert int.from_bytes(raw[8:12], "little") == 2 and int.from_bytes(raw[12:16], "little") == 3
        np.testing.assert_array_equal(io.read_embeddings(p), data)
        np.testing.assert_array_equal(io.read_embeddings(p, mmap=True), data)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "e.bin"
        io.write_embeddings(np.ones((2, 2)), p)
        raw = bytearray(p.read_bytes())
        raw[0:1] = b"X"
        p.write_bytes(bytes(raw))
        with pytest.raises(io.FormatError, match="magic"):
            io.read_embeddings(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "e.bin"
        io.write_embeddings(np.ones((4, 3)), p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(io.FormatError, match="truncated"):
            io.read_embeddings(p)

    def test_huge_declared_count_fails_before_allocation(self, tmp_path):
        # header claims ~16 GiB; the size check must reject it without reading
        p = tmp_path / "e.bin"
        p.write_bytes(b"TMEMB\x00\x00\x01" + (2 ** 22).to_bytes(4, "little") + (1024).to_bytes(4, "little"))
        with pytest.raises(io.FormatError, match="truncated"):
            io.read_embeddings(p)

    def test_nan_rejected(self, tmp_path):
        p = tmp_path / "e.bin"
        io.write_embeddings(np.ones((2, 2)), p)
        raw = bytearray(p.read_bytes())
        raw[-4:] = np.array([np.nan], "<f4").tobytes()
        p.write_bytes(bytes(raw))
        with pytest.raises(io.FormatError, match="row 1"):
            io.read_embeddings(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "e.bin"
        io.write_embeddings(np.ones((2, 2)), p)
        with open(p, "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(io.FormatError):
            io.read_embeddings(p)

    @tmp_ok
    @given(st.integers(0, 6), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
    def test_round_trip(self, tmp_path, n, d, seed):
        data = np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
        p = tmp_path / "e.bin"
        io.write_embeddings(data, p)
        np.testing.assert_array_equal(io.read_embeddings(p), data)


class TestTracks:
    def test_empty_collection_rewrites_identically(self, tmp_path):
        a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        io.write_tracks([], a)
        io.write_tracks(io.read_tracks(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_large_synthetic_collection(self, tmp_path):
        rng = np.random.default_rng(8005)
        tracks = []
        for tid in range(8005):
            start = int(rng.integers(0, 1000))
            els = tuple(
                TrackElement(start + k, int(rng.integers(0, 10 ** 6)),
                             BBox(*rng.uniform(0, 1000, 2).tolist(), *rng.uniform(1, 200, 2).tolist()),
                             int(rng.integers(0, 10 ** 6)),
                             tuple(rng.normal(0, 10, 3).tolist()) if k % 2 else None)
                for k in range(int(rng.integers(5, 12)))
            )
            tracks.append(Track(tid, f"seq{tid % 21:02d}", els, ["car", None, "person"][tid % 3]))
        p, q = tmp_path / "t.ndjson", tmp_path / "u.ndjson"
        io.write_tracks(tracks, p)
        back = io.read_tracks(p)
        assert back == tracks
        io.write_tracks(back, q)
        assert p.read_bytes() == q.read_bytes()

    def test_version_bump(self, tmp_path):
        p = tmp_path / "t.ndjson"
        io.write_tracks([], p)
        header = json.loads(p.read_text().splitlines()[0])
        header["schema_version"] = 2
        p.write_text(json.dumps(header) + "\n")
        with pytest.raises(io.UnsupportedVersionError, match="schema_version 2"):
            io.read_tracks(p)

    def test_wrong_kind(self, tmp_path):
        p = tmp_path / "t.ndjson"
        io.write_annotations({}, p)
        with pytest.raises(io.FormatError, match="annotations"):
            io.read_tracks(p)

    @tmp_ok
    @given(track_lists())
    def test_round_trip(self, tmp_path, tracks):
        p = tmp_path / "t.ndjson"
        io.write_tracks(tracks, p)
        assert io.read_tracks(p) == tracks


class TestSmallArtifacts:
    @tmp_ok
    @given(st.dictionaries(st.integers(0, 10 ** 6), st.sampled_from(["car", "unknown_valid", "tracking_error", "ß"])))
    def test_annotations_round_trip(self, tmp_path, ann):
        p = tmp_path / "a.ndjson"
        io.write_annotations(ann, p)
        assert io.read_annotations(p) == ann

    def test_duplicate_annotation(self, tmp_path):
        p = tmp_path / "a.ndjson"
        io.write_annotations({1: "car"}, p)
        with open(p, "a") as fh:
            fh.write('{"track_id": 1, "gt_label": "dog"}\n')
        with pytest.raises(io.FormatError, match="duplicate"):
            io.read_annotations(p)

    @tmp_ok
    @given(st.lists(st.tuples(st.integers(0, 999), st.integers(-1, 5),
                              st.floats(0, 1e6) | st.just(float("inf"))), max_size=20))
    def test_assignment_round_trip(self, tmp_path, rows):
        a = ClusterAssignment([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], "hdbscan")
        p = tmp_path / "a.csv"
        io.write_assignment_csv(a, p)
        b = io.read_assignment_csv(p, "hdbscan")
        assert (b.track_ids, b.labels, b.outlier_scores) == (a.track_ids, a.labels, a.outlier_scores)

    def test_assignment_header(self, tmp_path):
        a = ClusterAssignment([3], [-1], [float("inf")], "hdbscan")
        p = tmp_path / "a.csv"
        io.write_assignment_csv(a, p)
        assert p.read_text() == "track_id,cluster_id,outlier_score\n3,-1,inf\n"

    def test_sweep_csv(self, tmp_path):
        p = tmp_path / "s.csv"
        io.write_sweep_csv([(0.0, 0.5, False), (0.1, 1.0, True)], p)
        assert p.read_text().splitlines() == ["fraction,ami,is_automatic", "0.0,0.5,0", "0.1,1.0,1"]

    def test_json_is_canonical(self, tmp_path):
        p, q = tmp_path / "a.json", tmp_path / "b.json"
        io.write_json({"b": 1, "a": [1, 2]}, p)
        io.write_json({"a": [1, 2], "b": 1}, q)
        assert p.read_bytes() == q.read_bytes()
        assert os.path.getsize(p) > 0
