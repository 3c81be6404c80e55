import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toonid.bank import (
    CandidateImageRecord,
    InMovieSelection,
    SpeakerCluster,
    assemble_voice_bank,
    filter_candidates,
    merge_speaker_clusters,
    select_in_movie_exemplars,
    select_interview_exemplars,
)
from toonid.core import CharacterBank, CharacterEntry, SpeechSegment, SyncObservation, Track
from toonid.errors import DanglingReferenceError, EmptyInputError

from conftest import box, ev


def cand(name, *values, tag="web"):
    return CandidateImageRecord(character_name=name, embedding=ev(*values), source_tag=tag)


class TestFilterCandidates:
    def test_identical_accepted(self):
        out = filter_candidates(ev(1, 0), [cand("A", 1, 0)], 0.55)
        assert len(out) == 1

    def test_orthogonal_rejected(self):
        assert filter_candidates(ev(1, 0), [cand("A", 0, 1)], 0.55) == []

    def test_mixed(self):
        cs = [cand("A", 1, 1), cand("A", 0, 1)]
        out = filter_candidates(ev(1, 0), cs, 0.5)
        assert out == [cs[0]]

    def test_empty_input(self):
        assert filter_candidates(ev(1, 0), [], 0.5) == []

    def test_exact_threshold_rejected(self):
        # strict >: a candidate exactly at the threshold is excluded
        threshold = 1.0 / np.sqrt(2.0)
        assert filter_candidates(ev(1, 0), [cand("A", 1, 1)], threshold) == []

    def test_order_preserved(self):
        cs = [cand("A", 1, 0.1), cand("A", 1, -0.1), cand("A", 0.9, 0)]
        assert filter_candidates(ev(1, 0), cs, 0.5) == cs

    @given(st.floats(min_value=-0.9, max_value=0.9), st.floats(min_value=0.0, max_value=0.09))
    def test_monotone_in_threshold(self, threshold, bump):
        rng = np.random.default_rng(7)
        cs = [cand("A", *rng.normal(size=3)) for _ in range(12)]
        lower = filter_candidates(ev(1.0, 0.2, -0.1), cs, threshold)
        higher = filter_candidates(ev(1.0, 0.2, -0.1), cs, threshold + bump)
        assert set(id(c) for c in higher) <= set(id(c) for c in lower)


def cluster(cid, *centroid, n_segments=1):
    segs = [ev(*centroid)] * n_segments
    return SpeakerCluster(cluster_id=cid, segment_embeddings=segs, centroid=ev(*centroid))


class TestMergeSpeakerClusters:
    def test_single_cluster(self):
        c = cluster(0, 1, 0)
        assert merge_speaker_clusters([c], 0.8) == [[c]]

    def test_identical_pair_merges(self):
        a, b = cluster(0, 1, 0), cluster(1, 1, 0)
        assert merge_speaker_clusters([a, b], 0.8) == [[a, b]]

    def test_spec_trace(self):
        a, b, c = cluster(0, 1, 0), cluster(1, 0.6, 0.8), cluster(2, 0, 1)
        groups = merge_speaker_clusters([a, b, c], 0.7)
        assert groups == [[a], [b, c]]

    def test_empty_input(self):
        assert merge_speaker_clusters([], 0.5) == []

    def test_first_fit_not_best_fit(self):
        # b is closer to c's group, but a's group is checked first and clears tau
        a = cluster(0, 1, 0)
        c = cluster(1, 0, 1)
        b = cluster(2, 0.8, 0.6)  # cos to a = 0.8, cos to c = 0.6
        groups = merge_speaker_clusters([a, c, b], 0.55)
        assert groups == [[a, b], [c]]

    @settings(max_examples=200)
    @given(st.integers(min_value=0, max_value=2**32 - 1),
           st.floats(min_value=0.05, max_value=0.95))
    def test_partition_property(self, seed, tau):
        rng = np.random.default_rng(seed)
        clusters = [cluster(i, *rng.normal(size=3)) for i in range(rng.integers(1, 10))]
        groups = merge_speaker_clusters(clusters, tau)
        flat = [c for g in groups for c in g]
        assert sorted(id(c) for c in flat) == sorted(id(c) for c in clusters)

    def test_near_one_tau_keeps_distinct_singletons(self):
        clusters = [cluster(0, 1, 0), cluster(1, 0.9, 0.1), cluster(2, 0, 1)]
        groups = merge_speaker_clusters(clusters, 0.999999)
        assert all(len(g) == 1 for g in groups)

    def test_tau_one_gives_singletons_without_duplicates(self):
        rng = np.random.default_rng(3)
        clusters = [cluster(i, *rng.normal(size=3)) for i in range(6)]
        groups = merge_speaker_clusters(clusters, 1.0)
        assert all(len(g) == 1 for g in groups)


class TestSelectInterviewExemplars:
    def test_single_group(self):
        g = [cluster(0, 1, 0, n_segments=3)]
        assert len(select_interview_exemplars([g])) == 3

    def test_largest_wins(self):
        g1 = [cluster(0, 1, 0, n_segments=3)]
        g2 = [cluster(1, 0, 1, n_segments=5)]
        out = select_interview_exemplars([g1, g2])
        assert len(out) == 5
        assert np.allclose(out[0].values, [0, 1])

    def test_tie_goes_to_first_opened(self):
        g1 = [cluster(0, 1, 0, n_segments=4)]
        g2 = [cluster(1, 0, 1, n_segments=4)]
        out = select_interview_exemplars([g1, g2])
        assert np.allclose(out[0].values, [1, 0])

    def test_counts_total_segments_across_clusters(self):
        g1 = [cluster(0, 1, 0, n_segments=2), cluster(1, 1, 0, n_segments=2)]
        g2 = [cluster(2, 0, 1, n_segments=3)]
        assert len(select_interview_exemplars([g1, g2])) == 4

    def test_empty_raises(self):
        with pytest.raises(EmptyInputError):
            select_interview_exemplars([])


def labeled_track(track_id, character, s_vm, frames=range(0, 24)):
    return Track(track_id=track_id, shot_id=0,
                 boxes=[box(0, 0, 10, 10, frame=f) for f in frames],
                 sampled_features=[ev(1, 0)] * 5,
                 scores={character: s_vm}, assigned_character=character)


class TestSelectInMovieExemplars:
    def test_gate_passes(self):
        tracks = [labeled_track("t0", "Ava", 0.7)]
        obs = [SyncObservation("t0", "s0", sync_score=0.5)]
        out = select_in_movie_exemplars(tracks, obs, 0.6, 0.3)
        assert [s.segment_ref for s in out["Ava"]] == ["s0"]

    def test_sync_boundary_is_strict(self):
        tracks = [labeled_track("t0", "Ava", 0.7)]
        obs = [SyncObservation("t0", "s0", sync_score=0.3)]
        assert select_in_movie_exemplars(tracks, obs, 0.6, 0.3) == {}

    def test_vm_boundary_is_strict(self):
        tracks = [labeled_track("t0", "Ava", 0.6)]
        obs = [SyncObservation("t0", "s0", sync_score=0.9)]
        assert select_in_movie_exemplars(tracks, obs, 0.6, 0.3) == {}

    def test_visual_gate_fails(self):
        tracks = [labeled_track("t0", "Ava", 0.5)]
        obs = [SyncObservation("t0", "s0", sync_score=0.9)]
        assert select_in_movie_exemplars(tracks, obs, 0.6, 0.3) == {}

    def test_dangling_track(self):
        with pytest.raises(DanglingReferenceError):
            select_in_movie_exemplars([], [SyncObservation("nope", "s0", sync_score=0.5)], 0.6, 0.3)

    def test_dangling_segment(self):
        tracks = [labeled_track("t0", "Ava", 0.7)]
        obs = [SyncObservation("t0", "ghost", sync_score=0.5)]
        with pytest.raises(DanglingReferenceError):
            select_in_movie_exemplars(tracks, obs, 0.6, 0.3, segment_ids={"s0"})

    def test_duplicate_segment_keeps_best_pairing(self):
        tracks = [labeled_track("t0", "Ava", 0.7), labeled_track("t1", "Ava", 0.9)]
        obs = [SyncObservation("t0", "s0", sync_score=0.5),
               SyncObservation("t1", "s0", sync_score=0.8)]
        out = select_in_movie_exemplars(tracks, obs, 0.6, 0.3)
        assert len(out["Ava"]) == 1
        assert out["Ava"][0].s_sync == 0.8


def seg(seg_id, *values):
    return SpeechSegment(seg_id, 0.0, 1.0, "", embedding=ev(*values))


def toy_bank():
    return CharacterBank("m", characters=[
        CharacterEntry("Ava", appearance_exemplars=[ev(1, 0), ev(1, 0.1)])])


class TestAssembleVoiceBank:
    def _segments(self, n):
        return {f"s{i}": seg(f"s{i}", 1.0, float(i)) for i in range(n)}

    def test_truncates_to_cap_by_rank(self):
        segments = self._segments(20)
        sels = [InMovieSelection(f"s{i}", s_vm=0.9, s_sync=(i + 1) / 20) for i in range(20)]
        bank = assemble_voice_bank(toy_bank(), {"Ava": sels}, {}, segments, cap=15)
        voices = bank.get("Ava").voice_exemplars
        assert len(voices) == 15
        # highest s_vm*s_sync first: segments 19..5
        assert np.allclose(voices[0].values, segments["s19"].embedding.values)

    def test_interview_only(self):
        interview = {"Ava": [ev(0, 1)] * 10}
        bank = assemble_voice_bank(toy_bank(), {}, interview, {}, cap=15)
        assert len(bank.get("Ava").voice_exemplars) == 10

    def test_backfill_arithmetic(self):
        segments = self._segments(9)
        sels = [InMovieSelection(f"s{i}", 0.9, 0.9) for i in range(9)]
        interview = {"Ava": [ev(0, 1)] * 40}
        bank = assemble_voice_bank(toy_bank(), {"Ava": sels}, interview, segments, cap=15)
        assert len(bank.get("Ava").voice_exemplars) == 15

    def test_absent_character_warns_and_stays_empty(self, caplog):
        with caplog.at_level("WARNING"):
            bank = assemble_voice_bank(toy_bank(), {}, {}, {}, cap=15)
        assert bank.get("Ava").voice_exemplars == ()
        assert any("no voice exemplars" in r.message for r in caplog.records)

    @settings(max_examples=100)
    @given(st.integers(min_value=0, max_value=30), st.integers(min_value=0, max_value=30),
           st.integers(min_value=1, max_value=15))
    def test_never_exceeds_cap(self, n_movie, n_interview, cap):
        segments = self._segments(n_movie)
        sels = [InMovieSelection(f"s{i}", 0.8, 0.5) for i in range(n_movie)]
        interview = {"Ava": [ev(0, 1)] * n_interview}
        bank = assemble_voice_bank(toy_bank(), {"Ava": sels}, interview, segments, cap=cap)
        assert len(bank.get("Ava").voice_exemplars) == min(cap, n_movie + n_interview)
