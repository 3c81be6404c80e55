"""Synthetic movie fixture: 4 characters, separable embeddings, jittered seed
tracks, planted ground truth. Deterministic for a fixed seed so pipeline runs
can be compared byte-for-byte.

Layout: 8 one-second shots at 24 fps; shot s features characters s%4 and
(s+1)%4. 16 speech segments of 0.45 s at half-second starts, speaker k%4.
Sync observations pair seed-0 tracks with time-overlapping segments: high
score when the on-screen character is the speaker, low otherwise.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

CHARACTERS = ["Ava", "Bix", "Cleo", "Dot"]
VISUAL_DIM = 16
AUDIO_DIM = 16
FPS = 24.0
N_SHOTS = 8
FRAMES_PER_SHOT = 24
SEG_LEN = 0.45
N_SEGMENTS = 16

INTRA_MIN = 0.9
INTER_MAX = 0.2


def _emb(values):
    return {"values": [float(x) for x in values], "normalized": False}


class MovieSpec:
    """Deterministic generator state plus the planted ground truth."""

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        # character axes occupy dims 0..3; noise lives in dims 4+ so that
        # cross-character cosines stay tiny
        self.vis_axes = np.eye(VISUAL_DIM)[:4]
        self.aud_axes = np.eye(AUDIO_DIM)[:4]
        self.interviewer_axis = np.eye(AUDIO_DIM)[8]

    def _noisy(self, axis, dim, scale=0.2):
        noise = np.zeros(dim)
        raw = self.rng.normal(size=dim - 4 - 1)
        raw *= scale * self.rng.uniform(0.5, 1.0) / np.linalg.norm(raw)
        noise[5:dim] = raw[: dim - 5]
        return axis + noise

    def vis(self, p, scale=0.2):
        return self._noisy(self.vis_axes[p], VISUAL_DIM, scale)

    def aud(self, p, scale=0.2):
        return self._noisy(self.aud_axes[p], AUDIO_DIM, scale)

    def shot_characters(self, s):
        return [s % 4, (s + 1) % 4]

    def true_box(self, shot, char_slot, frame):
        # two characters side by side; slow horizontal drift
        x0 = 50.0 if char_slot == 0 else 300.0
        drift = 0.5 * (frame - shot * FRAMES_PER_SHOT)
        return [x0 + drift, 40.0, x0 + drift + 120.0, 180.0]

    def segment_plan(self):
        plan = []
        for k in range(N_SEGMENTS):
            start = k * 0.5
            plan.append({"segment_id": f"seg{k:02d}", "start_s": start,
                         "end_s": start + SEG_LEN, "speaker": k % 4})
        return plan


def _check_separability(groups):
    """groups: list (per character) of 2-D arrays of exemplars."""
    units = [g / np.linalg.norm(g, axis=1, keepdims=True) for g in groups]
    intra = min((u @ u.T)[np.triu_indices(len(u), 1)].min() for u in units if len(u) > 1)
    inter = max((units[i] @ units[j].T).max()
                for i, j in itertools.combinations(range(len(units)), 2))
    assert intra >= INTRA_MIN, f"intra-character cosine {intra:.3f} < {INTRA_MIN}"
    assert inter <= INTER_MAX, f"inter-character cosine {inter:.3f} > {INTER_MAX}"


def generate_movie(root, seed=0) -> dict:
    """Write all input manifests + GT + config under `root`; returns the config."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    spec = MovieSpec(seed)
    rng = spec.rng

    # --- candidates.jsonl (appearance bank inputs) ---
    cand_records = [{"schema": "candidates", "visual_dim": VISUAL_DIM}]
    vis_groups = []
    for p, name in enumerate(CHARACTERS):
        exemplars = [spec.vis(p)]
        cand_records.append({"character_name": name, "embedding": _emb(exemplars[0]),
                             "source_tag": "profile"})
        for _ in range(6):
            v = spec.vis(p)
            exemplars.append(v)
            cand_records.append({"character_name": name, "embedding": _emb(v),
                                 "source_tag": "web"})
        for _ in range(2):  # junk rejected by the filter: pure noise direction
            junk = np.zeros(VISUAL_DIM)
            junk[5:] = rng.normal(size=VISUAL_DIM - 5)
            cand_records.append({"character_name": name, "embedding": _emb(junk),
                                 "source_tag": "web"})
        vis_groups.append(np.stack(exemplars))
    _check_separability(vis_groups)
    _write(root / "candidates.jsonl", cand_records)

    # --- interview_clusters.jsonl ---
    int_records = [{"schema": "interview_clusters", "audio_dim": AUDIO_DIM}]
    cid = 0
    for p, name in enumerate(CHARACTERS):
        for size in (5, 4):  # two actor clusters that merge into one group
            embs = [spec.aud(p) for _ in range(size)]
            int_records.append({"character_name": name, "cluster_id": cid,
                                "segment_embeddings": [_emb(e) for e in embs]})
            cid += 1
        host = [spec._noisy(spec.interviewer_axis, AUDIO_DIM) for _ in range(2)]
        int_records.append({"character_name": name, "cluster_id": cid,
                            "segment_embeddings": [_emb(e) for e in host]})
        cid += 1
    _write(root / "interview_clusters.jsonl", int_records)

    # --- tracks.jsonl (3 jittered seed tracks per character per shot) ---
    track_records = [{"schema": "tracks", "visual_dim": VISUAL_DIM, "fps": FPS}]
    for s in range(N_SHOTS):
        frames = range(s * FRAMES_PER_SHOT, (s + 1) * FRAMES_PER_SHOT)
        for slot, p in enumerate(spec.shot_characters(s)):
            for k in range(3):
                boxes = []
                for f in frames:
                    x1, y1, x2, y2 = spec.true_box(s, slot, f)
                    j = rng.uniform(-0.5, 0.5, size=4)
                    boxes.append({"x1": x1 + j[0], "y1": y1 + j[1], "x2": x2 + j[2],
                                  "y2": y2 + j[3], "frame_index": f})
                track_records.append({
                    "track_id": f"s{s}_{CHARACTERS[p]}" if k == 0 else f"s{s}_{CHARACTERS[p]}_x{k}",
                    "shot_id": s, "seed_index": k, "boxes": boxes,
                    "sampled_features": [_emb(spec.vis(p)) for _ in range(5)],
                    "scores": {}, "assigned_character": None,
                })
    # a stray track present in only one seed: dropped by tripartite matching
    stray_frames = range(0, FRAMES_PER_SHOT)
    track_records.append({
        "track_id": "s0_stray", "shot_id": 0, "seed_index": 1,
        "boxes": [{"x1": 500.0, "y1": 300.0, "x2": 560.0, "y2": 360.0, "frame_index": f}
                  for f in stray_frames],
        "sampled_features": [_emb(spec.vis(0)) for _ in range(5)],
        "scores": {}, "assigned_character": None,
    })
    _write(root / "tracks.jsonl", track_records)

    # --- segments.jsonl ---
    plan = spec.segment_plan()
    seg_records = [{"schema": "segments", "audio_dim": AUDIO_DIM}]
    aud_groups = [[] for _ in CHARACTERS]
    for item in plan:
        p = item["speaker"]
        emb = spec.aud(p)
        aud_groups[p].append(emb)
        seg_records.append({
            "segment_id": item["segment_id"], "start_s": item["start_s"],
            "end_s": item["end_s"], "transcript": f"line of {CHARACTERS[p]}",
            "embedding": _emb(emb), "cluster_id": p,
            "predicted_speaker": None, "audio_confidence": None,
            "visual_confidence": None, "label_source": None,
        })
    for p, _ in enumerate(CHARACTERS):
        actor = [np.asarray(rec["segment_embeddings"][0]["values"])
                 for rec in int_records[1:]
                 if rec["character_name"] == CHARACTERS[p] and rec["cluster_id"] % 3 != 2]
        aud_groups[p].extend(actor)
    _check_separability([np.stack(g) for g in aud_groups])
    _write(root / "segments.jsonl", seg_records)

    # --- sync.jsonl: seed-0 tracks vs time-overlapping segments ---
    sync_records = [{"schema": "sync"}]
    for s in range(N_SHOTS):
        t_lo, t_hi = s * 1.0, (s + 1) * 1.0
        for p in spec.shot_characters(s):
            track_id = f"s{s}_{CHARACTERS[p]}"
            for item in plan:
                if item["start_s"] < t_hi and t_lo < item["end_s"]:
                    matched = item["speaker"] == p
                    rec = {"track_ref": track_id, "segment_ref": item["segment_id"]}
                    if matched and item["speaker"] % 2 == 0:
                        # alternate raw maps and scalars so both forms are exercised
                        rec["similarity_map"] = np.full((3, 2, 2), 0.8).tolist()
                    else:
                        rec["sync_score"] = 0.8 if matched else 0.05
                    sync_records.append(rec)
    _write(root / "sync.jsonl", sync_records)

    # --- intervals.jsonl (AD intervals) ---
    interval_records = [{"schema": "intervals"}]
    for i, (lo, hi) in enumerate([(0.2, 1.8), (2.0, 3.6), (4.2, 5.8), (6.0, 7.6)]):
        interval_records.append({"interval_id": f"ad{i}", "start_s": lo, "end_s": hi})
    _write(root / "intervals.jsonl", interval_records)

    # --- ground truth ---
    clips = {f"clip{c}": [2 * c, 2 * c + 1] for c in range(4)}
    names_records = [{"schema": "gt_names"}]
    for clip_id, shots in clips.items():
        names = sorted({CHARACTERS[p] for s in shots for p in spec.shot_characters(s)})
        names_records.append({"clip_id": clip_id, "shot_ids": shots, "names": names})
    _write(root / "gt_names.jsonl", names_records)

    boxes_records = [{"schema": "gt_boxes"}]
    for clip_id, shots in clips.items():
        for s in shots:
            for f in range(s * FRAMES_PER_SHOT, (s + 1) * FRAMES_PER_SHOT):
                boxes = []
                for slot, p in enumerate(spec.shot_characters(s)):
                    x1, y1, x2, y2 = spec.true_box(s, slot, f)
                    boxes.append({"x1": x1, "y1": y1, "x2": x2, "y2": y2,
                                  "name": CHARACTERS[p]})
                boxes_records.append({"clip_id": clip_id, "frame_index": f, "boxes": boxes})
    _write(root / "gt_boxes.jsonl", boxes_records)

    speakers_records = [{"schema": "gt_speakers"}]
    for item in plan:
        speakers_records.append({"segment_id": item["segment_id"],
                                 "speaker": CHARACTERS[item["speaker"]]})
    _write(root / "gt_speakers.jsonl", speakers_records)

    timeline_records = [{"schema": "gt_timeline"}]
    for item in plan:
        timeline_records.append({"start_s": item["start_s"], "end_s": item["end_s"],
                                 "speaker": CHARACTERS[item["speaker"]]})
    _write(root / "gt_der.jsonl", timeline_records)

    config = {
        "movie-id": "toonmovie",
        "candidates": "candidates.jsonl",
        "interviews": "interview_clusters.jsonl",
        "tracks": "tracks.jsonl",
        "segments": "segments.jsonl",
        "sync": "sync.jsonl",
        "intervals": "intervals.jsonl",
        "gt-names": "gt_names.jsonl",
        "gt-boxes": "gt_boxes.jsonl",
        "gt-speakers": "gt_speakers.jsonl",
        "gt-der": "gt_der.jsonl",
        "out-dir": "out",
        "seed": 7,
    }
    with open(root / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
    return config


def _write(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec))
            fh.write("\n")


if __name__ == "__main__":
    import sys

    generate_movie(sys.argv[1] if len(sys.argv) > 1 else "fixture")
