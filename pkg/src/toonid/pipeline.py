"""Pipeline stages and the chained runner behind the CLI subcommands.

Stage inputs/outputs are JSON Lines manifests; every output is written via a
temp file + rename so an aborted stage never leaves partial artifacts. A
failing stage raises StageError carrying the stage name.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from . import apps, audio, bank as bank_ops, manifests, metrics, visual
from .adapt import ProjectionMatrix, TrainConfig, train_projection
from .bank import CandidateImageRecord, SpeakerCluster
from .core import CharacterBank, CharacterEntry, EmbeddingVector
from .errors import EngineError, ManifestError, StageError
from .manifests import read_jsonl, write_json_atomic, write_jsonl_atomic

log = logging.getLogger(__name__)

DEFAULTS = {
    "movie-id": "movie",
    "filter-threshold": 0.55,
    "merge-tau": 0.7,
    "vm-th": 0.6,
    "sync-th": 0.3,
    "voice-cap": 15,
    "k": 3,
    "iou-th": 0.5,
    "nms-th": 0.5,
    "lambda": 1.0,
    "low-conf": 0.35,
    "vm-retention": 0.45,
    "frames": 8,
    "epochs": 75,
    "lr-start": 6e-4,
    "lr-end": 5e-6,
    "tau": 0.07,
    "seed": 0,
    "fps": None,
    "jobs": 1,
    "der-collar": 0.0,
    "closed-set": False,
    "drop-singing": False,
}


def with_defaults(cfg: dict) -> dict:
    merged = dict(DEFAULTS)
    merged.update({k: v for k, v in cfg.items() if v is not None})
    return merged


def _out(cfg: dict, name: str) -> Path:
    return Path(cfg.get("out-dir", ".")) / name


def _require_path(cfg: dict, key: str) -> Path:
    value = cfg.get(key)
    if not value:
        raise ManifestError(f"config is missing required path {key!r}", key=key)
    path = Path(value)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}", path=str(path))
    return path


def _warn_issues(path, issues):
    for issue in issues:
        log.warning("%s: %s", path, issue)


# ---------------------------------------------------------------------------
# Candidate / interview manifests (bank-builder inputs)


def load_candidates(path) -> tuple[dict[str, EmbeddingVector], dict[str, list[CandidateImageRecord]], dict]:
    """Returns ({name: profile embedding}, {name: web candidates}, header)."""
    candidates, header = manifests.parse_candidates(read_jsonl(path))
    issues = manifests.validate_candidates(candidates, header)
    fatal = [i for i in issues if "roster" in i.message]
    if fatal:
        raise ManifestError(f"{path}: {fatal[0]}")
    _warn_issues(path, issues)
    profiles: dict[str, EmbeddingVector] = {}
    web: dict[str, list[CandidateImageRecord]] = {}
    for c in candidates:
        if c.source_tag == "profile":
            profiles[c.character_name] = c.embedding
        else:
            web.setdefault(c.character_name, []).append(c)
    return profiles, web, header


def load_interview_clusters(path) -> tuple[dict[str, list[SpeakerCluster]], dict]:
    by_char, header = manifests.parse_interview_clusters(read_jsonl(path))
    _warn_issues(path, manifests.validate_interview_clusters(by_char, header))
    return by_char, header


# ---------------------------------------------------------------------------
# Stages


def stage_build_bank(cfg: dict, out=None) -> Path:
    """Appearance filtering + interview merging + (when tracks are labeled) in-movie voices."""
    profiles, web, cand_header = load_candidates(_require_path(cfg, "candidates"))
    interviews, int_header = load_interview_clusters(_require_path(cfg, "interviews"))
    tracks, tracks_header, t_issues = manifests.load_tracks(
        _require_path(cfg, "tracks"), require_sampled=False)
    _warn_issues("tracks", t_issues)
    segments, seg_header, s_issues = manifests.load_segments(_require_path(cfg, "segments"))
    _warn_issues("segments", s_issues)
    sync_obs, _, y_issues = manifests.load_sync(_require_path(cfg, "sync"))
    _warn_issues("sync", y_issues)

    characters = []
    for name in sorted(profiles):
        accepted = bank_ops.filter_candidates(profiles[name], web.get(name, []),
                                              cfg["filter-threshold"])
        appearance = [profiles[name]] + [c.embedding for c in accepted]
        characters.append(CharacterEntry(name=name, appearance_exemplars=appearance,
                                         voice_exemplars=(), profile_embedding=profiles[name]))
    bank = CharacterBank(movie_id=cfg["movie-id"], characters=characters)

    interview_exemplars = {}
    for name, clusters in interviews.items():
        groups = bank_ops.merge_speaker_clusters(clusters, cfg["merge-tau"])
        interview_exemplars[name] = bank_ops.select_interview_exemplars(groups)

    segments_by_id = {s.segment_id: s for s in segments}
    # sync manifests may reference seed tracks dropped by tripartite matching
    in_movie = bank_ops.select_in_movie_exemplars(
        tracks, sync_obs, cfg["vm-th"], cfg["sync-th"],
        segment_ids=set(segments_by_id), ignore_unknown_tracks=True)
    bank = bank_ops.assemble_voice_bank(bank, in_movie, interview_exemplars,
                                        segments_by_id, cfg["voice-cap"])

    out = Path(out) if out else _out(cfg, "bank.jsonl")
    manifests.save_bank(bank, out, visual_dim=int(cand_header["visual_dim"]),
                        audio_dim=int(int_header["audio_dim"]))
    return out


def stage_adapt(cfg: dict, out=None) -> Path:
    bank, _, issues = manifests.load_bank(_require_path(cfg, "bank"), voice_cap=cfg["voice-cap"])
    _warn_issues("bank", issues)
    train_cfg = TrainConfig(epochs=int(cfg["epochs"]), lr_start=float(cfg["lr-start"]),
                            lr_end=float(cfg["lr-end"]), temperature=float(cfg["tau"]),
                            seed=int(cfg["seed"]))
    result = train_projection(bank, train_cfg)
    out = Path(out) if out else _out(cfg, "projection.json")
    write_json_atomic(out, result.projection.to_json(losses=result.losses))
    return out


def _load_projection(path) -> ProjectionMatrix:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return ProjectionMatrix.from_json(json.load(fh))


def stage_recognize_visual(cfg: dict, out=None) -> Path:
    bank, _, issues = manifests.load_bank(_require_path(cfg, "bank"), voice_cap=cfg["voice-cap"])
    _warn_issues("bank", issues)
    tracks, header, t_issues = manifests.load_tracks(_require_path(cfg, "tracks"))
    _warn_issues("tracks", t_issues)
    projection = None
    if cfg.get("projection"):
        projection = _load_projection(_require_path(cfg, "projection"))
    labeled = visual.recognize_tracks(tracks, bank, k=int(cfg["k"]),
                                      iou_threshold=float(cfg["iou-th"]),
                                      nms_threshold=float(cfg["nms-th"]),
                                      projection=projection, jobs=int(cfg["jobs"]))
    out = Path(out) if out else _out(cfg, "tracks_labeled.jsonl")
    manifests.save_tracks(labeled, out, visual_dim=header.get("visual_dim"),
                          fps=header.get("fps"))
    return out


def stage_voice_refresh(cfg: dict) -> Path:
    """Re-assemble voice exemplars once tracks are labeled (run-pipeline second pass)."""
    refreshed = dict(cfg)
    refreshed["tracks"] = str(_out(cfg, "tracks_labeled.jsonl"))
    return stage_build_bank(refreshed)


def stage_recognize_audio(cfg: dict, fusion: bool = True, out=None) -> Path:
    bank, bank_header, issues = manifests.load_bank(_require_path(cfg, "bank"),
                                                    voice_cap=cfg["voice-cap"])
    _warn_issues("bank", issues)
    segments, seg_header, s_issues = manifests.load_segments(_require_path(cfg, "segments"))
    _warn_issues("segments", s_issues)
    tracks, tracks_header, t_issues = manifests.load_tracks(_require_path(cfg, "tracks"))
    _warn_issues("tracks", t_issues)
    sync_obs, _, y_issues = manifests.load_sync(_require_path(cfg, "sync"))
    _warn_issues("sync", y_issues)
    fps = cfg.get("fps") or tracks_header.get("fps")
    if not fps:
        raise ManifestError("fps not given and absent from the tracks header")
    fusion_cfg = audio.FusionConfig(fusion_lambda=float(cfg["lambda"]),
                                    low_conf_threshold=float(cfg["low-conf"]))
    labeled = audio.diarise(segments, bank, tracks, sync_obs, fusion_cfg,
                            fps=float(fps), k=int(cfg["k"]), fusion=fusion)
    out = Path(out) if out else _out(cfg, "segments_labeled.jsonl")
    manifests.save_segments(labeled, out, audio_dim=seg_header.get("audio_dim"))
    return out


def stage_subtitles(cfg: dict, out=None) -> Path:
    segments, _, issues = manifests.load_segments(_require_path(cfg, "segments"))
    _warn_issues("segments", issues)
    doc = apps.build_subtitles(segments)
    out = Path(out) if out else _out(cfg, "movie.srt")
    out.parent.mkdir(parents=True, exist_ok=True)
    import os
    import tempfile

    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=out.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(doc.to_srt())
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return out


def stage_ad_prompts(cfg: dict, out=None) -> Path:
    tracks, header, issues = manifests.load_tracks(_require_path(cfg, "tracks"))
    _warn_issues("tracks", issues)
    fps = cfg.get("fps") or header.get("fps")
    records = read_jsonl(_require_path(cfg, "intervals"))
    if records[0].get("schema") != "intervals":
        raise ManifestError("intervals manifest must start with schema 'intervals'")
    packages = []
    for i, rec in enumerate(records[1:]):
        packages.append(apps.assemble_ad_prompt(
            (float(rec["start_s"]), float(rec["end_s"])), tracks,
            vm_retention=float(cfg["vm-retention"]), frame_count=int(cfg["frames"]),
            fps=float(fps), interval_id=str(rec.get("interval_id", i))))
    out = Path(out) if out else _out(cfg, "prompts.jsonl")
    write_jsonl_atomic(out, apps.encode_prompt_packages(packages))
    return out


# ---------------------------------------------------------------------------
# Evaluation


def _load_gt(path, schema: str) -> list[dict]:
    records = read_jsonl(path)
    if records[0].get("schema") != schema:
        raise ManifestError(f"{path}: expected schema {schema!r}, got {records[0].get('schema')!r}")
    return records[1:]


def evaluate_names(tracks, gt_records) -> dict:
    per_clip = {}
    for rec in gt_records:
        clip = str(rec.get("clip_id", "all"))
        shot_ids = set(rec.get("shot_ids", []) or [])
        best: dict[str, float] = {}
        for t in tracks:
            if shot_ids and t.shot_id not in shot_ids:
                continue
            if t.assigned_character is None:
                continue
            score = t.scores.get(t.assigned_character, 0.0)
            if t.assigned_character not in best or score > best[t.assigned_character]:
                best[t.assigned_character] = score
        preds = sorted(best.items(), key=lambda kv: -kv[1])
        per_clip[clip] = metrics.name_list_ap(preds, set(rec["names"]))
    aggregate = sum(per_clip.values()) / len(per_clip) if per_clip else 0.0
    return {"per_clip": per_clip, "aggregate": aggregate}


def evaluate_boxes(tracks, gt_records, thresholds=None) -> dict:
    thresholds = thresholds or metrics.default_iou_sweep()
    detections = visual.frame_detections(tracks)
    clips: dict[str, dict[int, list]] = {}
    for rec in gt_records:
        clip = str(rec.get("clip_id", "all"))
        frame = int(rec["frame_index"])
        boxes = [(manifests.decode_box({**b, "frame_index": frame}, "gt box"), str(b["name"]))
                 for b in rec["boxes"]]
        clips.setdefault(clip, {})[frame] = boxes
    per_clip = {}
    for clip, gt in sorted(clips.items()):
        preds = {f: detections.get(f, []) for f in gt}
        per_threshold, mean = metrics.detection_map(preds, gt, thresholds)
        per_clip[clip] = {"per_threshold": {f"{t:.2f}": v for t, v in per_threshold.items()},
                          "mAP": mean}
    aggregate = (sum(v["mAP"] for v in per_clip.values()) / len(per_clip)) if per_clip else 0.0
    return {"per_clip": per_clip, "aggregate": aggregate}


def _segment_confidence_for_ranking(seg) -> float:
    if seg.label_source == "visual" and seg.visual_confidence is not None:
        return float(seg.visual_confidence)
    return float(seg.audio_confidence or 0.0)


def evaluate_speakers(segments, gt_records) -> dict:
    clips: dict[str, dict[str, str]] = {}
    for rec in gt_records:
        clip = str(rec.get("clip_id", "all"))
        clips.setdefault(clip, {})[str(rec["segment_id"])] = str(rec["speaker"])
    by_id = {s.segment_id: s for s in segments}
    per_clip = {}
    for clip, gt in sorted(clips.items()):
        preds = []
        for seg_id in gt:
            seg = by_id.get(seg_id)
            if seg is None:
                raise ManifestError(f"ground truth references unknown segment {seg_id!r}")
            preds.append((seg_id, seg.predicted_speaker or audio.UNKNOWN_SPEAKER,
                          _segment_confidence_for_ranking(seg)))
        per_clip[clip] = metrics.speaker_sentence_ap(preds, gt)
    aggregate = sum(per_clip.values()) / len(per_clip) if per_clip else 0.0
    return {"per_clip": per_clip, "aggregate": aggregate}


def evaluate_der(segments, gt_records, include_overlap: bool = True, collar_s: float = 0.0,
                 roster: Optional[set] = None, drop_singing: bool = False) -> dict:
    gt_turns_by_clip: dict[str, list] = {}
    for rec in gt_records:
        if drop_singing and rec.get("singing"):
            continue
        if roster is not None and str(rec["speaker"]) not in roster:
            continue
        clip = str(rec.get("clip_id", "all"))
        gt_turns_by_clip.setdefault(clip, []).append(
            (float(rec["start_s"]), float(rec["end_s"]), str(rec["speaker"])))
    pred_turns = [(s.start_s, s.end_s, s.predicted_speaker or audio.UNKNOWN_SPEAKER)
                  for s in segments]
    per_clip = {}
    totals = [0.0, 0.0, 0.0, 0.0]
    for clip, gt_turns in sorted(gt_turns_by_clip.items()):
        if clip == "all":
            clip_preds = pred_turns
        else:
            lo = min(t[0] for t in gt_turns)
            hi = max(t[1] for t in gt_turns)
            clip_preds = [(max(s, lo), min(e, hi), spk) for s, e, spk in pred_turns
                          if s < hi and lo < e]
        br = metrics.der_components(clip_preds, gt_turns, include_overlap=include_overlap,
                                    collar_s=collar_s)
        per_clip[clip] = {"der": br.rate, "missed": br.missed, "false_alarm": br.false_alarm,
                          "confusion": br.confusion, "gt_time": br.gt_time}
        for i, v in enumerate((br.missed, br.false_alarm, br.confusion, br.gt_time)):
            totals[i] += v
    aggregate = (totals[0] + totals[1] + totals[2]) / totals[3] if totals[3] > 0 else 0.0
    return {"per_clip": per_clip, "aggregate": aggregate}


def stage_evaluate(cfg: dict) -> Optional[Path]:
    tasks = {}
    tracks = segments = None
    if cfg.get("gt-names") or cfg.get("gt-boxes"):
        tracks, _, _ = manifests.load_tracks(_out(cfg, "tracks_labeled.jsonl"))
    if cfg.get("gt-speakers") or cfg.get("gt-der"):
        segments, _, _ = manifests.load_segments(_out(cfg, "segments_labeled.jsonl"))
    if cfg.get("gt-names"):
        tasks["names"] = evaluate_names(tracks, _load_gt(_require_path(cfg, "gt-names"), "gt_names"))
    if cfg.get("gt-boxes"):
        tasks["boxes"] = evaluate_boxes(tracks, _load_gt(_require_path(cfg, "gt-boxes"), "gt_boxes"))
    if cfg.get("gt-speakers"):
        tasks["speakers"] = evaluate_speakers(
            segments, _load_gt(_require_path(cfg, "gt-speakers"), "gt_speakers"))
    if cfg.get("gt-der"):
        roster = None
        if cfg.get("closed-set"):
            bank, _, _ = manifests.load_bank(_out(cfg, "bank.jsonl"))
            roster = set(bank.names())
        gt_records = _load_gt(_require_path(cfg, "gt-der"), "gt_timeline")
        tasks["der"] = {
            "with_overlap": evaluate_der(segments, gt_records, include_overlap=True,
                                         collar_s=float(cfg["der-collar"]), roster=roster,
                                         drop_singing=bool(cfg["drop-singing"])),
            "without_overlap": evaluate_der(segments, gt_records, include_overlap=False,
                                            collar_s=float(cfg["der-collar"]), roster=roster,
                                            drop_singing=bool(cfg["drop-singing"])),
        }
    if not tasks:
        return None
    out = _out(cfg, "report.json")
    write_json_atomic(out, {"config": _echo_config(cfg), "tasks": tasks})
    return out


def _echo_config(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items())}


# ---------------------------------------------------------------------------
# Full pipeline


def run_pipeline(cfg: dict) -> list[Path]:
    """build-bank -> adapt -> recognize-visual -> voice refresh -> recognize-audio
    -> subtitles + ad-prompts -> evaluate.

    The voice bank is re-assembled after visual recognition because in-movie
    exemplar gating needs labeled tracks; the first build-bank pass fills
    interview-sourced voices only.
    """
    cfg = with_defaults(cfg)
    artifacts: list[Path] = []

    def run_stage(name, fn, *args, **kwargs):
        try:
            result = fn(*args, **kwargs)
        except EngineError as exc:
            raise StageError(name, exc)
        except OSError as exc:
            raise StageError(name, ManifestError(str(exc)))
        if result is not None and result not in artifacts:
            artifacts.append(result)
            log.info("stage %s -> %s", name, result)
        return result

    bank_path = run_stage("build-bank", stage_build_bank, cfg)
    cfg["bank"] = str(bank_path)
    projection_path = run_stage("adapt", stage_adapt, cfg)
    cfg["projection"] = str(projection_path)
    labeled_tracks = run_stage("recognize-visual", stage_recognize_visual, cfg)
    run_stage("build-bank[voice-refresh]", stage_voice_refresh, cfg)
    audio_cfg = dict(cfg)
    audio_cfg["tracks"] = str(labeled_tracks)
    labeled_segments = run_stage("recognize-audio", stage_recognize_audio, audio_cfg)
    subtitle_cfg = dict(cfg)
    subtitle_cfg["segments"] = str(labeled_segments)
    run_stage("subtitles", stage_subtitles, subtitle_cfg)
    prompt_cfg = dict(cfg)
    prompt_cfg["tracks"] = str(labeled_tracks)
    run_stage("ad-prompts", stage_ad_prompts, prompt_cfg)
    run_stage("evaluate", stage_evaluate, cfg)
    return artifacts
