"""Manifest -> shard set, and in-place scenario tagging of a shard set."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dataset import SamplingParams, build_samples, detections_at, ingest_detections
from .errors import DataError
from .scenarios import TaggerConfig, format_proportions, scenario_proportions, tag_all
from .shards import load_shards, read_catalog, read_shard, write_catalog, write_shard
from .trajectory import ManifestEntry, load_trajectory, read_manifest

log = logging.getLogger(__name__)


@dataclass
class ProcessSummary:
    processed: dict[str, int] = field(default_factory=dict)  # id -> sample count
    failed: dict[str, str] = field(default_factory=dict)  # id -> error message


def _process_one(manifest_path: str, entry: ManifestEntry, out_dir: str, params: SamplingParams,
                 frame_stride: int) -> tuple[str, int]:
    manifest = read_manifest(manifest_path)
    traj = load_trajectory(manifest, entry, frame_stride)
    samples = build_samples(traj, params)
    shard_dir = Path(out_dir) / entry.id
    meta = {
        "trajectory_id": entry.id,
        "source_domain": entry.source_domain,
        "step_length_mean": traj.step_length_mean,
        "num_poses": len(traj),
        "frame_stride": frame_stride,
        "sampling": asdict(params),
        "data_root": os.path.relpath(manifest.root.resolve(), shard_dir.resolve()),
        "pose_log": entry.pose_log,
        "detections": entry.detections,
        "frames": entry.frames,
    }
    write_shard(samples, shard_dir, meta)
    return entry.id, len(samples)


def process_manifest(manifest_path, out_dir, params: SamplingParams | None = None, *,
                     workers: int = 1, frame_stride: int = 1) -> ProcessSummary:
    """Build one shard per trajectory plus a catalog. Failing trajectories are logged and skipped."""
    params = params or SamplingParams()
    manifest = read_manifest(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = ProcessSummary()
    args = [(str(manifest_path), e, str(out), params, frame_stride) for e in manifest.entries]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [(a[1].id, pool.submit(_process_one, *a)) for a in args]
            results = []
            for tid, fut in futures:
                try:
                    results.append(fut.result())
                except (DataError, OSError) as e:
                    results.append((tid, e))
    else:
        results = []
        for a in args:
            try:
                results.append(_process_one(*a))
            except (DataError, OSError) as e:
                results.append((a[1].id, e))
    for tid, res in results:
        if isinstance(res, Exception):
            log.warning("skipping %s: %s", tid, res)
            summary.failed[tid] = str(res)
        else:
            log.info("processed %s: %d samples", tid, res)
            summary.processed[tid] = res
    write_catalog(out, [{"id": t, "path": t, "num_samples": n} for t, n in summary.processed.items()])
    return summary


def tag_shard_set(shard_dir, cfg: TaggerConfig | None = None) -> dict:
    """Tag every sample in place from its trajectory's detection log.

    Writes ``proportions.json`` and ``proportions.txt`` next to the catalog
    and returns the proportions report.
    """
    cfg = cfg or TaggerConfig()
    root = Path(shard_dir)
    all_tags = []
    untaggable = 0
    for e in read_catalog(root):
        shard = read_shard(root / e["path"])
        det_rel = shard.metadata.get("detections")
        records = ingest_detections(shard.data_root / det_rel) if det_rel else {}
        untaggable += tag_all(shard.samples, lambda s: detections_at(records, s.frame_index), cfg)
        meta = dict(shard.metadata, tagger=asdict(cfg))
        write_shard(shard.samples, shard.path, meta)
        all_tags.extend(s.scenario_tags for s in shard.samples)
    report = {
        "num_samples": len(all_tags),
        "untaggable_angle": untaggable,
        "action_angle": cfg.action_step,
        "proportions": scenario_proportions(all_tags) if all_tags else {},
    }
    (root / "proportions.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    if all_tags:
        (root / "proportions.txt").write_text(format_proportions(report["proportions"], len(all_tags)))
    return report


def absolute_ref(ref: str, root: Path | None) -> str:
    """Rewrite a root-relative ``feat:`` or ``img:`` reference to an absolute one."""
    if root is None:
        return ref
    for prefix in ("feat:", "img:"):
        if ref.startswith(prefix) and not os.path.isabs(ref[len(prefix):]):
            return prefix + str(root / ref[len(prefix):])
    return ref


def load_samples(path, resolve_refs: bool = False):
    """All samples of a shard or shard set, and the shards themselves.

    With ``resolve_refs`` the frame references are made absolute so a
    feature provider can open them without knowing each shard's root.
    """
    shards = load_shards(path)
    samples = []
    for sh in shards:
        root = sh.data_root
        for s in sh.samples:
            if resolve_refs:
                s.past_frame_refs = [absolute_ref(r, root) for r in s.past_frame_refs]
                s.future_frame_refs = [absolute_ref(r, root) for r in s.future_frame_refs]
            samples.append(s)
    return samples, shards
