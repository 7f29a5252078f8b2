"""Per-video extraction jobs."""

from __future__ import annotations

import json
import multiprocessing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import Backbone, get_backbone
from .exceptions import JobError
from .formats import write_feature_file
from .video import read_frames


def extract_temporal(frames: np.ndarray, backbone: Backbone, stride: int = 1) -> np.ndarray:
    """One feature vector per sampled frame (every stride-th frame)."""
    if stride < 1:
        raise JobError(f"stride must be >= 1, got {stride}")
    sampled = frames[::stride]
    return np.stack([backbone.transform(f) for f in sampled])


def _window_slices(n_frames: int, window: int) -> list[np.ndarray]:
    """Index arrays of non-overlapping windows; a short final window is
    padded by repeating the last frame."""
    out = []
    for start in range(0, n_frames, window):
        idx = np.arange(start, start + window)
        out.append(np.minimum(idx, n_frames - 1))
    return out


def extract_motion(frames: np.ndarray, backbone: Backbone, window: int = 16) -> np.ndarray:
    """One feature vector per window of consecutive frames.

    The descriptor is the backbone applied to the window's mean
    absolute frame-to-frame difference image, so static windows (and
    padding repeats) contribute zero energy.
    """
    if window < 1:
        raise JobError(f"window must be >= 1, got {window}")
    vectors = []
    for idx in _window_slices(frames.shape[0], window):
        chunk = frames[idx].astype(np.float64)
        if len(chunk) > 1:
            diff = np.abs(np.diff(chunk, axis=0)).mean(axis=0)
        else:
            diff = np.zeros_like(chunk[0])
        vectors.append(backbone.transform(diff))
    return np.stack(vectors)


@dataclass
class ExtractionJob:
    """What to extract for one video and where to put it."""

    video_path: str
    temporal_out: str
    motion_out: str
    stride: int = 1
    window: int = 16
    backbone: str = "colorstat"

    def __post_init__(self):
        if self.stride < 1:
            raise JobError(f"stride must be >= 1, got {self.stride}")
        if self.window < 1:
            raise JobError(f"window must be >= 1, got {self.window}")


def _write_sidecar(feature_path, payload: dict) -> None:
    with open(str(feature_path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_job(job: ExtractionJob) -> dict:
    """Extract both feature files for one video; returns a summary."""
    backbone = get_backbone(job.backbone)
    frames = read_frames(job.video_path)
    temporal = extract_temporal(frames, backbone, stride=job.stride)
    motion = extract_motion(frames, backbone, window=job.window)
    for out in (job.temporal_out, job.motion_out):
        Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_feature_file(job.temporal_out, temporal)
    write_feature_file(job.motion_out, motion)
    common = {
        "backbone": backbone.model_id,
        "frames": int(frames.shape[0]),
        "source": Path(job.video_path).name,
    }
    _write_sidecar(job.temporal_out, {**common, "stride": job.stride})
    _write_sidecar(job.motion_out, {**common, "window": job.window})
    return {
        "video": job.video_path,
        "temporal_count": int(temporal.shape[0]),
        "motion_count": int(motion.shape[0]),
        "dim": backbone.dim,
    }


def run_jobs(jobs: list[ExtractionJob], processes: int = 1) -> list[dict]:
    """Jobs are independent per video; >1 process fans them out."""
    if processes < 1:
        raise JobError(f"processes must be >= 1, got {processes}")
    if processes == 1 or len(jobs) <= 1:
        return [run_job(job) for job in jobs]
    with multiprocessing.Pool(processes=processes) as pool:
        return pool.map(run_job, jobs)
