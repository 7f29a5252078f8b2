"""Writers for the captioner's on-disk formats.

Implemented from the format contracts, not imported from the consumer
package: the coupling between the two components is the bytes on disk.

Feature files: magic MFAF, u32 version 1, u32 count, u32 dim, then
count*dim little-endian float32 values. Manifest: canonical JSON
({"videos": [...]}, sorted keys, two-space indent, trailing newline)
whose entries carry relative feature paths, attributes, captions, and a
split name.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exceptions import JobError

FEATURE_MAGIC = b"MFAF"
FEATURE_VERSION = 1
SPLITS = ("train", "validation", "test")


def write_feature_file(path, vectors: np.ndarray) -> None:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise JobError(f"feature matrix must be nonempty 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise JobError("feature matrix contains non-finite values")
    count, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, count, dim))
        fh.write(arr.astype("<f4").tobytes())


def manifest_entry(
    video_id: str,
    temporal_path: str,
    motion_path: str,
    attributes: list[str],
    captions: list[str],
    split: str,
) -> dict:
    if split not in SPLITS:
        raise JobError(f"unknown split {split!r}")
    if not captions:
        raise JobError(f"video {video_id}: no captions")
    return {
        "attributes": list(attributes),
        "captions": list(captions),
        "motion_path": motion_path,
        "split": split,
        "temporal_path": temporal_path,
        "video_id": video_id,
    }


def write_manifest(path, entries: list[dict]) -> None:
    ids = [e["video_id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise JobError("duplicate video ids in manifest")
    payload = {"videos": sorted(entries, key=lambda e: e["video_id"])}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
