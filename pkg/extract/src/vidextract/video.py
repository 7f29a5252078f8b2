"""Frame sources.

Two input kinds: .npy frame stacks (T, H, W, 3) uint8, which are
deterministic and codec-free, and anything OpenCV can decode when the
optional video extra is installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .exceptions import JobError


def _load_npy(path) -> np.ndarray:
    try:
        frames = np.load(path)
    except (OSError, ValueError) as exc:
        raise JobError(f"{path}: not a readable frame stack: {exc}") from exc
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise JobError(
            f"{path}: frame stack must have shape (frames, h, w, 3), got {frames.shape}"
        )
    return frames.astype(np.uint8)


def _load_with_opencv(path) -> np.ndarray:
    try:
        import cv2
    except ImportError as exc:
        raise JobError(
            f"{path}: decoding video containers requires opencv "
            "(install the 'video' extra) or a .npy frame stack"
        ) from exc
    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        raise JobError(f"{path}: opencv cannot open this file")
    frames = []
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        frames.append(frame)
    capture.release()
    if not frames:
        raise JobError(f"{path}: no decodable frames")
    return np.stack(frames).astype(np.uint8)


def read_frames(path) -> np.ndarray:
    """Decode a video into a (frames, h, w, 3) uint8 array."""
    path = Path(path)
    if not path.exists():
        raise JobError(f"{path}: no such file")
    frames = _load_npy(path) if path.suffix == ".npy" else _load_with_opencv(path)
    if frames.shape[0] == 0:
        raise JobError(f"{path}: video has no frames")
    return frames
