"""Per-frame feature backbones.

The backbone is pluggable; its identifier is recorded in the job
sidecar so downstream models know what produced a feature file. The
default is a deterministic color-statistics descriptor: no pretrained
weights are downloadable in every deployment, and the captioner's
contract only fixes the file format, not the feature semantics. A CNN
backbone can be registered by name through the same protocol.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

from .exceptions import JobError


class Backbone(Protocol):
    model_id: str
    dim: int

    def transform(self, frame: np.ndarray) -> np.ndarray: ...


class ColorStatBackbone:
    """Mean and standard deviation per channel over a grid of cells,
    plus the global statistics: (cells^2 + 1) * 6 values in [0, 1]."""

    def __init__(self, cells: int = 2):
        if cells < 1:
            raise JobError("cells must be >= 1")
        self.cells = cells
        self.model_id = f"colorstat{cells}x{cells}-v1"
        self.dim = (cells * cells + 1) * 6

    def transform(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame)
        if frame.ndim != 3 or frame.shape[-1] != 3:
            raise JobError(f"frame must be (h, w, 3), got {frame.shape}")
        img = frame.astype(np.float64) / 255.0
        h, w = img.shape[:2]
        parts = []
        # cell boundaries cover the frame even when not divisible
        rows = np.linspace(0, h, self.cells + 1).astype(int)
        cols = np.linspace(0, w, self.cells + 1).astype(int)
        for i in range(self.cells):
            for j in range(self.cells):
                cell = img[rows[i]:max(rows[i + 1], rows[i] + 1),
                           cols[j]:max(cols[j + 1], cols[j] + 1)]
                flat = cell.reshape(-1, 3)
                parts.append(flat.mean(axis=0))
                parts.append(flat.std(axis=0))
        flat = img.reshape(-1, 3)
        parts.append(flat.mean(axis=0))
        parts.append(flat.std(axis=0))
        return np.concatenate(parts)


_REGISTRY: dict[str, Callable[[], Backbone]] = {
    "colorstat": ColorStatBackbone,
}


def register_backbone(name: str, factory: Callable[[], Backbone]) -> None:
    _REGISTRY[name] = factory


def get_backbone(name: str = "colorstat") -> Backbone:
    if name not in _REGISTRY:
        raise JobError(f"unknown backbone {name!r} (have {sorted(_REGISTRY)})")
    return _REGISTRY[name]()
