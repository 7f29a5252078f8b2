"""Binary checkpoint format.

Layout: magic MFAC, u32 version, five u32 layer widths, a 32-byte
sha256 of the vocabulary, then every parameter array flattened in
canonical order as little-endian float64. Loading against a different
vocabulary is refused: token ids index the embedding, so a mismatch
silently permutes the output language.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import ConsistencyError, FormatError
from .model import Dims, ParamSet, param_shapes

CHECKPOINT_MAGIC = b"MFAC"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sI5I")


def save_checkpoint(path, params: ParamSet, dims: Dims, vocab_hash: bytes) -> None:
    if len(vocab_hash) != 32:
        raise FormatError(f"vocab hash must be 32 bytes, got {len(vocab_hash)}")
    params.validate(dims)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                dims.vocab_size,
                dims.embed_dim,
                dims.hidden_dim,
                dims.temporal_dim,
                dims.motion_dim,
            )
        )
        fh.write(vocab_hash)
        fh.write(params.flatten().astype("<f8").tobytes())


def load_checkpoint(path, expected_vocab_hash: bytes | None = None) -> tuple[ParamSet, Dims]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: {blob[:4]!r}")
    if len(blob) < _HEADER.size + 32:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}")
    magic, version, v, de, dh, dv, df = _HEADER.unpack_from(blob, 0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dims = Dims(vocab_size=v, embed_dim=de, hidden_dim=dh, temporal_dim=dv, motion_dim=df)
    stored_hash = blob[_HEADER.size : _HEADER.size + 32]
    if expected_vocab_hash is not None and stored_hash != expected_vocab_hash:
        raise ConsistencyError(
            f"{path}: checkpoint was trained with a different vocabulary "
            "(sha256 mismatch); refusing to load"
        )
    n_params = sum(int(np.prod(s)) for s in param_shapes(dims).values())
    body = blob[_HEADER.size + 32 :]
    if len(body) != 8 * n_params:
        raise FormatError(
            f"{path}: parameter payload is {len(body)} bytes, expected {8 * n_params}"
        )
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return ParamSet.unflatten(dims, vec), dims


def stored_vocab_hash(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size + 32)
    if head[:4] != CHECKPOINT_MAGIC or len(head) < _HEADER.size + 32:
        raise FormatError(f"{path}: not a checkpoint file")
    return head[_HEADER.size :]
