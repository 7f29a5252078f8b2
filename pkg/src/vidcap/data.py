"""Dataset plumbing: vocabulary, binary feature files, the manifest,
pretrained embeddings, the synthetic corpus, nearest-neighbor attribute
prediction, and attribute noise injection.

Feature files are float32 on disk and float64 in memory. The manifest
is canonical JSON so save(load(x)) is a byte-level fixed point.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import DomainError, FormatError, VocabularyError
from .metrics import tokenize
from .model import BOS_ID, EOS_ID, RESERVED_TOKENS, UNK_ID, FeatureSet
from .numerics import Rng

FEATURE_MAGIC = b"MFAF"
FEATURE_VERSION = 1
SPLITS = ("train", "validation", "test")


class Vocabulary:
    """Bidirectional token table with fixed reserved ids 0..3 for
    PAD/BOS/EOS/UNK. Words and attributes share the table (and hence
    the embedding rows)."""

    def __init__(self, tokens: Sequence[str], min_count: int = 1):
        self._tokens = list(RESERVED_TOKENS) + list(tokens)
        self.min_count = min_count
        if len(set(self._tokens)) != len(self._tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        for tok in tokens:
            if tok in RESERVED_TOKENS:
                raise VocabularyError(f"token {tok!r} collides with a reserved symbol")
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise VocabularyError(f"id {idx} outside vocabulary of size {len(self)}")
        return self._tokens[idx]

    def tokens(self, include_reserved: bool = False) -> list[str]:
        return list(self._tokens) if include_reserved else self._tokens[4:]

    def encode(self, text: str) -> list[int]:
        """Token ids for a tokenized string; unknown words map to UNK."""
        return [self.id_of(tok) for tok in tokenize(text)]

    def encode_caption(self, text: str) -> list[int]:
        return [BOS_ID, *self.encode(text), EOS_ID]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def sha256(self) -> bytes:
        canon = json.dumps(self._tokens, ensure_ascii=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("ascii")).digest()

    def to_dict(self) -> dict:
        return {"min_count": self.min_count, "tokens": self._tokens[4:]}

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocabulary":
        return cls(payload["tokens"], min_count=payload.get("min_count", 1))


def build_vocab(
    captions: Iterable[str], attributes: Iterable[str] = (), min_count: int = 1
) -> Vocabulary:
    """Count caption tokens; keep those at or above min_count plus every
    attribute token regardless of count. Order: frequency descending,
    then lexicographic, so identical corpora give identical ids."""
    counts = Counter()
    any_caption = False
    for text in captions:
        any_caption = True
        counts.update(tokenize(text))
    if not any_caption:
        raise DomainError("build_vocab needs at least one caption")
    forced = set()
    for attr in attributes:
        forced.update(tokenize(attr))
    keep = {tok for tok, cnt in counts.items() if cnt >= min_count} | forced
    keep -= set(RESERVED_TOKENS)
    ordered = sorted(keep, key=lambda tok: (-counts[tok], tok))
    return Vocabulary(ordered, min_count=min_count)


def write_features(path, vectors: np.ndarray) -> None:
    """Binary layout: magic MFAF, u32 version, u32 count, u32 dim, then
    count*dim little-endian float32 values."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DomainError(f"feature matrix must be nonempty 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("feature matrix contains non-finite values")
    count, dim = arr.shape
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, count, dim))
        fh.write(payload)


def read_features(path) -> np.ndarray:
    """Read an MFAF file back as float64. Header or length mismatches
    raise FormatError naming the byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: {blob[:4]!r}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}")
    version, count, dim = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    expected = 16 + 4 * count * dim
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload ends at byte {len(blob)}, header promises {expected}"
        )
    if count == 0 or dim == 0:
        raise DomainError(f"{path}: empty feature matrix ({count}x{dim})")
    data = np.frombuffer(blob, dtype="<f4", offset=16).astype(np.float64)
    arr = data.reshape(count, dim)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite feature values")
    return arr


@dataclass
class VideoRecord:
    video_id: str
    temporal_path: str
    motion_path: str
    attributes: list[str]
    captions: list[str]
    split: str

    def to_dict(self) -> dict:
        return {
            "attributes": self.attributes,
            "captions": self.captions,
            "motion_path": self.motion_path,
            "split": self.split,
            "temporal_path": self.temporal_path,
            "video_id": self.video_id,
        }


class Manifest:
    """Per-video metadata with relative feature paths. Canonical JSON on
    disk: sorted keys, videos ordered by id."""

    def __init__(self, videos: Sequence[VideoRecord]):
        ids = [v.video_id for v in videos]
        if len(set(ids)) != len(ids):
            raise FormatError("manifest has duplicate video ids")
        for v in videos:
            if v.split not in SPLITS:
                raise FormatError(f"video {v.video_id}: unknown split {v.split!r}")
            if not v.captions:
                raise FormatError(f"video {v.video_id}: no captions")
        self.videos = sorted(videos, key=lambda v: v.video_id)

    def split(self, name: str) -> list[VideoRecord]:
        if name not in SPLITS:
            raise DomainError(f"unknown split {name!r}")
        return [v for v in self.videos if v.split == name]

    def split_sizes(self) -> dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}

    def save(self, path) -> None:
        payload = {"videos": [v.to_dict() for v in self.videos]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, check_files: bool = True) -> "Manifest":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad JSON: {exc}") from exc
        try:
            videos = [
                VideoRecord(
                    video_id=v["video_id"],
                    temporal_path=v["temporal_path"],
                    motion_path=v["motion_path"],
                    attributes=list(v["attributes"]),
                    captions=list(v["captions"]),
                    split=v["split"],
                )
                for v in payload["videos"]
            ]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: missing manifest field {exc}") from exc
        manifest = cls(videos)
        if check_files:
            root = path.parent
            for v in manifest.videos:
                for rel in (v.temporal_path, v.motion_path):
                    if not (root / rel).exists():
                        raise FormatError(f"{path}: missing feature file {rel}")
        return manifest


def load_video_features(record: VideoRecord, root, vocab: Optional[Vocabulary] = None) -> FeatureSet:
    root = Path(root)
    attrs: list[int] = []
    if vocab is not None:
        for a in record.attributes:
            for tok in tokenize(a):
                attrs.append(vocab.id_of(tok))
    return FeatureSet(
        temporal=read_features(root / record.temporal_path),
        motion=read_features(root / record.motion_path),
        attributes=attrs,
    )


def load_embeddings(path, vocab: Vocabulary, embed_dim: int, rng: Rng) -> tuple[np.ndarray, float]:
    """Word-vector text file (`token v1 ... v_d` per line) into a full
    embedding matrix. Missing tokens keep the random initialization;
    returns (matrix, coverage over non-reserved tokens)."""
    if embed_dim <= 0:
        raise DomainError(f"embed_dim must be positive, got {embed_dim}")
    scale = math.sqrt(6.0 / (len(vocab) + embed_dim))
    matrix = rng.uniform(-scale, scale, (len(vocab), embed_dim))
    found = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != embed_dim:
                raise FormatError(
                    f"{path}: line {lineno}: expected {embed_dim} values, got {len(values)}"
                )
            if token in vocab and token not in RESERVED_TOKENS:
                try:
                    matrix[vocab.id_of(token)] = [float(v) for v in values]
                except ValueError as exc:
                    raise FormatError(f"{path}: line {lineno}: bad float: {exc}") from exc
                found.add(token)
    total = len(vocab.tokens())
    coverage = len(found) / total if total else 0.0
    return matrix, coverage


# ---------------------------------------------------------------------------
# synthetic corpus

_SUBJECTS = ("cat", "dog", "man", "woman", "bird", "horse", "monkey", "panda")
_VERBS = (
    "running", "jumping", "eating", "sleeping",
    "swimming", "dancing", "climbing", "waving",
)

# Each template mentions the latent subject and verb once; the fillers
# widen the vocabulary so a corrupted attribute is usually a neutral
# word rather than a competing subject or verb.
_TEMPLATES = (
    "the {s} is {v} in the park",
    "a {s} is {v} near the river",
    "the small {s} is {v} on the grass",
    "a big {s} is {v} by the road",
    "the {s} keeps {v} all day long",
    "a {s} enjoys {v} every single morning",
    "the {s} was seen {v} outside the old house",
    "a young {s} started {v} behind the red fence",
    "the happy {s} likes {v} under the tall tree",
    "a {s} is quietly {v} inside the new barn",
)


@dataclass
class SynthSpec:
    """Knobs for the synthetic corpus. Subject identity lives mostly in
    the temporal features and verb identity mostly in the motion
    features (`bleed` controls the weak cross-signal), so the two
    visual branches are complementary and ground-truth attributes still
    add information on top."""

    n_videos: int = 50
    n_subjects: int = 5
    n_verbs: int = 5
    n_frames: int = 4
    n_clips: int = 3
    temporal_dim: int = 16
    motion_dim: int = 12
    feature_noise: float = 0.9
    bleed: float = 0.3
    captions_per_video: int = 2
    hq_attributes: bool = True

    def __post_init__(self):
        if self.n_videos <= 0:
            raise DomainError("n_videos must be positive")
        if not 1 <= self.n_subjects <= len(_SUBJECTS):
            raise DomainError(f"n_subjects must be in 1..{len(_SUBJECTS)}")
        if not 1 <= self.n_verbs <= len(_VERBS):
            raise DomainError(f"n_verbs must be in 1..{len(_VERBS)}")
        for name in ("n_frames", "n_clips", "temporal_dim", "motion_dim", "captions_per_video"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.captions_per_video > len(_TEMPLATES):
            raise DomainError("captions_per_video exceeds the template pool")


def split_counts(n: int) -> tuple[int, int, int]:
    """80/10/10 with every split nonempty once n >= 3: validation and
    test take max(1, round(n/10)) each, training gets the rest."""
    if n <= 0:
        raise DomainError("need at least one video")
    if n < 3:
        return (n, 0, 0) if n == 1 else (1, 1, 0)
    held = max(1, round(n / 10))
    return n - 2 * held, held, held


def synth_dataset(root, seed: int, spec: SynthSpec = SynthSpec()) -> Manifest:
    """Write a synthetic dataset under root (features/ + manifest.json).

    Every video draws a latent (subject, verb) pair; frames are noisy
    samples of the subject cluster with a faint verb component, clips
    the reverse. Captions are templated realizations of the pair, and
    in HQ mode the attributes are exactly the two latent tokens.
    """
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    rng = Rng(seed).fork("synth")
    subjects = _SUBJECTS[: spec.n_subjects]
    verbs = _VERBS[: spec.n_verbs]
    centroid_rng = rng.fork("centroids")
    half_t = spec.temporal_dim // 2
    half_m = spec.motion_dim // 2
    subj_t = {s: centroid_rng.normal(half_t) for s in subjects}
    subj_m = {s: centroid_rng.normal(half_m) for s in subjects}
    verb_t = {v: centroid_rng.normal(spec.temporal_dim - half_t) for v in verbs}
    verb_m = {v: centroid_rng.normal(spec.motion_dim - half_m) for v in verbs}

    n_train, n_val, n_test = split_counts(spec.n_videos)
    videos: list[VideoRecord] = []
    for i in range(spec.n_videos):
        vid = f"vid{i:04d}"
        pair_rng = rng.fork(f"video/{i}")
        s = subjects[pair_rng.integer(len(subjects))]
        v = verbs[pair_rng.integer(len(verbs))]
        frames = np.stack(
            [
                np.concatenate([subj_t[s], spec.bleed * verb_t[v]])
                + spec.feature_noise * pair_rng.normal(spec.temporal_dim)
                for _ in range(spec.n_frames)
            ]
        )
        clips = np.stack(
            [
                np.concatenate([spec.bleed * subj_m[s], verb_m[v]])
                + spec.feature_noise * pair_rng.normal(spec.motion_dim)
                for _ in range(spec.n_clips)
            ]
        )
        t_rel = f"features/{vid}_t.mfaf"
        m_rel = f"features/{vid}_m.mfaf"
        write_features(root / t_rel, frames)
        write_features(root / m_rel, clips)
        # deterministic template picks tied to the subject: sentence
        # structure follows the visually dominant latent, so a wrong
        # verb costs its slots, not the whole caption
        base = subjects.index(s) * 3 + 1
        captions = [
            _TEMPLATES[(base + 3 * j) % len(_TEMPLATES)].format(s=s, v=v)
            for j in range(spec.captions_per_video)
        ]
        split = "train" if i < n_train else "validation" if i < n_train + n_val else "test"
        videos.append(
            VideoRecord(
                video_id=vid,
                temporal_path=t_rel,
                motion_path=m_rel,
                attributes=[s, v] if spec.hq_attributes else [],
                captions=captions,
                split=split,
            )
        )
    manifest = Manifest(videos)
    manifest.save(root / "manifest.json")
    return manifest


def predict_attributes_nn(
    test_temporal: np.ndarray,
    train_videos: Sequence[tuple[np.ndarray, Sequence[str]]],
    k: int = 1,
    top_m: int = 2,
    pooled: bool = False,
) -> list[str]:
    """Nearest-neighbor attribute transfer on temporal features.

    Every test frame votes with the attribute tokens of the videos
    owning its k nearest training frames (Euclidean); the top_m tokens
    by vote count win, ties broken lexicographically. pooled=True is a
    fast non-reference mode comparing mean-pooled vectors instead of
    individual frames.
    """
    test = np.asarray(test_temporal, dtype=np.float64)
    if test.ndim != 2 or len(test) == 0:
        raise DomainError("test features must be a nonempty 2-D array")
    if not train_videos:
        raise DomainError("training set is empty")
    if k < 1 or top_m < 1:
        raise DomainError("k and top_m must be >= 1")
    bank = []
    owners = []
    for vid_idx, (frames, _) in enumerate(train_videos):
        frames = np.asarray(frames, dtype=np.float64)
        rows = frames.mean(axis=0, keepdims=True) if pooled else frames
        bank.append(rows)
        owners.extend([vid_idx] * len(rows))
    bank = np.vstack(bank)
    owners = np.asarray(owners)
    queries = test.mean(axis=0, keepdims=True) if pooled else test
    votes = Counter()
    for q in queries:
        d2 = np.sum((bank - q) ** 2, axis=1)
        nearest = np.argsort(d2, kind="stable")[: min(k, len(bank))]
        for row in nearest:
            for tok in train_videos[owners[row]][1]:
                votes[tok] += 1
    ranked = sorted(votes.items(), key=lambda item: (-item[1], item[0]))
    return [tok for tok, _ in ranked[:top_m]]


def inject_noise(
    attributes: Sequence[str], p: float, vocab: Vocabulary, rng: Rng
) -> list[str]:
    """Independently replace each attribute with probability p by a
    uniformly drawn different non-reserved vocabulary token."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"noise fraction must be in [0, 1], got {p}")
    pool = vocab.tokens()
    if len(pool) < 2:
        raise DomainError("vocabulary too small to draw replacement tokens")
    out = []
    for attr in attributes:
        if p > 0.0 and rng.uniform01() < p:
            candidates = [tok for tok in pool if tok != attr]
            out.append(candidates[rng.integer(len(candidates))])
        else:
            out.append(attr)
    return out
