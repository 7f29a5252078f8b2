"""Forward pass of the captioning network.

A word/attribute embedding table feeds six bilinear soft-attention
branches (semantic, temporal, motion; once against the input word and
once against the LSTM hidden state). Two fusion layers aggregate the
branches before and after the LSTM, importance gates weight the visual
branches per dimension, and the output distribution reuses the
embedding table as a tied projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import (
    ConsistencyError,
    DomainError,
    ShapeError,
    VocabularyError,
)
from .numerics import Rng, activate, ensure_finite, sigmoid, softmax

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


@dataclass(frozen=True)
class Dims:
    """Layer widths. Embedding width doubles as the output-fusion width
    so the tied projection lines up."""

    vocab_size: int
    embed_dim: int = 300
    hidden_dim: int = 512
    temporal_dim: int = 2048
    motion_dim: int = 4096

    def __post_init__(self):
        for name, v in vars(self).items():
            if v <= 0:
                raise DomainError(f"Dims.{name} must be positive, got {v}")


@dataclass(frozen=True)
class Branches:
    """Which feature branches participate; disabled branches contribute
    zero vectors without changing any layer shape."""

    temporal: bool = True
    motion: bool = True
    semantic: bool = True

    @classmethod
    def parse(cls, spec: str) -> "Branches":
        spec = spec.upper()
        extra = set(spec) - set("TMS")
        if extra or not spec:
            raise DomainError(f"branch spec must be a subset of 'TMS', got {spec!r}")
        return cls(temporal="T" in spec, motion="M" in spec, semantic="S" in spec)

    def tag(self) -> str:
        return ("T" if self.temporal else "") + ("M" if self.motion else "") + (
            "S" if self.semantic else ""
        )


@dataclass(frozen=True)
class ModelConfig:
    dims: Dims
    branches: Branches = Branches()
    fusion_activation: str = "identity"  # or "tanh"
    cell_output_tanh: bool = False
    dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.fusion_activation not in ("identity", "tanh"):
            raise DomainError(f"fusion activation must be identity or tanh")


@dataclass
class FeatureSet:
    """One video's inputs: per-frame vectors, per-clip vectors, and
    attribute token ids. Frame/clip counts may differ between videos."""

    temporal: np.ndarray  # (n_frames, temporal_dim)
    motion: np.ndarray  # (n_clips, motion_dim)
    attributes: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.temporal = np.asarray(self.temporal, dtype=np.float64)
        self.motion = np.asarray(self.motion, dtype=np.float64)
        if self.temporal.ndim != 2 or len(self.temporal) == 0:
            raise DomainError("temporal features must be a nonempty 2-D array")
        if self.motion.ndim != 2 or len(self.motion) == 0:
            raise DomainError("motion features must be a nonempty 2-D array")
        ensure_finite(self.temporal, "temporal features")
        ensure_finite(self.motion, "motion features")


# Canonical parameter order; flatten/unflatten, checkpoints, and the
# optimizer all follow this list.
PARAM_ORDER = (
    "emb",
    "wi", "wf", "wo", "wg",
    "ui", "uf", "uo", "ug",
    "bi", "bf", "bo", "bg",
    "att_w_sem", "att_w_tmp", "att_w_mot",
    "att_h_sem", "att_h_tmp", "att_h_mot",
    "fuse_in_w", "fuse_in_b",
    "gate_tmp_in", "gate_mot_in", "gate_tmp_out", "gate_mot_out",
    "init_w",
    "fuse_out_w", "fuse_out_b",
)

_BIAS_FIELDS = {"bi", "bf", "bo", "bg", "fuse_in_b", "fuse_out_b"}
_GATE_FIELDS = {"gate_tmp_in", "gate_mot_in", "gate_tmp_out", "gate_mot_out"}


def param_shapes(dims: Dims) -> dict[str, tuple[int, ...]]:
    V, de, dh, dv, df = (
        dims.vocab_size,
        dims.embed_dim,
        dims.hidden_dim,
        dims.temporal_dim,
        dims.motion_dim,
    )
    shapes: dict[str, tuple[int, ...]] = {"emb": (V, de)}
    for g in "ifog":
        shapes[f"w{g}"] = (dh, dh)
        shapes[f"u{g}"] = (dh, dh)
        shapes[f"b{g}"] = (dh,)
    shapes.update(
        att_w_sem=(de, de), att_w_tmp=(de, dv), att_w_mot=(de, df),
        att_h_sem=(dh, de), att_h_tmp=(dh, dv), att_h_mot=(dh, df),
        fuse_in_w=(dh, 2 * de + dv + df), fuse_in_b=(dh,),
        gate_tmp_in=(dv,), gate_mot_in=(df,),
        gate_tmp_out=(dv,), gate_mot_out=(df,),
        init_w=(dh, de + dv + df),
        fuse_out_w=(de, dh + de + dv + df), fuse_out_b=(de,),
    )
    return {name: shapes[name] for name in PARAM_ORDER}


class ParamSet:
    """Named float64 arrays in canonical order. Doubles as the container
    for gradients and optimizer accumulators (shape-congruent)."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        missing = set(PARAM_ORDER) - set(arrays)
        extra = set(arrays) - set(PARAM_ORDER)
        if missing or extra:
            raise ShapeError(f"bad parameter fields: missing={missing}, extra={extra}")
        self.__dict__["_arrays"] = {
            name: np.asarray(arrays[name], dtype=np.float64) for name in PARAM_ORDER
        }

    def __getattr__(self, name: str) -> np.ndarray:
        try:
            return self.__dict__["_arrays"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name: str, value):
        arrays = self.__dict__["_arrays"]
        if name not in arrays:
            raise AttributeError(name)
        arrays[name] = np.asarray(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.__dict__["_arrays"][name]

    def __setitem__(self, name: str, value) -> None:
        setattr(self, name, value)

    def items(self):
        return [(name, self.__dict__["_arrays"][name]) for name in PARAM_ORDER]

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({k: np.zeros_like(v) for k, v in self.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in self.items()])

    @classmethod
    def unflatten(cls, dims: Dims, vec: np.ndarray) -> "ParamSet":
        shapes = param_shapes(dims)
        total = sum(int(np.prod(s)) for s in shapes.values())
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (total,):
            raise ShapeError(f"expected flat vector of length {total}, got {vec.shape}")
        arrays, off = {}, 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            arrays[name] = vec[off : off + size].reshape(shape).copy()
            off += size
        return cls(arrays)

    def validate(self, dims: Dims) -> None:
        for name, shape in param_shapes(dims).items():
            if self[name].shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {self[name].shape}, expected {shape}"
                )


def init_params(
    dims: Dims, rng: Rng, pretrained_emb: Optional[np.ndarray] = None
) -> ParamSet:
    """Glorot-uniform matrices, zero biases, all-ones importance gates.

    Importance gates start as pass-throughs so every branch contributes
    from the first step. Draw order follows PARAM_ORDER so a seed fully
    determines the parameters.
    """
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(dims).items():
        if name in _BIAS_FIELDS:
            arrays[name] = np.zeros(shape)
        elif name in _GATE_FIELDS:
            arrays[name] = np.ones(shape)
        else:
            r = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-r, r, shape)
    if pretrained_emb is not None:
        pe = np.asarray(pretrained_emb, dtype=np.float64)
        if pe.shape != arrays["emb"].shape:
            raise ShapeError(
                f"pretrained embedding shape {pe.shape} != {arrays['emb'].shape}"
            )
        arrays["emb"] = pe.copy()
    return ParamSet(arrays)


def embed(emb: np.ndarray, token: int) -> np.ndarray:
    """Embedding row lookup; the same table serves words and attributes."""
    if not 0 <= token < emb.shape[0]:
        raise VocabularyError(
            f"token id {token} outside vocabulary of size {emb.shape[0]}"
        )
    return emb[token]


def attend(
    query: np.ndarray, contexts: np.ndarray, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear soft attention: scores e_i = query . (u @ c_i), weights
    softmax(e), output the weighted average of the contexts.

    With u = 0 this degenerates to the plain mean of the contexts.
    """
    query = np.asarray(query, dtype=np.float64)
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2 or contexts.shape[0] == 0:
        raise DomainError("attend needs a nonempty 2-D context matrix")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (query.shape[0], contexts.shape[1]):
        raise ShapeError(
            f"attention matrix shape {u.shape} incompatible with query "
            f"{query.shape} and contexts {contexts.shape}"
        )
    scores = contexts @ (u.T @ query)
    weights = softmax(scores)
    return weights, weights @ contexts


def _lstm_gates(params: ParamSet, x, h_prev, c_prev, cell_output_tanh: bool):
    i = sigmoid(params.wi @ x + params.ui @ h_prev + params.bi)
    f = sigmoid(params.wf @ x + params.uf @ h_prev + params.bf)
    o = sigmoid(params.wo @ x + params.uo @ h_prev + params.bo)
    g = np.tanh(params.wg @ x + params.ug @ h_prev + params.bg)
    c = f * c_prev + i * g
    # hidden state reads the raw cell unless the conventional tanh
    # variant is switched on
    h = o * (np.tanh(c) if cell_output_tanh else c)
    return i, f, o, g, c, h


def lstm_step(
    x: np.ndarray,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
    params: ParamSet,
    cell_output_tanh: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM update; returns (h, c)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.wi.shape[1],):
        raise ShapeError(f"lstm input shape {x.shape}, expected ({params.wi.shape[1]},)")
    _, _, _, _, c, h = _lstm_gates(params, x, h_prev, c_prev, cell_output_tanh)
    return h, c


def _fuse(w, b, parts, activation):
    try:
        z = np.concatenate(parts)
    except ValueError as err:
        raise ShapeError(f"fusion inputs do not concatenate: {err}") from None
    if w.shape[1] != z.shape[0]:
        raise ShapeError(f"fusion weight {w.shape} incompatible with input {z.shape}")
    return z, activate(w @ z + b, activation)


def _gated(gate: np.ndarray, vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != gate.shape:
        raise ShapeError(f"gated branch width {vec.shape} != gate width {gate.shape}")
    return gate * vec


def fuse_input(
    x: np.ndarray,
    sem: np.ndarray,
    tmp: np.ndarray,
    mot: np.ndarray,
    params: ParamSet,
    activation: str = "identity",
    dropout_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Pre-LSTM fusion of the input word with the three attended vectors.

    The visual branches pass through learned per-dimension importance
    gates before concatenation; an optional pre-scaled dropout mask is
    applied to the output at train time.
    """
    _, m = _fuse(
        params.fuse_in_w,
        params.fuse_in_b,
        (x, sem, _gated(params.gate_tmp_in, tmp), _gated(params.gate_mot_in, mot)),
        activation,
    )
    return m if dropout_mask is None else m * dropout_mask


def fuse_output(
    h: np.ndarray,
    sem: np.ndarray,
    tmp: np.ndarray,
    mot: np.ndarray,
    params: ParamSet,
    activation: str = "identity",
    dropout_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Post-LSTM fusion; output width equals the embedding width so the
    tied projection applies directly."""
    _, m = _fuse(
        params.fuse_out_w,
        params.fuse_out_b,
        (h, sem, _gated(params.gate_tmp_out, tmp), _gated(params.gate_mot_out, mot)),
        activation,
    )
    return m if dropout_mask is None else m * dropout_mask


def word_distribution(m: np.ndarray, emb: np.ndarray) -> np.ndarray:
    """Tied softmax: logits are emb @ m, so the embedding table is also
    the output projection. No separate output matrix exists."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (emb.shape[1],):
        raise ShapeError(f"fusion output {m.shape} does not match embedding width {emb.shape[1]}")
    return softmax(emb @ m)


class ContextBundle:
    """Per-video attention contexts resolved against one parameter set.

    sem is the attribute embedding matrix (rows of emb), or None when
    the semantic branch is off or the video has no attributes; tmp/mot
    are None when masked out.
    """

    def __init__(self, features: FeatureSet, params: ParamSet, cfg: ModelConfig):
        dims = cfg.dims
        if features.temporal.shape[1] != dims.temporal_dim:
            raise ShapeError(
                f"temporal width {features.temporal.shape[1]} != {dims.temporal_dim}"
            )
        if features.motion.shape[1] != dims.motion_dim:
            raise ShapeError(f"motion width {features.motion.shape[1]} != {dims.motion_dim}")
        self.attr_ids = list(features.attributes)
        for a in self.attr_ids:
            if not 0 <= a < dims.vocab_size:
                raise VocabularyError(f"attribute id {a} outside vocabulary")
        use_sem = cfg.branches.semantic and self.attr_ids
        self.sem = params.emb[self.attr_ids] if use_sem else None
        self.tmp = features.temporal if cfg.branches.temporal else None
        self.mot = features.motion if cfg.branches.motion else None
        self.sem_mean = (
            self.sem.mean(axis=0) if self.sem is not None else np.zeros(dims.embed_dim)
        )
        self.tmp_mean = (
            self.tmp.mean(axis=0) if self.tmp is not None else np.zeros(dims.temporal_dim)
        )
        self.mot_mean = (
            self.mot.mean(axis=0) if self.mot is not None else np.zeros(dims.motion_dim)
        )


@dataclass
class InitTrace:
    z0: np.ndarray
    m0: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c0: np.ndarray
    h0: np.ndarray


@dataclass
class StepTrace:
    token_in: int
    target: int
    x: np.ndarray
    # per-branch (weights, attended) pairs, None when the branch is off
    att_w: dict[str, Optional[tuple[np.ndarray, np.ndarray]]]
    att_h: dict[str, Optional[tuple[np.ndarray, np.ndarray]]]
    z_in: np.ndarray
    m_in: np.ndarray
    mask_in: Optional[np.ndarray]
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    h: np.ndarray
    z_out: np.ndarray
    m_out: np.ndarray
    mask_out: Optional[np.ndarray]
    p: np.ndarray

    @property
    def mx(self) -> np.ndarray:
        return self.m_in if self.mask_in is None else self.m_in * self.mask_in

    @property
    def mh(self) -> np.ndarray:
        return self.m_out if self.mask_out is None else self.m_out * self.mask_out


@dataclass
class ForwardTrace:
    dims: Dims
    caption: list[int]
    mode: str
    init: InitTrace
    steps: list[StepTrace]

    def check_matches(self, caption: list[int], params: ParamSet) -> None:
        if list(caption) != self.caption:
            raise ConsistencyError("trace was produced for a different caption")
        params.validate(self.dims)


def _branch_outputs(query, ctx: ContextBundle, params: ParamSet, side: str):
    """Run the three attention branches for one query; inactive branches
    yield zero vectors (and no weights)."""
    u = {
        "sem": params.att_w_sem if side == "w" else params.att_h_sem,
        "tmp": params.att_w_tmp if side == "w" else params.att_h_tmp,
        "mot": params.att_w_mot if side == "w" else params.att_h_mot,
    }
    results: dict[str, Optional[tuple[np.ndarray, np.ndarray]]] = {}
    vectors = {}
    for name, contexts in (("sem", ctx.sem), ("tmp", ctx.tmp), ("mot", ctx.mot)):
        if contexts is None:
            results[name] = None
            vectors[name] = np.zeros(u[name].shape[1])
        else:
            weights, y = attend(query, contexts, u[name])
            results[name] = (weights, y)
            vectors[name] = y
    return results, vectors


def _draw_mask(rng: Rng, size: int, rate: float) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate)."""
    keep = rng.uniform01(size) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def init_state(
    features: FeatureSet, params: ParamSet, cfg: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """States before the first word: project the mean-pooled branch
    summaries and run one LSTM step from zero states."""
    ctx = ContextBundle(features, params, cfg)
    trace = _init_step(ctx, params, cfg)
    return trace.h0, trace.c0


def _init_step(ctx: ContextBundle, params: ParamSet, cfg: ModelConfig) -> InitTrace:
    z0 = np.concatenate([ctx.sem_mean, ctx.tmp_mean, ctx.mot_mean])
    m0 = params.init_w @ z0
    dh = cfg.dims.hidden_dim
    i, f, o, g, c0, h0 = _lstm_gates(
        params, m0, np.zeros(dh), np.zeros(dh), cfg.cell_output_tanh
    )
    return InitTrace(z0=z0, m0=m0, i=i, f=f, o=o, g=g, c0=c0, h0=h0)


def _run_step(
    params: ParamSet,
    cfg: ModelConfig,
    ctx: ContextBundle,
    token: int,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
    mask_in: Optional[np.ndarray] = None,
    mask_out: Optional[np.ndarray] = None,
    target: int = -1,
) -> StepTrace:
    """One generation step: attend around the input word, fuse, advance
    the LSTM, attend around the new hidden state, fuse, project."""
    x = embed(params.emb, token)
    att_w, vec_w = _branch_outputs(x, ctx, params, side="w")
    z_in, m_in = _fuse(
        params.fuse_in_w,
        params.fuse_in_b,
        (x, vec_w["sem"], params.gate_tmp_in * vec_w["tmp"], params.gate_mot_in * vec_w["mot"]),
        cfg.fusion_activation,
    )
    mx = m_in if mask_in is None else m_in * mask_in
    i, f, o, g, c, h = _lstm_gates(params, mx, h_prev, c_prev, cfg.cell_output_tanh)
    att_h, vec_h = _branch_outputs(h, ctx, params, side="h")
    z_out, m_out = _fuse(
        params.fuse_out_w,
        params.fuse_out_b,
        (h, vec_h["sem"], params.gate_tmp_out * vec_h["tmp"], params.gate_mot_out * vec_h["mot"]),
        cfg.fusion_activation,
    )
    mh = m_out if mask_out is None else m_out * mask_out
    p = word_distribution(mh, params.emb)
    return StepTrace(
        token_in=token, target=target, x=x, att_w=att_w, att_h=att_h,
        z_in=z_in, m_in=m_in, mask_in=mask_in, i=i, f=f, o=o, g=g, c=c, h=h,
        z_out=z_out, m_out=m_out, mask_out=mask_out, p=p,
    )


def forward_caption(
    features: FeatureSet,
    caption: list[int],
    params: ParamSet,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: Optional[Rng] = None,
) -> tuple[float, ForwardTrace]:
    """Teacher-forced forward pass over one caption.

    The caption must start with BOS and end with EOS; the loss is the
    summed negative log-probability of each following gold token. The
    returned trace caches every intermediate needed for an exact
    backward pass.
    """
    caption = [int(t) for t in caption]
    if len(caption) < 2:
        raise DomainError("caption must contain at least BOS and EOS")
    if caption[0] != BOS_ID or caption[-1] != EOS_ID:
        raise DomainError("caption must start with BOS and end with EOS")
    if mode not in ("train", "eval"):
        raise DomainError(f"mode must be train or eval, got {mode!r}")
    use_dropout = mode == "train" and cfg.dropout > 0.0
    if use_dropout and rng is None:
        raise DomainError("train mode with dropout needs an rng for the masks")

    ctx = ContextBundle(features, params, cfg)
    init = _init_step(ctx, params, cfg)
    h, c = init.h0, init.c0
    steps: list[StepTrace] = []
    loss = 0.0
    for t in range(len(caption) - 1):
        mask_in = _draw_mask(rng, cfg.dims.hidden_dim, cfg.dropout) if use_dropout else None
        mask_out = _draw_mask(rng, cfg.dims.embed_dim, cfg.dropout) if use_dropout else None
        step = _run_step(
            params, cfg, ctx, caption[t], h, c,
            mask_in=mask_in, mask_out=mask_out, target=caption[t + 1],
        )
        # p[target] may underflow to exactly 0; the resulting inf loss is
        # surfaced by the training loop's divergence check
        with np.errstate(divide="ignore"):
            loss += -np.log(step.p[step.target])
        h, c = step.h, step.c
        steps.append(step)
    trace = ForwardTrace(dims=cfg.dims, caption=caption, mode=mode, init=init, steps=steps)
    return float(loss), trace


def score_caption(
    features: FeatureSet, tokens: list[int], params: ParamSet, cfg: ModelConfig
) -> float:
    """Log-probability of a caption body (no BOS/EOS) under the model,
    including the closing EOS step. Equals minus the eval-mode loss."""
    loss, _ = forward_caption(
        features, [BOS_ID, *tokens, EOS_ID], params, cfg, mode="eval"
    )
    return -loss
