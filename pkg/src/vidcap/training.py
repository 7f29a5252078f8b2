"""Exact backward pass, RMSprop, and the training loop.

The backward walks a ForwardTrace in reverse time. Because the output
projection is tied to the embedding table, emb gradients accumulate
from four places: the softmax logits, the input word lookups, the
attribute attention contexts, and the attribute mean feeding the init
state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .decoding import beam_search
from .exceptions import ConfigError, DomainError, NumericError
from .metrics import meteor_pair, tokenize
from .model import (
    BOS_ID,
    EOS_ID,
    Branches,
    ContextBundle,
    Dims,
    FeatureSet,
    ForwardTrace,
    ModelConfig,
    ParamSet,
    forward_caption,
    init_params,
)
from .numerics import Rng


def _sigmoid_back(d, y):
    return d * y * (1.0 - y)


def _tanh_back(d, y):
    return d * (1.0 - y * y)


def _act_back(d, y, kind: str):
    return d if kind == "identity" else _tanh_back(d, y)


def _attend_back(query, contexts, u, weights, d_out, d_weights=None):
    """Backward of one attention branch.

    Returns (d_query, d_u, d_contexts). d_out is the gradient on the
    attended vector; d_weights optionally adds gradient arriving on the
    weights themselves.
    """
    d_alpha = contexts @ d_out
    if d_weights is not None:
        d_alpha = d_alpha + d_weights
    # softmax jacobian applied to d_alpha
    d_e = weights * (d_alpha - float(weights @ d_alpha))
    s = u.T @ query
    d_query = u @ (contexts.T @ d_e)
    d_u = np.outer(query, contexts.T @ d_e)
    d_contexts = weights[:, None] * d_out[None, :] + d_e[:, None] * s[None, :]
    return d_query, d_u, d_contexts


def backward(
    trace: ForwardTrace,
    features: FeatureSet,
    caption: Sequence[int],
    params: ParamSet,
    cfg: ModelConfig,
) -> ParamSet:
    """Gradients of the summed caption loss w.r.t. every parameter.

    The trace must come from forward_caption on the same caption and
    parameters; shapes are re-validated, value identity is the
    caller's responsibility.
    """
    trace.check_matches(list(caption), params)
    ctx = ContextBundle(features, params, cfg)
    grads = params.zeros_like()
    tanh_cell = cfg.cell_output_tanh
    act = cfg.fusion_activation

    contexts_by_name = {"sem": ctx.sem, "tmp": ctx.tmp, "mot": ctx.mot}

    def branch_back(side, name, step_att, query, d_vec):
        """Backward one attention branch; returns d_query contribution."""
        att = step_att[name]
        if att is None:
            return np.zeros_like(query)
        weights, _ = att
        u_name = f"att_{side}_{name}"
        contexts = contexts_by_name[name]
        d_q, d_u, d_ctx = _attend_back(query, contexts, params[u_name], weights, d_vec)
        grads[u_name] += d_u
        if name == "sem":
            np.add.at(grads["emb"], ctx.attr_ids, d_ctx)
        return d_q

    d_h_next = np.zeros(cfg.dims.hidden_dim)
    d_c_next = np.zeros(cfg.dims.hidden_dim)
    de, dh_ = cfg.dims.embed_dim, cfg.dims.hidden_dim
    dv, df = cfg.dims.temporal_dim, cfg.dims.motion_dim

    for t in range(len(trace.steps) - 1, -1, -1):
        step = trace.steps[t]
        mh = step.mh
        # tied softmax: loss_t = -log p[target]
        d_logits = step.p.copy()
        d_logits[step.target] -= 1.0
        grads["emb"] += np.outer(d_logits, mh)
        d_mh = params.emb.T @ d_logits
        d_m_out = d_mh if step.mask_out is None else d_mh * step.mask_out
        d_a_out = _act_back(d_m_out, step.m_out, act)
        grads["fuse_out_w"] += np.outer(d_a_out, step.z_out)
        grads["fuse_out_b"] += d_a_out
        d_z_out = params.fuse_out_w.T @ d_a_out

        d_h = d_z_out[:dh_].copy() + d_h_next
        d_sem_h = d_z_out[dh_ : dh_ + de]
        d_tmp_gated = d_z_out[dh_ + de : dh_ + de + dv]
        d_mot_gated = d_z_out[dh_ + de + dv :]
        if step.att_h["tmp"] is not None:
            y = step.att_h["tmp"][1]
            grads["gate_tmp_out"] += d_tmp_gated * y
            d_h += branch_back("h", "tmp", step.att_h, step.h, d_tmp_gated * params.gate_tmp_out)
        if step.att_h["mot"] is not None:
            y = step.att_h["mot"][1]
            grads["gate_mot_out"] += d_mot_gated * y
            d_h += branch_back("h", "mot", step.att_h, step.h, d_mot_gated * params.gate_mot_out)
        d_h += branch_back("h", "sem", step.att_h, step.h, d_sem_h)

        # LSTM step backward
        h_prev = trace.steps[t - 1].h if t > 0 else trace.init.h0
        c_prev = trace.steps[t - 1].c if t > 0 else trace.init.c0
        if tanh_cell:
            tc = np.tanh(step.c)
            d_o = d_h * tc
            d_c = d_h * step.o * (1.0 - tc * tc) + d_c_next
        else:
            d_o = d_h * step.c
            d_c = d_h * step.o + d_c_next
        d_i = d_c * step.g
        d_f = d_c * c_prev
        d_g = d_c * step.i
        d_c_next = d_c * step.f
        mx = step.mx
        d_mx = np.zeros(dh_)
        d_h_next = np.zeros(dh_)
        for gate, d_gate, y_gate in (
            ("i", d_i, step.i), ("f", d_f, step.f), ("o", d_o, step.o),
        ):
            d_a = _sigmoid_back(d_gate, y_gate)
            grads[f"w{gate}"] += np.outer(d_a, mx)
            grads[f"u{gate}"] += np.outer(d_a, h_prev)
            grads[f"b{gate}"] += d_a
            d_mx += params[f"w{gate}"].T @ d_a
            d_h_next += params[f"u{gate}"].T @ d_a
        d_ag = _tanh_back(d_g, step.g)
        grads["wg"] += np.outer(d_ag, mx)
        grads["ug"] += np.outer(d_ag, h_prev)
        grads["bg"] += d_ag
        d_mx += params.wg.T @ d_ag
        d_h_next += params.ug.T @ d_ag

        d_m_in = d_mx if step.mask_in is None else d_mx * step.mask_in
        d_a_in = _act_back(d_m_in, step.m_in, act)
        grads["fuse_in_w"] += np.outer(d_a_in, step.z_in)
        grads["fuse_in_b"] += d_a_in
        d_z_in = params.fuse_in_w.T @ d_a_in

        d_x = d_z_in[:de].copy()
        d_sem_w = d_z_in[de : 2 * de]
        d_tmp_gated = d_z_in[2 * de : 2 * de + dv]
        d_mot_gated = d_z_in[2 * de + dv :]
        if step.att_w["tmp"] is not None:
            y = step.att_w["tmp"][1]
            grads["gate_tmp_in"] += d_tmp_gated * y
            d_x += branch_back("w", "tmp", step.att_w, step.x, d_tmp_gated * params.gate_tmp_in)
        if step.att_w["mot"] is not None:
            y = step.att_w["mot"][1]
            grads["gate_mot_in"] += d_mot_gated * y
            d_x += branch_back("w", "mot", step.att_w, step.x, d_mot_gated * params.gate_mot_in)
        d_x += branch_back("w", "sem", step.att_w, step.x, d_sem_w)
        np.add.at(grads["emb"], [step.token_in], d_x[None, :])

    # init step: one LSTM update from zero states on the projected means
    init = trace.init
    d_h0 = d_h_next
    if tanh_cell:
        tc0 = np.tanh(init.c0)
        d_o0 = d_h0 * tc0
        d_c0 = d_h0 * init.o * (1.0 - tc0 * tc0) + d_c_next
    else:
        d_o0 = d_h0 * init.c0
        d_c0 = d_h0 * init.o + d_c_next
    d_i0 = d_c0 * init.g
    d_g0 = d_c0 * init.i
    # f gate sees c_prev = 0, so its gradient through c vanishes
    zeros_h = np.zeros(dh_)
    d_m0 = np.zeros(dh_)
    for gate, d_gate, y_gate, kind in (
        ("i", d_i0, init.i, "sigmoid"),
        ("f", zeros_h, init.f, "sigmoid"),
        ("o", d_o0, init.o, "sigmoid"),
        ("g", d_g0, init.g, "tanh"),
    ):
        d_a = _sigmoid_back(d_gate, y_gate) if kind == "sigmoid" else _tanh_back(d_gate, y_gate)
        grads[f"w{gate}"] += np.outer(d_a, init.m0)
        grads[f"b{gate}"] += d_a
        d_m0 += params[f"w{gate}"].T @ d_a
    grads["init_w"] += np.outer(d_m0, init.z0)
    d_z0 = params.init_w.T @ d_m0
    if ctx.sem is not None:
        d_sem_mean = d_z0[:de]
        n = len(ctx.attr_ids)
        np.add.at(grads["emb"], ctx.attr_ids, np.tile(d_sem_mean / n, (n, 1)))
    return grads


def caption_grad(
    features: FeatureSet,
    caption: Sequence[int],
    params: ParamSet,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: Optional[Rng] = None,
) -> tuple[float, ParamSet]:
    """Forward + backward for one caption; returns (loss, grads)."""
    loss, trace = forward_caption(features, list(caption), params, cfg, mode=mode, rng=rng)
    return loss, backward(trace, features, caption, params, cfg)


def global_norm(grads: ParamSet) -> float:
    total = 0.0
    for _, g in grads.items():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_gradients(grads: ParamSet, max_norm: float) -> float:
    """Scale all gradients in place so the global norm is at most
    max_norm. Returns the pre-clip norm."""
    if max_norm <= 0:
        raise DomainError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for name, g in grads.items():
            grads[name] = g * scale
    return norm


class RmsProp:
    """Element-wise RMSprop with epsilon inside the square root:

        acc <- decay*acc + (1-decay)*g^2
        theta <- theta - lr * g / sqrt(acc + eps)
    """

    def __init__(self, params: ParamSet, learning_rate: float = 1e-4,
                 decay: float = 0.9, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise DomainError(f"learning_rate must be positive, got {learning_rate}")
        if not 0.0 <= decay < 1.0:
            raise DomainError(f"decay must be in [0, 1), got {decay}")
        if epsilon <= 0:
            raise DomainError(f"epsilon must be positive, got {epsilon}")
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.acc = params.zeros_like()

    def step(self, params: ParamSet, grads: ParamSet) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter block {name!r}")
            acc = self.decay * self.acc[name] + (1.0 - self.decay) * g * g
            self.acc[name] = acc
            params[name] = params[name] - self.learning_rate * g / np.sqrt(acc + self.epsilon)


@dataclass
class TrainConfig:
    """Everything a training run needs besides the data. Defaults follow
    the reference setup; the small-scale tests override most of them."""

    embed_dim: int = 300
    hidden_dim: int = 512
    learning_rate: float = 1e-4
    dropout: float = 0.5
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    branches: str = "TMS"
    fusion_activation: str = "identity"
    cell_output_tanh: bool = False
    clip_norm: float = 5.0
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    # validation decode cost dominates at desk scale; eval_every > 1
    # skips the metric on intermediate epochs
    eval_every: int = 1
    eval_beam: int = 5
    eval_max_len: int = 30
    history_path: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")

    def model_config(self, dims: Dims) -> ModelConfig:
        return ModelConfig(
            dims=dims,
            branches=Branches.parse(self.branches),
            fusion_activation=self.fusion_activation,
            cell_output_tanh=self.cell_output_tanh,
            dropout=self.dropout,
        )


@dataclass
class Sample:
    """One (video, caption) training pair, already tokenized with BOS/EOS."""

    features: FeatureSet
    caption: list[int]


@dataclass
class EvalExample:
    """One validation video with raw-text references."""

    features: FeatureSet
    references: list[str]


@dataclass
class TrainResult:
    params: ParamSet
    dims: Dims
    config: TrainConfig
    history: list[dict]
    best_epoch: int
    best_score: float
    stopped_early: bool


def _infer_dims(samples: Sequence[Sample], vocab_size: int, config: TrainConfig) -> Dims:
    f0 = samples[0].features
    return Dims(
        vocab_size=vocab_size,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        temporal_dim=f0.temporal.shape[1],
        motion_dim=f0.motion.shape[1],
    )


def validation_meteor(
    examples: Sequence[EvalExample],
    params: ParamSet,
    cfg: ModelConfig,
    id_to_token: Callable[[int], str],
    beam_width: int = 5,
    max_len: int = 30,
) -> float:
    """Mean per-video METEOR of beam-decoded captions against the
    references; the early-stopping signal."""
    if not examples:
        raise DomainError("validation requires at least one example")
    total = 0.0
    for ex in examples:
        hyp = beam_search(ex.features, params, cfg, beam_width=beam_width, max_len=max_len)
        words = [id_to_token(t) for t in hyp.tokens]
        total += meteor_pair(words, [tokenize(r) for r in ex.references])
    return total / len(examples)


def next_token_accuracy(
    samples: Sequence[Sample], params: ParamSet, cfg: ModelConfig
) -> float:
    """Teacher-forced argmax accuracy over all caption positions."""
    hits = total = 0
    for s in samples:
        _, trace = forward_caption(s.features, s.caption, params, cfg, mode="eval")
        for step in trace.steps:
            hits += int(np.argmax(step.p) == step.target)
            total += 1
    return hits / total if total else 0.0


def mean_loss(samples: Sequence[Sample], params: ParamSet, cfg: ModelConfig) -> float:
    total = 0.0
    for s in samples:
        loss, _ = forward_caption(s.features, s.caption, params, cfg, mode="eval")
        total += loss
    return total / len(samples)


def train(
    samples: Sequence[Sample],
    val_examples: Sequence[EvalExample],
    vocab_size: int,
    id_to_token: Callable[[int], str],
    config: TrainConfig,
    pretrained_emb: Optional[np.ndarray] = None,
    log: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Mini-batch training with gradient clipping, RMSprop, and
    patience-based early stopping on validation METEOR.

    The best-scoring snapshot is restored at the end. All randomness
    (init, shuffles, dropout) forks off config.seed, so a rerun with
    identical inputs is bit-identical.
    """
    if not samples:
        raise ConfigError("training split is empty")
    dims = _infer_dims(samples, vocab_size, config)
    cfg = config.model_config(dims)
    eval_cfg = replace(cfg, dropout=0.0)
    root = Rng(config.seed)
    params = init_params(dims, root.fork("init"), pretrained_emb)
    opt = RmsProp(params, config.learning_rate, config.rms_decay, config.rms_epsilon)

    history: list[dict] = []
    best_score = -math.inf
    best_epoch = -1
    best_params = params.copy()
    bad_evals = 0
    stopped_early = False

    for epoch in range(config.max_epochs):
        order = list(range(len(samples)))
        root.fork(f"shuffle/{epoch}").shuffle(order)
        drop_rng = root.fork(f"dropout/{epoch}")
        epoch_loss = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            grads = params.zeros_like()
            for idx in batch:
                s = samples[idx]
                loss, g = caption_grad(
                    s.features, s.caption, params, cfg, mode="train", rng=drop_rng
                )
                epoch_loss += loss
                for name, arr in g.items():
                    grads[name] += arr
            for name, arr in grads.items():
                grads[name] = arr / len(batch)
            clip_gradients(grads, config.clip_norm)
            opt.step(params, grads)
        epoch_loss /= len(samples)
        if not math.isfinite(epoch_loss):
            raise NumericError(f"training loss diverged at epoch {epoch}")

        record = {"epoch": epoch, "train_loss": epoch_loss}
        run_eval = (epoch % config.eval_every == 0) or (epoch == config.max_epochs - 1)
        if run_eval and val_examples:
            score = validation_meteor(
                val_examples, params, eval_cfg, id_to_token,
                beam_width=config.eval_beam, max_len=config.eval_max_len,
            )
            record["val_meteor"] = score
            if score > best_score:
                best_score = score
                best_epoch = epoch
                best_params = params.copy()
                bad_evals = 0
            else:
                bad_evals += 1
        history.append(record)
        if log is not None:
            log(record)
        if val_examples and bad_evals >= config.patience:
            stopped_early = True
            break

    if best_epoch < 0:
        # nothing was scored (no validation set): keep the final parameters
        best_params = params
        best_epoch = len(history) - 1
        best_score = float("nan")
    if config.history_path is not None:
        with open(config.history_path, "w", encoding="utf-8") as fh:
            for record in history:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return TrainResult(
        params=best_params, dims=dims, config=config, history=history,
        best_epoch=best_epoch, best_score=best_score, stopped_early=stopped_early,
    )


def random_search(
    space: dict[str, Sequence | tuple],
    n_trials: int,
    base_config: TrainConfig,
    run: Callable[[TrainConfig], tuple[float, float]],
    seed: int = 0,
) -> list[dict]:
    """Sample configs from `space`, run each, and rank the results.

    `run` returns (validation score, validation loss); ranking is by
    higher score, then lower loss, then earlier trial. Each space entry
    is either a list of choices or a ("log_uniform", lo, hi) range.
    Trials that raise NumericError (divergence) stay in the report with
    score None instead of being silently dropped. The best trial is
    first in the returned list.
    """
    if n_trials <= 0:
        raise ConfigError("n_trials must be positive")
    rng = Rng(seed).fork("hyper")
    results = []
    for trial in range(n_trials):
        overrides = {}
        for name, spec in space.items():
            if isinstance(spec, tuple) and spec and spec[0] == "log_uniform":
                _, lo, hi = spec
                if not 0 < lo < hi:
                    raise ConfigError(f"bad log_uniform range for {name}: {spec}")
                overrides[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            else:
                choices = list(spec)
                if not choices:
                    raise ConfigError(f"empty choice list for {name}")
                overrides[name] = choices[rng.integer(len(choices))]
        config = replace(base_config, **overrides)
        try:
            score, loss = run(config)
        except NumericError:
            score, loss = None, None
        results.append({"trial": trial, "overrides": overrides, "score": score, "loss": loss})

    def key(r):
        failed = r["score"] is None
        return (failed, -(r["score"] or 0.0), r["loss"] or 0.0, r["trial"])

    results.sort(key=key)
    return results
