"""Command-line entry point.

Subcommands: synth, train, generate, eval, predict-attrs, ablate. Every
command resolves defaults < config file < explicit flags, logs the
resolved configuration and seed to stderr as one JSON line, and is
deterministic for a fixed seed. Exit codes: 2 for bad flags or config,
1 for runtime failures.

The ablation helpers live here as library functions so tests can drive
the same code paths in-process.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Manifest,
    SynthSpec,
    Vocabulary,
    build_vocab,
    inject_noise,
    load_embeddings,
    load_video_features,
    predict_attributes_nn,
    read_features,
    synth_dataset,
)
from .decoding import beam_search
from .exceptions import ConfigError, ConsistencyError, VidcapError
from .metrics import (
    EvalCorpus,
    evaluate,
    format_report,
    read_corpus,
    tokenize,
    write_corpus,
    write_report,
)
from .model import Branches, FeatureSet, ModelConfig
from .numerics import Rng
from .training import EvalExample, Sample, TrainConfig, train


def _log(event: str, payload: dict) -> None:
    sys.stderr.write(json.dumps({"event": event, **payload}, sort_keys=True, default=str) + "\n")


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _resolve(args: argparse.Namespace, config: dict, name: str, default):
    """Precedence: explicit flag > config file > default."""
    flag_value = getattr(args, name, None)
    if flag_value is not None:
        return flag_value
    if name in config:
        return config[name]
    return default


def _train_config_from(args: argparse.Namespace, config: dict) -> TrainConfig:
    base = TrainConfig()
    fields = {}
    for name in (
        "embed_dim", "hidden_dim", "learning_rate", "dropout", "batch_size",
        "max_epochs", "patience", "seed", "branches", "fusion_activation",
        "clip_norm", "rms_decay", "rms_epsilon", "eval_every", "eval_beam",
        "eval_max_len",
    ):
        fields[name] = _resolve(args, config, name, getattr(base, name))
    cot = _resolve(args, config, "cell_output_tanh", base.cell_output_tanh)
    fields["cell_output_tanh"] = bool(cot)
    unknown = set(config) - set(fields) - {
        "min_count", "noise", "noise_seed", "attributes_file", "embeddings",
    }
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**fields)


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class DatasetBundle:
    """A manifest resolved into memory: one vocabulary, per-video
    features with encoded attributes, training samples, and evaluation
    examples per split."""

    root: Path
    manifest: Manifest
    vocab: Vocabulary
    features: dict[str, FeatureSet]
    samples: list[Sample]
    evals: dict[str, list[EvalExample]]


def load_bundle(
    root,
    min_count: int = 1,
    attribute_noise: float = 0.0,
    noise_seed: int = 0,
    attributes_override: Optional[dict[str, list[str]]] = None,
) -> DatasetBundle:
    """Load manifest + features, build the vocabulary from the training
    split, and materialize samples.

    The vocabulary always comes from the clean training captions and
    attributes, so noise levels and attribute overrides share ids and
    stay comparable. Noise replaces each video's attribute tokens once,
    deterministically in the video id (train and eval then see the same
    corrupted attributes).
    """
    root = Path(root)
    manifest = Manifest.load(root / "manifest.json")
    train_records = manifest.split("train")
    if not train_records:
        raise ConfigError("manifest has no training videos")
    vocab = build_vocab(
        (cap for rec in train_records for cap in rec.captions),
        (tok for rec in train_records for tok in rec.attributes),
        min_count=min_count,
    )
    noise_rng = Rng(noise_seed)
    features: dict[str, FeatureSet] = {}
    for rec in manifest.videos:
        attrs = list(rec.attributes)
        if attributes_override is not None and rec.video_id in attributes_override:
            attrs = list(attributes_override[rec.video_id])
        if attribute_noise > 0.0 and attrs:
            attrs = inject_noise(
                attrs, attribute_noise, vocab, noise_rng.fork(f"attr/{rec.video_id}")
            )
        fs = load_video_features(rec, root)
        attr_ids = [vocab.id_of(t) for a in attrs for t in tokenize(a)]
        features[rec.video_id] = FeatureSet(
            temporal=fs.temporal, motion=fs.motion, attributes=attr_ids
        )
    samples = [
        Sample(features=features[rec.video_id], caption=vocab.encode_caption(cap))
        for rec in train_records
        for cap in rec.captions
    ]
    evals = {
        name: [
            EvalExample(features=features[rec.video_id], references=list(rec.captions))
            for rec in manifest.split(name)
        ]
        for name in ("train", "validation", "test")
    }
    return DatasetBundle(
        root=root, manifest=manifest, vocab=vocab,
        features=features, samples=samples, evals=evals,
    )


def decode_split(
    bundle: DatasetBundle,
    split: str,
    params,
    cfg: ModelConfig,
    beam_width: int = 5,
    max_len: int = 30,
    length_exponent: float = 0.0,
) -> list[tuple[str, str, list[str]]]:
    """Beam-decode every video of a split, ordered by video id.
    Returns (video_id, candidate text, references) records."""
    records = bundle.manifest.split(split)
    if not records:
        raise ConfigError(f"split {split!r} is empty")
    out = []
    for rec in records:
        hyp = beam_search(
            bundle.features[rec.video_id], params, cfg,
            beam_width=beam_width, max_len=max_len, length_exponent=length_exponent,
        )
        text = " ".join(bundle.vocab.token_of(t) for t in hyp.tokens)
        out.append((rec.video_id, text, list(rec.captions)))
    return out


def _meta_path(checkpoint_path) -> str:
    return str(checkpoint_path) + ".meta.json"


def _save_model(out_path, result, vocab: Vocabulary) -> None:
    save_checkpoint(out_path, result.params, result.dims, vocab.sha256())
    meta = {
        "dims": asdict(result.dims),
        "train_config": asdict(result.config),
        "vocab": vocab.to_dict(),
        "best_epoch": result.best_epoch,
        "best_score": result.best_score,
        "stopped_early": result.stopped_early,
    }
    with open(_meta_path(out_path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_model(checkpoint_path, branches: Optional[str] = None):
    """Checkpoint + sidecar -> (params, eval ModelConfig, vocab)."""
    meta_path = _meta_path(checkpoint_path)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"missing checkpoint sidecar {meta_path}: {exc}") from exc
    vocab = Vocabulary.from_dict(meta["vocab"])
    params, dims = load_checkpoint(checkpoint_path, expected_vocab_hash=vocab.sha256())
    tc = meta["train_config"]
    cfg = ModelConfig(
        dims=dims,
        branches=Branches.parse(branches or tc["branches"]),
        fusion_activation=tc["fusion_activation"],
        cell_output_tanh=tc["cell_output_tanh"],
        dropout=0.0,
    )
    return params, cfg, vocab


# ---------------------------------------------------------------------------
# ablation experiments


def run_condition(
    data_root,
    base_config: TrainConfig,
    branches: str,
    attribute_noise: float,
    seed: int,
    min_count: int = 1,
    split: str = "test",
):
    """Train one configuration and score it on a held-out split.
    Returns (TrainResult, ScoreReport, corpus records)."""
    bundle = load_bundle(
        data_root, min_count=min_count,
        attribute_noise=attribute_noise, noise_seed=seed,
    )
    config = replace(base_config, branches=branches, seed=seed, history_path=None)
    result = train(
        bundle.samples, bundle.evals["validation"], len(bundle.vocab),
        bundle.vocab.token_of, config,
    )
    eval_cfg = replace(result.config.model_config(result.dims), dropout=0.0)
    records = decode_split(
        bundle, split, result.params, eval_cfg,
        beam_width=config.eval_beam, max_len=config.eval_max_len,
    )
    corpus = EvalCorpus.from_strings({vid: (cand, refs) for vid, cand, refs in records})
    return result, evaluate(corpus), records


CONDITIONS = {
    "T": ("T", 0.0),
    "M": ("M", 0.0),
    "TM": ("TM", 0.0),
    "TM-HQ": ("TMS", 0.0),
}


def ablation_matrix(
    data_root,
    base_config: TrainConfig,
    conditions: Sequence[str],
    seeds: Sequence[int],
    min_count: int = 1,
) -> list[dict]:
    """One row per requested condition: per-seed reports plus the mean
    of each metric over seeds. No silent skips - a failing condition
    raises."""
    rows = []
    for name in conditions:
        if name not in CONDITIONS:
            raise ConfigError(f"unknown ablation condition {name!r} (have {sorted(CONDITIONS)})")
        branches, noise = CONDITIONS[name]
        per_seed = []
        for seed in seeds:
            _, report, _ = run_condition(
                data_root, base_config, branches, noise, seed, min_count=min_count
            )
            per_seed.append(report.to_dict())
        mean = {
            key: sum(r[key] for r in per_seed) / len(per_seed) for key in per_seed[0]
        }
        rows.append({"condition": name, "seeds": list(seeds), "mean": mean, "runs": per_seed})
    return rows


def noise_sweep(
    data_root,
    base_config: TrainConfig,
    levels: Sequence[float],
    seeds: Sequence[int],
    min_count: int = 1,
) -> list[dict]:
    """Robustness table: semantic branch on, attributes corrupted at
    each noise level (applied identically at train and eval time)."""
    rows = []
    for level in levels:
        if not 0.0 <= level <= 1.0:
            raise ConfigError(f"noise level must be in [0, 1], got {level}")
        per_seed = []
        for seed in seeds:
            _, report, _ = run_condition(
                data_root, base_config, "TMS", level, seed, min_count=min_count
            )
            per_seed.append(report.to_dict())
        mean = {
            key: sum(r[key] for r in per_seed) / len(per_seed) for key in per_seed[0]
        }
        rows.append({"noise": level, "seeds": list(seeds), "mean": mean, "runs": per_seed})
    return rows


def _format_table(rows: list[dict], label_key: str) -> str:
    metrics = ("bleu1", "bleu2", "bleu3", "bleu4", "meteor_lite", "rouge_l", "cider")
    header = f"{label_key:<10} " + " ".join(f"{m:>11}" for m in metrics)
    lines = [header]
    for row in rows:
        label = str(row[label_key])
        lines.append(
            f"{label:<10} " + " ".join(f"{row['mean'][m]:>11.6f}" for m in metrics)
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    spec_fields = {}
    defaults = SynthSpec()
    for name in (
        "n_videos", "n_subjects", "n_verbs", "n_frames", "n_clips",
        "temporal_dim", "motion_dim", "feature_noise", "bleed", "captions_per_video",
    ):
        spec_fields[name] = _resolve(args, config, name, getattr(defaults, name))
    hq = _resolve(args, config, "hq_attributes", defaults.hq_attributes)
    spec = SynthSpec(hq_attributes=bool(hq), **spec_fields)
    seed = _resolve(args, config, "seed", 0)
    _log("synth", {"out": args.out, "seed": seed, "spec": asdict(spec)})
    manifest = synth_dataset(args.out, seed, spec)
    _log("synth-done", {"split_sizes": manifest.split_sizes()})
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    tc = _train_config_from(args, config)
    min_count = _resolve(args, config, "min_count", 1)
    noise = _resolve(args, config, "noise", 0.0)
    noise_seed = _resolve(args, config, "noise_seed", tc.seed)
    attributes_file = _resolve(args, config, "attributes_file", None)
    embeddings = _resolve(args, config, "embeddings", None)
    history = args.history or str(args.out) + ".history.jsonl"
    tc = replace(tc, history_path=history)
    override = None
    if attributes_file:
        with open(attributes_file, "r", encoding="utf-8") as fh:
            override = json.load(fh)
    _log("train", {
        "data": args.data, "out": args.out, "seed": tc.seed, "config": asdict(tc),
        "min_count": min_count, "noise": noise, "attributes_file": attributes_file,
        "embeddings": embeddings,
    })
    bundle = load_bundle(
        args.data, min_count=min_count, attribute_noise=noise,
        noise_seed=noise_seed, attributes_override=override,
    )
    _log("dataset", {
        "vocab_size": len(bundle.vocab),
        "split_sizes": bundle.manifest.split_sizes(),
        "samples": len(bundle.samples),
    })
    pretrained = None
    if embeddings:
        pretrained, coverage = load_embeddings(
            embeddings, bundle.vocab, tc.embed_dim, Rng(tc.seed).fork("pretrained"),
        )
        _log("embeddings", {"path": embeddings, "coverage": coverage})
    result = train(
        bundle.samples, bundle.evals["validation"], len(bundle.vocab),
        bundle.vocab.token_of, tc, pretrained_emb=pretrained,
    )
    _save_model(args.out, result, bundle.vocab)
    _log("train-done", {
        "best_epoch": result.best_epoch, "best_val_meteor": result.best_score,
        "epochs_run": len(result.history), "stopped_early": result.stopped_early,
        "checkpoint": args.out, "history": history,
    })
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    beam = _resolve(args, config, "beam", 5)
    max_len = _resolve(args, config, "max_len", 30)
    length_exponent = _resolve(args, config, "length_exponent", 0.0)
    split = _resolve(args, config, "split", "test")
    min_count = _resolve(args, config, "min_count", 1)
    noise = _resolve(args, config, "noise", 0.0)
    noise_seed = _resolve(args, config, "noise_seed", 0)
    attributes_file = _resolve(args, config, "attributes_file", None)
    override = None
    if attributes_file:
        with open(attributes_file, "r", encoding="utf-8") as fh:
            override = json.load(fh)
    _log("generate", {
        "data": args.data, "checkpoint": args.checkpoint, "split": split,
        "beam": beam, "max_len": max_len, "noise": noise, "out": args.out,
    })
    params, cfg, ckpt_vocab = _load_model(args.checkpoint, branches=args.branches)
    bundle = load_bundle(
        args.data, min_count=min_count, attribute_noise=noise,
        noise_seed=noise_seed, attributes_override=override,
    )
    # token and attribute ids index the embedding table, so decoding
    # through a vocabulary other than the training one would silently
    # permute the output language
    if bundle.vocab.sha256() != ckpt_vocab.sha256():
        raise ConsistencyError(
            f"dataset {args.data} builds a different vocabulary than the "
            f"checkpoint was trained with; refusing to decode"
        )
    records = decode_split(
        bundle, split, params, cfg,
        beam_width=beam, max_len=max_len, length_exponent=length_exponent,
    )
    write_corpus(args.out, records)
    _log("generate-done", {"videos": len(records), "out": args.out})
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    _log("eval", {"corpus": args.corpus, "out": args.out})
    corpus = read_corpus(args.corpus)
    report = evaluate(corpus)
    if args.out:
        write_report(report, args.out)
    print(format_report(report))
    return 0


def cmd_predict_attrs(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    split = _resolve(args, config, "split", "test")
    k = _resolve(args, config, "k", 1)
    top_m = _resolve(args, config, "top_m", 2)
    pooled = bool(_resolve(args, config, "pooled", False))
    _log("predict-attrs", {
        "data": args.data, "split": split, "k": k, "top_m": top_m,
        "pooled": pooled, "out": args.out,
    })
    root = Path(args.data)
    manifest = Manifest.load(root / "manifest.json")
    bank = [
        (read_features(root / rec.temporal_path), rec.attributes)
        for rec in manifest.split("train")
    ]
    predictions = {}
    for rec in manifest.split(split):
        predictions[rec.video_id] = predict_attributes_nn(
            read_features(root / rec.temporal_path), bank, k=k, top_m=top_m, pooled=pooled
        )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(predictions, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log("predict-attrs-done", {"videos": len(predictions), "out": args.out})
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    tc = _train_config_from(args, config)
    min_count = _resolve(args, config, "min_count", 1)
    try:
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2]
        levels = (
            [float(x) for x in args.noise_levels.split(",")]
            if args.noise_levels is not None
            else [0.0, 0.25, 0.5, 0.75, 1.0]
        )
    except ValueError as exc:
        raise ConfigError(f"bad numeric list flag: {exc}") from exc
    conditions = args.conditions.split(",") if args.conditions else list(CONDITIONS)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _log("ablate", {
        "data": args.data, "seeds": seeds, "conditions": conditions,
        "noise_levels": levels, "config": asdict(tc), "out_dir": str(out_dir),
    })
    rows = ablation_matrix(args.data, tc, conditions, seeds, min_count=min_count)
    with open(out_dir / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(_format_table(rows, "condition"))
    if levels:
        noise_rows = noise_sweep(args.data, tc, levels, seeds, min_count=min_count)
        with open(out_dir / "noise.json", "w", encoding="utf-8") as fh:
            json.dump(noise_rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(_format_table(noise_rows, "noise"))
    _log("ablate-done", {"out_dir": str(out_dir)})
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--dropout", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--branches", choices=["T", "M", "S", "TM", "TS", "MS", "TMS"])
    p.add_argument("--fusion-activation", choices=["identity", "tanh"], dest="fusion_activation")
    p.add_argument("--cell-output-tanh", action="store_const", const=True, dest="cell_output_tanh")
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--eval-beam", type=int, dest="eval_beam")
    p.add_argument("--eval-max-len", type=int, dest="eval_max_len")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--noise", type=float)
    p.add_argument("--noise-seed", type=int, dest="noise_seed")
    p.add_argument("--attributes-file", dest="attributes_file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidcap",
        description="Multi-branch attention video captioner (train, decode, score).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-videos", type=int, dest="n_videos")
    p.add_argument("--n-subjects", type=int, dest="n_subjects")
    p.add_argument("--n-verbs", type=int, dest="n_verbs")
    p.add_argument("--n-frames", type=int, dest="n_frames")
    p.add_argument("--n-clips", type=int, dest="n_clips")
    p.add_argument("--temporal-dim", type=int, dest="temporal_dim")
    p.add_argument("--motion-dim", type=int, dest="motion_dim")
    p.add_argument("--feature-noise", type=float, dest="feature_noise")
    p.add_argument("--bleed", type=float)
    p.add_argument("--captions-per-video", type=int, dest="captions_per_video")
    p.add_argument("--no-hq", action="store_const", const=False, dest="hq_attributes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--history")
    p.add_argument("--embeddings")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="beam-decode a split into a corpus file")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--length-exponent", type=float, dest="length_exponent")
    p.add_argument("--branches", choices=["T", "M", "S", "TM", "TS", "MS", "TMS"])
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--noise", type=float)
    p.add_argument("--noise-seed", type=int, dest="noise_seed")
    p.add_argument("--attributes-file", dest="attributes_file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict-attrs", help="nearest-neighbor attribute transfer")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.add_argument("--k", type=int)
    p.add_argument("--top-m", type=int, dest="top_m")
    p.add_argument("--pooled", action="store_const", const=True)
    p.set_defaults(func=cmd_predict_attrs)

    p = sub.add_parser("ablate", help="branch-ablation matrix and attribute-noise sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--config")
    p.add_argument("--seeds", help="comma-separated, default 0,1,2")
    p.add_argument("--conditions", help="comma-separated subset of T,M,TM,TM-HQ")
    p.add_argument("--noise-levels", dest="noise_levels", help="comma-separated fractions")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except VidcapError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
