"""Command-line entry point.

Subcommands: synth, train, eval, predict, bench, flops, sweep-tau. Every
run that writes artifacts also writes a run_config.json echo of the fully
resolved settings so it can be reproduced. Default output directory:
--out flag, else $SPANDEC_OUTPUT_DIR, else ./runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .corpus import (
    SyntheticSpec,
    generate_synthetic,
    load_conll,
    save_conll,
    scan_label_set,
)
from .encoder import EncoderConfig
from .errors import SpandecError
from .evaluate import benchmark_throughput, format_table, gold_entities, micro_f1
from .flops import PRESETS, cost_table, marker_tokens
from .infer import predict_batch, sweep_tau, write_jsonl
from .models import STRATEGIES, ModelConfig
from .train import TrainConfig, desk_train_config, train

ENV_OUTPUT_DIR = "SPANDEC_OUTPUT_DIR"


def _out_dir(args, command: str) -> Path:
    base = args.out or os.environ.get(ENV_OUTPUT_DIR) or "runs"
    path = Path(base)
    if args.out is None:
        path = path / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def _echo_config(out: Path, command: str, payload: dict) -> None:
    _write_json(out / "run_config.json", {"command": command, **payload})


# -- synth -------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    if args.spec:
        spec = SyntheticSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    else:
        spec = SyntheticSpec()
    overrides = {}
    if args.sentences is not None:
        overrides["num_sentences"] = args.sentences
    if args.min_len is not None or args.max_len is not None:
        lo, hi = spec.sentence_len_range
        overrides["sentence_len_range"] = (
            args.min_len if args.min_len is not None else lo,
            args.max_len if args.max_len is not None else hi,
        )
    if overrides:
        import dataclasses

        spec = dataclasses.replace(spec, **overrides)
    corpus = generate_synthetic(spec, args.seed)
    out_path = Path(args.out_file)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_conll(corpus, out_path)
    echo = out_path.with_suffix(out_path.suffix + ".spec.json")
    echo.write_text(
        json.dumps({"seed": args.seed, **json.loads(spec.to_json())}, indent=2,
                   sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {len(corpus)} sentences to {out_path}")
    return 0


# -- train -------------------------------------------------------------------------


def _model_config_from_args(args, label_set, max_positions) -> ModelConfig:
    if args.model_config:
        raw = json.loads(Path(args.model_config).read_text(encoding="utf-8"))
        return ModelConfig.from_dict(raw)
    encoder = EncoderConfig(
        num_blocks=args.num_blocks,
        hidden_dim=args.hidden_dim,
        num_heads=args.num_heads,
        ffn_dim=args.ffn_dim,
        vocab_size=1,  # resolved from the train vocabulary
        max_positions=max_positions,
        max_span_len=args.max_span_len,
    )
    return ModelConfig(
        strategy=args.strategy,
        encoder=encoder,
        label_set=label_set,
        decoder_blocks=args.decoder_blocks if args.strategy in ("spandec", "sf_spandec") else None,
        encoder_blocks_used=args.encoder_blocks_used,
        sf_threshold=args.tau,
    )


def _train_config_from_args(args) -> TrainConfig:
    if args.train_config:
        raw = json.loads(Path(args.train_config).read_text(encoding="utf-8"))
        return TrainConfig.from_dict(raw)
    base = desk_train_config()
    overrides = {
        "epochs": args.epochs,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "base_lr": args.lr,
    }
    import dataclasses

    return dataclasses.replace(base, **{k: v for k, v in overrides.items() if v is not None})


def _cmd_train(args) -> int:
    out = _out_dir(args, "train")
    label_set = scan_label_set(args.data, args.dev)
    train_corpus = load_conll(args.data, label_set)
    dev_corpus = load_conll(args.dev, label_set)
    longest = max(len(s) for s in train_corpus + dev_corpus)
    model_config = _model_config_from_args(args, label_set, max_positions=longest + 8)
    train_config = _train_config_from_args(args)
    checkpoint_path = out / "checkpoint.npz"
    report, model = train(model_config, train_config, train_corpus, dev_corpus, checkpoint_path)
    _write_json(out / "train_report.json", report.to_dict())
    _echo_config(
        out,
        "train",
        {
            "data": str(args.data),
            "dev": str(args.dev),
            "model_config": model.config.to_dict(),
            "train_config": train_config.to_dict(),
        },
    )
    print(
        f"best dev F1 {report.best_dev_f1:.4f} at epoch {report.best_epoch}; "
        f"checkpoint: {checkpoint_path}"
    )
    return 0


# -- eval / predict / bench -----------------------------------------------------------


def _load_model_and_corpus(args):
    model = ckpt.load(args.checkpoint)
    corpus = load_conll(args.data, model.config.label_set)
    return model, corpus


def _cmd_eval(args) -> int:
    out = _out_dir(args, "eval")
    model, corpus = _load_model_and_corpus(args)
    predictions = predict_batch(model, corpus, tau=args.tau)
    result = micro_f1(gold_entities(corpus), predictions)
    retained = float(np.mean([p.retained_fraction for p in predictions]))
    payload = {**result.to_dict(), "mean_retained_fraction": retained}
    _write_json(out / "eval_report.json", payload)
    _echo_config(
        out, "eval",
        {"checkpoint": str(args.checkpoint), "data": str(args.data), "tau": args.tau},
    )
    rows = [
        {"type": name, **vars(t)} for name, t in sorted(result.per_type.items())
    ]
    rows.append(
        {
            "type": "micro",
            "precision": result.precision,
            "recall": result.recall,
            "f1": result.f1,
            "support": result.true_positives + result.false_negatives,
            "predicted": result.true_positives + result.false_positives,
        }
    )
    print(format_table(rows, ["type", "precision", "recall", "f1", "support", "predicted"]))
    return 0


def _cmd_predict(args) -> int:
    model, corpus = _load_model_and_corpus(args)
    predictions = predict_batch(model, corpus, tau=args.tau)
    out_path = Path(args.out_file)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_path, corpus, predictions)
    print(f"wrote {len(predictions)} predictions to {out_path}")
    return 0


def _cmd_bench(args) -> int:
    out = _out_dir(args, "bench")
    model, corpus = _load_model_and_corpus(args)
    report = benchmark_throughput(
        model, corpus, batch_size=args.batch_size, warmup=args.warmup,
        repeats=args.repeats, tau=args.tau,
    )
    _write_json(out / "bench_report.json", report.to_dict())
    _echo_config(
        out, "bench",
        {
            "checkpoint": str(args.checkpoint),
            "data": str(args.data),
            "batch_size": args.batch_size,
            "warmup": args.warmup,
            "repeats": args.repeats,
        },
    )
    runs = ", ".join(f"{v:.2f}" for v in report.per_run)
    print(
        f"{report.strategy}: {report.samples_per_second:.2f} samples/s "
        f"(runs: {runs}; batch {report.batch_size})"
    )
    return 0


# -- flops -------------------------------------------------------------------------


def _cmd_flops(args) -> int:
    presets = list(PRESETS) if args.preset == "all" else [args.preset]
    strategies = list(STRATEGIES) if args.strategy == "all" else [args.strategy]
    custom = None
    if args.blocks or args.hidden:
        if not all([args.blocks, args.hidden, args.heads, args.ffn]):
            raise SpandecError(
                "custom config needs --blocks, --hidden, --heads and --ffn"
            )
        custom = {"custom": {"L": args.blocks, "H_dim": args.hidden,
                             "A": args.heads, "F_dim": args.ffn}}
        if args.preset != "all":
            presets = [args.preset] if args.preset in PRESETS else []
    markers = marker_tokens(args.markers, "strict" if args.strict_marker_tokens else "paper")
    rows = cost_table(
        presets, strategies, seq_len=args.seq_len, markers=markers,
        retention=args.retention, custom=custom,
    )
    columns = ["config", "strategy", "blocks", "seq_len", "markers", "retention", "gflops"]
    print(format_table(rows, columns))
    if args.csv:
        _write_csv(Path(args.csv), rows, columns)
    if args.json:
        _write_json(Path(args.json), rows)
    return 0


# -- sweep-tau ----------------------------------------------------------------------


def _cmd_sweep_tau(args) -> int:
    out = _out_dir(args, "sweep-tau")
    model, corpus = _load_model_and_corpus(args)
    taus = np.linspace(args.tau_from, args.tau_to, args.steps)
    rows = sweep_tau(model, corpus, taus)
    columns = ["tau", "retention", "gold_survival", "f1"]
    _write_json(out / "sweep_tau.json", rows)
    _write_csv(out / "sweep_tau.csv", rows, columns)
    _echo_config(
        out, "sweep-tau",
        {
            "checkpoint": str(args.checkpoint),
            "data": str(args.data),
            "from": args.tau_from,
            "to": args.tau_to,
            "steps": args.steps,
        },
    )
    print(format_table(rows, columns))
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spandec",
        description="Span-based NER strategies, cost model, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    synth.add_argument("--out", dest="out_file", required=True, metavar="FILE")
    synth.add_argument("--spec", help="SyntheticSpec JSON file")
    synth.add_argument("--sentences", type=int)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--min-len", type=int)
    synth.add_argument("--max-len", type=int)
    synth.set_defaults(func=_cmd_synth)

    tr = sub.add_parser("train", help="train a strategy on CoNLL data")
    tr.add_argument("--data", required=True)
    tr.add_argument("--dev", required=True)
    tr.add_argument("--out")
    tr.add_argument("--strategy", choices=STRATEGIES, default="spandec")
    tr.add_argument("--model-config", help="ModelConfig JSON file (overrides flags)")
    tr.add_argument("--train-config", help="TrainConfig JSON file (overrides flags)")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--num-blocks", type=int, default=3)
    tr.add_argument("--hidden-dim", type=int, default=64)
    tr.add_argument("--num-heads", type=int, default=4)
    tr.add_argument("--ffn-dim", type=int, default=256)
    tr.add_argument("--decoder-blocks", type=int, default=1)
    tr.add_argument("--encoder-blocks-used", type=int)
    tr.add_argument("--max-span-len", type=int, default=8)
    tr.add_argument("--tau", type=float, default=0.5)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="entity-level strict micro F1")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--tau", type=float)
    ev.add_argument("--out")
    ev.set_defaults(func=_cmd_eval)

    pr = sub.add_parser("predict", help="write JSONL predictions")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", dest="out_file", required=True, metavar="FILE")
    pr.add_argument("--tau", type=float)
    pr.set_defaults(func=_cmd_predict)

    be = sub.add_parser("bench", help="throughput benchmark")
    be.add_argument("--checkpoint", required=True)
    be.add_argument("--data", required=True)
    be.add_argument("--batch-size", type=int, default=8)
    be.add_argument("--warmup", type=int, default=2)
    be.add_argument("--repeats", type=int, default=3)
    be.add_argument("--tau", type=float)
    be.add_argument("--out")
    be.set_defaults(func=_cmd_bench)

    fl = sub.add_parser("flops", help="analytical GFLOPs table")
    fl.add_argument("--preset", default="all",
                    choices=sorted(PRESETS) + ["all"])
    fl.add_argument("--strategy", default="all",
                    choices=list(STRATEGIES) + ["all"])
    fl.add_argument("--seq-len", type=int, default=44)
    fl.add_argument("--markers", type=int, default=324,
                    help="marker token count M (M/2 pairs)")
    fl.add_argument("--strict-marker-tokens", action="store_true",
                    help="treat --markers as pair count: use 2 tokens per pair")
    fl.add_argument("--retention", type=float, default=0.15)
    fl.add_argument("--blocks", type=int, help="custom config: block count")
    fl.add_argument("--hidden", type=int, help="custom config: hidden size")
    fl.add_argument("--heads", type=int, help="custom config: attention heads")
    fl.add_argument("--ffn", type=int, help="custom config: FFN inner size")
    fl.add_argument("--csv", help="also write the table as CSV")
    fl.add_argument("--json", help="also write the table as JSON")
    fl.set_defaults(func=_cmd_flops)

    sw = sub.add_parser("sweep-tau", help="filter threshold sweep")
    sw.add_argument("--checkpoint", required=True)
    sw.add_argument("--data", required=True)
    sw.add_argument("--from", dest="tau_from", type=float, default=0.0)
    sw.add_argument("--to", dest="tau_to", type=float, default=1.0)
    sw.add_argument("--steps", type=int, default=21)
    sw.add_argument("--out")
    sw.set_defaults(func=_cmd_sweep_tau)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SpandecError, FileNotFoundError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
