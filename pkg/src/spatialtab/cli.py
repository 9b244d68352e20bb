"""Command-line interface: gen, train, eval, extract, bench, gradcheck.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .datagen import GenProfile, LayoutError, gt_sidecar_path, load_gt_tables, write_corpus
from .docmodel import CorpusError, load_corpus
from .encoder import EncoderConfig, build_vocab, extend_vocab, forward_batch
from .evaluation import evaluate
from .gradcheck import gradcheck
from .losses import LossConfig
from .reconstruct import export, key_values_json, reconstruct
from .trainer import CheckpointError, TrainConfig, load_checkpoint, save_checkpoint, train


class UsageError(Exception):
    """Bad flag values detected after parsing."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def _int_range(text: str) -> tuple[int, int]:
    vals = _int_list(text)
    if len(vals) != 2:
        raise UsageError(f"expected lo,hi, got {text!r}")
    return vals[0], vals[1]


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"invalid JSON in {path}: {e.msg}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    kwargs = {}
    if args.columns:
        kwargs["columns"] = _int_range(args.columns)
    if args.rows:
        kwargs["item_rows"] = _int_range(args.rows)
    if args.multiline_p is not None:
        kwargs["multiline_cell_p"] = args.multiline_p
    profile = GenProfile(profile=args.profile, seed=args.seed, **kwargs)
    gt_path = write_corpus(profile, args.count, args.out)
    print(f"wrote {args.count} documents to {args.out} (ground truth: {gt_path})")
    return 0


def _configs_from_file(path: str | None, phase: str) -> tuple[EncoderConfig, TrainConfig]:
    obj = _load_json(path) if path else {}
    enc = EncoderConfig.from_json(obj.get("encoder", {})) if obj.get("encoder") else EncoderConfig()
    tcfg_obj = dict(obj.get("train", {}))
    tcfg_obj["phase"] = phase
    tcfg = TrainConfig.from_json(tcfg_obj)
    return enc, tcfg


def cmd_train(args) -> int:
    enc_cfg, train_cfg = _configs_from_file(args.config, args.phase)
    corpus = load_corpus(args.data)
    mix = load_corpus(args.mix) if args.mix else None
    if args.phase == "finetune" and train_cfg.mix_fraction > 0 and not mix:
        raise UsageError("finetune with mix_fraction > 0 requires --mix")

    if args.init_ckpt:
        params, _, tokenizer, _ = load_checkpoint(args.init_ckpt)
        params, tokenizer = extend_vocab(
            params, tokenizer, corpus, seed=train_cfg.seed
        )
        result = train(corpus, train_cfg, tokenizer, init=params,
                       mix_corpus=mix, log_path=args.log, progress=_progress(args))
    else:
        tokenizer = build_vocab(list(corpus) + list(mix or []))
        result = train(corpus, train_cfg, tokenizer, encoder_config=enc_cfg,
                       mix_corpus=mix, log_path=args.log, progress=_progress(args))
    save_checkpoint(result.params, result.opt_state, tokenizer, train_cfg, args.out)
    last = result.log[-1] if result.log else {}
    print(f"trained {len(result.log)} steps; final loss {last.get('total', float('nan')):.4f}; "
          f"checkpoint: {args.out}")
    return 0


def _progress(args):
    if not getattr(args, "verbose", False):
        return None

    def report(record):
        print(f"step {record['step']}: loss {record['total']:.4f} lr {record['lr']:.2e}",
              file=sys.stderr)

    return report


def cmd_eval(args) -> int:
    docs = load_corpus(args.data)
    gt = load_gt_tables(args.gt)
    params = tokenizer = None
    if not args.oracle:
        params, _, tokenizer, _ = load_checkpoint(args.ckpt)
    report = evaluate(docs, gt, params, tokenizer, oracle=args.oracle)
    payload = report.to_json()
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for head in ("label", "column", "row"):
        macro = payload["heads"][head]["macro"]["f1"]
        print(f"{head} macro F1: {macro:.4f}")
    print(f"TEDS mean: {report.teds_mean:.4f}")
    print(f"fully correct tables: {report.fully_correct_rate:.4f}")
    print(f"kv exact match: {report.exact_match:.4f}")
    return 0


def cmd_extract(args) -> int:
    docs = load_corpus(args.doc)
    if not docs:
        raise UsageError(f"no documents in {args.doc}")
    if args.index >= len(docs):
        raise UsageError(f"--index {args.index} out of range ({len(docs)} documents)")
    doc = docs[args.index]
    params, _, tokenizer, _ = load_checkpoint(args.ckpt)
    from .encoder import predict_tags

    tags = predict_tags(doc, params, tokenizer)
    table = reconstruct(doc, tags, params.vocabs)
    data = export(table, args.format)
    Path(args.out).write_bytes(data)
    if args.format == "csv":
        side = Path(args.out).with_suffix(Path(args.out).suffix + ".kv.json")
        side.write_bytes(key_values_json(table))
        print(f"wrote {args.out} and {side}")
    else:
        print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    params, _, tokenizer, _ = load_checkpoint(args.ckpt)
    batch_sizes = _int_list(args.batch_sizes)
    seq_lens = _int_list(args.seq_lens)
    if not batch_sizes or not seq_lens:
        raise UsageError("empty --batch-sizes or --seq-lens")

    max_needed = max(seq_lens)
    if max_needed > params.config.max_seq_len:
        # Timing-only: tile the position table so long sequences can run.
        reps = -(-max_needed // params.config.max_seq_len)
        params.tensors["pos_emb"] = np.tile(params.tensors["pos_emb"], (reps, 1))[:max_needed]
        params.config.max_seq_len = max_needed

    rng = np.random.default_rng(0)
    rows = []
    for seq_len in seq_lens:
        for batch in batch_sizes:
            ids = rng.integers(3, max(4, params.config.vocab_size), size=(batch, seq_len))
            x0 = rng.integers(0, 900, size=(batch, seq_len))
            y0 = rng.integers(0, 900, size=(batch, seq_len))
            w = rng.integers(0, 100, size=(batch, seq_len))
            h = rng.integers(0, 100, size=(batch, seq_len))
            buckets = np.stack([x0, y0, x0 + w, y0 + h, w, h], axis=-1)
            mask = np.ones((batch, seq_len), dtype=bool)
            rates = []
            for rep in range(args.warmup + args.repeats):
                t0 = time.perf_counter()
                forward_batch(params, ids, buckets, mask)
                dt = time.perf_counter() - t0
                if rep >= args.warmup:
                    rates.append(batch * seq_len / dt)
            rows.append({
                "batch_size": batch,
                "seq_len": seq_len,
                "tokens_per_second": float(np.mean(rates)),
                "tokens_per_second_std": float(np.std(rates)),
            })

    header = f"{'Batch Size':>10}  {'Sequence Length':>15}  {'Tokens Per Second':>18}  {'Std':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['batch_size']:>10}  {r['seq_len']:>15}  "
            f"{r['tokens_per_second']:>18,.0f}  {r['tokens_per_second_std']:>10,.0f}"
        )
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"rows": rows, "repeats": args.repeats, "warmup": args.warmup}, fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        obj = _load_json(args.config)
        enc = EncoderConfig.from_json(obj.get("encoder", obj))
    else:
        enc = EncoderConfig(d=24, n_layers=1, n_heads=4, max_seq_len=16)
    report = gradcheck(enc, seed=args.seed)
    for entry in sorted(report.entries, key=lambda e: e.name):
        status = "ok" if entry.max_rel_err < args.tol else "FAIL"
        print(f"{entry.name:<20} max rel err {entry.max_rel_err:.3e}  [{status}]")
    if not report.passed(args.tol):
        print(f"gradient check failed at tolerance {args.tol}", file=sys.stderr)
        return 2
    print(f"all {len(report.entries)} tensors within {args.tol}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialtab",
        description="Layout-aware table and key-value extraction via token tagging.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", help="generate a synthetic corpus with ground truth")
    p.add_argument("--profile", choices=("pretrain", "finance"), required=True)
    p.add_argument("--count", type=int, required=True, help="number of documents (>= 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output corpus path (.jsonl)")
    p.add_argument("--columns", help="column count range lo,hi (default 2,10)")
    p.add_argument("--rows", help="item row count range lo,hi (default 1,8)")
    p.add_argument("--multiline-p", type=float, default=None, dest="multiline_p",
                   help="multi-line cell probability (default 0.2)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model phase")
    p.add_argument("--data", required=True, help="training corpus (.jsonl)")
    p.add_argument("--mix", help="structure-only corpus mixed in during finetune")
    p.add_argument("--config", help="JSON config with encoder/train sections")
    p.add_argument("--phase", choices=("pretrain", "finetune"), required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--init-ckpt", dest="init_ckpt", help="checkpoint to continue from")
    p.add_argument("--log", help="per-step JSONL loss log path")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against ground truth")
    p.add_argument("--data", required=True, help="tagged corpus (.jsonl)")
    p.add_argument("--gt", required=True, help="ground-truth tables (.gt.jsonl)")
    p.add_argument("--ckpt", help="model checkpoint")
    p.add_argument("--report", required=True, help="metrics report output (.json)")
    p.add_argument("--oracle", action="store_true",
                   help="score gold tags instead of model predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", help="run one document through the model and export")
    p.add_argument("--doc", required=True, help="document corpus (.jsonl)")
    p.add_argument("--index", type=int, default=0, help="document index within the file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bench", help="forward-only throughput benchmark")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--batch-sizes", default="1,8,64", dest="batch_sizes")
    p.add_argument("--seq-lens", default="128,256,512,1024,2048", dest="seq_lens")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--out", help="JSON output path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config", help="JSON config with an encoder section")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else 1
        return 0 if code == 0 else 1
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (CorpusError, CheckpointError, LayoutError, ValueError,
            FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
