"""Command-line entry point: synth | train | eval | report.

Exit codes: 0 on success, 1 on usage errors (bad flags/arguments), 2 on
runtime failures (missing files, malformed inputs, training errors).

Commands that produce artifacts also write a provenance.json next to them
recording the exact command line, the package version, the seed, and SHA-256
digests of the input manifests, so a rerun with identical inputs is
byte-identical (no timestamps anywhere).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import tastas
from tastas import checkpoint as ck
from tastas import train as tr
from tastas.metrics import write_eval_report
from tastas.mixgen import (
    DirCorpus,
    Manifest,
    ToyCorpus,
    build_split_manifests,
    corpus_from_id,
    load_manifest,
    save_manifest,
    synthesize_manifest_tree,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_provenance(out_dir, argv, seed, inputs: dict[str, str]) -> None:
    doc = {
        "command": ["tastas", *argv],
        "version": tastas.__version__,
        "seed": seed,
        "inputs": {name: _sha256(p) for name, p in sorted(inputs.items())},
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "provenance.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _resolve_corpus(manifest: Manifest, corpus_dir):
    if corpus_dir is not None:
        return DirCorpus(corpus_dir)
    return corpus_from_id(manifest.corpus_id)


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args, argv) -> int:
    out = Path(args.out)
    if args.corpus_dir is not None:
        corpus = DirCorpus(args.corpus_dir)
    else:
        corpus = ToyCorpus(
            n_speakers=args.speakers,
            utt_per_speaker=args.utterances,
            duration_s=args.duration,
            seed=args.seed,
            sample_rate=args.sample_rate,
        )
    counts = {"train": args.train, "valid": args.valid, "test": args.test}
    manifests = build_split_manifests(
        corpus, s=args.s, counts=counts,
        snr_range_db=(args.snr[0], args.snr[1]), seed=args.seed,
    )
    out.mkdir(parents=True, exist_ok=True)
    for split, manifest in manifests.items():
        save_manifest(manifest, out / f"{split}.jsonl")
    if args.materialize:
        for split, manifest in manifests.items():
            synthesize_manifest_tree(manifest, corpus, out / "audio")
    _write_provenance(out, argv, args.seed, {})
    for split in ("train", "valid", "test"):
        if split in manifests:
            print(f"{split}: {len(manifests[split].records)} mixtures -> {out / (split + '.jsonl')}")
    return 0


# ---------------------------------------------------------------------------
# train


_CONFIG_FLAGS = [
    # (flag, config field, type)
    ("--lr", "lr", float),
    ("--batch-size", "batch_size", int),
    ("--segment-s", "segment_s", float),
    ("--max-epochs", "max_epochs", int),
    ("--patience", "patience", int),
    ("--tol", "tol", float),
    ("--lambda-id", "lambda_id", float),
    ("--grad-clip", "grad_clip", float),
    ("--seed", "seed", int),
    ("--n-basis", "n_basis", int),
    ("--kernel", "kernel", int),
    ("--feature", "feature", int),
    ("--chunk", "chunk", int),
    ("--hidden", "hidden", int),
    ("--embed-dim", "embed_dim", int),
    ("--idnet-hidden", "idnet_hidden", int),
]


def cmd_train(args, argv) -> int:
    man_dir = Path(args.manifest_dir)
    manifests = {}
    for split in ("train", "valid"):
        path = man_dir / f"{split}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"missing manifest: {path}")
        manifests[split] = load_manifest(path)
    corpus = _resolve_corpus(manifests["train"], args.corpus_dir)
    overrides = {field: getattr(args, field) for _, field, _ in _CONFIG_FLAGS}
    if args.spec is not None:
        overrides["model_spec"] = args.spec
    if args.remix:
        overrides["online_remix"] = True
    config = tr.load_config(args.config, overrides=overrides)
    out = Path(args.out)
    if args.naive:
        ckpt_path, result = tr.naive_joint_train(config, manifests, corpus, out)
        results = [result]
    else:
        ckpt_path, results = tr.run_multistep(
            config, manifests, corpus, out, resume=args.resume
        )
    summary = {
        "model_spec": config.model_spec,
        "mode": "naive" if args.naive else "multistep",
        "checkpoint": ckpt_path.name,
        "steps": [
            {
                "step": r.step,
                "epochs": r.epochs,
                "best_epoch": r.best_epoch,
                "first_valid_loss": r.valid_losses[0],
                "best_valid_loss": r.best_valid_loss,
                **r.extra,
            }
            for r in results
        ],
    }
    with open(out / "train_summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_provenance(
        out, argv, config.seed,
        {f"{split}.jsonl": man_dir / f"{split}.jsonl" for split in ("train", "valid")},
    )
    for step in summary["steps"]:
        print(
            f"step {step['step']}: {step['epochs']} epochs, "
            f"valid loss {step['first_valid_loss']:.4f} -> {step['best_valid_loss']:.4f}"
        )
    print(f"checkpoint: {ckpt_path}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args, argv) -> int:
    manifest = load_manifest(args.manifest)
    corpus = _resolve_corpus(manifest, args.corpus_dir)
    if args.self_test:
        bundle = None
    else:
        if args.checkpoint is None:
            raise ValueError("--checkpoint is required unless --self-test is given")
        bundle = ck.load_bundle(args.checkpoint)
    rows, summary = tr.evaluate_checkpoint(
        bundle, manifest, corpus,
        oracle_irm=args.oracle_irm, self_test=args.self_test,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_eval_report(out, rows, summary)
    inputs = {"manifest": args.manifest}
    if args.checkpoint is not None:
        inputs["checkpoint"] = args.checkpoint
    _write_provenance(out.parent, argv, 0, inputs)
    print(f"{summary['method']}: mean {summary['metric']} = {summary['mean_sdri']:.3f} dB "
          f"over {summary['count']} mixtures ({summary['split']})")
    if "per_stage_mean_sdri" in summary:
        for stage, val in summary["per_stage_mean_sdri"].items():
            print(f"  stage {stage}: {val:.3f} dB")
    if "oracle_irm_mean_sdri" in summary:
        print(f"  oracle IRM: {summary['oracle_irm_mean_sdri']:.3f} dB")
    return 0


# ---------------------------------------------------------------------------
# report


def _trace_section(path) -> list[str]:
    rows = tr.read_trace(path)
    if not rows:
        return [f"{path}: empty trace"]
    lines = [f"trace {path}"]
    steps = []
    for row in rows:
        if row["step"] not in steps:
            steps.append(row["step"])
    for step in steps:
        sub = [r for r in rows if r["step"] == step]
        first = sub[0]["valid_loss"]
        best = min(r["valid_loss"] for r in sub)
        best_epoch = min(r["epoch"] for r in sub if r["valid_loss"] == best)
        verdict = "improved" if best < first else "no improvement"
        lines.append(
            f"  step {step}: {len(sub)} epochs, valid loss {first:.4f} -> {best:.4f} "
            f"(best at epoch {best_epoch}, {verdict})"
        )
    total = sum(1 for _ in rows)
    lines.append(f"  total epochs: {total}, final step best valid loss: "
                 f"{min(r['valid_loss'] for r in rows if r['step'] == steps[-1]):.4f}")
    return lines


def _final_step_best(path) -> float:
    rows = tr.read_trace(path)
    last = rows[-1]["step"]
    return min(r["valid_loss"] for r in rows if r["step"] == last)


def _eval_section(path) -> list[str]:
    with open(path) as f:
        summary = json.load(f)
    lines = [f"eval {path}",
             f"  {summary['method']}: mean {summary['metric']} = "
             f"{summary['mean_sdri']:.3f} dB over {summary['count']} mixtures"]
    for stage, val in summary.get("per_stage_mean_sdri", {}).items():
        lines.append(f"  stage {stage}: {val:.3f} dB")
    if "oracle_irm_mean_sdri" in summary:
        lines.append(f"  oracle IRM: {summary['oracle_irm_mean_sdri']:.3f} dB")
    return lines


def cmd_report(args, argv) -> int:
    if not args.trace and not args.eval:
        raise ValueError("report needs at least one --trace or --eval input")
    lines: list[str] = []
    for path in args.trace or []:
        lines += _trace_section(path)
    for path in args.eval or []:
        lines += _eval_section(path)
    if len(args.trace or []) == 2:
        # earlier steps (e.g. the identity net) train against different losses,
        # so only the final step of each trace is comparable
        best_a = _final_step_best(args.trace[0])
        best_b = _final_step_best(args.trace[1])
        better = args.trace[0] if best_a <= best_b else args.trace[1]
        lines.append(
            f"comparison: final-step best valid loss {best_a:.4f} vs {best_b:.4f} "
            f"(delta {best_a - best_b:+.4f}); better: {better}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tastas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=tastas.__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="build a toy corpus and split manifests")
    p.add_argument("--out", required=True, help="output directory for manifests")
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--utterances", type=int, default=10, help="utterances per speaker")
    p.add_argument("--duration", type=float, default=4.0, help="utterance length in seconds")
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--s", type=int, default=2, help="sources per mixture")
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--valid", type=int, default=40)
    p.add_argument("--test", type=int, default=40)
    p.add_argument("--snr", type=float, nargs=2, default=[0.0, 5.0],
                   metavar=("LO", "HI"), help="per-source SNR range in dB")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus-dir", default=None,
                   help="use an existing <dir>/<speaker>/<utt>.wav corpus instead of the toy one")
    p.add_argument("--materialize", action="store_true",
                   help="also write mixture/source WAV files under <out>/audio")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the multi-step (or naive) trainer")
    p.add_argument("--manifest-dir", required=True,
                   help="directory containing train.jsonl and valid.jsonl")
    p.add_argument("--out", required=True, help="output directory for checkpoint and traces")
    p.add_argument("--spec", default=None, help='model family string, e.g. "TasTas(I, 2, 2)"')
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--corpus-dir", default=None)
    p.add_argument("--naive", action="store_true",
                   help="train all components jointly from scratch (diagnostic baseline)")
    p.add_argument("--remix", action="store_true", help="re-mix sources across the batch each step")
    p.add_argument("--resume", action="store_true", help="skip steps already in the checkpoint")
    for flag, field, typ in _CONFIG_FLAGS:
        p.add_argument(flag, dest=field, type=typ, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="JSONL report path (summary written alongside)")
    p.add_argument("--corpus-dir", default=None)
    p.add_argument("--oracle-irm", action="store_true",
                   help="add the ideal-ratio-mask oracle upper bound")
    p.add_argument("--self-test", action="store_true",
                   help="score references as their own estimates (pipeline check)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summarize loss traces and eval reports")
    p.add_argument("--trace", action="append", default=[], help="loss trace CSV (repeatable)")
    p.add_argument("--eval", action="append", default=[], help="eval summary JSON (repeatable)")
    p.add_argument("--out", default=None, help="also write the report text to this file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except Exception as exc:  # runtime failures exit 2 with a one-line reason
        print(f"tastas {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
