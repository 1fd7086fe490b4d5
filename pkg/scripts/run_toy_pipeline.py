#!/usr/bin/env python3
"""Run the whole toy pipeline in one go: synth -> train -> eval -> report.

Thin wrapper over the `tastas` CLI; every step prints the equivalent command
line so the script doubles as usage documentation. The default profile matches
the acceptance-test training run (a few minutes on one CPU core); --fast
shrinks everything to a smoke test that finishes in well under a minute.
"""

import argparse
import sys
from pathlib import Path

from tastas.cli import main as tastas


def run(args: list[str]) -> None:
    print("$ tastas " + " ".join(args), flush=True)
    rc = tastas(args)
    if rc != 0:
        sys.exit(rc)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy", help="working directory for all artifacts")
    ap.add_argument("--s", type=int, default=3, help="sources per mixture")
    ap.add_argument("--spec", default="TasTas(I, 2, 2)")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--fast", action="store_true", help="tiny model / tiny corpus smoke run")
    args = ap.parse_args()

    out = Path(args.out)
    data, run_dir = out / "data", out / "run"

    if args.fast:
        synth = ["--speakers", "6", "--utterances", "4", "--duration", "1.0",
                 "--train", "8", "--valid", "4", "--test", "4"]
        dims = ["--n-basis", "16", "--kernel", "4", "--feature", "8", "--chunk", "6",
                "--hidden", "8", "--embed-dim", "8", "--idnet-hidden", "8",
                "--segment-s", "0.25", "--batch-size", "4", "--max-epochs", "2",
                "--patience", "2"]
    else:
        synth = ["--speakers", "8", "--utterances", "10", "--duration", "4.0",
                 "--train", "200", "--valid", "40", "--test", "40"]
        dims = ["--n-basis", "32", "--kernel", "16", "--feature", "32", "--chunk", "32",
                "--hidden", "32", "--embed-dim", "16", "--idnet-hidden", "32",
                "--segment-s", "1.0", "--batch-size", "8", "--max-epochs", "25",
                "--patience", "4", "--tol", "1e-3"]

    run(["synth", "--out", str(data), "--s", str(args.s), "--seed", "11", *synth])
    run(["train", "--manifest-dir", str(data), "--out", str(run_dir),
         "--spec", args.spec, "--seed", str(args.seed), *dims])
    run(["eval", "--checkpoint", str(run_dir / "checkpoint.ckpt"),
         "--manifest", str(data / "test.jsonl"), "--out", str(run_dir / "eval_test.jsonl"),
         "--oracle-irm"])
    run(["report", "--trace", str(run_dir / "trace.csv"),
         "--eval", str(run_dir / "eval_test.jsonl.summary.json"),
         "--out", str(run_dir / "report.txt")])
    print(f"\nartifacts under {out}/")


if __name__ == "__main__":
    main()
