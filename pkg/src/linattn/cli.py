"""Command line front end.

Subcommands:
  verify     run self-check suites, exit 0 when everything passes, 1 otherwise
  bench      time kernels over a sweep of sequence lengths, write a CSV
  train-toy  train the small language model on a byte corpus
  plot       turn a benchmark CSV into SVG charts

Output locations default under the LINATTN_OUT environment variable when
set, else the current directory.  Exit codes: 0 success, 1 verification
failure, 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .bench import RunConfig, run_bench, write_csv
from .matrixops import DomainError, ShapeError
from .model import Adam, ModelConfig, TnlModel, save_checkpoint, train_step
from .plotsvg import plot_csv
from .verify import SUITES, format_report, run_suites

USAGE_ERROR = 2


def _out_root() -> Path:
    return Path(os.environ.get("LINATTN_OUT", "."))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linattn", description="Tiled causal linear attention toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run equivalence and invariant suites")
    p_verify.add_argument("--suite", choices=sorted(SUITES), default=None, help="run a single suite (default: all)")
    p_verify.add_argument("--verbose", action="store_true", help="print every check line, not just failures")

    p_bench = sub.add_parser("bench", help="time kernels and write a CSV")
    p_bench.add_argument("--kernels", default="left,lightning", help="comma list: left,right,lightning,lightning-decay")
    p_bench.add_argument("--n", default="1024,2048,4096,8192", help="comma list of sequence lengths")
    p_bench.add_argument("--d", type=int, default=64, help="feature dimension")
    p_bench.add_argument("--B", type=int, default=None, help="block size (default: min(d, n))")
    p_bench.add_argument("--lambda", dest="lam", type=float, default=1.0, help="decay rate in (0, 1]")
    p_bench.add_argument("--precision", choices=("reference", "working"), default="reference")
    p_bench.add_argument("--repeats", type=int, default=5, help="timed repetitions per point (min 3)")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--passes", default="forward,backward", help="comma list: forward,backward")
    p_bench.add_argument("--threads", type=int, default=1,
                         help="BLAS threads while timing (default 1; >1 voids scaling-shape comparisons)")
    p_bench.add_argument("--out", type=Path, default=None, help="CSV path (default: $LINATTN_OUT/bench.csv)")

    p_train = sub.add_parser("train-toy", help="train the small model on a byte corpus")
    p_train.add_argument("--corpus", type=Path, required=True, help="plain file read as bytes")
    p_train.add_argument("--steps", type=int, default=2000)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--d-model", type=int, default=32)
    p_train.add_argument("--layers", type=int, default=2)
    p_train.add_argument("--heads", type=int, default=2)
    p_train.add_argument("--d-ff", type=int, default=64)
    p_train.add_argument("--seq-len", type=int, default=128)
    p_train.add_argument("--batch", type=int, default=4)
    p_train.add_argument("--lr", type=float, default=3e-4)
    p_train.add_argument("--block", type=int, default=None)
    p_train.add_argument("--log-every", type=int, default=100)
    p_train.add_argument("--out", type=Path, default=None, help="output dir (default: $LINATTN_OUT/train-toy)")

    p_plot = sub.add_parser("plot", help="render benchmark CSV to SVG charts")
    p_plot.add_argument("csv", type=Path, help="CSV produced by the bench subcommand")
    p_plot.add_argument("--out", type=Path, default=None, help="output dir (default: $LINATTN_OUT/plots)")
    return parser


def cmd_verify(args) -> int:
    names = None if args.suite is None else [args.suite]
    results = run_suites(names)
    print(format_report(results, verbose=args.verbose))
    return 0 if all(s.passed for s in results) else 1


def cmd_bench(args) -> int:
    cfg = RunConfig(
        command="bench",
        ns=tuple(int(s) for s in args.n.split(",") if s),
        d=args.d,
        B=args.B,
        lam=args.lam,
        precision=args.precision,
        repeats=args.repeats,
        seed=args.seed,
        kernels=tuple(s.strip() for s in args.kernels.split(",") if s.strip()),
        passes=tuple(s.strip() for s in args.passes.split(",") if s.strip()),
        threads=args.threads,
        out=args.out if args.out is not None else _out_root() / "bench.csv",
    )

    def progress(rec):
        print(f"  {rec.kernel:16s} n={rec.n:<7d} {rec.pass_name:8s} median {rec.median_ns / 1e6:10.3f} ms "
              f"({rec.per_token_ns:9.1f} ns/token, aux {rec.aux_bytes} B)")

    records = run_bench(cfg, progress=progress)
    write_csv(records, cfg.out)
    print(f"wrote {len(records)} rows to {cfg.out}")
    return 0


def cmd_train_toy(args) -> int:
    if not args.corpus.is_file():
        print(f"error: corpus file not found: {args.corpus}", file=sys.stderr)
        return USAGE_ERROR
    data = np.frombuffer(args.corpus.read_bytes(), dtype=np.uint8)
    window = args.seq_len + 1
    if data.size < window + 1:
        print(f"error: corpus has {data.size} bytes, need at least {window + 1}", file=sys.stderr)
        return USAGE_ERROR

    cfg = ModelConfig(d_model=args.d_model, layers=args.layers, heads=args.heads,
                      d_ff=args.d_ff, vocab=256, block=args.block)
    model = TnlModel.init(cfg, seed=args.seed)
    optimizer = Adam(lr=args.lr)
    rng = np.random.default_rng(args.seed)

    out_dir = args.out if args.out is not None else _out_root() / "train-toy"
    out_dir.mkdir(parents=True, exist_ok=True)

    losses = []
    t0 = time.perf_counter()
    for step in range(1, args.steps + 1):
        starts = rng.integers(0, data.size - window, size=args.batch)
        batch = np.stack([data[s:s + window] for s in starts]).astype(np.int64)
        loss = train_step(batch, model, args.lr, optimizer)
        losses.append(loss)
        if args.log_every and (step % args.log_every == 0 or step == 1):
            rate = step / (time.perf_counter() - t0)
            print(f"step {step:5d}  loss {loss:.4f}  ({rate:.1f} steps/s)")

    curve = out_dir / "losses.csv"
    with open(curve, "w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(losses, start=1):
            fh.write(f"{i},{loss!r}\n")
    save_checkpoint(model, out_dir / "model")

    first = float(np.mean(losses[:10])) if len(losses) >= 10 else losses[0]
    last = float(np.mean(losses[-10:])) if len(losses) >= 10 else losses[-1]
    print(f"start loss {losses[0]:.4f}  final loss {losses[-1]:.4f}  "
          f"(smoothed {first:.4f} -> {last:.4f}, drop {100 * (1 - last / first):.1f}%)")
    print(f"wrote {curve} and checkpoint {out_dir / 'model'}.bin/.json")
    return 0


def cmd_plot(args) -> int:
    out_dir = args.out if args.out is not None else _out_root() / "plots"
    written = plot_csv(args.csv, out_dir)
    for p in written:
        print(f"wrote {p}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "verify": cmd_verify,
        "bench": cmd_bench,
        "train-toy": cmd_train_toy,
        "plot": cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except (DomainError, ShapeError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
