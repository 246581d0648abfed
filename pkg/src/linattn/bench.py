"""Benchmark orchestration: run kernel timings and write them as CSV.

The CSV schema is TimingRecord.CSV_HEADER, one row per (kernel, sequence
length, pass).  Timings are wall-clock medians on whatever core the
process lands on; the interesting quantities are the ratios between rows,
not the absolute nanoseconds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from threadpoolctl import threadpool_limits

from .kernels import KERNEL_KINDS, AttentionConfig, TimingRecord, bench_kernel
from .matrixops import DomainError


@dataclass
class RunConfig:
    """Everything one CLI invocation needs, regardless of subcommand."""

    command: str
    ns: tuple[int, ...] = (1024, 2048, 4096, 8192)
    d: int = 64
    B: int | None = None
    lam: float = 1.0
    precision: str = "reference"
    repeats: int = 5
    seed: int = 0
    out: Path | None = None
    kernels: tuple[str, ...] = ("left", "lightning")
    passes: tuple[str, ...] = ("forward", "backward")
    threads: int = 1  # BLAS threads while timing; 1 keeps scaling shapes algorithmic
    # train-toy extras
    corpus: Path | None = None
    steps: int = 2000
    model_args: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        bad = [k for k in self.kernels if k not in KERNEL_KINDS]
        if bad:
            raise DomainError(f"unknown kernel(s) {bad}; valid kinds are {list(KERNEL_KINDS)}")
        bad = [p for p in self.passes if p not in ("forward", "backward")]
        if bad:
            raise DomainError(f"unknown pass(es) {bad}")
        if not self.ns:
            raise DomainError("need at least one sequence length")
        if self.threads < 1:
            raise DomainError(f"thread count must be >= 1, got {self.threads}")


def run_bench(cfg: RunConfig, progress=None) -> list[TimingRecord]:
    records: list[TimingRecord] = []
    with threadpool_limits(limits=cfg.threads):
        for kind in cfg.kernels:
            for n in cfg.ns:
                acfg = AttentionConfig(n=n, d=cfg.d, B=cfg.B, lam=cfg.lam, precision=cfg.precision)
                for pass_name in cfg.passes:
                    rec = bench_kernel(kind, acfg, repeats=cfg.repeats, backward=(pass_name == "backward"), seed=cfg.seed)
                    records.append(rec)
                    if progress is not None:
                        progress(rec)
    return records


def write_csv(records: list[TimingRecord], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(TimingRecord.CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


_INT_COLUMNS = ("n", "d", "B", "median_ns", "aux_bytes")
_FLOAT_COLUMNS = ("lambda", "per_token_ns")


def read_csv(path: Path) -> list[dict]:
    """Load a benchmark CSV, checking the schema and typing numeric columns.

    Raises FileNotFoundError for a missing file, DomainError when the
    header lacks a required column or the file has no data rows.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = TimingRecord.CSV_HEADER.split(",")
        missing = [c for c in required if c not in header]
        if missing:
            raise DomainError(f"benchmark CSV {path} is missing column(s): {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise DomainError(f"benchmark CSV {path} has no data rows")
    for row in rows:
        try:
            for col in _INT_COLUMNS:
                row[col] = int(row[col])
            for col in _FLOAT_COLUMNS:
                row[col] = float(row[col])
        except ValueError as exc:
            raise DomainError(f"benchmark CSV {path}: bad numeric value ({exc})") from None
    return rows
