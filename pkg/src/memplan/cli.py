"""``memplan`` command line: estimate, plan, sweep.

Exit codes: 0 feasible, 1 usage or input error, 2 predicted OOM (estimate)
or CPU-offload verdict (plan).
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .estimator import estimate_peak
from .ingest import choose_chunk_size, resolve_model
from .planner import DEFAULT_BS_CAP, decide, sweep
from .profiles import (
    DEFAULT_M_BASE,
    DEFAULT_PAGE_SIZE,
    ChunkConfig,
    HardwareProfile,
    MemplanError,
    RunConfig,
    StrategySpec,
    ValidationError,
)
from .report import OutputRecord, render_csv, render_text

EXIT_OK, EXIT_INPUT, EXIT_OOM = 0, 1, 2
PAGE_SIZE_ENV = "MEMPLAN_PAGE_SIZE"

_UNITS = {"": 1, "b": 1, "k": 2**10, "kb": 2**10, "kib": 2**10, "m": 2**20, "mb": 2**20,
          "mib": 2**20, "g": 2**30, "gb": 2**30, "gib": 2**30}
_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*$")


def parse_size(text: str) -> int:
    """Parse ``17179869184``, ``16384MB`` or ``16G``; MB/GB are binary units."""
    m = _SIZE_RE.match(text)
    unit = m.group(2).lower() if m else None
    if m is None or unit not in _UNITS:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}")
    value = float(m.group(1)) * _UNITS[unit]
    if value != int(value):
        raise argparse.ArgumentTypeError(f"size {text!r} is not a whole number of bytes")
    return int(value)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True,
                        help="manifest path or bundled fixture name (e.g. opt1.3b-like)")
    common.add_argument("--gpus", type=int, default=1, help="GPU count (default 1)")
    common.add_argument("--gpu-mem", type=parse_size, required=True,
                        help="per-GPU capacity in bytes, or with MB/GB suffix")
    common.add_argument("--seq-len", type=int, default=512)
    common.add_argument("--chunk-size", type=int, help="chunk size in elements (default: searched)")
    common.add_argument("--m-base", type=parse_size,
                        help="measured baseline bytes per GPU (default: 1 GiB placeholder)")
    common.add_argument("--page-size", type=parse_size,
                        help=f"allocator page size in bytes (env {PAGE_SIZE_ENV})")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--bs-cap", type=int, default=DEFAULT_BS_CAP)
    search.add_argument("--hybrid", choices=("all", "single"), default="all",
                        help="evaluate every DPxTP factorization or only the balanced one")

    parser = argparse.ArgumentParser(prog="memplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[common], help="peak memory for one strategy")
    est.add_argument("--batch-size", type=int, required=True)
    est.add_argument("--strategy", default="cdp", help="cdp | adp | tp | hybrid:DPxTP")
    est.add_argument("--format", choices=("table", "json"), default="table")

    plan = sub.add_parser("plan", parents=[common, search], help="choose a strategy and batch size")
    plan.add_argument("--format", choices=("table", "json"), default="table")

    sw = sub.add_parser("sweep", parents=[common, search], help="plan over a grid, CSV out")
    sw.add_argument("--seq-lens", type=_int_list, help="comma list (default: --seq-len)")
    sw.add_argument("--gpu-counts", type=_int_list, help="comma list (default: --gpus)")
    sw.add_argument("--output", type=Path, help="write CSV here instead of stdout")
    return parser


def _page_size(args: argparse.Namespace) -> int:
    if args.page_size is not None:
        return args.page_size
    env = os.environ.get(PAGE_SIZE_ENV)
    if env:
        try:
            return parse_size(env)
        except argparse.ArgumentTypeError as exc:
            raise ValidationError(PAGE_SIZE_ENV, str(exc)) from None
    return DEFAULT_PAGE_SIZE


def _setup(args: argparse.Namespace, gpu_n: int | None = None):
    model = resolve_model(args.model)
    hw = HardwareProfile(
        gpu_n=args.gpus if gpu_n is None else gpu_n,
        m_total=args.gpu_mem,
        cu_p=_page_size(args),
        m_base=DEFAULT_M_BASE if args.m_base is None else args.m_base,
        m_base_calibrated=args.m_base is not None,
    )
    chunk = ChunkConfig(args.chunk_size) if args.chunk_size else choose_chunk_size(model)
    return model, hw, chunk


def _emit(rec: OutputRecord, fmt: str) -> None:
    sys.stdout.write(rec.to_json() + "\n" if fmt == "json" else render_text(rec))


def cmd_estimate(args: argparse.Namespace) -> int:
    model, hw, chunk = _setup(args)
    strat = StrategySpec.parse(args.strategy, hw.gpu_n)
    run = RunConfig(args.batch_size, args.seq_len)
    bd = estimate_peak(strat, model, chunk, model.precision, run, hw)
    rec = OutputRecord(
        command="estimate", model=model.name, hardware=hw, seq_len=run.seq_len,
        chunk_size=chunk.chunk_size, batch_size=run.batch_size,
        lm_head_tied=model.lm_head_tied, breakdowns=[bd],
    )
    _emit(rec, args.format)
    return EXIT_OK if bd.peak <= hw.m_total else EXIT_OOM


def cmd_plan(args: argparse.Namespace) -> int:
    model, hw, chunk = _setup(args)
    RunConfig(1, args.seq_len)  # validates seq_len
    rep = decide(model, chunk, model.precision, args.seq_len, hw, args.bs_cap, args.hybrid)
    chosen = next((r for r in rep.results if r.strategy == rep.chosen), None)
    rec = OutputRecord(
        command="plan", model=model.name, hardware=hw, seq_len=args.seq_len,
        chunk_size=chunk.chunk_size, lm_head_tied=model.lm_head_tied,
        breakdowns=[chosen.breakdown_at_max] if chosen and chosen.breakdown_at_max else [],
        decision=rep,
    )
    _emit(rec, args.format)
    return EXIT_OOM if rep.offload else EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    model, hw, chunk = _setup(args)
    sl_list = args.seq_lens or [args.seq_len]
    gpu_list = args.gpu_counts or [args.gpus]
    reports = sweep(model, chunk, model.precision, hw, sl_list, gpu_list, args.bs_cap, args.hybrid)
    text = render_csv(reports)
    if args.output:
        args.output.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_INPUT if all(r.error is not None for r in reports) else EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "plan": cmd_plan, "sweep": cmd_sweep}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for OOM here.
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except MemplanError as exc:
        print(f"memplan: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
