"""Serializable output records and their JSON, CSV and text renderings."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from importlib import resources
from typing import Any, Sequence

from . import __version__
from .planner import DecisionReport, StrategyResult
from .profiles import HardwareProfile, MemoryBreakdown, StrategyKind, StrategySpec

SCHEMA_VERSION = 1
MB = 2**20

BREAKDOWN_FIELDS = (
    "base", "params", "params_half", "params_full", "optimizer_states",
    "outputs", "lm_head", "lm_head_params", "tp_backward_buffer", "peak",
)

CSV_COLUMNS = (
    "seq_len", "gpu_n",
    "cdp_max_batch", "cdp_peak_mb",
    "adp_max_batch", "adp_peak_mb",
    "tp_max_batch", "tp_peak_mb",
    "hybrid_layout", "hybrid_max_batch", "hybrid_peak_mb",
    "chosen", "chosen_batch", "error",
)


def to_mb(nbytes: int) -> float:
    """Bytes to MB (2**20 bytes), rounded half-up to one decimal."""
    return float((Decimal(nbytes) / MB).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def parse_strategy_label(label: str) -> StrategySpec:
    if label == StrategyKind.CPU_OFFLOAD.value:
        return StrategySpec.cpu_offload()
    kind, _, dims = label.partition(":")
    if kind == StrategyKind.HYBRID.value:
        dp, tp = dims.split("x")
        return StrategySpec.hybrid(int(dp), int(tp))
    return StrategySpec(StrategyKind(kind))


def breakdown_to_dict(bd: MemoryBreakdown, tied: bool = False) -> dict[str, Any]:
    out = bd.as_dict()
    out["mb"] = {name: to_mb(getattr(bd, name)) for name in BREAKDOWN_FIELDS}
    if tied:
        # Alternative reading for tied heads: lm_head params already counted in embed_p.
        out["peak_if_lm_head_shared"] = bd.peak - bd.lm_head_params
    return out


def breakdown_from_dict(data: dict[str, Any]) -> MemoryBreakdown:
    return MemoryBreakdown(strategy=data["strategy"], **{k: data[k] for k in BREAKDOWN_FIELDS})


def _result_to_dict(res: StrategyResult, tied: bool) -> dict[str, Any]:
    bd = res.breakdown_at_max
    return {
        "strategy": res.strategy.label,
        "dp_n": res.strategy.dp_n,
        "tp_n": res.strategy.tp_n,
        "max_batch": res.max_batch,
        "score": str(res.score),
        "breakdown": None if bd is None else breakdown_to_dict(bd, tied),
    }


def decision_to_dict(rep: DecisionReport, tied: bool = False) -> dict[str, Any]:
    return {
        "seq_len": rep.seq_len,
        "gpu_n": rep.gpu_n,
        "results": [_result_to_dict(r, tied) for r in rep.results],
        "chosen": rep.chosen.label,
        "chosen_batch": rep.chosen_batch,
        "error": rep.error,
    }


def decision_from_dict(data: dict[str, Any]) -> DecisionReport:
    results = []
    for r in data["results"]:
        strat = parse_strategy_label(r["strategy"])
        strat = StrategySpec(strat.kind, r["dp_n"], r["tp_n"])
        bd = None if r["breakdown"] is None else breakdown_from_dict(r["breakdown"])
        results.append(StrategyResult(strat, r["max_batch"], Fraction(r["score"]), bd))
    chosen = parse_strategy_label(data["chosen"])
    if chosen.kind is not StrategyKind.CPU_OFFLOAD:
        chosen = next(r.strategy for r in results if r.strategy.label == data["chosen"])
    return DecisionReport(
        data["seq_len"], data["gpu_n"], tuple(results), chosen, data["chosen_batch"],
        data.get("error"),
    )


@dataclass
class OutputRecord:
    command: str
    model: str
    hardware: HardwareProfile
    seq_len: int
    chunk_size: int
    batch_size: int | None = None
    lm_head_tied: bool = False
    breakdowns: list[MemoryBreakdown] = field(default_factory=list)
    decision: DecisionReport | None = None
    version: str = __version__

    @property
    def m_base_note(self) -> str:
        return "calibrated" if self.hardware.m_base_calibrated else "default placeholder"

    def to_dict(self) -> dict[str, Any]:
        hw = self.hardware
        return {
            "schema_version": SCHEMA_VERSION,
            "tool": "memplan",
            "version": self.version,
            "command": self.command,
            "input": {
                "model": self.model,
                "lm_head_tied": self.lm_head_tied,
                "hardware": {
                    "gpu_n": hw.gpu_n,
                    "m_total": hw.m_total,
                    "m_total_mb": to_mb(hw.m_total),
                    "cu_p": hw.cu_p,
                    "m_base": hw.m_base,
                },
                "run": {
                    "seq_len": self.seq_len,
                    "batch_size": self.batch_size,
                    "chunk_size": self.chunk_size,
                },
            },
            "m_base_note": self.m_base_note,
            "breakdowns": [breakdown_to_dict(b, self.lm_head_tied) for b in self.breakdowns],
            "decision": None if self.decision is None
            else decision_to_dict(self.decision, self.lm_head_tied),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> OutputRecord:
        inp = data["input"]
        hw = inp["hardware"]
        return cls(
            command=data["command"],
            model=inp["model"],
            hardware=HardwareProfile(
                gpu_n=hw["gpu_n"], m_total=hw["m_total"], cu_p=hw["cu_p"], m_base=hw["m_base"],
                m_base_calibrated=data["m_base_note"] == "calibrated",
            ),
            seq_len=inp["run"]["seq_len"],
            chunk_size=inp["run"]["chunk_size"],
            batch_size=inp["run"]["batch_size"],
            lm_head_tied=inp["lm_head_tied"],
            breakdowns=[breakdown_from_dict(b) for b in data["breakdowns"]],
            decision=None if data["decision"] is None else decision_from_dict(data["decision"]),
            version=data["version"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def load_output_schema() -> dict[str, Any]:
    res = resources.files("memplan") / "data" / "output.schema.json"
    return json.loads(res.read_text(encoding="utf-8"))


# -- text -------------------------------------------------------------------

def render_text(rec: OutputRecord) -> str:
    hw = rec.hardware
    lines = [
        f"model     {rec.model}" + ("  (lm_head tied to input embedding)" if rec.lm_head_tied else ""),
        f"hardware  {hw.gpu_n} GPU(s) x {hw.m_total} B ({to_mb(hw.m_total)} MB), page {hw.cu_p} B",
        f"m_base    {hw.m_base} B ({to_mb(hw.m_base)} MB) [{rec.m_base_note}]",
        f"run       seq_len={rec.seq_len} chunk_size={rec.chunk_size}"
        + (f" batch_size={rec.batch_size}" if rec.batch_size is not None else ""),
        "",
    ]
    for bd in rec.breakdowns:
        lines.append(f"strategy {bd.strategy}")
        lines.append(f"  {'component':<20}{'bytes':>16}{'MB':>12}")
        for name in BREAKDOWN_FIELDS:
            value = getattr(bd, name)
            lines.append(f"  {name:<20}{value:>16}{to_mb(value):>12.1f}")
        verdict = "fits" if bd.peak <= hw.m_total else "OOM"
        lines.append(f"  -> {verdict} ({bd.peak} of {hw.m_total} B)")
        if rec.lm_head_tied:
            alt = bd.peak - bd.lm_head_params
            lines.append(f"  peak if lm_head shares the embedding: {alt} B ({to_mb(alt)} MB)")
        lines.append("")
    if rec.decision is not None:
        lines.extend(_render_decision(rec.decision))
    return "\n".join(lines).rstrip() + "\n"


def _render_decision(rep: DecisionReport) -> list[str]:
    lines = [f"  {'strategy':<14}{'max_batch':>10}{'score':>10}{'peak_bytes':>16}{'peak_MB':>12}"]
    for r in rep.results:
        peak = r.breakdown_at_max.peak if r.breakdown_at_max else None
        lines.append(
            f"  {r.strategy.label:<14}{r.max_batch:>10}{str(r.score):>10}"
            f"{'-' if peak is None else peak:>16}{'-' if peak is None else f'{to_mb(peak):.1f}':>12}"
        )
    if rep.offload:
        lines.append("chosen: cpu_offload (no GPU strategy fits batch size 1 under TP)")
    else:
        lines.append(f"chosen: {rep.chosen.label} batch_size={rep.chosen_batch}")
    return lines


# -- CSV --------------------------------------------------------------------

def _best_hybrid(rep: DecisionReport) -> StrategyResult | None:
    hybrids = [r for r in rep.results if r.strategy.kind is StrategyKind.HYBRID]
    # Results are already larger-dp_n first, and max() keeps the first of equals.
    return max(hybrids, key=lambda r: r.score) if hybrids else None


def csv_row(rep: DecisionReport) -> dict[str, Any]:
    row: dict[str, Any] = {col: "" for col in CSV_COLUMNS}
    row["seq_len"] = rep.seq_len
    row["gpu_n"] = rep.gpu_n
    if rep.error is not None:
        row["error"] = rep.error
        return row
    picks: dict[str, StrategyResult | None] = {
        kind.value: next((r for r in rep.results if r.strategy.kind is kind), None)
        for kind in (StrategyKind.CDP, StrategyKind.ADP, StrategyKind.TP)
    }
    picks["hybrid"] = _best_hybrid(rep)
    for key, res in picks.items():
        if res is None:
            continue
        row[f"{key}_max_batch"] = res.max_batch
        if res.breakdown_at_max is not None:
            row[f"{key}_peak_mb"] = f"{to_mb(res.breakdown_at_max.peak):.1f}"
    if picks["hybrid"] is not None:
        row["hybrid_layout"] = picks["hybrid"].strategy.label
    row["chosen"] = rep.chosen.label
    row["chosen_batch"] = rep.chosen_batch
    return row


def render_csv(reports: Sequence[DecisionReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(csv_row(rep))
    return buf.getvalue()
