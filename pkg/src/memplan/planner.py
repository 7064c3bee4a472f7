"""Largest OOM-safe batch per strategy and the strategy decision.

Each strategy is scored by the samples it processes per iteration at its
largest feasible batch: CDP gets ``bs * gpu_n * 3/2`` (ZeRO-3 costs 1.5x the
communication of plain DP), ADP ``bs * gpu_n``, TP ``bs``, DP+TP
``bs * dp_n``. The best score wins, ties going to CDP, ADP, TP, DP+TP in
that order. If TP cannot fit even one sample, the verdict is CPU offloading.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .estimator import StaticTerms, peak_curve, static_terms
from .profiles import (
    PREFERENCE,
    ChunkConfig,
    HardwareProfile,
    MemoryBreakdown,
    MemplanError,
    ModelProfile,
    PrecisionSpec,
    StrategyKind,
    StrategySpec,
    ValidationError,
)

DEFAULT_BS_CAP = 65_536
CDP_CREDIT = Fraction(3, 2)


class CensoredSearchError(MemplanError):
    """The batch search hit ``bs_cap`` while the strategy still fit."""


@dataclass(frozen=True)
class StrategyResult:
    strategy: StrategySpec
    max_batch: int
    score: Fraction
    breakdown_at_max: MemoryBreakdown | None


@dataclass(frozen=True)
class DecisionReport:
    seq_len: int
    gpu_n: int
    results: tuple[StrategyResult, ...]
    chosen: StrategySpec
    chosen_batch: int
    error: str | None = None

    @property
    def offload(self) -> bool:
        return self.chosen.kind is StrategyKind.CPU_OFFLOAD


def search_max_batch(
    curve: Callable[[int], MemoryBreakdown], m_total: int, bs_cap: int = DEFAULT_BS_CAP
) -> tuple[int, MemoryBreakdown | None]:
    """Exponential then binary search over a nondecreasing peak curve.

    Returns ``(bs, breakdown_at_bs)``; ``(0, None)`` when one sample already
    overflows. Same answer as stepping bs = 1, 2, 3, ... until overflow.
    """
    if bs_cap < 1:
        raise ValidationError("bs_cap", f"must be >= 1, got {bs_cap}")
    first = curve(1)
    if first.peak > m_total:
        return 0, None
    lo, lo_bd = 1, first
    hi = 2
    while True:
        if hi >= bs_cap:
            capped = curve(bs_cap)
            if capped.peak <= m_total:
                raise CensoredSearchError(
                    f"{capped.strategy}: still fits at bs_cap={bs_cap}; raise the cap"
                )
            hi = bs_cap
            break
        bd = curve(hi)
        if bd.peak > m_total:
            break
        lo, lo_bd = hi, bd
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        bd = curve(mid)
        if bd.peak <= m_total:
            lo, lo_bd = mid, bd
        else:
            hi = mid
    return lo, lo_bd


def max_feasible_batch(
    strategy: StrategySpec,
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    sl: int,
    hw: HardwareProfile,
    bs_cap: int = DEFAULT_BS_CAP,
) -> int:
    curve = peak_curve(strategy, model, chunk, prec, sl, hw)
    return search_max_batch(curve, hw.m_total, bs_cap)[0]


def score_strategy(strategy: StrategySpec, max_batch: int, gpu_n: int) -> Fraction:
    if max_batch < 0:
        raise ValidationError("max_batch", f"must be >= 0, got {max_batch}")
    kind = strategy.kind
    if kind is StrategyKind.CDP:
        return max_batch * gpu_n * CDP_CREDIT
    if kind is StrategyKind.ADP:
        return Fraction(max_batch * gpu_n)
    if kind is StrategyKind.TP:
        return Fraction(max_batch)
    if kind is StrategyKind.HYBRID:
        return Fraction(max_batch * strategy.dp_n)
    return Fraction(0)


def hybrid_layouts(gpu_n: int, mode: str = "all") -> list[StrategySpec]:
    """Nontrivial dp_n x tp_n factorizations, larger dp_n first.

    ``mode="single"`` keeps only the most balanced split.
    """
    layouts = [
        StrategySpec.hybrid(dp, gpu_n // dp)
        for dp in range(gpu_n // 2, 1, -1)
        if gpu_n % dp == 0 and gpu_n // dp >= 2
    ]
    if mode == "all":
        return layouts
    if mode == "single":
        if not layouts:
            return []
        return [min(layouts, key=lambda s: (abs(s.dp_n - s.tp_n), -s.dp_n))]
    raise ValidationError("hybrid", f"expected 'all' or 'single', got {mode!r}")


def candidate_strategies(gpu_n: int, hybrid: str = "all") -> list[StrategySpec]:
    if gpu_n == 1:
        # ADP, TP and DP+TP all collapse to the CDP formula on one GPU.
        return [StrategySpec.cdp(1)]
    return [
        StrategySpec.cdp(gpu_n),
        StrategySpec.adp(gpu_n),
        StrategySpec.tp(gpu_n),
        *hybrid_layouts(gpu_n, hybrid),
    ]


def select(results: Sequence[StrategyResult]) -> tuple[StrategySpec, int]:
    """Pick the winning strategy from results listed in preference order."""
    if not results:
        raise ValidationError("results", "nothing to choose from")
    rank = {kind: i for i, kind in enumerate(PREFERENCE)}
    ordered = sorted(
        enumerate(results), key=lambda ir: (rank[ir[1].strategy.kind], -ir[1].strategy.dp_n, ir[0])
    )
    best = max(ordered, key=lambda ir: ir[1].score)[1]
    # TP is the fallback gate; on one GPU the CDP row stands in for it.
    tp = next((r for r in results if r.strategy.kind is StrategyKind.TP), results[0])
    if tp.score == 0:
        return StrategySpec.cpu_offload(), 0
    return best.strategy, best.max_batch


def decide(
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    sl: int,
    hw: HardwareProfile,
    bs_cap: int = DEFAULT_BS_CAP,
    hybrid: str = "all",
    static: StaticTerms | None = None,
) -> DecisionReport:
    if static is None:
        static = static_terms(model, chunk, prec, hw)
    results = []
    for strat in candidate_strategies(hw.gpu_n, hybrid):
        curve = peak_curve(strat, model, chunk, prec, sl, hw, static)
        bs, bd = search_max_batch(curve, hw.m_total, bs_cap)
        results.append(StrategyResult(strat, bs, score_strategy(strat, bs, hw.gpu_n), bd))
    chosen, batch = select(results)
    return DecisionReport(sl, hw.gpu_n, tuple(results), chosen, batch)


def sweep(
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    hw: HardwareProfile,
    sl_list: Sequence[int],
    gpu_list: Sequence[int],
    bs_cap: int = DEFAULT_BS_CAP,
    hybrid: str = "all",
) -> list[DecisionReport]:
    """Run ``decide`` over an (sl, gpu_n) grid, sl-major.

    A failing cell yields a report carrying ``error`` and no results.
    """
    if not sl_list or not gpu_list:
        raise ValidationError("grid", "sequence-length and GPU-count lists must be nonempty")
    # Parameter and optimizer terms depend on neither sl nor gpu_n.
    static = static_terms(model, chunk, prec, hw)
    reports = []
    for sl in sl_list:
        for gpu_n in gpu_list:
            try:
                cell_hw = dataclasses.replace(hw, gpu_n=gpu_n)
                reports.append(decide(model, chunk, prec, sl, cell_hw, bs_cap, hybrid, static))
            except MemplanError as exc:
                reports.append(DecisionReport(
                    sl, gpu_n, (), StrategySpec.cpu_offload(), 0, error=str(exc)
                ))
    return reports
