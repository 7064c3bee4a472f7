"""Peak GPU memory formulas for fine-tuning a decoder-only transformer.

Every function here is pure and works in exact integer bytes. Each modelled
allocation is rounded up to the CUDA allocator page (``hw.cu_p``); the raw
lm_head parameter bytes are the one addend left unaligned.

Strategy peaks, per GPU::

    single/CDP  base + p + os + out + lm
    ADP         base + p16 + ceil((p32 + os) / gpu_n) + out + lm
    TP          base + ceil((p + os) / gpu_n) + out + lm + back
    DP+TP       peak_ADP - floor(p16 * tp_n / gpu_n) + back(tp_n)
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational
from typing import Callable, NamedTuple

from .profiles import (
    OPTIMIZER_KINDS,
    ChunkConfig,
    HardwareProfile,
    MemoryBreakdown,
    MemplanError,
    ModelProfile,
    PrecisionSpec,
    RunConfig,
    StrategyKind,
    StrategySpec,
    ValidationError,
)


class ProfileInconsistencyError(MemplanError):
    """A formula produced an impossible value, which points at a bad profile."""


def _ceil_div(num: int, den: int) -> int:
    return -(-num // den)


def align_to_page(raw: int | Rational, page: int) -> int:
    """Round ``raw`` bytes up to the nearest multiple of ``page``.

    ``raw`` may be a rational (e.g. a ``Fraction``); the result is an int.

    >>> align_to_page(1, 2097152)
    2097152
    """
    if page < 1:
        raise ValidationError("page", f"page size must be >= 1, got {page}")
    if isinstance(raw, int):
        return _ceil_div(raw, page) * page
    raw = Fraction(raw)
    return _ceil_div(raw.numerator, raw.denominator * page) * page


class ParamBytes(NamedTuple):
    total: int  # m_p
    half: int  # m_p,16
    full: int  # m_p,32


def _chunked_elements(model: ModelProfile, chunk: ChunkConfig) -> int:
    # Embeddings sit outside the chunks; everything else pads to whole chunks.
    cs = chunk.chunk_size
    return model.embed_p + _ceil_div(model.other_p, cs) * cs


def estimate_params(
    model: ModelProfile, chunk: ChunkConfig, prec: PrecisionSpec, hw: HardwareProfile
) -> ParamBytes:
    """Chunk-managed fp16 param/grad plus fp32 master params (m_p and its split).

    The fp16 part is aligned on its own; the fp32 part is what remains of
    m_p, so ``half + full == total`` and the sharded formulas reduce to the
    single-GPU one at gpu_n = 1.
    """
    elements = _chunked_elements(model, chunk)
    total = align_to_page(elements * (prec.half_bytes + prec.full_bytes), hw.cu_p)
    half = align_to_page(elements * prec.half_bytes, hw.cu_p)
    return ParamBytes(total=total, half=half, full=total - half)


def estimate_optimizer_states(
    model: ModelProfile, prec: PrecisionSpec, hw: HardwareProfile
) -> int:
    """Momentum + variance, allocated per Embedding/Linear tensor (m_os).

    Bias, LayerNorm and other small tensors fit in fragmentation slack and
    are not charged.
    """
    per_elem = 2 * prec.full_bytes
    return sum(
        align_to_page(op.param_count * per_elem, hw.cu_p)
        for op in model.operators
        if op.kind in OPTIMIZER_KINDS
    )


def estimate_outputs(
    model: ModelProfile, run: RunConfig, prec: PrecisionSpec, hw: HardwareProfile
) -> int:
    """Embedding and layer outputs retained under gradient checkpointing (m_out)."""
    raw = (model.e_n + model.l_n) * run.batch_size * run.seq_len * model.o_n * prec.half_bytes
    return align_to_page(raw, hw.cu_p)


def estimate_lm_head(
    model: ModelProfile, run: RunConfig, prec: PrecisionSpec, hw: HardwareProfile
) -> int:
    """Logits, two shifted-logit buffers for the loss, plus lm_head params (m_lm)."""
    if run.seq_len < 2:
        raise ValidationError("seq_len", f"must be >= 2, got {run.seq_len}")
    b = prec.lm_head_bytes
    logits = align_to_page(run.batch_size * run.seq_len * model.dict_n * b, hw.cu_p)
    shifted = align_to_page(run.batch_size * (run.seq_len - 1) * model.dict_n * b, hw.cu_p)
    return logits + 2 * shifted + model.lm_p


def _tp_backward(model: ModelProfile, batch: int, seq_len: int, half: int, tp_n: int, page: int) -> int:
    num = model.l_n * batch * seq_len * model.o_n * (tp_n - 1) * half
    return _ceil_div(num, tp_n * page) * page


def estimate_tp_backward_buffer(
    model: ModelProfile,
    run: RunConfig,
    prec: PrecisionSpec,
    strat: StrategySpec,
    hw: HardwareProfile,
) -> int:
    """All-gather scratch buffer for partial outputs in the TP backward pass."""
    if strat.tp_n < 1:
        raise ValidationError("tp_n", f"must be >= 1, got {strat.tp_n}")
    return _tp_backward(model, run.batch_size, run.seq_len, prec.half_bytes, strat.tp_n, hw.cu_p)


class StaticTerms(NamedTuple):
    """Batch-, sequence- and layout-independent terms (depend on cu_p, not gpu_n)."""

    params: ParamBytes
    optimizer_states: int


def static_terms(
    model: ModelProfile, chunk: ChunkConfig, prec: PrecisionSpec, hw: HardwareProfile
) -> StaticTerms:
    return StaticTerms(
        estimate_params(model, chunk, prec, hw), estimate_optimizer_states(model, prec, hw)
    )


def _assemble(
    strat: StrategySpec,
    static: StaticTerms,
    model: ModelProfile,
    prec: PrecisionSpec,
    run: RunConfig,
    hw: HardwareProfile,
) -> MemoryBreakdown:
    p, os_ = static
    out = estimate_outputs(model, run, prec, hw)
    lm = estimate_lm_head(model, run, prec, hw)
    g = hw.gpu_n
    back = 0
    kind = strat.kind
    if kind is StrategyKind.CDP:
        peak = hw.m_base + p.total + os_ + out + lm
    elif kind is StrategyKind.ADP:
        peak = hw.m_base + p.half + _ceil_div(p.full + os_, g) + out + lm
    elif kind is StrategyKind.TP:
        back = _tp_backward(model, run.batch_size, run.seq_len, prec.half_bytes, strat.tp_n, hw.cu_p)
        peak = hw.m_base + _ceil_div(p.total + os_, g) + out + lm + back
    elif kind is StrategyKind.HYBRID:
        back = _tp_backward(model, run.batch_size, run.seq_len, prec.half_bytes, strat.tp_n, hw.cu_p)
        adp = hw.m_base + p.half + _ceil_div(p.full + os_, g) + out + lm
        # Floor the subtrahend so the peak is never under-reported.
        peak = adp - (p.half * strat.tp_n) // g + back
        if peak < hw.m_base:
            raise ProfileInconsistencyError(
                f"hybrid peak {peak} fell below m_base {hw.m_base}; check the profile"
            )
    else:
        raise ValidationError("strategy", f"no memory formula for {strat.label}")
    return MemoryBreakdown(
        strategy=strat.label,
        base=hw.m_base,
        params=p.total,
        params_half=p.half,
        params_full=p.full,
        optimizer_states=os_,
        outputs=out,
        lm_head=lm,
        lm_head_params=model.lm_p,
        tp_backward_buffer=back,
        peak=peak,
    )


def estimate_peak_single(
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    run: RunConfig,
    hw: HardwareProfile,
) -> MemoryBreakdown:
    """Peak on one GPU; also the per-GPU peak of conventional data parallelism."""
    return _assemble(
        StrategySpec.cdp(hw.gpu_n), static_terms(model, chunk, prec, hw), model, prec, run, hw
    )


def estimate_peak_adp(
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    run: RunConfig,
    hw: HardwareProfile,
) -> MemoryBreakdown:
    """ZeRO-3 style DP: fp16 params gathered in full, fp32 state sharded."""
    return _assemble(
        StrategySpec.adp(hw.gpu_n), static_terms(model, chunk, prec, hw), model, prec, run, hw
    )


def estimate_peak_tp(
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    run: RunConfig,
    strat: StrategySpec,
    hw: HardwareProfile,
) -> MemoryBreakdown:
    """1-D tensor parallelism: every parameter-side term is sharded by gpu_n."""
    if strat.kind is not StrategyKind.TP:
        raise ValidationError("strategy", f"expected tp, got {strat.label}")
    strat.validate(hw.gpu_n)
    return _assemble(strat, static_terms(model, chunk, prec, hw), model, prec, run, hw)


def estimate_peak_hybrid(
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    run: RunConfig,
    strat: StrategySpec,
    hw: HardwareProfile,
) -> MemoryBreakdown:
    if strat.kind is not StrategyKind.HYBRID:
        raise ValidationError("strategy", f"expected hybrid, got {strat.label}")
    strat.validate(hw.gpu_n)
    return _assemble(strat, static_terms(model, chunk, prec, hw), model, prec, run, hw)


def estimate_peak(
    strat: StrategySpec,
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    run: RunConfig,
    hw: HardwareProfile,
) -> MemoryBreakdown:
    """Dispatch to the formula for ``strat`` after checking its GPU layout."""
    strat.validate(hw.gpu_n)
    return _assemble(strat, static_terms(model, chunk, prec, hw), model, prec, run, hw)


def peak_curve(
    strat: StrategySpec,
    model: ModelProfile,
    chunk: ChunkConfig,
    prec: PrecisionSpec,
    seq_len: int,
    hw: HardwareProfile,
    static: StaticTerms | None = None,
) -> Callable[[int], MemoryBreakdown]:
    """Return ``bs -> breakdown`` with the batch-independent terms computed once.

    ``static`` may carry terms already computed for the same model, chunk,
    precision and page size.
    """
    strat.validate(hw.gpu_n)
    if static is None:
        static = static_terms(model, chunk, prec, hw)

    def at(batch_size: int) -> MemoryBreakdown:
        return _assemble(strat, static, model, prec, RunConfig(batch_size, seq_len), hw)

    return at
