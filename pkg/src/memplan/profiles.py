"""Domain types shared by the estimator, planner and CLI.

All memory quantities are integer bytes. Parameter quantities are element
counts, except ``ModelProfile.lm_p`` which is already in bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

DEFAULT_PAGE_SIZE = 2 * 1024**2
DEFAULT_M_BASE = 1024**3


class MemplanError(ValueError):
    """Base class for every error raised by this package."""


class ValidationError(MemplanError):
    """An input violates an invariant. ``field`` names the offending value."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class OperatorKind(str, Enum):
    EMBEDDING = "embedding"
    LINEAR = "linear"
    BIAS = "bias"
    LAYERNORM = "layernorm"
    OTHER = "other"


# Kinds whose momentum/variance tensors are charged to m_os.
OPTIMIZER_KINDS = frozenset({OperatorKind.EMBEDDING, OperatorKind.LINEAR})


def _require_int(name: str, value: Any, minimum: int = 0) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(name, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(name, f"must be >= {minimum}, got {value}")


@dataclass(frozen=True)
class PrecisionSpec:
    half_bytes: int = 2
    full_bytes: int = 4
    # None means "same as half_bytes" (mixed-precision default).
    lm_head_bytes: int | None = None

    def __post_init__(self) -> None:
        _require_int("half_bytes", self.half_bytes, 1)
        _require_int("full_bytes", self.full_bytes, self.half_bytes)
        if self.lm_head_bytes is None:
            object.__setattr__(self, "lm_head_bytes", self.half_bytes)
        elif self.lm_head_bytes not in (self.half_bytes, self.full_bytes):
            raise ValidationError(
                "lm_head_bytes",
                f"must equal half_bytes ({self.half_bytes}) or full_bytes "
                f"({self.full_bytes}), got {self.lm_head_bytes!r}",
            )


@dataclass(frozen=True)
class OperatorRecord:
    name: str
    kind: OperatorKind
    param_count: int

    def __post_init__(self) -> None:
        if not isinstance(self.kind, OperatorKind):
            try:
                object.__setattr__(self, "kind", OperatorKind(self.kind))
            except ValueError:
                raise ValidationError(
                    f"operators[{self.name}].kind", f"unknown kind {self.kind!r}"
                ) from None
        _require_int(f"operators[{self.name}].param_count", self.param_count)


@dataclass(frozen=True)
class ModelProfile:
    """Parameter manifest plus the architecture scalars the formulas need.

    ``operators`` lists the transformer part only (embeddings, layers, final
    norm). The lm_head is described solely by ``lm_p`` (bytes).

    ``l_n`` and ``e_n`` may be zero so that degenerate profiles can be
    evaluated; the manifest loader requires them to be at least one.
    """

    operators: tuple[OperatorRecord, ...]
    dict_n: int
    o_n: int
    l_n: int
    e_n: int
    embed_p: int
    other_p: int
    lm_p: int
    name: str = "model"
    precision: PrecisionSpec = field(default_factory=PrecisionSpec)
    lm_head_tied: bool = False
    architecture: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "operators", tuple(self.operators))
        _require_int("dict_n", self.dict_n, 1)
        _require_int("o_n", self.o_n, 1)
        _require_int("l_n", self.l_n)
        _require_int("e_n", self.e_n)
        _require_int("embed_p", self.embed_p)
        _require_int("other_p", self.other_p)
        _require_int("lm_p", self.lm_p)
        embed_sum = sum(
            op.param_count for op in self.operators if op.kind is OperatorKind.EMBEDDING
        )
        other_sum = sum(
            op.param_count for op in self.operators if op.kind is not OperatorKind.EMBEDDING
        )
        if self.embed_p != embed_sum:
            raise ValidationError(
                "embed_p",
                f"{self.embed_p} does not match the embedding operators' total {embed_sum}",
            )
        if self.other_p != other_sum:
            raise ValidationError(
                "other_p",
                f"{self.other_p} does not match the non-embedding operators' total {other_sum}",
            )

    @property
    def max_chunked_operator(self) -> int:
        """Largest operator placed in chunk memory (everything but embeddings)."""
        return max(
            (op.param_count for op in self.operators if op.kind is not OperatorKind.EMBEDDING),
            default=0,
        )

    @property
    def total_params(self) -> int:
        return self.embed_p + self.other_p


@dataclass(frozen=True)
class ChunkConfig:
    chunk_size: int

    def __post_init__(self) -> None:
        _require_int("chunk_size", self.chunk_size, 1)


@dataclass(frozen=True)
class HardwareProfile:
    gpu_n: int
    m_total: int
    cu_p: int = DEFAULT_PAGE_SIZE
    m_base: int = DEFAULT_M_BASE
    m_base_calibrated: bool = False

    def __post_init__(self) -> None:
        _require_int("gpu_n", self.gpu_n, 1)
        _require_int("cu_p", self.cu_p, 1)
        if self.cu_p & (self.cu_p - 1):
            raise ValidationError("cu_p", f"must be a power of two, got {self.cu_p}")
        _require_int("m_base", self.m_base)
        _require_int("m_total", self.m_total, 1)
        if self.m_total <= self.m_base:
            raise ValidationError(
                "m_total", f"capacity {self.m_total} must exceed m_base {self.m_base}"
            )


@dataclass(frozen=True)
class RunConfig:
    batch_size: int
    seq_len: int

    def __post_init__(self) -> None:
        _require_int("batch_size", self.batch_size, 1)
        # The shifted-logit buffer has sl - 1 positions.
        _require_int("seq_len", self.seq_len, 2)


class StrategyKind(str, Enum):
    CDP = "cdp"
    ADP = "adp"
    TP = "tp"
    HYBRID = "hybrid"
    CPU_OFFLOAD = "cpu_offload"


# Tie-break order when scores are equal.
PREFERENCE = (StrategyKind.CDP, StrategyKind.ADP, StrategyKind.TP, StrategyKind.HYBRID)


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind
    dp_n: int = 1
    tp_n: int = 1

    @classmethod
    def cdp(cls, gpu_n: int) -> StrategySpec:
        return cls(StrategyKind.CDP, dp_n=gpu_n, tp_n=1)

    @classmethod
    def adp(cls, gpu_n: int) -> StrategySpec:
        return cls(StrategyKind.ADP, dp_n=gpu_n, tp_n=1)

    @classmethod
    def tp(cls, gpu_n: int) -> StrategySpec:
        return cls(StrategyKind.TP, dp_n=1, tp_n=gpu_n)

    @classmethod
    def hybrid(cls, dp_n: int, tp_n: int) -> StrategySpec:
        return cls(StrategyKind.HYBRID, dp_n=dp_n, tp_n=tp_n)

    @classmethod
    def cpu_offload(cls) -> StrategySpec:
        return cls(StrategyKind.CPU_OFFLOAD, dp_n=0, tp_n=0)

    @classmethod
    def parse(cls, text: str, gpu_n: int) -> StrategySpec:
        """Parse ``cdp``, ``adp``, ``tp`` or ``hybrid:DPxTP`` for ``gpu_n`` GPUs."""
        key = text.strip().lower()
        if key == "cdp":
            return cls.cdp(gpu_n)
        if key == "adp":
            return cls.adp(gpu_n)
        if key == "tp":
            return cls.tp(gpu_n)
        if key.startswith("hybrid:"):
            dims = key[len("hybrid:"):].split("x")
            if len(dims) != 2 or not all(d.isdigit() for d in dims):
                raise ValidationError("strategy", f"cannot parse hybrid layout {text!r}")
            return cls.hybrid(int(dims[0]), int(dims[1]))
        raise ValidationError("strategy", f"unknown strategy {text!r}")

    def validate(self, gpu_n: int) -> None:
        kind = self.kind
        if kind in (StrategyKind.CDP, StrategyKind.ADP):
            ok = self.tp_n == 1 and self.dp_n == gpu_n
        elif kind is StrategyKind.TP:
            ok = self.dp_n == 1 and self.tp_n == gpu_n
        elif kind is StrategyKind.HYBRID:
            ok = self.dp_n >= 2 and self.tp_n >= 2 and self.dp_n * self.tp_n == gpu_n
        else:
            ok = True
        if not ok:
            raise ValidationError(
                "strategy",
                f"{self.label} (dp_n={self.dp_n}, tp_n={self.tp_n}) is not a valid "
                f"layout for {gpu_n} GPU(s)",
            )

    @property
    def label(self) -> str:
        if self.kind is StrategyKind.HYBRID:
            return f"hybrid:{self.dp_n}x{self.tp_n}"
        return self.kind.value


@dataclass(frozen=True)
class MemoryBreakdown:
    """Per-component bytes for one strategy at one batch size.

    ``params`` is the full m_p; ``params_half``/``params_full`` are the
    independently aligned fp16/fp32 parts used by the sharded formulas.
    ``lm_head`` already includes the raw ``lm_head_params`` addend.
    """

    strategy: str
    base: int
    params: int
    params_half: int
    params_full: int
    optimizer_states: int
    outputs: int
    lm_head: int
    lm_head_params: int
    tp_backward_buffer: int
    peak: int

    def as_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "base": self.base,
            "params": self.params,
            "params_half": self.params_half,
            "params_full": self.params_full,
            "optimizer_states": self.optimizer_states,
            "outputs": self.outputs,
            "lm_head": self.lm_head,
            "lm_head_params": self.lm_head_params,
            "tp_backward_buffer": self.tp_backward_buffer,
            "peak": self.peak,
        }
