"""Build validated ``ModelProfile`` objects from manifests or hyperparameters."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

from .profiles import (
    ChunkConfig,
    MemplanError,
    ModelProfile,
    OperatorKind,
    OperatorRecord,
    PrecisionSpec,
    ValidationError,
)

DEFAULT_CHUNK_CANDIDATES = tuple(2**k for k in range(20, 28))


class ManifestError(MemplanError):
    """The manifest file could not be read or parsed."""


@dataclass(frozen=True)
class ArchitectureSpec:
    """Hyperparameters of a decoder-only transformer.

    Extra embeddings beyond the first (e.g. learned positions) get
    ``position_rows`` rows each.
    """

    vocab_size: int
    hidden_size: int
    num_layers: int
    num_embeddings: int = 1
    ffn_multiplier: int | float = 4
    num_attention_heads: int = 1
    tie_lm_head: bool = False
    position_rows: int = 2048
    linear_bias: bool = True
    half_bytes: int = 2
    full_bytes: int = 4
    lm_head_bytes: int | None = None
    name: str = "model"

    def __post_init__(self) -> None:
        for name in ("vocab_size", "hidden_size", "num_layers", "num_embeddings",
                     "num_attention_heads", "position_rows"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValidationError(name, f"must be an integer >= 1, got {value!r}")
        if self.hidden_size % self.num_attention_heads:
            raise ValidationError(
                "hidden_size",
                f"{self.hidden_size} is not divisible by num_attention_heads "
                f"{self.num_attention_heads}",
            )
        if self.ffn_multiplier <= 0 or self.ffn_hidden != self.ffn_multiplier * self.hidden_size:
            raise ValidationError(
                "ffn_multiplier",
                f"{self.ffn_multiplier} x {self.hidden_size} is not a positive whole width",
            )

    @property
    def ffn_hidden(self) -> int:
        return int(self.ffn_multiplier * self.hidden_size)


def derive_profile(arch: ArchitectureSpec) -> ModelProfile:
    """Count parameters for a standard pre-LN decoder.

    Per layer: q/k/v/out projections (4·h²) and a two-matrix MLP
    (2·ffn_multiplier·h²) as Linear records, their biases as Bias records,
    and two LayerNorms (weight + bias). A final LayerNorm closes the stack.
    The lm_head is charged as ``vocab_size × hidden × half_bytes`` bytes,
    tied or not; ties are only flagged.
    """
    h, f = arch.hidden_size, arch.ffn_hidden
    ops: list[OperatorRecord] = [
        OperatorRecord("embed_tokens", OperatorKind.EMBEDDING, arch.vocab_size * h)
    ]
    for i in range(1, arch.num_embeddings):
        name = "embed_positions" if i == 1 else f"embed_extra{i - 1}"
        ops.append(OperatorRecord(name, OperatorKind.EMBEDDING, arch.position_rows * h))

    for layer in range(arch.num_layers):
        prefix = f"layers.{layer}"
        shapes = [("q_proj", h, h), ("k_proj", h, h), ("v_proj", h, h),
                  ("out_proj", h, h), ("fc1", h, f), ("fc2", f, h)]
        for name, fan_in, fan_out in shapes:
            ops.append(OperatorRecord(f"{prefix}.{name}", OperatorKind.LINEAR, fan_in * fan_out))
            if arch.linear_bias:
                ops.append(OperatorRecord(f"{prefix}.{name}.bias", OperatorKind.BIAS, fan_out))
        ops.append(OperatorRecord(f"{prefix}.attn_norm", OperatorKind.LAYERNORM, 2 * h))
        ops.append(OperatorRecord(f"{prefix}.ffn_norm", OperatorKind.LAYERNORM, 2 * h))
    ops.append(OperatorRecord("final_norm", OperatorKind.LAYERNORM, 2 * h))

    prec = PrecisionSpec(arch.half_bytes, arch.full_bytes, arch.lm_head_bytes)
    embed_p = sum(op.param_count for op in ops if op.kind is OperatorKind.EMBEDDING)
    return ModelProfile(
        operators=tuple(ops),
        dict_n=arch.vocab_size,
        o_n=h,
        l_n=arch.num_layers,
        e_n=arch.num_embeddings,
        embed_p=embed_p,
        other_p=sum(op.param_count for op in ops) - embed_p,
        lm_p=arch.vocab_size * h * prec.half_bytes,
        name=arch.name,
        precision=prec,
        lm_head_tied=arch.tie_lm_head,
        architecture={
            "num_attention_heads": arch.num_attention_heads,
            "ffn_multiplier": arch.ffn_multiplier,
        },
    )


def choose_chunk_size(
    model: ModelProfile, candidates: Iterable[int] | None = None
) -> ChunkConfig:
    """Pick the chunk size that wastes the fewest padded elements.

    A chunk must hold the largest chunked operator whole. Ties go to the
    smaller chunk.
    """
    cands = sorted(set(DEFAULT_CHUNK_CANDIDATES if candidates is None else candidates))
    if not cands:
        raise ValidationError("chunk_candidates", "no candidate chunk sizes given")
    floor = model.max_chunked_operator
    best: tuple[int, int] | None = None
    for cs in cands:
        if cs < 1 or cs < floor:
            continue
        waste = -(-model.other_p // cs) * cs - model.other_p
        if best is None or waste < best[0]:
            best = (waste, cs)
    if best is None:
        raise ValidationError(
            "chunk_candidates",
            f"no candidate holds the largest chunked operator ({floor} elements); "
            f"largest candidate is {cands[-1]}",
        )
    return ChunkConfig(best[1])


# -- manifest I/O -----------------------------------------------------------

def _field(data: dict[str, Any], key: str, where: str = "") -> Any:
    if key not in data:
        raise ValidationError(f"{where}{key}", "missing required field")
    return data[key]


def _int_field(data: dict[str, Any], key: str, where: str = "", minimum: int = 0) -> int:
    value = _field(data, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{where}{key}", f"expected an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{where}{key}", f"must be >= {minimum}, got {value}")
    return value


def profile_from_manifest(data: Any) -> ModelProfile:
    """Validate a decoded manifest document and build the profile."""
    if not isinstance(data, dict):
        raise ManifestError("manifest root must be an object")
    name = _field(data, "name")
    if not isinstance(name, str):
        raise ValidationError("name", "expected a string")

    pblock = data.get("precision", {})
    if not isinstance(pblock, dict):
        raise ValidationError("precision", "expected an object")
    prec = PrecisionSpec(
        half_bytes=pblock.get("half_bytes", 2),
        full_bytes=pblock.get("full_bytes", 4),
        lm_head_bytes=pblock.get("lm_head_bytes"),
    )

    arch = _field(data, "architecture")
    if not isinstance(arch, dict):
        raise ValidationError("architecture", "expected an object")
    where = "architecture."
    dict_n = _int_field(arch, "vocab_size", where, 1)
    o_n = _int_field(arch, "hidden_size", where, 1)
    l_n = _int_field(arch, "num_layers", where, 1)
    e_n = _int_field(arch, "num_embeddings", where, 1)
    extras: dict[str, Any] = {}
    if "num_attention_heads" in arch:
        heads = _int_field(arch, "num_attention_heads", where, 1)
        if o_n % heads:
            raise ValidationError(f"{where}num_attention_heads",
                                  f"hidden_size {o_n} is not divisible by {heads}")
        extras["num_attention_heads"] = heads
    if "ffn_multiplier" in arch:
        extras["ffn_multiplier"] = arch["ffn_multiplier"]
    tied = arch.get("tie_lm_head", False)
    if not isinstance(tied, bool):
        raise ValidationError(f"{where}tie_lm_head", "expected a boolean")

    rows = _field(data, "operators")
    if not isinstance(rows, list):
        raise ValidationError("operators", "expected a list")
    ops = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ValidationError(f"operators[{i}]", "expected an object")
        op_name = _field(row, "name", f"operators[{i}].")
        ops.append(OperatorRecord(
            name=str(op_name),
            kind=_field(row, "kind", f"operators[{i}]."),
            param_count=_int_field(row, "param_count", f"operators[{i}]."),
        ))

    return ModelProfile(
        operators=tuple(ops),
        dict_n=dict_n,
        o_n=o_n,
        l_n=l_n,
        e_n=e_n,
        embed_p=_int_field(data, "embed_p"),
        other_p=_int_field(data, "other_p"),
        lm_p=_int_field(data, "lm_p_bytes"),
        name=name,
        precision=prec,
        lm_head_tied=tied,
        architecture=extras,
    )


def load_manifest(path: str | Path) -> ModelProfile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON ({exc})") from exc
    return profile_from_manifest(data)


def profile_to_manifest(model: ModelProfile) -> dict[str, Any]:
    arch: dict[str, Any] = {
        "vocab_size": model.dict_n,
        "hidden_size": model.o_n,
        "num_layers": model.l_n,
        "num_embeddings": model.e_n,
    }
    arch.update(model.architecture)
    arch["tie_lm_head"] = model.lm_head_tied
    return {
        "name": model.name,
        "precision": {
            "half_bytes": model.precision.half_bytes,
            "full_bytes": model.precision.full_bytes,
            "lm_head_bytes": model.precision.lm_head_bytes,
        },
        "architecture": arch,
        "operators": [
            {"name": op.name, "kind": op.kind.value, "param_count": op.param_count}
            for op in model.operators
        ],
        "embed_p": model.embed_p,
        "other_p": model.other_p,
        "lm_p_bytes": model.lm_p,
    }


def save_manifest(model: ModelProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(profile_to_manifest(model), indent=1) + "\n", encoding="utf-8")


# -- bundled fixtures -------------------------------------------------------

def fixture_names() -> Sequence[str]:
    root = resources.files("memplan") / "data" / "manifests"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name: str) -> ModelProfile:
    res = resources.files("memplan") / "data" / "manifests" / f"{name}.json"
    if not res.is_file():
        raise ManifestError(f"no bundled manifest named {name!r}; have {', '.join(fixture_names())}")
    with resources.as_file(res) as p:
        return load_manifest(p)


def resolve_model(ref: str) -> ModelProfile:
    """Load ``ref`` as a manifest path, falling back to a bundled fixture name."""
    path = Path(ref)
    if path.exists():
        return load_manifest(path)
    stem = path.name[: -len(".json")] if path.name.endswith(".json") else path.name
    if stem in fixture_names():
        return load_fixture(stem)
    raise ManifestError(f"manifest not found: {ref}")
