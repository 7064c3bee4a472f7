from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import profiles
from memplan.ingest import (
    DEFAULT_CHUNK_CANDIDATES,
    ArchitectureSpec,
    ManifestError,
    choose_chunk_size,
    derive_profile,
    fixture_names,
    load_fixture,
    load_manifest,
    profile_from_manifest,
    profile_to_manifest,
    resolve_model,
    save_manifest,
)
from memplan.profiles import ModelProfile, OperatorKind, OperatorRecord, ValidationError


def test_fixtures_bundled():
    assert {"opt125m-like", "opt350m-like", "bloom560m-like", "gptneo1.3b-like",
            "opt1.3b-like", "opt2.7b-like"} <= set(fixture_names())


def test_opt125m_fixture_scalars():
    m = load_fixture("opt125m-like")
    assert (m.l_n, m.o_n, m.dict_n) == (12, 768, 50272)
    assert m.e_n == 2 and m.lm_head_tied
    # Public OPT-125m parameter count.
    assert m.total_params == 125_239_296


@pytest.mark.parametrize("name", ["opt125m-like", "opt1.3b-like", "bloom560m-like"])
def test_fixture_load_by_path_and_name(name, tmp_path):
    m = load_fixture(name)
    path = tmp_path / f"{name}.json"
    save_manifest(m, path)
    assert load_manifest(path) == m
    assert resolve_model(str(path)) == m
    assert resolve_model(name) == m


def _manifest(**overrides):
    doc = {
        "name": "tiny",
        "precision": {"half_bytes": 2, "full_bytes": 4, "lm_head_bytes": 2},
        "architecture": {"vocab_size": 10, "hidden_size": 4, "num_layers": 1,
                         "num_embeddings": 1, "num_attention_heads": 2,
                         "ffn_multiplier": 4, "tie_lm_head": False},
        "operators": [
            {"name": "emb", "kind": "embedding", "param_count": 40},
            {"name": "fc", "kind": "linear", "param_count": 16},
            {"name": "ln", "kind": "layernorm", "param_count": 8},
        ],
        "embed_p": 40,
        "other_p": 24,
        "lm_p_bytes": 80,
    }
    doc.update(overrides)
    return doc


def test_manifest_minimal_valid():
    m = profile_from_manifest(_manifest())
    assert (m.embed_p, m.other_p, m.lm_p) == (40, 24, 80)
    assert m.operators[1].kind is OperatorKind.LINEAR


def test_manifest_embed_mismatch_names_field():
    with pytest.raises(ValidationError) as err:
        profile_from_manifest(_manifest(embed_p=41))
    assert err.value.field == "embed_p"


def test_manifest_other_mismatch_names_field():
    with pytest.raises(ValidationError) as err:
        profile_from_manifest(_manifest(other_p=1))
    assert err.value.field == "other_p"


def test_manifest_empty_operators_degenerate():
    m = profile_from_manifest(_manifest(operators=[], embed_p=0, other_p=0))
    assert m.operators == () and m.total_params == 0


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["operators"][0].update(param_count=-1), "operators[0].param_count"),
    (lambda d: d["operators"][0].update(kind="conv"), "operators[emb].kind"),
    (lambda d: d["architecture"].update(num_layers=0), "architecture.num_layers"),
    (lambda d: d["architecture"].pop("vocab_size"), "architecture.vocab_size"),
    (lambda d: d["architecture"].update(num_attention_heads=3), "architecture.num_attention_heads"),
    (lambda d: d["precision"].update(lm_head_bytes=3), "lm_head_bytes"),
    (lambda d: d.pop("lm_p_bytes"), "lm_p_bytes"),
    (lambda d: d.update(embed_p="40"), "embed_p"),
])
def test_manifest_errors_name_field(mutate, field):
    doc = _manifest()
    mutate(doc)
    with pytest.raises(ValidationError) as err:
        profile_from_manifest(doc)
    assert err.value.field == field


def test_manifest_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ManifestError, match="malformed"):
        load_manifest(bad)
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "missing.json")
    with pytest.raises(ManifestError):
        profile_from_manifest([1, 2])
    with pytest.raises(ManifestError):
        resolve_model("no-such-model")


@settings(max_examples=50, deadline=None)
@given(profiles())
def test_manifest_round_trip(model):
    doc = json.loads(json.dumps(profile_to_manifest(model)))
    assert profile_from_manifest(doc) == model


# -- derive_profile -------------------------------------------------------------

def test_derive_small_counts():
    m = derive_profile(ArchitectureSpec(vocab_size=1000, hidden_size=64, num_layers=2,
                                        num_embeddings=1, ffn_multiplier=4, num_attention_heads=4))
    linear = sum(op.param_count for op in m.operators if op.kind is OperatorKind.LINEAR)
    assert linear == 2 * (4 * 64**2 + 8 * 64**2) == 98_304
    bias = sum(op.param_count for op in m.operators if op.kind is OperatorKind.BIAS)
    norm = sum(op.param_count for op in m.operators if op.kind is OperatorKind.LAYERNORM)
    # per layer: four h-wide attention biases, ffn (4h) and h MLP biases; two norms of 2h
    assert bias == 2 * (4 * 64 + 256 + 64)
    assert norm == 2 * 2 * 128 + 128
    assert m.other_p == linear + bias + norm
    assert m.embed_p == 64_000
    assert m.lm_p == 1000 * 64 * 2


def test_derive_without_bias():
    m = derive_profile(ArchitectureSpec(1000, 64, 2, linear_bias=False))
    assert not any(op.kind is OperatorKind.BIAS for op in m.operators)


def test_derive_tied_flag():
    untied = derive_profile(ArchitectureSpec(100, 8, 1))
    tied = derive_profile(ArchitectureSpec(100, 8, 1, tie_lm_head=True))
    assert tied.lm_head_tied and not untied.lm_head_tied
    assert tied.lm_p == untied.lm_p == 100 * 8 * 2


def test_derive_vocab_one():
    m = derive_profile(ArchitectureSpec(vocab_size=1, hidden_size=32, num_layers=1))
    assert m.embed_p == 32


def test_derive_positions():
    m = derive_profile(ArchitectureSpec(100, 16, 1, num_embeddings=2, position_rows=50))
    assert m.embed_p == 100 * 16 + 50 * 16
    assert m.e_n == 2


@pytest.mark.parametrize("kwargs, field", [
    (dict(num_attention_heads=3), "hidden_size"),
    (dict(num_layers=0), "num_layers"),
    (dict(ffn_multiplier=0.3), "ffn_multiplier"),
])
def test_derive_rejects(kwargs, field):
    with pytest.raises(ValidationError) as err:
        ArchitectureSpec(vocab_size=100, hidden_size=64, **{"num_layers": 1, **kwargs})
    assert err.value.field == field


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 32), st.integers(1, 6), st.integers(1, 3),
       st.integers(1, 8), st.booleans())
def test_derive_sums_consistent(vocab, head_dim, layers, embeds, heads, bias):
    arch = ArchitectureSpec(vocab, head_dim * heads, layers, num_embeddings=embeds,
                            num_attention_heads=heads, linear_bias=bias)
    m = derive_profile(arch)
    assert sum(op.param_count for op in m.operators) == m.embed_p + m.other_p
    assert len([op for op in m.operators if op.kind is OperatorKind.EMBEDDING]) == embeds


# -- choose_chunk_size -----------------------------------------------------------

def _chunk_model(other_p: int, max_op: int) -> ModelProfile:
    ops = [OperatorRecord("big", OperatorKind.LINEAR, max_op)]
    rest = other_p - max_op
    while rest > 0:
        n = min(rest, max_op)
        ops.append(OperatorRecord(f"op{len(ops)}", OperatorKind.LINEAR, n))
        rest -= n
    return ModelProfile(tuple(ops), 10, 4, 1, 1, 0, other_p, 0)


def brute_chunk(model, candidates):
    feasible = [c for c in candidates if c >= model.max_chunked_operator]
    return min(feasible, key=lambda c: (-(-model.other_p // c) * c - model.other_p, c))


def test_chunk_zero_waste():
    m = _chunk_model(3 * 2**20, 2**19)
    assert choose_chunk_size(m, [2**20, 2**21]).chunk_size == 2**20


def test_chunk_tie_breaks_small():
    m = _chunk_model(2**20 + 1, 2**10)
    # waste(2^20) = waste(2^21) = 2^20 - 1
    assert choose_chunk_size(m, [2**21, 2**20]).chunk_size == 2**20


def test_chunk_single_candidate_and_infeasible():
    m = _chunk_model(3 * 2**20, 2**19)
    assert choose_chunk_size(m, [2**19]).chunk_size == 2**19
    with pytest.raises(ValidationError):
        choose_chunk_size(m, [2**18])
    with pytest.raises(ValidationError):
        choose_chunk_size(m, [])


def test_chunk_ignores_embeddings_for_constraint():
    ops = (OperatorRecord("emb", OperatorKind.EMBEDDING, 10**9), OperatorRecord("fc", OperatorKind.LINEAR, 100))
    m = ModelProfile(ops, 10, 4, 1, 1, 10**9, 100, 0)
    assert choose_chunk_size(m, [128, 256]).chunk_size == 128


def test_chunk_matches_brute_force():
    rng = random.Random(7)
    for _ in range(300):
        max_op = rng.randint(1, 2**24)
        m = _chunk_model(max_op + rng.randint(0, 2**26), max_op)
        cands = rng.sample([2**k for k in range(10, 28)], rng.randint(1, 8)) + [2**27]
        got = choose_chunk_size(m, cands).chunk_size
        assert got == brute_chunk(m, cands)
        assert got >= m.max_chunked_operator


def test_chunk_default_candidates():
    m = load_fixture("opt1.3b-like")
    cs = choose_chunk_size(m).chunk_size
    assert cs in DEFAULT_CHUNK_CANDIDATES and cs >= 2048 * 8192
