"""Regenerate the bundled manifests under src/memplan/data/manifests/.

Shapes follow the public Hugging Face configs of each model family;
``-like`` because biases and norms use one generic pre-LN layout.
"""

from pathlib import Path

from memplan.ingest import ArchitectureSpec, derive_profile, save_manifest

OUT = Path(__file__).resolve().parents[1] / "src" / "memplan" / "data" / "manifests"

OPT = dict(vocab_size=50272, num_embeddings=2, position_rows=2050, tie_lm_head=True)

SHAPES = {
    "opt125m-like": ArchitectureSpec(hidden_size=768, num_layers=12, num_attention_heads=12, **OPT),
    "opt350m-like": ArchitectureSpec(hidden_size=1024, num_layers=24, num_attention_heads=16, **OPT),
    "opt1.3b-like": ArchitectureSpec(hidden_size=2048, num_layers=24, num_attention_heads=32, **OPT),
    "opt2.7b-like": ArchitectureSpec(hidden_size=2560, num_layers=32, num_attention_heads=32, **OPT),
    "bloom560m-like": ArchitectureSpec(
        vocab_size=250880, hidden_size=1024, num_layers=24, num_attention_heads=16,
        num_embeddings=1, tie_lm_head=True,
    ),
    "gptneo1.3b-like": ArchitectureSpec(
        vocab_size=50257, hidden_size=2048, num_layers=24, num_attention_heads=16,
        num_embeddings=2, position_rows=2048, tie_lm_head=True,
    ),
}


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, arch in SHAPES.items():
        profile = derive_profile(ArchitectureSpec(**{**arch.__dict__, "name": name}))
        save_manifest(profile, OUT / f"{name}.json")
        print(f"{name}: {profile.total_params:,} params")


if __name__ == "__main__":
    main()
