#!/usr/bin/env python3
"""Regenerate the bundled synthetic corpus (deterministic; seed 7)."""
import sys
from pathlib import Path

from opgkit.synth import generate_corpus

if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "corpus"
    generate_corpus(out, n_cases=20, seed=7)
    print(f"corpus written to {out}")
