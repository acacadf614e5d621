"""Greedy runs of the two toy vocabularies with the tip formula alongside.

    python scripts/tipping_demo.py [--steps 20]
"""
import argparse
from pathlib import Path

from spintip.attention import generate
from spintip.spinspace import load_vocabulary, parse_prompt
from spintip.tipping import check_tip_sequence, detect_tips, n_star_exact

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def show(config, prompt, steps):
    vocab = load_vocabulary(CONFIGS / config)
    trace = generate(parse_prompt(prompt, vocab), vocab, steps)
    print(f"{config}: {trace.text()}")
    for e in detect_tips(trace):
        print(f"  tip at n={e.iteration}: {vocab.labels[e.from_token]} -> {vocab.labels[e.to_token]}"
              f"  (gap {e.gap_before:+.4f} -> {e.gap_after:+.4f})")
    for c in check_tip_sequence(trace):
        print(f"  run of {c.good} before {c.bad}: observed {c.observed}, "
              f"prompt-only n*={c.prompt_only.n_star} ({c.prompt_only.raw_ratio:.4f}), "
              f"with emitted prefix n*={c.with_prefix.n_star} ({c.with_prefix.raw_ratio:.4f})")
    return vocab


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20)
    args = ap.parse_args()
    toy = show("toy.json", "A", args.steps)
    show("acca.json", "ACCA", args.steps)
    p = n_star_exact("ACCA", "B", "D", toy)
    print(f"toy.json with prompt ACCA: n*={p.n_star} ({p.raw_ratio:.4f})")


if __name__ == "__main__":
    main()
