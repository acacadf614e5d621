"""Paired comparison of decoding with and without gap cooling on the toy vocabulary.

Thermal runs share seeds between arms, so differences come from the
intervention only.

    python scripts/cooling_ab.py --trigger 0.02 --boost 0.1 --runs 1000
"""
import argparse
from pathlib import Path

import numpy as np

from spintip.attention import THERMAL, SamplingPolicy, generate
from spintip.interventions import GapCoolingConfig, first_emission, generate_with_policy
from spintip.spinspace import load_vocabulary, parse_prompt

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trigger", type=float, default=0.02)
    ap.add_argument("--boost", type=float, default=0.1)
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--temps", type=float, nargs="+", default=[0.005, 0.01, 0.02, 0.05])
    args = ap.parse_args()

    vocab = load_vocabulary(CONFIGS / "toy.json")
    prompt = parse_prompt("A", vocab)
    d = vocab.index("D")
    never = args.steps + 1
    print("mode     T'      first D: uncooled  additive  hold")
    base = first_emission(generate(prompt, vocab, args.steps), d)
    arms = {}
    for mode in ("additive", "hold"):
        cfg = GapCoolingConfig(args.trigger, args.boost, mode)
        arms[mode] = first_emission(generate_with_policy(prompt, vocab, args.steps, cooling=cfg)[0], d)
    print(f"greedy   -       {base!s:>9} {arms['additive']!s:>9} {arms['hold']!s:>5}")
    for T in args.temps:
        res = {"uncooled": [], "additive": [], "hold": []}
        for seed in range(args.runs):
            pol = SamplingPolicy(THERMAL, T, seed)
            res["uncooled"].append(first_emission(generate(prompt, vocab, args.steps, pol, lean=True), d) or never)
            for mode in ("additive", "hold"):
                cfg = GapCoolingConfig(args.trigger, args.boost, mode)
                tr, _ = generate_with_policy(prompt, vocab, args.steps, pol, cfg, lean=True)
                res[mode].append(first_emission(tr, d) or never)
        m = {k: np.mean(v) for k, v in res.items()}
        print(f"thermal  {T:<7g} {m['uncooled']:9.3f} {m['additive']:9.3f} {m['hold']:5.2f}")


if __name__ == "__main__":
    main()
