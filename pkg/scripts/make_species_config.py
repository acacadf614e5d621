"""Write a vocabulary of species-clustered unit tokens plus its populations file.

    python scripts/make_species_config.py --populations 8 8 --dim 8 --seed 2 \
        --out configs/species16.json
"""
import argparse
import json
from pathlib import Path

from spintip.percolation import species_tokens
from spintip.spinspace import Vocabulary, dump_vocabulary


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--populations", type=int, nargs="+", default=[8, 8])
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--spread", type=float, default=0.6)
    ap.add_argument("--out", default="configs/species16.json")
    args = ap.parse_args()

    x, part = species_tokens(args.populations, args.dim, args.seed, args.spread)
    labels = tuple(f"{part.names[s]}_{i}" for i, s in enumerate(part.assignment))
    out = Path(args.out)
    out.write_text(dump_vocabulary(Vocabulary(labels, x)))
    pops = out.with_name(out.stem + "_populations.json")
    pops.write_text(json.dumps({"populations": list(args.populations),
                                "names": list(part.names)}) + "\n")
    print(out, pops)


if __name__ == "__main__":
    main()
