"""Command-line entry point.

Every invocation prints a JSON run report on stdout (resolved configuration,
version, duration, result summary, warnings). Declared outputs are written
atomically. Exit codes: 0 success, 2 configuration error, 3 numerical or
solver error, 4 I/O error.

Warning codes
-------------
W001  oracle instances excluded from verification (third-token interposition,
      first-step disagreement or exact-integer ratio)
W002  verification mismatches between formula and simulation
W003  sweep cells with a degenerate denominator
W004  no tip within the simulated horizon
W005  growth onset absent in a compared curve
W006  Pearson correlation undefined (a curve is constant)
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write, dumps
from .attention import GREEDY, THERMAL, SamplingPolicy, generate
from .interventions import AnnealSchedule, GapCoolingConfig, generate_with_policy
from .multilayer import (DegenerateNormError, Trajectory, load_stack, pair_separations,
                         propagate)
from .percolation import (SIMULATED, GrowthCurve, SimilarityKernel, SolverError, growth_sim,
                          growth_theory, kernel_from_trajectory, load_populations, onset_layer)
from .spinspace import VocabularyError, load_vocabulary, parse_prompt
from .tipping import (DEGENERATE, Axis, DegeneratePairError, check_tip_sequence, detect_tips,
                      fuzz_verify, n_star_approx, n_star_exact, sweep_heatmap, verify_prediction)

CONFIG_DIR_ENV = "SPINTIP_CONFIG_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# compare: onset = first layer crossing this G level (simulated curves never drop below 1/N)
ONSET_LEVEL = {"theoretical": 1e-3, "simulated": 0.5}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def resolve_path(p: str | None) -> Path | None:
    """Relative paths that do not exist are looked up under $SPINTIP_CONFIG_DIR."""
    if p is None:
        return None
    path = Path(p)
    if not path.exists() and not path.is_absolute() and os.environ.get(CONFIG_DIR_ENV):
        alt = Path(os.environ[CONFIG_DIR_ENV]) / path
        if alt.exists():
            return alt
    return path


def _check_inputs(args, names: list[str], problems: list[str]):
    for name in names:
        value = getattr(args, name, None)
        if value is None:
            continue
        path = resolve_path(value)
        if not path.is_file():
            problems.append(f"--{name.replace('_', '-')}: file not found: {value}")
        else:
            setattr(args, name, str(path))


def _json(path):
    return json.loads(Path(path).read_text())


class Report:
    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.result: dict = {}
        self.warnings: list[dict] = []
        self.start = time.perf_counter()

    def warn(self, code: str, message: str):
        self.warnings.append({"code": code, "message": message})

    def document(self, status: str, error: dict | None = None) -> dict:
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "status": status,
            "config": self.config,
            "duration_s": round(time.perf_counter() - self.start, 6),
            "result": self.result,
            "warnings": self.warnings,
        }
        if error is not None:
            doc["error"] = error
        return doc


# -- commands ---------------------------------------------------------------

def cmd_generate(args, rep: Report):
    problems = []
    _check_inputs(args, ["config", "anneal"], problems)
    if args.steps < 1:
        problems.append("--steps must be >= 1")
    if args.mode == THERMAL and not args.temp > 0:
        problems.append("--temp must be > 0 in thermal mode")
    if problems:
        raise ConfigError(problems)
    vocab = load_vocabulary(Path(args.config))
    prompt = parse_prompt(args.prompt, vocab)
    policy = SamplingPolicy(args.mode, args.temp, args.seed)
    cooling = GapCoolingConfig.parse(args.gap_cool) if args.gap_cool else None
    anneal = AnnealSchedule.load(args.anneal) if args.anneal else None
    trace, log = generate_with_policy(prompt, vocab, args.steps, policy, cooling, anneal,
                                      scale=args.scale, lean=args.lean)
    events = detect_tips(trace)
    rep.result = {
        "emitted": "".join(trace.emitted_labels()),
        "tips": [{"iteration": e.iteration, "from": vocab.labels[e.from_token],
                  "to": vocab.labels[e.to_token]} for e in events],
        "interventions": len(log.entries),
    }
    if not events:
        rep.warn("W004", "no tip within the generated steps")
    if args.out:
        text = trace.to_json() if args.out.endswith(".json") else trace.to_csv()
        atomic_write(args.out, text)
    if args.log:
        atomic_write(args.log, log.to_jsonl(vocab))


def cmd_predict(args, rep: Report):
    problems = []
    _check_inputs(args, ["config"], problems)
    if problems:
        raise ConfigError(problems)
    vocab = load_vocabulary(Path(args.config))
    prompt = parse_prompt(args.prompt, vocab)
    prefix = parse_prompt(args.prefix, vocab).tokens if args.prefix else ()
    pred = n_star_exact(prompt, args.good, args.bad, vocab, prefix=prefix, scale=args.scale)
    net = vocab.spins[list(prompt.tokens)].mean(axis=0)
    approx = n_star_approx(net, args.good, args.bad, vocab)
    rep.result = {
        "raw_ratio": pred.raw_ratio,
        "n_star": pred.n_star,
        "regime": pred.regime,
        "approx_raw_ratio": approx.raw_ratio,
        "approx_n_star": approx.n_star,
    }
    print(f"raw_ratio = {pred.raw_ratio:.6g}  n* = {pred.n_star}  ({pred.regime})", file=sys.stderr)
    if args.out:
        atomic_write(args.out, dumps(rep.result))


def cmd_verify(args, rep: Report):
    problems = []
    _check_inputs(args, ["config"], problems)
    if args.trials < 0:
        problems.append("--trials must be >= 0")
    if args.config and not (args.prompt and args.good and args.bad):
        problems.append("--config needs --prompt, --good and --bad")
    if problems:
        raise ConfigError(problems)
    fuzz, _ = fuzz_verify(args.trials, args.seed, max_steps=args.max_steps)
    doc = {"format_version": 1, "seed": args.seed, "trials": args.trials,
           "max_steps": args.max_steps, "summary": fuzz.summary(),
           "excluded": [dict(index=i, reason=r.reason, interposer=r.interposer)
                        for i, r in enumerate(fuzz.records) if r.status == "excluded"],
           "mismatches": [dict(index=i, **r.to_document())
                          for i, r in enumerate(fuzz.records) if r.status == "mismatch"]}
    if args.config:
        vocab = load_vocabulary(Path(args.config))
        v = verify_prediction(parse_prompt(args.prompt, vocab), args.good, args.bad, vocab,
                              args.max_steps)
        doc["configuration"] = v.to_document()
        trace = generate(parse_prompt(args.prompt, vocab), vocab, args.max_steps)
        doc["tip_sequence"] = [c.to_document() for c in check_tip_sequence(trace)]
    rep.result = fuzz.summary()
    if fuzz.count("excluded"):
        rep.warn("W001", f"{fuzz.count('excluded')} instances excluded: {fuzz.exclusions()}")
    if fuzz.count("mismatch"):
        rep.warn("W002", f"{fuzz.count('mismatch')} mismatches between formula and simulation")
    if args.report:
        atomic_write(args.report, dumps(doc))


def cmd_sweep(args, rep: Report):
    problems = []
    _check_inputs(args, ["spec"], problems)
    if problems:
        raise ConfigError(problems)
    spec = _json(args.spec)
    missing = [k for k in ("vocabulary", "prompt", "good", "bad", "axis1", "axis2") if k not in spec]
    if missing:
        raise ConfigError([f"sweep spec missing field {k!r}" for k in missing])
    voc = spec["vocabulary"]
    if isinstance(voc, str):
        path = resolve_path(voc)
        if not path.exists():
            path = Path(args.spec).parent / voc
        voc = path
    vocab = load_vocabulary(voc)
    grid = sweep_heatmap(vocab, spec["prompt"], spec["good"], spec["bad"],
                         Axis.from_document(spec["axis1"]), Axis.from_document(spec["axis2"]))
    counts = {}
    for r in grid.regime.ravel():
        counts[r] = counts.get(r, 0) + 1
    rep.result = {"shape": list(grid.raw_ratio.shape), "regimes": dict(sorted(counts.items()))}
    if counts.get(DEGENERATE):
        rep.warn("W003", f"{counts[DEGENERATE]} degenerate cells")
    atomic_write(args.out, grid.ratio_csv())
    regimes = args.regimes or str(Path(args.out).with_name(Path(args.out).stem + "_regimes.csv"))
    atomic_write(regimes, grid.regime_csv())


def cmd_propagate(args, rep: Report):
    problems = []
    _check_inputs(args, ["config", "stack"], problems)
    if args.margin < 0:
        problems.append("--margin must be >= 0")
    if problems:
        raise ConfigError(problems)
    vocab = load_vocabulary(Path(args.config))
    stack = load_stack(args.stack, vocab.dimension)
    traj = propagate(vocab.spins, stack, vocab.labels)
    seps = pair_separations(traj, args.margin)
    labels = list(seps.labels.values())
    rep.result = {"depth": traj.depth, "tokens": traj.n_tokens,
                  "fusion": labels.count("fusion"), "fission": labels.count("fission"),
                  "neutral": labels.count("neutral")}
    if args.out_traj:
        atomic_write(args.out_traj, traj.to_csv())
    if args.out_pairs:
        atomic_write(args.out_pairs, seps.to_csv())


def cmd_clusters(args, rep: Report):
    problems = []
    _check_inputs(args, ["traj", "species"], problems)
    if not args.threshold > 0:
        problems.append("--threshold must be > 0")
    if problems:
        raise ConfigError(problems)
    traj = Trajectory.from_csv(Path(args.traj).read_text())
    part = load_populations(args.species)
    curve = growth_sim(traj, args.threshold, part)
    rep.result = {"layers": int(curve.layers[-1]), "G_final": float(curve.G[-1]),
                  "onset": curve.onset(ONSET_LEVEL[SIMULATED])}
    atomic_write(args.out, curve.to_csv())
    if args.out_kernel:
        kernel = kernel_from_trajectory(traj, part)
        est = onset_layer(kernel, part)
        rep.result["L_c"] = est.L_c
        rep.result["F_bar"] = est.F_bar
        atomic_write(args.out_kernel, dumps(kernel.to_document()))


def cmd_theory(args, rep: Report):
    problems = []
    _check_inputs(args, ["kernel", "populations"], problems)
    if args.layers is not None and args.layers < 0:
        problems.append("--layers must be >= 0")
    if problems:
        raise ConfigError(problems)
    kernel = SimilarityKernel.from_document(_json(args.kernel))
    part = load_populations(args.populations)
    curve = growth_theory(kernel, part, args.layers)
    est = onset_layer(kernel, part)
    rep.result = {"layers": int(curve.layers[-1]), "G_final": float(curve.G[-1]),
                  "onset": curve.onset(ONSET_LEVEL["theoretical"]), "L_c": est.L_c,
                  "F_bar": est.F_bar, "max_residual": float(np.max(curve.residuals))}
    atomic_write(args.out, curve.to_csv())


def compare_curves(theory: GrowthCurve, sim: GrowthCurve) -> tuple[dict, str]:
    """Align two growth curves on the layer axis; summary plus aligned CSV."""
    if len(theory.layers) != len(sim.layers) or np.any(theory.layers != sim.layers):
        raise ValueError(f"layer axes differ: {theory.layers.tolist()} vs {sim.layers.tolist()}")
    diff = np.abs(theory.G - sim.G)
    if np.std(theory.G) == 0 or np.std(sim.G) == 0:
        corr = None
    else:
        corr = float(np.corrcoef(theory.G, sim.G)[0, 1])
    on_a = theory.onset(ONSET_LEVEL.get(theory.provenance, 1e-3))
    on_b = sim.onset(ONSET_LEVEL.get(sim.provenance, 0.5))
    summary = {
        "layers": len(theory.layers),
        "max_abs_diff": float(diff.max()),
        "mean_abs_diff": float(diff.mean()),
        "pearson": corr,
        "onset_first": on_a,
        "onset_second": on_b,
        "onset_gap": None if on_a is None or on_b is None else abs(on_a - on_b),
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L", f"G_{theory.provenance or 'first'}", f"G_{sim.provenance or 'second'}", "abs_diff"])
    for L, a, b, d in zip(theory.layers, theory.G, sim.G, diff):
        w.writerow([int(L), repr(float(a)), repr(float(b)), repr(float(d))])
    return summary, buf.getvalue()


def cmd_compare(args, rep: Report):
    problems = []
    _check_inputs(args, ["theory", "sim"], problems)
    if problems:
        raise ConfigError(problems)
    a = GrowthCurve.from_csv(Path(args.theory).read_text())
    b = GrowthCurve.from_csv(Path(args.sim).read_text())
    summary, table = compare_curves(a, b)
    rep.result = summary
    if summary["onset_first"] is None:
        rep.warn("W005", "onset absent in first curve")
    if summary["onset_second"] is None:
        rep.warn("W005", "onset absent in second curve")
    if summary["pearson"] is None:
        rep.warn("W006", "a curve is constant; correlation undefined")
    atomic_write(args.out, table)
    if args.report:
        atomic_write(args.report, dumps(summary))


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spintip", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="iterate next-token generation")
    g.add_argument("--config", required=True, help="vocabulary JSON")
    g.add_argument("--prompt", required=True)
    g.add_argument("--steps", type=int, default=20)
    g.add_argument("--mode", choices=[GREEDY, THERMAL], default=GREEDY)
    g.add_argument("--temp", type=float, default=1.0, help="T' for thermal mode")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", action="store_true", help="divide attention scores by sqrt(d)")
    g.add_argument("--lean", action="store_true", help="record emissions only")
    g.add_argument("--gap-cool", help="trigger=<x>,boost=<y>[,mode=additive|multiplicative|hold]")
    g.add_argument("--anneal", help="annealing schedule JSON")
    g.add_argument("--out", help="trace path (.json for full intermediates, else CSV)")
    g.add_argument("--log", help="intervention log path (JSON lines)")
    g.set_defaults(func=cmd_generate)

    q = sub.add_parser("predict", help="tipping point from the exact formula")
    q.add_argument("--config", required=True)
    q.add_argument("--prompt", required=True)
    q.add_argument("--good", required=True)
    q.add_argument("--bad", required=True)
    q.add_argument("--prefix", help="emitted tokens preceding the good run")
    q.add_argument("--scale", action="store_true")
    q.add_argument("--out")
    q.set_defaults(func=cmd_predict)

    v = sub.add_parser("verify", help="fuzz the formula against greedy simulation")
    v.add_argument("--config")
    v.add_argument("--prompt")
    v.add_argument("--good")
    v.add_argument("--bad")
    v.add_argument("--trials", type=int, default=500)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-steps", type=int, default=60)
    v.add_argument("--report")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="heatmap of the formula over two spin components")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--regimes", help="regime-code CSV (default: <out>_regimes.csv)")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("propagate", help="push token spins through a layer stack")
    m.add_argument("--config", required=True)
    m.add_argument("--stack", required=True)
    m.add_argument("--margin", type=float, default=1e-6)
    m.add_argument("--out-traj")
    m.add_argument("--out-pairs")
    m.set_defaults(func=cmd_propagate)

    c = sub.add_parser("clusters", help="giant-component growth of a trajectory")
    c.add_argument("--traj", required=True)
    c.add_argument("--threshold", type=float, required=True)
    c.add_argument("--species", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--out-kernel", help="also write the similarity kernel JSON")
    c.set_defaults(func=cmd_clusters)

    t = sub.add_parser("theory", help="theoretical growth curve from a kernel")
    t.add_argument("--kernel", required=True)
    t.add_argument("--populations", required=True)
    t.add_argument("--layers", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_theory)

    k = sub.add_parser("compare", help="align a theoretical and a simulated growth curve")
    k.add_argument("--theory", required=True)
    k.add_argument("--sim", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--report")
    k.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    rep = Report(args.command, config)
    try:
        args.func(args, rep)
    except ConfigError as exc:
        code, err = EXIT_CONFIG, {"type": "config", "problems": exc.problems}
    except (SolverError, DegeneratePairError, DegenerateNormError, ArithmeticError) as exc:
        code, err = EXIT_NUMERIC, {"type": "numerical", "message": str(exc)}
    except OSError as exc:
        code, err = EXIT_IO, {"type": "io", "message": str(exc),
                              "path": getattr(exc, "filename", None)}
    except (VocabularyError, ValueError, KeyError, IndexError) as exc:
        code, err = EXIT_CONFIG, {"type": "config", "problems": [str(exc)]}
    else:
        rep.config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
        print(json.dumps(rep.document("ok"), indent=2))
        return EXIT_OK
    print(json.dumps(rep.document("error", err), indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
