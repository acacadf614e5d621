"""Tipping-point prediction and its brute-force check.

For a context c_1..c_k followed by m copies of the good token B (so B is
the query), D beats B at the next step iff

    m * (S_B.S_D - S_B.S_B) exp(S_B.S_B) > sum_P (S_P.S_B - S_P.S_D) exp(S_P.S_B)

so the number of B emissions before the first D is the ceiling of the
ratio of the right-hand side to the bracket on the left.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .attention import GenerationTrace, SamplingPolicy, context_state, generate
from .spinspace import PromptSpec, Vocabulary, parse_prompt

TIPS = "tips_after_n_star"
ALL_BAD = "all_bad_from_start"
NEVER = "never_tips"
DEGENERATE = "degenerate"

# companion heatmap CSV codes
REGIME_CODES = {TIPS: 0, ALL_BAD: 1, NEVER: 2, DEGENERATE: 3}


class DegeneratePairError(ValueError):
    """Good and bad tokens interact identically with the good token's context."""


@dataclass(frozen=True)
class TipPrediction:
    raw_ratio: float
    n_star: int | None
    regime: str
    numerator: float
    denominator: float

    @property
    def good_run(self) -> int | None:
        """Predicted number of good emissions before the first bad one (None = never)."""
        if self.regime == NEVER:
            return None
        if self.regime == ALL_BAD:
            return 0
        return self.n_star

    @property
    def exact_integer(self) -> bool:
        r = self.raw_ratio
        return math.isfinite(r) and abs(r - round(r)) <= 1e-9 * max(1.0, abs(r))


def classify(numerator: float, denominator: float) -> str:
    """Regime from the signs of the two sides of the crossing condition.

    With a positive denominator the bad token is an attractor of the good
    one and a non-positive ratio means bad from the outset. A negative
    denominator means the good run, once started, never ends.
    """
    if denominator == 0:
        return DEGENERATE
    if denominator > 0:
        return TIPS if numerator > 0 else ALL_BAD
    return NEVER if numerator > 0 else ALL_BAD


def _prediction(numerator: float, denominator: float) -> TipPrediction:
    if denominator == 0 or not math.isfinite(denominator):
        raise DegeneratePairError(
            "S_B.S_D == S_B.S_B: good and bad tokens are indistinguishable to the good context"
        )
    ratio = numerator / denominator
    return TipPrediction(ratio, math.ceil(ratio), classify(numerator, denominator),
                         numerator, denominator)


def _token_id(token, vocab: Vocabulary) -> int:
    return vocab.index(token) if isinstance(token, str) else vocab._check_id(token)


def crossing_terms(context: Sequence[int], good: int, bad: int, vocab: Vocabulary,
                   scale: bool = False) -> tuple[float, float]:
    """Numerator (context sum) and denominator (per good emission) of the ratio."""
    b = vocab.spins[good]
    d = vocab.spins[bad]
    ctx = vocab.spins[np.asarray(context, dtype=int)]
    s = math.sqrt(vocab.dimension) if scale else 1.0
    pb = ctx @ b
    pd = ctx @ d
    num = float(np.sum((pb - pd) * np.exp(pb / s)))
    den = float((b @ d - b @ b) * math.exp((b @ b) / s))
    return num, den


def n_star_exact(prompt, good, bad, vocab: Vocabulary, prefix: Sequence = (),
                 scale: bool = False) -> TipPrediction:
    """Exact tipping formula summed over the prompt (plus an optional emitted prefix).

    ``prefix`` holds tokens generated before the good run starts; leaving it
    empty is the prompt-only convention.
    """
    prompt = parse_prompt(prompt, vocab) if not isinstance(prompt, PromptSpec) else prompt.validate(vocab)
    good, bad = _token_id(good, vocab), _token_id(bad, vocab)
    if good == bad:
        raise ValueError("good and bad must be different tokens")
    context = list(prompt.tokens) + [_token_id(t, vocab) for t in prefix]
    return _prediction(*crossing_terms(context, good, bad, vocab, scale))


def n_star_approx(net_prompt, good, bad, vocab: Vocabulary) -> TipPrediction:
    """Single net-spin approximation: exp((P-B).B) [P.(B-D)] / [B.(D-B)]."""
    good, bad = _token_id(good, vocab), _token_id(bad, vocab)
    if good == bad:
        raise ValueError("good and bad must be different tokens")
    p = np.asarray(net_prompt, dtype=np.float64)
    b, d = vocab.spins[good], vocab.spins[bad]
    if p.shape != b.shape:
        from .spinspace import DimensionError
        raise DimensionError(p.size, b.size)
    num = math.exp((p - b) @ b) * float(p @ (b - d))
    den = float(b @ (d - b))
    return _prediction(num, den)


@dataclass(frozen=True)
class TipEvent:
    iteration: int
    from_token: int
    to_token: int
    gap_before: float | None
    gap_after: float | None


def detect_tips(trace: GenerationTrace) -> list[TipEvent]:
    """One event per change of emitted token.

    Gaps are level[to] - level[from] on the step before and the step of the
    switch (non-negative, then non-positive); None in lean traces.
    """
    events = []
    steps = trace.steps
    for prev, cur in zip(steps, steps[1:]):
        if cur.token == prev.token:
            continue
        f, t = prev.token, cur.token
        before = after = None
        if prev.levels is not None and cur.levels is not None:
            before = float(prev.levels[t] - prev.levels[f])
            after = float(cur.levels[t] - cur.levels[f])
        events.append(TipEvent(cur.iteration, f, t, before, after))
    return events


def runs(tokens: Sequence[int]) -> list[tuple[int, int, int]]:
    """(token, first index, length) for each maximal run of equal tokens."""
    out = []
    for i, t in enumerate(tokens):
        if out and out[-1][0] == t:
            tok, start, n = out[-1]
            out[-1] = (tok, start, n + 1)
        else:
            out.append((t, i, 1))
    return out


@dataclass
class Verification:
    predicted: int | None
    observed: int | None
    match: bool
    status: str  # match | mismatch | excluded
    prediction: TipPrediction
    reason: str | None = None
    interposer: str | None = None
    emitted: str = ""

    def to_document(self) -> dict:
        doc = asdict(self)
        doc["prediction"] = asdict(self.prediction)
        return doc


def verify_prediction(prompt, good, bad, vocab: Vocabulary, max_steps: int = 50,
                      scale: bool = False) -> Verification:
    """Compare the formula's good-run length with a greedy simulation.

    Instances are excluded (not scored) when a third token reaches the lowest
    level at any iteration, when the first emission is not the one the
    formula's sign implies (step 1 is queried by the last prompt token, not
    by the good token), or when the ratio is an exact integer (tie at the
    crossing).
    """
    prompt = parse_prompt(prompt, vocab) if not isinstance(prompt, PromptSpec) else prompt.validate(vocab)
    good, bad = _token_id(good, vocab), _token_id(bad, vocab)
    pred = n_star_exact(prompt, good, bad, vocab, scale=scale)
    trace = generate(prompt, vocab, max_steps, SamplingPolicy(), scale=scale)
    tokens = trace.emitted
    text = "".join(trace.emitted_labels())
    observed = None
    for i, t in enumerate(tokens):
        if t != good:
            observed = i if t == bad else None
            break
    expected = pred.good_run

    def excluded(reason, interposer=None):
        return Verification(expected, observed, False, "excluded", pred, reason, interposer, text)

    for step in trace.steps:
        winner = int(np.argmin(step.levels))
        if winner not in (good, bad):
            return excluded("interposition", vocab.labels[winner])
    if (tokens[0] == good) != (pred.regime in (TIPS, NEVER)):
        return excluded("first_step")
    if pred.exact_integer:
        return excluded("exact_integer")
    if observed is None and all(t == good for t in tokens):
        ok = expected is None or expected >= max_steps
    else:
        ok = observed == expected
    return Verification(expected, observed, ok, "match" if ok else "mismatch", pred, None, None, text)


@dataclass
class RunCheck:
    iteration: int
    good: str
    bad: str
    observed: int
    prompt_only: TipPrediction | None
    with_prefix: TipPrediction | None

    @property
    def match_prompt_only(self) -> bool:
        return self.prompt_only is not None and self.prompt_only.good_run == self.observed

    @property
    def match_with_prefix(self) -> bool:
        return self.with_prefix is not None and self.with_prefix.good_run == self.observed

    def to_document(self) -> dict:
        return {
            "iteration": self.iteration, "good": self.good, "bad": self.bad,
            "observed_run": self.observed,
            "prompt_only": None if self.prompt_only is None else asdict(self.prompt_only),
            "with_prefix": None if self.with_prefix is None else asdict(self.with_prefix),
            "match_prompt_only": self.match_prompt_only,
            "match_with_prefix": self.match_with_prefix,
        }


def check_tip_sequence(trace: GenerationTrace) -> list[RunCheck]:
    """Apply the formula to each consecutive (run token, next run token) pair.

    Both context conventions are evaluated: prompt only, and prompt followed
    by everything emitted before the run. Mismatches are returned, not hidden.
    """
    vocab = trace.vocab
    out = []
    toks = trace.emitted
    for (g, start, length), (b, _, _) in zip(runs(toks), runs(toks)[1:]):
        preds = []
        for prefix in ((), toks[:start]):
            try:
                preds.append(n_star_exact(trace.prompt, g, b, vocab, prefix=prefix, scale=trace.scale))
            except DegeneratePairError:
                preds.append(None)
        out.append(RunCheck(start + length + 1, vocab.labels[g], vocab.labels[b], length, *preds))
    return out


# -- random instances -------------------------------------------------------

@dataclass
class Instance:
    vocab: Vocabulary
    prompt: PromptSpec
    good: int
    bad: int


def _random_direction(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_instance(rng: np.random.Generator, dims=(2, 8), max_norm: float = 1.2,
                    prompt_len=(1, 4), prompt_types=(1, 2), distractors=(0, 2)) -> Instance:
    """Draw a vocabulary with an attracting bad token (S_B.S_D > S_B.S_B).

    Tokens: prompt types P0.., good ``B``, bad ``D`` and distractors X0...
    Prompt and distractor spins are shorter than the good spin, which keeps
    most draws in the two-level regime. All norms are <= ``max_norm``.
    """
    d = int(rng.integers(dims[0], dims[1] + 1))
    while True:
        bhat = _random_direction(rng, d)
        b = bhat * rng.uniform(0.6, 1.0)
        nb = np.linalg.norm(b)
        perp = _random_direction(rng, d)
        perp -= (perp @ bhat) * bhat
        if np.linalg.norm(perp) < 1e-6:
            continue
        perp /= np.linalg.norm(perp)
        dvec = bhat * nb * (1 + rng.uniform(0.02, 0.3)) + perp * rng.uniform(0.1, 0.8)
        if np.linalg.norm(dvec) <= max_norm:
            break
    k = int(rng.integers(prompt_types[0], prompt_types[1] + 1))
    ptypes = []
    for _ in range(k):
        # mostly aligned with the good token so both regimes show up
        v = bhat * rng.uniform(0.0, 1.0) - perp * rng.uniform(-0.3, 1.0) + 0.3 * _random_direction(rng, d)
        v *= nb * rng.uniform(0.2, 0.6) / max(np.linalg.norm(v), 1e-12)
        ptypes.append(v)
    extras = [_random_direction(rng, d) * nb * rng.uniform(0.1, 0.6)
              for _ in range(int(rng.integers(distractors[0], distractors[1] + 1)))]
    labels = [f"P{i}" for i in range(k)] + ["B", "D"] + [f"X{i}" for i in range(len(extras))]
    spins = np.array(ptypes + [b, dvec] + extras)
    vocab = Vocabulary(tuple(labels), spins)
    n = int(rng.integers(prompt_len[0], prompt_len[1] + 1))
    prompt = PromptSpec(tuple(int(t) for t in rng.integers(0, k, size=n)))
    return Instance(vocab, prompt, k, k + 1)


@dataclass
class FuzzReport:
    records: list[Verification] = field(default_factory=list)

    def count(self, status: str) -> int:
        return sum(r.status == status for r in self.records)

    @property
    def scored(self) -> int:
        return self.count("match") + self.count("mismatch")

    @property
    def match_rate(self) -> float:
        return self.count("match") / self.scored if self.scored else float("nan")

    def exclusions(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            if r.status == "excluded":
                key = r.reason if r.interposer is None else f"{r.reason}:{r.interposer}"
                out[key] = out.get(key, 0) + 1
        return dict(sorted(out.items()))

    def summary(self) -> dict:
        return {
            "trials": len(self.records),
            "scored": self.scored,
            "matched": self.count("match"),
            "mismatched": self.count("mismatch"),
            "excluded": self.count("excluded"),
            "match_rate": self.match_rate,
            "exclusions": self.exclusions(),
        }


def fuzz_verify(trials: int, seed: int, max_steps: int = 60, **instance_kw) -> tuple[FuzzReport, list[Instance]]:
    rng = np.random.default_rng(seed)
    report = FuzzReport()
    instances = []
    for _ in range(trials):
        inst = random_instance(rng, **instance_kw)
        instances.append(inst)
        report.records.append(verify_prediction(inst.prompt, inst.good, inst.bad, inst.vocab, max_steps))
    return report, instances


# -- heatmap sweep ----------------------------------------------------------

@dataclass(frozen=True)
class Axis:
    token: str
    component: int
    values: tuple[float, ...]

    @classmethod
    def linspace(cls, token: str, component: int, start: float, stop: float, num: int) -> "Axis":
        return cls(token, component, tuple(float(x) for x in np.linspace(start, stop, num)))

    @classmethod
    def from_document(cls, doc: dict) -> "Axis":
        if "values" in doc:
            return cls(doc["token"], int(doc["component"]), tuple(float(v) for v in doc["values"]))
        return cls.linspace(doc["token"], int(doc["component"]), doc["start"], doc["stop"], int(doc["num"]))


@dataclass
class SweepGrid:
    axis1: Axis
    axis2: Axis
    raw_ratio: np.ndarray  # (len(axis1), len(axis2)); NaN where degenerate
    regime: np.ndarray  # object array of regime names

    def n_star(self) -> np.ndarray:
        return np.where(np.isfinite(self.raw_ratio), np.ceil(self.raw_ratio), np.nan)

    def _csv(self, cell) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"{self.axis1.token}[{self.axis1.component}]\\{self.axis2.token}[{self.axis2.component}]"]
                   + [repr(v) for v in self.axis2.values])
        for i, v in enumerate(self.axis1.values):
            w.writerow([repr(v)] + [cell(i, j) for j in range(len(self.axis2.values))])
        return buf.getvalue()

    def ratio_csv(self) -> str:
        return self._csv(lambda i, j: repr(float(self.raw_ratio[i, j])))

    def regime_csv(self) -> str:
        return self._csv(lambda i, j: str(REGIME_CODES[self.regime[i, j]]))


def sweep_heatmap(vocab: Vocabulary, prompt, good, bad, axis1: Axis, axis2: Axis) -> SweepGrid:
    """Evaluate the exact formula on a grid over two spin components.

    Each axis sets one component of one token's spin; cells with a
    degenerate denominator are flagged rather than raised.
    """
    prompt = parse_prompt(prompt, vocab)
    good, bad = _token_id(good, vocab), _token_id(bad, vocab)
    i1, i2 = vocab.index(axis1.token), vocab.index(axis2.token)
    for ax in (axis1, axis2):
        if not 0 <= ax.component < vocab.dimension:
            raise ValueError(f"component {ax.component} outside dimension {vocab.dimension}")
    raw = np.full((len(axis1.values), len(axis2.values)), np.nan)
    regime = np.empty(raw.shape, dtype=object)
    base = vocab.spins.copy()
    for i, v1 in enumerate(axis1.values):
        for j, v2 in enumerate(axis2.values):
            spins = base.copy()
            spins[i1, axis1.component] = v1
            spins[i2, axis2.component] = v2
            cell = Vocabulary(vocab.labels, spins)
            num, den = crossing_terms(prompt.tokens, good, bad, cell)
            if den == 0:
                regime[i, j] = DEGENERATE
                continue
            raw[i, j] = num / den
            regime[i, j] = classify(num, den)
    return SweepGrid(axis1, axis2, raw, regime)
