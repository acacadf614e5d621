"""Single attention head viewed as a multispin thermal system.

The last spin in the context acts as the query. Pair energies
``H = -S_f . S_i`` are Boltzmann-weighted at T = 1 (softmax), the weighted
mean of the context spins is the magnetization N(n), and every vocabulary
token X sits at the effective level ``-S_X . N(n)``. Greedy decoding emits
the lowest level; thermal decoding samples levels at temperature T'.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .spinspace import DimensionError, PromptSpec, Vocabulary, dot

GREEDY = "greedy"
THERMAL = "thermal"


def pair_energy(query, key) -> float:
    return -dot(query, key)


def _as_sequence(sequence) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[None, :]
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("attention needs a non-empty sequence of spins")
    return seq


def attention_weights(sequence, scale: bool = False) -> np.ndarray:
    """Softmax of -H(S_f, S_i) over the sequence, query = last element.

    With ``scale`` the scores are divided by sqrt(d).
    """
    seq = _as_sequence(sequence)
    scores = seq @ seq[-1]
    if scale:
        scores = scores / math.sqrt(seq.shape[1])
    scores = scores - scores.max()
    w = np.exp(scores)
    return w / w.sum()


@dataclass(frozen=True)
class Magnetization:
    vector: np.ndarray
    iteration: int = 1


def magnetization(sequence, scale: bool = False, iteration: int = 1) -> Magnetization:
    seq = _as_sequence(sequence)
    w = attention_weights(seq, scale=scale)
    return Magnetization(w @ seq, iteration)


def energy_levels(mag, vocab: Vocabulary) -> np.ndarray:
    """Effective level -S_X . N for every vocabulary token, indexed by TokenId."""
    vec = mag.vector if isinstance(mag, Magnetization) else np.asarray(mag, dtype=np.float64)
    if vec.shape != (vocab.dimension,):
        raise DimensionError(vec.size, vocab.dimension, "magnetization and vocabulary")
    return -(vocab.spins @ vec) + 0.0  # no negative zeros in exports


def top_two_gap(levels: np.ndarray) -> float:
    """Second-lowest minus lowest level (>= 0); inf for a single level."""
    if len(levels) < 2:
        return math.inf
    a, b = np.partition(np.asarray(levels), 1)[:2]
    return float(b - a)


@dataclass(frozen=True)
class SamplingPolicy:
    mode: str = GREEDY
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (GREEDY, THERMAL):
            raise ValueError(f"mode must be 'greedy' or 'thermal', got {self.mode!r}")
        if self.mode == THERMAL and not self.temperature > 0:
            raise ValueError("thermal mode requires temperature > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(int(self.seed))


def boltzmann(levels: np.ndarray, temperature: float) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64)
    w = np.exp(-(levels - levels.min()) / temperature)
    return w / w.sum()


def next_token(
    levels,
    policy: SamplingPolicy = SamplingPolicy(),
    rng: np.random.Generator | None = None,
    temperature: float | None = None,
) -> int:
    """Pick the next token id from effective energy levels.

    Greedy takes the argmin (ties go to the lowest index). Thermal draws one
    uniform and inverts the Boltzmann CDF with tokens ordered by level, so
    runs that share a seed are coupled step by step.
    """
    levels = np.asarray(levels, dtype=np.float64)
    if levels.size == 0:
        raise ValueError("no energy levels to choose from")
    if policy.mode == GREEDY and temperature is None:
        return int(np.argmin(levels))
    t = policy.temperature if temperature is None else temperature
    if not t > 0:
        raise ValueError("sampling temperature must be > 0")
    if rng is None:
        rng = policy.rng()
    order = np.argsort(levels, kind="stable")
    cdf = np.cumsum(boltzmann(levels, t)[order])
    u = rng.random() * cdf[-1]
    k = int(np.searchsorted(cdf, u, side="right"))
    return int(order[min(k, len(order) - 1)])


@dataclass
class Step:
    iteration: int
    token: int
    levels: np.ndarray | None = None
    magnetization: np.ndarray | None = None
    weights: np.ndarray | None = None


@dataclass
class GenerationTrace:
    prompt: PromptSpec
    vocab: Vocabulary
    steps: list[Step] = field(default_factory=list)
    policy: SamplingPolicy = SamplingPolicy()
    scale: bool = False

    @property
    def emitted(self) -> list[int]:
        return [s.token for s in self.steps]

    def emitted_labels(self) -> list[str]:
        return [self.vocab.labels[t] for t in self.emitted]

    def text(self) -> str:
        return "".join(self.prompt.labels(self.vocab)) + "|" + "".join(self.emitted_labels())

    def to_rows(self) -> list[dict]:
        rows = []
        for s in self.steps:
            row = {"n": s.iteration, "emitted": self.vocab.labels[s.token]}
            if s.levels is not None:
                for lab, lv in zip(self.vocab.labels, s.levels):
                    row[f"E_{lab}"] = repr(float(lv))
                row["delta_E_top2"] = repr(top_two_gap(s.levels))
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        rows = self.to_rows()
        buf = io.StringIO()
        fields = list(rows[0]) if rows else ["n", "emitted"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def to_document(self) -> dict:
        def arr(x):
            return None if x is None else [float(v) for v in x]

        return {
            "format_version": 1,
            "prompt": self.prompt.labels(self.vocab),
            "vocabulary": self.vocab.to_document(),
            "policy": {"mode": self.policy.mode, "temperature": self.policy.temperature,
                       "seed": int(self.policy.seed)},
            "scale_attention": self.scale,
            "steps": [
                {
                    "n": s.iteration,
                    "emitted": self.vocab.labels[s.token],
                    "levels": arr(s.levels),
                    "magnetization": arr(s.magnetization),
                    "weights": arr(s.weights),
                }
                for s in self.steps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2) + "\n"


def context_state(context: Sequence[int], vocab: Vocabulary, scale: bool = False):
    """Attention weights, magnetization and levels for a context of token ids."""
    seq = vocab.spins[np.asarray(context, dtype=int)]
    w = attention_weights(seq, scale=scale)
    mag = w @ seq
    return w, mag, energy_levels(mag, vocab)


LevelHook = Callable[[int, np.ndarray, Sequence[int]], np.ndarray]


def generate(
    prompt: PromptSpec,
    vocab: Vocabulary,
    steps: int,
    policy: SamplingPolicy = SamplingPolicy(),
    *,
    scale: bool = False,
    lean: bool = False,
    adjust_levels: LevelHook | None = None,
    temperature_at: Callable[[int], float] | None = None,
) -> GenerationTrace:
    """Iterate next-token generation from ``prompt`` for ``steps`` tokens.

    ``adjust_levels(n, levels, context)`` may return modified selection levels
    (the trace keeps the unmodified ones). ``temperature_at(n)`` forces thermal
    selection at a per-step temperature.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    prompt.validate(vocab)
    rng = policy.rng()
    context = list(prompt.tokens)
    trace = GenerationTrace(prompt, vocab, [], policy, scale)
    for n in range(1, steps + 1):
        w, mag, levels = context_state(context, vocab, scale)
        select = levels if adjust_levels is None else adjust_levels(n, levels, context)
        temp = None if temperature_at is None else temperature_at(n)
        tok = next_token(select, policy, rng, temperature=temp)
        if lean:
            trace.steps.append(Step(n, tok))
        else:
            trace.steps.append(Step(n, tok, levels, mag, w))
        context.append(tok)
    return trace
