"""Decoding-time mitigations: gap cooling and temperature annealing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import GenerationTrace, SamplingPolicy, THERMAL, generate, top_two_gap
from .spinspace import PromptSpec, Vocabulary

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"
HOLD = "hold"


@dataclass(frozen=True)
class GapCoolingConfig:
    """Widen the top-2 level gap once it drops below ``trigger_gap``.

    additive: the lowest level is lowered by ``boost``.
    multiplicative: the gap becomes ``(1 + boost) * max(gap, trigger_gap)``.
    hold: the incumbent (last token in the context) is lowered by ``boost``
    when it is one of the two lowest levels. Unlike the other two modes this
    can change the winner, which is what lets it postpone a tip.
    """

    trigger_gap: float
    boost: float
    mode: str = ADDITIVE

    def __post_init__(self):
        if not self.trigger_gap > 0:
            raise ValueError("trigger_gap must be > 0")
        if not self.boost > 0:
            raise ValueError("boost must be > 0")
        if self.mode not in (ADDITIVE, MULTIPLICATIVE, HOLD):
            raise ValueError(f"unknown gap-cooling mode {self.mode!r}")

    @classmethod
    def parse(cls, text: str) -> "GapCoolingConfig":
        """Parse ``"trigger=0.05,boost=0.1[,mode=multiplicative]"``."""
        kv = {}
        for part in text.split(","):
            if not part.strip():
                continue
            key, _, value = part.partition("=")
            kv[key.strip()] = value.strip()
        unknown = set(kv) - {"trigger", "boost", "mode"}
        if unknown or "trigger" not in kv or "boost" not in kv:
            raise ValueError(f"gap-cool spec must be trigger=<x>,boost=<y>[,mode=...], got {text!r}")
        return cls(float(kv["trigger"]), float(kv["boost"]), kv.get("mode", ADDITIVE))


def gap_cool(levels, cfg: GapCoolingConfig, incumbent: int | None = None) -> np.ndarray:
    levels = np.array(levels, dtype=np.float64)
    if levels.size < 2:
        raise ValueError("gap cooling needs at least 2 levels")
    gap = top_two_gap(levels)
    if gap >= cfg.trigger_gap:
        return levels
    lead = int(np.argmin(levels))
    if cfg.mode == HOLD:
        if incumbent is None:
            raise ValueError("hold mode needs the incumbent token")
        top2 = np.argsort(levels, kind="stable")[:2]
        if incumbent in top2:
            levels[incumbent] -= cfg.boost
    elif cfg.mode == ADDITIVE:
        levels[lead] -= cfg.boost
    else:
        second = levels[lead] + gap
        levels[lead] = second - (1.0 + cfg.boost) * max(gap, cfg.trigger_gap)
    return levels


@dataclass(frozen=True)
class AnnealSchedule:
    temperatures: tuple[float, ...]

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures)
        if not temps:
            raise ValueError("schedule needs at least one temperature")
        if not all(t > 0 for t in temps):
            raise ValueError("all schedule temperatures must be > 0")
        object.__setattr__(self, "temperatures", temps)

    def __len__(self):
        return len(self.temperatures)

    def at(self, n: int) -> float:
        if not 1 <= n <= len(self.temperatures):
            raise IndexError(f"schedule defines steps 1..{len(self)}, asked for {n}")
        return self.temperatures[n - 1]

    @classmethod
    def constant(cls, t: float, length: int) -> "AnnealSchedule":
        return cls((t,) * length)

    @classmethod
    def linear(cls, start: float, end: float, length: int) -> "AnnealSchedule":
        return cls(tuple(np.linspace(start, end, length)))

    @classmethod
    def geometric(cls, start: float, end: float, length: int) -> "AnnealSchedule":
        return cls(tuple(np.geomspace(start, end, length)))

    @classmethod
    def from_document(cls, doc: dict) -> "AnnealSchedule":
        """``{"temperatures": [...]}`` or ``{"kind": constant|linear|geometric, "start", "end", "length"}``."""
        if "temperatures" in doc:
            return cls(tuple(doc["temperatures"]))
        kind = doc.get("kind")
        length = int(doc["length"])
        if kind == "constant":
            return cls.constant(float(doc["start"]), length)
        if kind == "linear":
            return cls.linear(float(doc["start"]), float(doc["end"]), length)
        if kind == "geometric":
            return cls.geometric(float(doc["start"]), float(doc["end"]), length)
        raise ValueError(f"unknown anneal kind {kind!r}")

    @classmethod
    def load(cls, path: str | Path) -> "AnnealSchedule":
        return cls.from_document(json.loads(Path(path).read_text()))


@dataclass
class InterventionEntry:
    step: int
    pre_gap: float
    post_gap: float
    action: str
    winner_before: int
    winner_after: int


@dataclass
class InterventionLog:
    entries: list[InterventionEntry] = field(default_factory=list)

    def to_jsonl(self, vocab: Vocabulary | None = None) -> str:
        lines = []
        for e in self.entries:
            rec = {"step": e.step, "pre_gap": e.pre_gap, "post_gap": e.post_gap, "action": e.action}
            if vocab is not None:
                rec["winner"] = vocab.labels[e.winner_after]
            lines.append(json.dumps(rec))
        return "".join(line + "\n" for line in lines)


def generate_with_policy(
    prompt: PromptSpec,
    vocab: Vocabulary,
    steps: int,
    policy: SamplingPolicy = SamplingPolicy(),
    cooling: GapCoolingConfig | None = None,
    anneal: AnnealSchedule | None = None,
    *,
    scale: bool = False,
    lean: bool = False,
) -> tuple[GenerationTrace, InterventionLog]:
    """Generation with optional gap cooling and an annealed temperature.

    The schedule, when given, replaces the policy's static temperature and
    forces thermal selection. The appended context spin is always the
    emitted token's own spin.
    """
    log = InterventionLog()
    if anneal is not None and len(anneal) < steps:
        raise ValueError(f"anneal schedule has {len(anneal)} steps, generation needs {steps}")

    hook = None
    if cooling is not None:
        def hook(n: int, levels: np.ndarray, context: Sequence[int]) -> np.ndarray:
            pre = top_two_gap(levels)
            if pre >= cooling.trigger_gap:
                return levels
            cooled = gap_cool(levels, cooling, incumbent=int(context[-1]))
            before, after = int(np.argmin(levels)), int(np.argmin(cooled))
            if before != after and cooling.mode != HOLD:
                raise AssertionError(f"gap cooling changed the winner at step {n}")
            log.entries.append(InterventionEntry(
                n, pre, top_two_gap(cooled), f"{cooling.mode}_boost", before, after))
            return cooled

    temperature_at = anneal.at if anneal is not None else None
    if anneal is not None and policy.mode != THERMAL:
        policy = SamplingPolicy(THERMAL, anneal.at(1), policy.seed)
    trace = generate(prompt, vocab, steps, policy, scale=scale, lean=lean,
                     adjust_levels=hook, temperature_at=temperature_at)
    return trace, log


def first_emission(trace: GenerationTrace, token: int) -> int | None:
    """Iteration of the first emission of ``token``, or None."""
    for s in trace.steps:
        if s.token == token:
            return s.iteration
    return None
