"""Token spins, vocabularies and prompts.

A vocabulary is an ordered set of labelled d-dimensional real vectors. The
JSON document format is::

    {"dimension": 3,
     "tokens": [{"label": "A", "vector": [0.383, -0.321, 0.0]}, ...]}

Optional top-level keys: ``format_version`` and ``description``. Anything
else is rejected.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1
_ALLOWED_KEYS = {"dimension", "tokens", "format_version", "description"}
_TOKEN_KEYS = {"label", "vector"}


class DimensionError(ValueError):
    """Two spins (or a spin and a matrix) disagree in length."""

    def __init__(self, left: int, right: int, what: str = "vectors"):
        super().__init__(f"dimension mismatch between {what}: {left} != {right}")
        self.left = left
        self.right = right


class VocabularyError(ValueError):
    """Invalid vocabulary document or vocabulary invariant violation."""

    def __init__(self, message: str, label: str | None = None, position: int | None = None):
        where = []
        if label is not None:
            where.append(f"token {label!r}")
        if position is not None:
            where.append(f"position {position}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.label = label
        self.position = position


def as_spin(values: Iterable[float]) -> np.ndarray:
    """Return a read-only float64 copy of ``values``; rejects NaN/inf."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("spin must have at least one component")
    if not np.all(np.isfinite(arr)):
        raise ValueError("spin components must be finite")
    arr.flags.writeable = False
    return arr


def dot(a: Sequence[float], b: Sequence[float]) -> float:
    """Interaction (dot product) between two spins."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(a.size, b.size)
    return float(np.dot(a, b))


@dataclass(frozen=True)
class Vocabulary:
    labels: tuple[str, ...]
    spins: np.ndarray  # (size, d), read-only

    def __post_init__(self):
        spins = np.array(self.spins, dtype=np.float64)
        if spins.ndim != 2:
            raise VocabularyError("spins must be a 2-d array (size, dimension)")
        labels = tuple(self.labels)
        if len(labels) != spins.shape[0]:
            raise VocabularyError(f"{len(labels)} labels for {spins.shape[0]} spins")
        if len(labels) < 2:
            raise VocabularyError("vocabulary needs at least 2 tokens")
        seen = set()
        for i, lab in enumerate(labels):
            if not isinstance(lab, str) or not lab:
                raise VocabularyError("labels must be non-empty strings", position=i)
            if lab in seen:
                raise VocabularyError("duplicate label", label=lab, position=i)
            seen.add(lab)
        if spins.shape[1] < 1:
            raise VocabularyError("dimension must be >= 1")
        bad = ~np.isfinite(spins)
        if bad.any():
            i, k = map(int, np.argwhere(bad)[0])
            raise VocabularyError(f"non-finite component at index {k}", label=labels[i], position=i)
        spins.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spins", spins)

    @classmethod
    def from_mapping(cls, mapping: dict[str, Sequence[float]]) -> "Vocabulary":
        labels = list(mapping)
        rows = [list(mapping[k]) for k in labels]
        dims = {len(r) for r in rows}
        if len(dims) > 1:
            raise VocabularyError(f"ragged dimensions {sorted(dims)}")
        return cls(tuple(labels), np.array(rows, dtype=np.float64))

    @property
    def dimension(self) -> int:
        return self.spins.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown token label {label!r}; known: {list(self.labels)}") from None

    def spin(self, token: int | str) -> np.ndarray:
        if isinstance(token, str):
            token = self.index(token)
        return self.spins[self._check_id(token)]

    def _check_id(self, token: int) -> int:
        if not 0 <= int(token) < len(self):
            raise IndexError(f"token id {token} out of range for vocabulary of size {len(self)}")
        return int(token)

    def replace(self, label: str, vector: Sequence[float]) -> "Vocabulary":
        """Copy with one token's spin replaced (or appended if new)."""
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise DimensionError(vec.size, self.dimension)
        spins = self.spins.copy()
        labels = list(self.labels)
        if label in labels:
            spins[labels.index(label)] = vec
        else:
            labels.append(label)
            spins = np.vstack([spins, vec])
        return Vocabulary(tuple(labels), spins)

    def to_document(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "dimension": self.dimension,
            "tokens": [
                {"label": lab, "vector": [float(x) for x in row]}
                for lab, row in zip(self.labels, self.spins)
            ],
        }


def parse_vocabulary(doc: dict) -> Vocabulary:
    """Validate a decoded vocabulary document and build a Vocabulary."""
    if not isinstance(doc, dict):
        raise VocabularyError("vocabulary document must be a JSON object")
    unknown = set(doc) - _ALLOWED_KEYS
    if unknown:
        raise VocabularyError(f"unknown fields {sorted(unknown)}")
    if "tokens" not in doc:
        raise VocabularyError("missing field 'tokens'")
    tokens = doc["tokens"]
    if not isinstance(tokens, list):
        raise VocabularyError("'tokens' must be a list")
    declared = doc.get("dimension")
    labels, rows = [], []
    for i, tok in enumerate(tokens):
        if not isinstance(tok, dict):
            raise VocabularyError("token entry must be an object", position=i)
        label = tok.get("label")
        extra = set(tok) - _TOKEN_KEYS
        if extra:
            raise VocabularyError(f"unknown token fields {sorted(extra)}", label=label, position=i)
        if not isinstance(label, str) or not label:
            raise VocabularyError("missing or empty label", position=i)
        if label in labels:
            raise VocabularyError("duplicate label", label=label, position=i)
        vec = tok.get("vector")
        if not isinstance(vec, list) or not vec:
            raise VocabularyError("'vector' must be a non-empty list", label=label, position=i)
        for k, x in enumerate(vec):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise VocabularyError(f"component {k} is not a number", label=label, position=i)
            if not math.isfinite(x):
                raise VocabularyError(f"component {k} is not finite", label=label, position=i)
        if rows and len(vec) != len(rows[0]):
            raise VocabularyError(
                f"ragged dimensions: {len(vec)} components, expected {len(rows[0])}",
                label=label,
                position=i,
            )
        if declared is not None and len(vec) != declared:
            raise VocabularyError(
                f"{len(vec)} components but dimension is {declared}", label=label, position=i
            )
        labels.append(label)
        rows.append([float(x) for x in vec])
    if len(labels) < 2:
        raise VocabularyError(f"vocabulary needs at least 2 tokens, got {len(labels)}")
    return Vocabulary(tuple(labels), np.array(rows, dtype=np.float64))


def load_vocabulary(source: str | Path | dict) -> Vocabulary:
    """Load a vocabulary from a JSON file path, a JSON string or a decoded dict."""
    if isinstance(source, dict):
        return parse_vocabulary(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise VocabularyError(f"invalid JSON: {exc}") from None
    return parse_vocabulary(doc)


def dump_vocabulary(vocab: Vocabulary) -> str:
    return json.dumps(vocab.to_document(), indent=2) + "\n"


@dataclass(frozen=True)
class PromptSpec:
    tokens: tuple[int, ...]

    def __post_init__(self):
        toks = tuple(int(t) for t in self.tokens)
        if not toks:
            raise ValueError("prompt must contain at least one token")
        if any(t < 0 for t in toks):
            raise ValueError("token ids must be non-negative")
        object.__setattr__(self, "tokens", toks)

    def __len__(self):
        return len(self.tokens)

    def validate(self, vocab: Vocabulary) -> "PromptSpec":
        for t in self.tokens:
            vocab._check_id(t)
        return self

    def labels(self, vocab: Vocabulary) -> list[str]:
        return [vocab.labels[t] for t in self.tokens]


def parse_prompt(text: str | Sequence[str] | PromptSpec, vocab: Vocabulary) -> PromptSpec:
    """Turn ``"ACCA"``, ``"A C C A"`` or ``["A", "C"]`` into a PromptSpec.

    Whitespace/comma separated text is split on separators; otherwise the
    string is taken whole if it is a label, else one label per character.
    """
    if isinstance(text, PromptSpec):
        return text.validate(vocab)
    if isinstance(text, str):
        if re.search(r"[\s,]", text.strip()):
            parts = [p for p in re.split(r"[\s,]+", text.strip()) if p]
        elif text in vocab.labels:
            parts = [text]
        else:
            parts = list(text)
    else:
        parts = list(text)
    return PromptSpec(tuple(vocab.index(p) for p in parts))
