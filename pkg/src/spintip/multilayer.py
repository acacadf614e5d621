"""Token spins passing through a stack of attention layers.

Each layer: every position attends to all positions (query W_q x_i, keys
W_k x_j, values W_v x_j, softmax at T = 1), the attention output is blended
with the input through the residual weight alpha, and the result is
optionally projected back to the unit sphere.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .spinspace import DimensionError

FUSION = "fusion"
FISSION = "fission"
NEUTRAL = "neutral"


class DegenerateNormError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LayerParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    alpha: float = 0.5
    normalize: bool = True

    def __post_init__(self):
        mats = []
        for name in ("w_q", "w_k", "w_v"):
            m = np.array(getattr(self, name), dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} has non-finite entries")
            m.flags.writeable = False
            object.__setattr__(self, name, m)
            mats.append(m)
        if len({m.shape for m in mats}) != 1:
            raise ValueError("w_q, w_k, w_v must share one dimension")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"residual weight alpha must lie in [0, 1], got {self.alpha}")

    @property
    def dimension(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def identity(cls, d: int, alpha: float = 0.5, normalize: bool = True) -> "LayerParams":
        eye = np.eye(d)
        return cls(eye, eye, eye, alpha, normalize)


@dataclass(frozen=True)
class LayerStack:
    layers: tuple[LayerParams, ...]
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len({p.dimension for p in self.layers}) > 1:
            raise ValueError("all layers must share one dimension")

    def __len__(self):
        return len(self.layers)

    @classmethod
    def random(cls, depth: int, d: int, seed: int, alpha: float = 0.5, normalize: bool = True,
               shared: bool = False) -> "LayerStack":
        """Gaussian W entries with standard deviation 1/sqrt(d), one draw per layer unless shared."""
        rng = np.random.default_rng(seed)

        def draw():
            return tuple(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)) for _ in range(3))

        if shared:
            mats = draw()
            layers = [LayerParams(*mats, alpha, normalize) for _ in range(depth)]
        else:
            layers = [LayerParams(*draw(), alpha, normalize) for _ in range(depth)]
        return cls(tuple(layers), seed)

    @classmethod
    def from_document(cls, doc: dict, d: int) -> "LayerStack":
        """Build from ``{depth, alpha, normalize, shared, w_init: {kind, seed}}`` or explicit ``layers``."""
        known = {"depth", "alpha", "normalize", "shared", "w_init", "layers", "format_version"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown stack fields {sorted(unknown)}")
        alpha = float(doc.get("alpha", 0.5))
        normalize = bool(doc.get("normalize", True))
        if "layers" in doc:
            layers = [
                LayerParams(np.array(L["w_q"]), np.array(L["w_k"]), np.array(L["w_v"]),
                            float(L.get("alpha", alpha)), bool(L.get("normalize", normalize)))
                for L in doc["layers"]
            ]
            stack = cls(tuple(layers))
            if layers and stack.layers[0].dimension != d:
                raise DimensionError(stack.layers[0].dimension, d, "stack and tokens")
            return stack
        depth = int(doc["depth"])
        init = doc.get("w_init", {"kind": "gaussian", "seed": 0})
        kind = init.get("kind", "gaussian")
        if kind == "identity":
            return cls(tuple(LayerParams.identity(d, alpha, normalize) for _ in range(depth)))
        if kind != "gaussian":
            raise ValueError(f"unknown w_init kind {kind!r}")
        return cls.random(depth, d, int(init.get("seed", 0)), alpha, normalize,
                          bool(doc.get("shared", False)))


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    return w / w.sum(axis=1, keepdims=True)


def layer_forward(tokens, params: LayerParams) -> np.ndarray:
    x = np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("layer_forward needs a non-empty (n, d) array of spins")
    if x.shape[1] != params.dimension:
        raise DimensionError(x.shape[1], params.dimension, "tokens and layer")
    q = x @ params.w_q.T
    k = x @ params.w_k.T
    v = x @ params.w_v.T
    out = _softmax_rows(q @ k.T) @ v
    r = (1.0 - params.alpha) * x + params.alpha * out
    if params.normalize:
        norms = np.linalg.norm(r, axis=1, keepdims=True)
        if np.any(norms < 1e-300):
            raise DegenerateNormError("zero vector cannot be projected to the unit sphere")
        # rows already on the sphere are left bit-identical (no ulp drift across layers)
        on_sphere = np.abs(norms - 1.0) <= 4 * np.finfo(np.float64).eps
        r = np.where(on_sphere, r, r / norms)
    return r


@dataclass
class Trajectory:
    positions: np.ndarray  # (layers + 1, n_tokens, d); index 0 = input embeddings
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.labels:
            self.labels = tuple(str(i) for i in range(self.positions.shape[1]))

    @property
    def depth(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def n_tokens(self) -> int:
        return self.positions.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.positions.shape[2]
        w.writerow(["layer", "token"] + [f"x{k}" for k in range(d)])
        for L, state in enumerate(self.positions):
            for lab, x in zip(self.labels, state):
                w.writerow([L, lab] + [repr(float(v)) for v in x])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[:2] != ["layer", "token"]:
            raise ValueError("trajectory CSV must start with columns layer, token")
        depth = max(int(r[0]) for r in body) + 1
        labels: list[str] = []
        for r in body:
            if int(r[0]) == 0:
                labels.append(r[1])
        pos = np.zeros((depth, len(labels), len(header) - 2))
        counts = [0] * depth
        for r in body:
            L = int(r[0])
            pos[L, counts[L]] = [float(v) for v in r[2:]]
            counts[L] += 1
        if any(c != len(labels) for c in counts):
            raise ValueError("token count differs across layers")
        return cls(pos, tuple(labels))


def propagate(tokens, stack: LayerStack, labels: Sequence[str] = ()) -> Trajectory:
    x = np.asarray(tokens, dtype=np.float64)
    states = [x]
    for params in stack.layers:
        x = layer_forward(x, params)
        states.append(x)
    return Trajectory(np.stack(states), tuple(labels))


def distance_matrix(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass
class PairSeparationSeries:
    pairs: list[tuple[int, int]]
    distances: np.ndarray  # (layers + 1, n_pairs)
    labels: dict[tuple[int, int], str] = field(default_factory=dict)
    token_labels: tuple[str, ...] = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "pair", "distance", "label"])
        for L, row in enumerate(self.distances):
            for (i, j), dist in zip(self.pairs, row):
                name = f"{self.token_labels[i]}-{self.token_labels[j]}"
                w.writerow([L, name, repr(float(dist)), self.labels[(i, j)]])
        return buf.getvalue()


def pair_separations(traj: Trajectory, margin: float = 1e-6) -> PairSeparationSeries:
    """Euclidean separations per layer, with a fusion/fission/neutral label per pair."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    n = traj.n_tokens
    pairs = list(itertools.combinations(range(n), 2))
    dist = np.stack([distance_matrix(state) for state in traj.positions])
    if pairs:
        ii, jj = np.array(pairs).T
        series = dist[:, ii, jj]
    else:
        series = np.zeros((dist.shape[0], 0))
    labels = {}
    for k, p in enumerate(pairs):
        first, last = series[0, k], series[-1, k]
        if last < first - margin:
            labels[p] = FUSION
        elif last > first + margin:
            labels[p] = FISSION
        else:
            labels[p] = NEUTRAL
    return PairSeparationSeries(pairs, series, labels, traj.labels)


def load_stack(path: str | Path, d: int) -> LayerStack:
    return LayerStack.from_document(json.loads(Path(path).read_text()), d)
