"""Giant-cluster growth of token spins across layers.

Simulation links two tokens when their separation is below a threshold and
tracks the largest connected component. Theory solves, layer by layer, the
self-consistent multi-species equation

    G_r = (N_r / N) * (1 - exp(-2 * sum_q C_rq(L) * G_q / N)),
    C_rq(L) = sum_{L' <= L} F_rq(L'),

with G(L) = sum_r G_r.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .multilayer import Trajectory, distance_matrix

SIMULATED = "simulated"
THEORETICAL = "theoretical"


class SolverError(ArithmeticError):
    def __init__(self, message: str, layer: int, residual: float):
        super().__init__(f"{message} (layer {layer}, residual {residual:.3e})")
        self.layer = layer
        self.residual = residual


@dataclass(frozen=True)
class SpeciesPartition:
    assignment: tuple[int, ...]  # token index -> species index
    names: tuple[str, ...] = ()

    def __post_init__(self):
        a = tuple(int(s) for s in self.assignment)
        if not a:
            raise ValueError("partition must cover at least one token")
        if min(a) < 0:
            raise ValueError("species indices must be non-negative")
        D = max(a) + 1
        pops = np.bincount(a, minlength=D)
        if np.any(pops == 0):
            raise ValueError(f"species {int(np.argmin(pops))} has no tokens")
        names = tuple(self.names) or tuple(f"s{k}" for k in range(D))
        if len(names) != D:
            raise ValueError(f"{len(names)} species names for {D} species")
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_populations(cls, populations: Sequence[int], names: Sequence[str] = ()) -> "SpeciesPartition":
        """Contiguous blocks: the first N_1 tokens are species 0, and so on."""
        return cls(tuple(s for s, n in enumerate(populations) for _ in range(int(n))), tuple(names))

    @property
    def populations(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_species)

    @property
    def n_species(self) -> int:
        return max(self.assignment) + 1

    @property
    def total(self) -> int:
        return len(self.assignment)


@dataclass
class SimilarityKernel:
    F: np.ndarray  # (L_max, D, D); F[L'-1] is the kernel at layer L'

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64)
        if F.ndim == 2:
            F = F[None]
        if F.ndim != 3 or F.shape[1] != F.shape[2]:
            raise ValueError(f"kernel must have shape (layers, D, D), got {F.shape}")
        if not np.all(np.isfinite(F)):
            raise ValueError("kernel entries must be finite")
        if np.any(F < 0):
            raise ValueError("kernel entries must be >= 0")
        if not np.allclose(F, F.transpose(0, 2, 1), rtol=0, atol=1e-12):
            raise ValueError("kernel must be symmetric at every layer")
        self.F = F

    @classmethod
    def constant(cls, matrix, layers: int) -> "SimilarityKernel":
        m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        return cls(np.repeat(m[None], layers, axis=0))

    @property
    def layers(self) -> int:
        return self.F.shape[0]

    @property
    def n_species(self) -> int:
        return self.F.shape[1]

    def to_document(self) -> dict:
        return {"format_version": 1,
                "layers": [{"layer": L + 1, "F": m.tolist()} for L, m in enumerate(self.F)]}

    @classmethod
    def from_document(cls, doc: dict) -> "SimilarityKernel":
        blocks = sorted(doc["layers"], key=lambda b: b["layer"])
        if [b["layer"] for b in blocks] != list(range(1, len(blocks) + 1)):
            raise ValueError("kernel layers must be numbered 1..L_max without gaps")
        return cls(np.array([b["F"] for b in blocks], dtype=np.float64))


@dataclass
class GrowthCurve:
    layers: np.ndarray  # layer index L
    G: np.ndarray
    composition: np.ndarray  # (len(layers), D)
    provenance: str
    species: tuple[str, ...] = ()
    residuals: np.ndarray | None = None

    def onset(self, level: float = 1e-3) -> int | None:
        """First layer whose G exceeds ``level``; None if it never does or starts above it."""
        above = np.nonzero(self.G > level)[0]
        if not above.size or above[0] == 0:
            return None
        return int(self.layers[above[0]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.species or tuple(f"s{k}" for k in range(self.composition.shape[1]))
        w.writerow(["L", "G"] + [f"G_{n}" for n in names] + ["provenance"])
        for L, g, comp in zip(self.layers, self.G, self.composition):
            w.writerow([int(L), repr(float(g))] + [repr(float(c)) for c in comp] + [self.provenance])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GrowthCurve":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[:2] != ["L", "G"] or header[-1] != "provenance":
            raise ValueError("growth CSV must have columns L, G, G_..., provenance")
        species = tuple(h[2:] for h in header[2:-1])
        layers = np.array([int(r[0]) for r in body])
        G = np.array([float(r[1]) for r in body])
        comp = np.array([[float(v) for v in r[2:-1]] for r in body]).reshape(len(body), len(species))
        prov = body[0][-1] if body else ""
        return cls(layers, G, comp, prov, species)


def link_components(spins, threshold: float) -> np.ndarray:
    """Component label per token; label = smallest token index in the component."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    pts = np.asarray(spins, dtype=np.float64)
    n = pts.shape[0]
    adj = distance_matrix(pts) < threshold
    np.fill_diagonal(adj, False)
    _, raw = connected_components(csr_matrix(adj), directed=False)
    first = {}
    for i, c in enumerate(raw):
        first.setdefault(c, i)
    return np.array([first[c] for c in raw], dtype=int) if n else np.zeros(0, dtype=int)


def largest_component(labels: np.ndarray) -> np.ndarray:
    """Member mask of the largest component (ties: smallest label)."""
    ids, counts = np.unique(labels, return_counts=True)
    best = ids[np.argmax(counts)]
    return labels == best


def growth_sim(traj: Trajectory, threshold: float, partition: SpeciesPartition) -> GrowthCurve:
    if partition.total != traj.n_tokens:
        raise ValueError(f"partition covers {partition.total} tokens, trajectory has {traj.n_tokens}")
    N = traj.n_tokens
    assign = np.array(partition.assignment)
    G, comp = [], []
    for state in traj.positions:
        mask = largest_component(link_components(state, threshold))
        G.append(mask.sum() / N)
        comp.append(np.bincount(assign[mask], minlength=partition.n_species) / N)
    return GrowthCurve(np.arange(traj.depth + 1), np.array(G), np.array(comp), SIMULATED,
                       partition.names)


def _solve_layer(C: np.ndarray, frac: np.ndarray, N: int, layer: int, damping: float,
                 max_iter: int, tol: float) -> tuple[np.ndarray, float]:
    """Positive root of G = frac * (1 - exp(-2 C G / N)), or zeros when none exists."""
    J = (2.0 / N) * frac[:, None] * C
    rho = float(np.max(np.abs(np.linalg.eigvals(J)))) if J.size else 0.0
    if rho <= 1.0 + 1e-12:
        # concave monotone map: only the trivial fixed point
        return np.zeros_like(frac), 0.0

    def phi(g):
        return frac * -np.expm1(-2.0 * (C @ g) / N)

    g = frac / 2.0
    for _ in range(max_iter):
        new = phi(g)
        done = float(np.max(np.abs(new - g))) < tol
        g = new if done else (1 - damping) * g + damping * new
        if done:
            break
    # near criticality a small residual still leaves g far from the root
    # (error ~ residual / (1 - phi')), so always finish with Newton steps
    eye = np.eye(len(g))
    res = math.inf
    for _ in range(100):
        e = np.exp(-2.0 * (C @ g) / N)
        jac = (2.0 / N) * (frac * e)[:, None] * C - eye
        step = np.linalg.solve(jac, phi(g) - g)
        g = g - step
        res = float(np.max(np.abs(phi(g) - g)))
        if float(np.max(np.abs(step))) < 1e-14 and res < tol and np.all(g > 0):
            return g, res
    raise SolverError("fixed-point iteration did not converge", layer, res)


def growth_theory(kernel: SimilarityKernel, partition: SpeciesPartition, L_max: int | None = None,
                  *, damping: float = 0.5, max_iter: int = 100_000, tol: float = 1e-10) -> GrowthCurve:
    """Theoretical giant-cluster size for L = 0..L_max from the cumulative kernel."""
    L_max = kernel.layers if L_max is None else int(L_max)
    if L_max > kernel.layers:
        raise ValueError(f"kernel defined for {kernel.layers} layers, asked for {L_max}")
    if kernel.n_species != partition.n_species:
        raise ValueError(f"kernel has {kernel.n_species} species, partition {partition.n_species}")
    N = partition.total
    frac = partition.populations / N
    cum = np.concatenate([np.zeros((1,) + kernel.F.shape[1:]), np.cumsum(kernel.F[:L_max], axis=0)])
    comps, res = [], []
    for L in range(L_max + 1):
        g, r = _solve_layer(cum[L], frac, N, L, damping, max_iter, tol)
        comps.append(g)
        res.append(r)
    comps = np.array(comps)
    return GrowthCurve(np.arange(L_max + 1), comps.sum(axis=1), comps, THEORETICAL,
                       partition.names, np.array(res))


@dataclass(frozen=True)
class OnsetEstimate:
    L_c: float
    F_bar: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.L_c)


def mean_similarity(kernel: SimilarityKernel, partition: SpeciesPartition) -> float:
    """Population-weighted mean of F_sr over species pairs and layers."""
    p = partition.populations / partition.total
    w = np.outer(p, p)
    return float(np.mean(np.einsum("lsr,sr->l", kernel.F, w)))


def onset_layer(kernel: SimilarityKernel, partition: SpeciesPartition) -> OnsetEstimate:
    if kernel.layers == 0:
        raise ValueError("kernel has no layers")
    F_bar = mean_similarity(kernel, partition)
    L_c = partition.total / (2 * F_bar) if F_bar > 0 else math.inf
    return OnsetEstimate(L_c, F_bar)


def kernel_from_trajectory(traj: Trajectory, partition: SpeciesPartition) -> SimilarityKernel:
    """Mean clamped dot product between species at every post-input layer."""
    if partition.total != traj.n_tokens:
        raise ValueError(f"partition covers {partition.total} tokens, trajectory has {traj.n_tokens}")
    assign = np.array(partition.assignment)
    D = partition.n_species
    onehot = np.eye(D)[assign]  # (n, D)
    pops = onehot.sum(axis=0)
    pair_counts = np.outer(pops, pops) - np.diag(pops)
    # a singleton species has no within-species pair; its diagonal entry stays 0
    denom = np.where(pair_counts > 0, pair_counts, 1)
    F = []
    for state in traj.positions[1:]:
        sim = np.maximum(state @ state.T, 0.0)
        np.fill_diagonal(sim, 0.0)
        F.append(onehot.T @ sim @ onehot / denom)
    return SimilarityKernel(np.array(F).reshape(-1, D, D))


def load_populations(path: str | Path) -> SpeciesPartition:
    """``{"populations": [...], "names": [...]}`` or ``{"assignment": [...]}``."""
    doc = json.loads(Path(path).read_text())
    if "assignment" in doc:
        return SpeciesPartition(tuple(doc["assignment"]), tuple(doc.get("names", ())))
    return SpeciesPartition.from_populations(doc["populations"], doc.get("names", ()))


def species_tokens(populations: Sequence[int], d: int, seed: int, spread: float = 0.6,
                   unit: bool = True) -> tuple[np.ndarray, SpeciesPartition]:
    """Random tokens scattered around one random centre direction per species."""
    rng = np.random.default_rng(seed)
    part = SpeciesPartition.from_populations(populations)
    centres = rng.normal(size=(part.n_species, d))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    x = centres[np.array(part.assignment)] + spread * rng.normal(size=(part.total, d))
    if unit:
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x, part
