"""Signed graphs, Laplacian variants, and the transforms that keep filtering well posed.

A signed graph stores undirected weighted edges (positive or negative) plus
optional per-node self-loops. Three Laplacian variants are supported:

* ``combinatorial``: L = D - W with D = diag(W 1). Self-loops cancel out.
* ``generalized``:   L = D - W + diag(W), so self-loops land on the diagonal.
* ``signed``:        L = D^s - W with absolute degrees D^s_ii = sum_j |W_ij|,
  which is positive semidefinite for any edge signs.

For a balanced signed graph (no cycle with an odd number of negative edges),
``similarity_transform`` conjugates the Laplacian by the diagonal polarity
matrix T = diag(beta), yielding the Laplacian of an all-positive graph with
the same eigenvalues. ``gct_shift`` adds the smallest uniform self-loop that
makes every Gershgorin disc left-end nonnegative, guaranteeing PSDness
without touching the eigenvectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np

from .errors import IsolatedNode, NotBalanced

COMBINATORIAL = "combinatorial"
GENERALIZED = "generalized"
SIGNED = "signed"
_VARIANTS = (COMBINATORIAL, GENERALIZED, SIGNED)


class Laplacian(NamedTuple):
    """Dense symmetric Laplacian matrix tagged with its construction variant."""

    matrix: np.ndarray
    variant: str


def as_matrix(L) -> np.ndarray:
    """Accept a Laplacian or a plain symmetric ndarray."""
    if isinstance(L, Laplacian):
        return L.matrix
    return np.asarray(L, dtype=float)


@dataclass(frozen=True, eq=False)
class SignedGraph:
    """Undirected signed weighted graph with optional self-loops.

    Edges are stored once with ``edge_i < edge_j``; weights are finite and
    nonzero. ``self_loops`` holds one real weight per node (0 = absent).
    """

    n_nodes: int
    edge_i: np.ndarray
    edge_j: np.ndarray
    weights: np.ndarray
    self_loops: np.ndarray

    @classmethod
    def from_edges(
        cls,
        n_nodes: int,
        edges: Iterable[tuple[int, int, float]],
        self_loops: np.ndarray | None = None,
    ) -> "SignedGraph":
        if n_nodes <= 0:
            raise ValueError("n_nodes must be positive")
        tuples = list(edges)
        ei = np.empty(len(tuples), dtype=np.int64)
        ej = np.empty(len(tuples), dtype=np.int64)
        w = np.empty(len(tuples), dtype=float)
        seen: set[tuple[int, int]] = set()
        for k, (i, j, wk) in enumerate(tuples):
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self edge ({i},{j}); use self_loops instead")
            if i > j:
                i, j = j, i
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise ValueError(f"edge ({i},{j}) out of range for {n_nodes} nodes")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i},{j})")
            seen.add((i, j))
            wk = float(wk)
            if not np.isfinite(wk) or wk == 0.0:
                raise ValueError(f"edge ({i},{j}) weight must be finite and nonzero, got {wk}")
            ei[k], ej[k], w[k] = i, j, wk
        if self_loops is None:
            loops = np.zeros(n_nodes, dtype=float)
        else:
            loops = np.asarray(self_loops, dtype=float).copy()
            if loops.shape != (n_nodes,):
                raise ValueError("self_loops must have one entry per node")
            if not np.all(np.isfinite(loops)):
                raise ValueError("self_loops must be finite")
        for arr in (ei, ej, w, loops):
            arr.setflags(write=False)
        return cls(n_nodes=n_nodes, edge_i=ei, edge_j=ej, weights=w, self_loops=loops)

    @property
    def n_edges(self) -> int:
        return int(self.edge_i.shape[0])

    def edge_list(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(w))
            for i, j, w in zip(self.edge_i, self.edge_j, self.weights)
        ]

    def with_weights(self, new_weights: np.ndarray) -> "SignedGraph":
        """Same topology and self-loops, different edge weights."""
        w = np.asarray(new_weights, dtype=float).copy()
        if w.shape != self.weights.shape:
            raise ValueError("weight array shape mismatch")
        if not np.all(np.isfinite(w)) or np.any(w == 0.0):
            raise ValueError("weights must be finite and nonzero")
        w.setflags(write=False)
        g = SignedGraph(self.n_nodes, self.edge_i, self.edge_j, w, self.self_loops)
        if "incident" in self.__dict__:  # topology unchanged, reuse the cache
            g.__dict__["incident"] = self.__dict__["incident"]
        return g

    def adjacency(self) -> np.ndarray:
        """Dense symmetric adjacency matrix with self-loops on the diagonal."""
        W = np.zeros((self.n_nodes, self.n_nodes), dtype=float)
        W[self.edge_i, self.edge_j] = self.weights
        W[self.edge_j, self.edge_i] = self.weights
        W[np.diag_indices(self.n_nodes)] = self.self_loops
        return W

    def abs_degrees(self) -> np.ndarray:
        """Sum of |w| over incident edges per node (self-loops excluded)."""
        deg = np.zeros(self.n_nodes, dtype=float)
        np.add.at(deg, self.edge_i, np.abs(self.weights))
        np.add.at(deg, self.edge_j, np.abs(self.weights))
        return deg

    @cached_property
    def incident(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-node (incident edge indices, neighbor node indices)."""
        buckets: list[list[int]] = [[] for _ in range(self.n_nodes)]
        others: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for k in range(self.n_edges):
            i, j = int(self.edge_i[k]), int(self.edge_j[k])
            buckets[i].append(k)
            others[i].append(j)
            buckets[j].append(k)
            others[j].append(i)
        return [
            (np.asarray(b, dtype=np.int64), np.asarray(o, dtype=np.int64))
            for b, o in zip(buckets, others)
        ]


def validate_polarity(beta, n_nodes: int) -> np.ndarray:
    """Check a per-node polarity vector: every entry exactly +1 or -1."""
    b = np.asarray(beta)
    if b.shape != (n_nodes,):
        raise ValueError(f"polarity vector must have length {n_nodes}")
    b = b.astype(np.int64)
    if not np.all(np.abs(b) == 1):
        raise ValueError("polarity entries must be +1 or -1")
    return b


def build_laplacian(g: SignedGraph, variant: str = COMBINATORIAL) -> Laplacian:
    """Assemble the dense Laplacian of ``g`` under the requested variant."""
    if variant not in _VARIANTS:
        raise ValueError(f"unknown Laplacian variant {variant!r}")
    W = g.adjacency()
    if variant == SIGNED:
        D = np.diag(np.abs(W).sum(axis=1))
        L = D - W
    else:
        D = np.diag(W.sum(axis=1))
        L = D - W
        if variant == GENERALIZED:
            L += np.diag(np.diag(W))
    L = 0.5 * (L + L.T)
    return Laplacian(L, variant)


def glr(L, x) -> float:
    """Quadratic-form signal variation x^T L x.

    ``x`` may be a vector or an (n, q) matrix of column signals; in the matrix
    case the per-column quadratic forms are summed.
    """
    M = as_matrix(L)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != M.shape[0]:
        raise ValueError(f"signal dimension {x.shape[0]} != {M.shape[0]} nodes")
    if x.ndim == 1:
        return float(x @ M @ x)
    return float(np.sum(x * (M @ x)))


def glr_edge_sum(g: SignedGraph, x) -> float:
    """Edge-sum form of the signal variation: sum_ij w_ij (x_i - x_j)^2."""
    x = np.asarray(x, dtype=float)
    diff = x[g.edge_i] - x[g.edge_j]
    if x.ndim == 1:
        return float(np.sum(g.weights * diff * diff))
    return float(np.sum(g.weights[:, None] * diff * diff))


def normalize_weights(g: SignedGraph) -> SignedGraph:
    """Symmetric degree normalization w / sqrt(absdeg_i * absdeg_j).

    Signs are preserved and every normalized magnitude is at most 1. Nodes
    without incident edges are passed through untouched; a node whose incident
    weights underflow to zero absolute degree raises IsolatedNode.
    """
    if g.n_edges == 0:
        return g
    deg = g.abs_degrees()
    touched = np.zeros(g.n_nodes, dtype=bool)
    touched[g.edge_i] = True
    touched[g.edge_j] = True
    bad = touched & (deg <= 0.0)
    if np.any(bad):
        raise IsolatedNode(f"zero absolute degree at nodes {np.nonzero(bad)[0].tolist()}")
    scale = np.sqrt(deg[g.edge_i]) * np.sqrt(deg[g.edge_j])
    return g.with_weights(g.weights / scale)


def gct_shift(L) -> tuple[Laplacian, float]:
    """Shift the diagonal up by the smallest amount that certifies PSDness.

    The Gershgorin disc left-end min_i (L_ii - sum_{j != i} |L_ij|) lower
    bounds the smallest eigenvalue; adding delta = max(-left_end, 0) to the
    diagonal makes every disc left-end nonnegative. Eigenvectors are
    unchanged and every eigenvalue moves up by exactly delta.
    """
    variant = L.variant if isinstance(L, Laplacian) else GENERALIZED
    M = as_matrix(L)
    radii = np.abs(M).sum(axis=1) - np.abs(np.diag(M))
    left_end = float(np.min(np.diag(M) - radii))
    delta = max(-left_end, 0.0)
    shifted = M if delta == 0.0 else M + delta * np.eye(M.shape[0])
    return Laplacian(shifted, variant), delta


def similarity_transform(L_b, beta) -> Laplacian:
    """Conjugate a balanced-graph Laplacian by T = diag(beta).

    Since T is its own inverse, the transform flips the sign of entry (i, j)
    exactly when beta_i * beta_j = -1. For a balanced graph consistent with
    ``beta`` the result is an all-positive-graph Laplacian (off-diagonals
    <= 0) with the identical eigenvalue multiset. Raises NotBalanced if any
    transformed off-diagonal is strictly positive (zero tolerance: the sign
    flip introduces no floating-point blur).
    """
    variant = L_b.variant if isinstance(L_b, Laplacian) else GENERALIZED
    M = as_matrix(L_b)
    b = validate_polarity(beta, M.shape[0]).astype(float)
    out = M * np.outer(b, b)
    off = out - np.diag(np.diag(out))
    if np.any(off > 0.0):
        i, j = np.unravel_index(int(np.argmax(off)), off.shape)
        raise NotBalanced(
            f"polarity vector inconsistent with edge signs: entry ({i},{j}) positive after transform"
        )
    return Laplacian(out, variant)


# ---------------------------------------------------------------------------
# Line-oriented text serialization
# ---------------------------------------------------------------------------

def format_graph(g: SignedGraph) -> str:
    """Serialize to the line format: ``nodes N``, ``i j w``, ``selfloop i w``.

    Weights are printed with shortest round-trip float representation, so
    parsing the output recovers the exact same binary values.
    """
    lines = [f"nodes {g.n_nodes}"]
    for i, j, w in g.edge_list():
        lines.append(f"{i} {j} {w!r}")
    for i, w in enumerate(g.self_loops):
        if w != 0.0:
            lines.append(f"selfloop {i} {float(w)!r}")
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> SignedGraph:
    """Inverse of :func:`format_graph`."""
    n_nodes = None
    edges: list[tuple[int, int, float]] = []
    loops: dict[int, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "nodes":
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: malformed nodes header")
            n_nodes = int(parts[1])
        elif parts[0] == "selfloop":
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: malformed selfloop line")
            loops[int(parts[1])] = float(parts[2])
        else:
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'i j w'")
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if n_nodes is None:
        raise ValueError("missing 'nodes N' header")
    self_loops = np.zeros(n_nodes, dtype=float)
    for i, w in loops.items():
        self_loops[i] = w
    return SignedGraph.from_edges(n_nodes, edges, self_loops)


def save_graph(g: SignedGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_graph(g))


def load_graph(path) -> SignedGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())
