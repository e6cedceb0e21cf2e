"""Directed weighted connectivity graphs and small-world metrics.

A :class:`BrainGraph` stores a dense nonnegative weight matrix ``W`` where
``W[i, j] > 0`` is an edge ``i -> j``. Graphs built from a PSI matrix carry one
edge per selected pair, from the leading channel to the lagging one, weighted
by ``|psi|``.

Clustering and assortativity are computed on the undirected collapse
``max(W, W.T)``; shortest paths use the directed graph with edge length
``1 / weight`` (or ``weight`` when ``length="weight"``).
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.sparse.csgraph import shortest_path

from .exceptions import DegenerateInputError, UndefinedMetricError
from .validation import check_antisymmetric, check_mask

LENGTH_MAPS = ("inverse", "weight")


class BrainGraph:
    """Directed weighted graph on labelled nodes.

    Parameters
    ----------
    W : ndarray of shape (n_nodes, n_nodes)
        Nonnegative weights, zero diagonal; ``W[i, j] > 0`` is an edge i -> j.
    nodes : sequence of str, optional
    """

    def __init__(self, W, nodes=None):
        W = np.array(W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"weight matrix must be square, got {W.shape}")
        if not np.isfinite(W).all() or (W < 0).any():
            raise ValueError("weights must be finite and nonnegative")
        if np.any(np.diag(W) != 0):
            raise ValueError("self-loops are not allowed")
        self.W = W
        self.W.setflags(write=False)
        n = W.shape[0]
        self.nodes = list(nodes) if nodes is not None else [str(i) for i in range(n)]
        if len(self.nodes) != n:
            raise ValueError(f"{len(self.nodes)} node names for {n} nodes")

    @property
    def n_nodes(self):
        return self.W.shape[0]

    @property
    def n_edges(self):
        return int(np.count_nonzero(self.W))

    @property
    def is_symmetric(self):
        return bool(np.array_equal(self.W > 0, (self.W > 0).T))

    def edges(self):
        """``(src, dst, weight)`` triples in row-major order."""
        src, dst = np.nonzero(self.W)
        return [(int(s), int(d), float(self.W[s, d])) for s, d in zip(src, dst)]

    def undirected(self):
        """Symmetric weights ``max(W, W.T)``."""
        return np.maximum(self.W, self.W.T)

    def out_degree(self):
        return (self.W > 0).sum(axis=1)

    def in_degree(self):
        return (self.W > 0).sum(axis=0)

    def degree(self):
        """Degree in the undirected collapse."""
        return (self.undirected() > 0).sum(axis=1)

    def reversed(self):
        return BrainGraph(self.W.T, self.nodes)

    @classmethod
    def from_edges(cls, n_nodes, edges, nodes=None):
        W = np.zeros((n_nodes, n_nodes))
        for s, d, w in edges:
            W[s, d] = w
        return cls(W, nodes)

    @classmethod
    def from_undirected(cls, A, nodes=None):
        """Graph with both orientations of every edge of a symmetric matrix."""
        A = np.asarray(A, dtype=np.float64)
        if not np.array_equal(A, A.T):
            raise ValueError("matrix is not symmetric")
        return cls(A, nodes)

    def to_edge_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst", "weight"])
            for s, d, wt in self.edges():
                w.writerow([self.nodes[s], self.nodes[d], repr(wt)])

    def to_bundle(self, metrics=None) -> dict:
        return {"nodes": list(self.nodes),
                "edges": [{"src": self.nodes[s], "dst": self.nodes[d], "weight": w}
                          for s, d, w in self.edges()],
                "metrics": metrics.to_dict() if metrics is not None else None}

    def __eq__(self, other):
        return (isinstance(other, BrainGraph) and self.nodes == other.nodes
                and np.array_equal(self.W, other.W))


def build_graph(mean_psi, mask=None, nodes=None) -> BrainGraph:
    """Orient every masked pair with nonzero PSI from leader to lagger.

    Parameters
    ----------
    mean_psi : ndarray of shape (n, n)
        Antisymmetric PSI matrix; ``psi[i, j] > 0`` means i leads j.
    mask : bool array or feature ids over the ``n(n-1)/2`` upper-triangle pairs
        ``None`` keeps every pair.
    nodes : sequence of str, optional
    """
    P = check_antisymmetric(mean_psi)
    n = P.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = (np.ones(len(iu), dtype=bool) if mask is None
            else check_mask(mask, len(iu)))
    W = np.zeros((n, n))
    v = P[iu, ju]
    sel = keep & (v != 0)
    fwd = sel & (v > 0)
    back = sel & (v < 0)
    W[iu[fwd], ju[fwd]] = v[fwd]
    W[ju[back], iu[back]] = -v[back]
    return BrainGraph(W, nodes)


# --------------------------------------------------------------------------
# metrics

def clustering(graph: BrainGraph) -> float:
    """Average weighted clustering coefficient of the undirected collapse.

    Uses the geometric mean of triangle weights, with weights divided by the
    largest weight; nodes with fewer than two neighbours contribute 0.
    """
    return float(np.mean(local_clustering(graph))) if graph.n_nodes else 0.0


def local_clustering(graph: BrainGraph):
    U = graph.undirected()
    top = U.max(initial=0.0)
    if top <= 0:
        return np.zeros(graph.n_nodes)
    R = np.cbrt(U / top)
    tri = np.einsum("ij,jk,ki->i", R, R, R)
    k = (U > 0).sum(axis=1).astype(np.float64)
    denom = k * (k - 1)
    out = np.zeros_like(tri)
    np.divide(tri, denom, out=out, where=denom > 0)
    return out


def edge_lengths(W, length="inverse"):
    if length not in LENGTH_MAPS:
        raise ValueError(f"length must be one of {LENGTH_MAPS}, got {length!r}")
    Lm = np.zeros_like(W)
    nz = W > 0
    Lm[nz] = 1.0 / W[nz] if length == "inverse" else W[nz]
    return Lm


def path_lengths(graph: BrainGraph, length="inverse"):
    """All-pairs directed shortest path lengths (``inf`` when unreachable)."""
    return shortest_path(edge_lengths(graph.W, length), method="D", directed=True)


def avg_shortest_path(graph: BrainGraph, length="inverse", return_unreachable=False):
    """Mean directed shortest path length over reachable ordered pairs.

    Returns ``nan`` when no ordered pair is reachable. With
    ``return_unreachable=True`` also returns the number of excluded pairs.
    """
    if graph.n_nodes < 2:
        raise ValueError("need at least two nodes")
    D = path_lengths(graph, length)
    off = ~np.eye(graph.n_nodes, dtype=bool)
    d = D[off]
    ok = np.isfinite(d)
    L = float(d[ok].mean()) if ok.any() else float("nan")
    if return_unreachable:
        return L, int((~ok).sum())
    return L


def assortativity(graph: BrainGraph) -> float:
    """Pearson correlation of endpoint degrees over undirected edges."""
    U = graph.undirected() > 0
    i, j = np.nonzero(np.triu(U, 1))
    if len(i) < 2:
        raise UndefinedMetricError("assortativity needs at least two edges")
    deg = U.sum(axis=1).astype(np.float64)
    x = np.concatenate([deg[i], deg[j]])
    y = np.concatenate([deg[j], deg[i]])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-12 * len(x) * max(1.0, x.mean() ** 2):
        raise UndefinedMetricError("degree variance is zero")
    return float(xc @ (y - y.mean()) / sxx)


# --------------------------------------------------------------------------
# reference graphs

@njit(cache=True)
def _swap_kernel(ends, A, picks, flips, sym, oriented, lattice):
    n = A.shape[0]
    for t in range(picks.shape[0]):
        e1 = picks[t, 0]
        e2 = picks[t, 1]
        if e1 == e2:
            continue
        a, b = ends[e1, 0], ends[e1, 1]
        c, d = ends[e2, 0], ends[e2, 1]
        if sym and flips[t]:
            c, d = d, c
        if a == c or a == d or b == c or b == d:
            continue
        if A[a, d] or A[c, b]:
            continue
        if (sym or oriented) and (A[d, a] or A[b, c]):
            continue
        if lattice:
            before = _ring(a, b, n) + _ring(c, d, n)
            after = _ring(a, d, n) + _ring(c, b, n)
            if not after < before:
                continue
        A[a, b] = False
        A[c, d] = False
        A[a, d] = True
        A[c, b] = True
        if sym:
            A[b, a] = False
            A[d, c] = False
            A[d, a] = True
            A[b, c] = True
        ends[e1, 1] = d
        ends[e2, 0] = c
        ends[e2, 1] = b


@njit(cache=True)
def _ring(a, b, n):
    d = abs(a - b)
    return min(d, n - d)


def _swap_edges(graph, n_swaps, rng, lattice=False):
    """Degree-preserving double-edge swaps.

    Symmetric graphs swap undirected edges {a,b},{c,d} -> {a,d},{c,b} (or the
    other pairing). Others swap directed edges a->b, c->d -> a->d, c->b, which
    keeps every in- and out-degree. Swaps that would create a self-loop or a
    duplicate edge are rejected; for graphs without reciprocal edges, so are
    swaps that would create one. With ``lattice=True`` a swap must also
    strictly lower the summed ring distance of its two edges.
    """
    W = graph.W
    sym = graph.is_symmetric
    src, dst = np.nonzero(np.triu(W, 1) if sym else W)
    m = len(src)
    if m < 2:
        raise DegenerateInputError("need at least two edges to swap")
    weights = W[src, dst]
    ends = np.column_stack([src, dst]).astype(np.int64)
    oriented = not sym and not np.any((W > 0) & (W.T > 0))
    picks = rng.integers(m, size=(n_swaps, 2))
    flips = rng.random(n_swaps) < 0.5
    _swap_kernel(ends, (W > 0).copy(), picks, flips, sym, oriented, lattice)
    out = np.zeros_like(W)
    out[ends[:, 0], ends[:, 1]] = weights
    if sym:
        out[ends[:, 1], ends[:, 0]] = weights
    return BrainGraph(out, graph.nodes)


def default_swaps(graph):
    m = graph.n_edges // (2 if graph.is_symmetric else 1)
    return 10 * m


def random_reference(graph: BrainGraph, n_swaps=None, rng=None) -> BrainGraph:
    """Degree-preserving randomisation; weights travel with their edges."""
    rng = np.random.default_rng(rng)
    return _swap_edges(graph, default_swaps(graph) if n_swaps is None else n_swaps, rng)


def lattice_reference(graph: BrainGraph, n_swaps=None, rng=None) -> BrainGraph:
    """Degree-preserving latticisation around a ring of the node order.

    A swap is accepted only when it strictly lowers the total ring distance
    of the two edges involved, concentrating edges near the ring.
    """
    rng = np.random.default_rng(rng)
    return _swap_edges(graph, default_swaps(graph) if n_swaps is None else n_swaps,
                       rng, lattice=True)


# --------------------------------------------------------------------------
# summary

@dataclass
class GraphMetrics:
    C: float
    L: float
    A: float
    sigma: float
    omega: float
    C_rand: float = float("nan")
    L_rand: float = float("nan")
    C_latt: float = float("nan")
    unreachable: int = 0

    def to_dict(self):
        return {k: (None if isinstance(v, float) and np.isnan(v) else v)
                for k, v in asdict(self).items()}


def small_world(graph: BrainGraph, n_refs=20, rng=None, length="inverse",
                n_swaps=None, return_refs=False):
    """Small-world coefficients ``sigma`` and ``omega``.

    ``sigma = (C / C_rand) / (L / L_rand)`` and ``omega = L_rand / L - C / C_latt``
    with reference values averaged over ``n_refs`` random and lattice
    references. Each reference draws from its own spawned stream.
    """
    if n_refs < 1:
        raise ValueError("n_refs must be >= 1")
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(
        np.random.default_rng(rng).integers(2 ** 63))
    children = seq.spawn(2 * n_refs)
    C = clustering(graph)
    L = avg_shortest_path(graph, length)
    Cr, Lr, Cl = [], [], []
    for r in range(n_refs):
        ref = random_reference(graph, n_swaps, np.random.default_rng(children[2 * r]))
        Cr.append(clustering(ref))
        Lr.append(avg_shortest_path(ref, length))
        lat = lattice_reference(graph, n_swaps, np.random.default_rng(children[2 * r + 1]))
        Cl.append(clustering(lat))
    C_rand, L_rand, C_latt = map(float, (np.mean(Cr), np.mean(Lr), np.mean(Cl)))
    # zero reference clustering or path length leaves sigma/omega undefined
    with np.errstate(divide="ignore", invalid="ignore"):
        c, l_ = np.float64(C), np.float64(L)
        sigma = float((c / C_rand) / (l_ / L_rand))
        omega = float(L_rand / l_ - c / C_latt)
    sigma = sigma if np.isfinite(sigma) else float("nan")
    omega = omega if np.isfinite(omega) else float("nan")
    if return_refs:
        return sigma, omega, (C_rand, L_rand, C_latt)
    return sigma, omega


def graph_metrics(graph: BrainGraph, n_refs=20, rng=None, length="inverse",
                  n_swaps=None) -> GraphMetrics:
    """C, L, A, sigma and omega of one graph.

    Metrics that are undefined for the graph (A without degree variance,
    sigma and omega with fewer than two edges to swap) are reported as nan.
    """
    C = clustering(graph)
    L, unreachable = avg_shortest_path(graph, length, return_unreachable=True)
    try:
        A = assortativity(graph)
    except UndefinedMetricError:
        A = float("nan")
    try:
        sigma, omega, (Cr, Lr, Cl) = small_world(graph, n_refs, rng, length, n_swaps,
                                                 return_refs=True)
    except DegenerateInputError:
        sigma = omega = Cr = Lr = Cl = float("nan")
    return GraphMetrics(C, L, A, sigma, omega, Cr, Lr, Cl, unreachable)


def write_bundle(graph, metrics, path):
    Path(path).write_text(json.dumps(graph.to_bundle(metrics), indent=2) + "\n")
