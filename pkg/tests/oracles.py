"""Slow, loop-based reference implementations used as test oracles."""
import itertools
import math

import numpy as np


def clustering_oracle(W):
    """Weighted clustering by explicit triangle enumeration on max(W, W.T)."""
    n = len(W)
    U = [[max(W[i][j], W[j][i]) for j in range(n)] for i in range(n)]
    top = max(max(r) for r in U) if n else 0.0
    if top <= 0:
        return 0.0
    total = 0.0
    for i in range(n):
        nb = [j for j in range(n) if U[i][j] > 0]
        k = len(nb)
        if k < 2:
            continue
        s = 0.0
        for j, h in itertools.permutations(nb, 2):
            if U[j][h] > 0:
                s += (U[i][j] * U[j][h] * U[h][i] / top ** 3) ** (1.0 / 3.0)
        total += s / (k * (k - 1))
    return total / n


def floyd_warshall(W, inverse=True):
    n = len(W)
    D = [[0.0 if i == j else math.inf for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(n):
            if W[i][j] > 0:
                D[i][j] = 1.0 / W[i][j] if inverse else W[i][j]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if D[i][k] + D[k][j] < D[i][j]:
                    D[i][j] = D[i][k] + D[k][j]
    return D


def path_length_oracle(W, inverse=True):
    D = floyd_warshall(W, inverse)
    vals = [D[i][j] for i in range(len(W)) for j in range(len(W))
            if i != j and D[i][j] < math.inf]
    n_unreach = len(W) * (len(W) - 1) - len(vals)
    return (sum(vals) / len(vals) if vals else math.nan), n_unreach


def assortativity_oracle(W):
    """Pearson r over both orientations of each undirected edge, or None."""
    n = len(W)
    adj = [[W[i][j] > 0 or W[j][i] > 0 for j in range(n)] for i in range(n)]
    deg = [sum(r) for r in adj]
    xs, ys = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i][j]:
                xs += [deg[i], deg[j]]
                ys += [deg[j], deg[i]]
    if len(xs) < 4:
        return None
    mx = sum(xs) / len(xs)
    my = sum(ys) / len(ys)
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = sum((a - mx) ** 2 for a in xs)
    syy = sum((b - my) ** 2 for b in ys)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def small_graph_suite():
    """Every digraph on 2 and 3 nodes, every graph on 4 nodes, and standard
    families (complete, star, path, cycle, wheel) up to 10 nodes."""
    out = []
    for n in (2, 3):
        slots = [(i, j) for i in range(n) for j in range(n) if i != j]
        for bits in itertools.product([0, 1], repeat=len(slots)):
            W = np.zeros((n, n))
            for b, (i, j) in zip(bits, slots):
                W[i, j] = b
            out.append(W)
    slots = list(itertools.combinations(range(4), 2))
    for bits in itertools.product([0, 1], repeat=len(slots)):
        W = np.zeros((4, 4))
        for b, (i, j) in zip(bits, slots):
            W[i, j] = W[j, i] = b
        out.append(W)
    for n in range(3, 11):
        K = np.ones((n, n)) - np.eye(n)
        star = np.zeros((n, n))
        star[0, 1:] = star[1:, 0] = 1
        path = np.zeros((n, n))
        cyc = np.zeros((n, n))
        for i in range(n - 1):
            path[i, i + 1] = 1
        for i in range(n):
            cyc[i, (i + 1) % n] = 1
        wheel = np.maximum(star, cyc + cyc.T)
        out += [K, star, path, cyc, cyc + cyc.T, wheel]
    return out


def random_weighted_digraphs(count=50, n=10, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        p = rng.uniform(0.15, 0.6)
        W = (rng.random((n, n)) < p) * rng.uniform(0.05, 2.0, (n, n))
        np.fill_diagonal(W, 0)
        out.append(W)
    return out


def ring_lattice(n, k):
    A = np.zeros((n, n))
    for i in range(n):
        for s in range(1, k // 2 + 1):
            A[i, (i + s) % n] = A[(i + s) % n, i] = 1
    return A


def erdos_renyi(n, p, rng):
    U = np.triu(rng.random((n, n)) < p, 1).astype(float)
    return U + U.T


def watts_strogatz(n, k, p, seed):
    import networkx as nx
    return nx.to_numpy_array(nx.watts_strogatz_graph(n, k, p, seed=seed),
                             nodelist=range(n))
