"""Compiled kernels for randomized decision trees.

Node arrays: ``feature`` (-1 for leaves), ``threshold``, ``left``, ``right``,
``counts [n_nodes, n_classes]`` and ``candidates [n_nodes, K]`` (the feature
subset drawn at each internal node, ``-1`` padded).
"""
import numpy as np
from numba import njit

_GAIN_EPS = 1e-12


@njit(cache=True, nogil=True)
def _splitmix(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def grow_tree(X, y, n_classes, K, seed):
    n, p = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes))
    candidates = np.full((cap, K), -1, dtype=np.int64)

    idx = np.arange(n)
    perm = np.arange(p)
    state = np.uint64(seed)
    # stack of (node, start, end)
    stack = np.empty((cap, 3), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    top = 1
    n_nodes = 1
    left_c = np.zeros(n_classes)
    node_c = np.zeros(n_classes)
    cand = np.empty(K, dtype=np.int64)
    xlogx = np.zeros(n + 1)
    for c in range(2, n + 1):
        xlogx[c] = c * np.log2(c)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        m = end - start
        node_c[:] = 0.0
        for t in range(start, end):
            node_c[y[idx[t]]] += 1.0
        counts[node, :] = node_c
        nonzero = 0
        for c in range(n_classes):
            if node_c[c] > 0:
                nonzero += 1
        if nonzero <= 1 or m < 2:
            continue

        # partial Fisher-Yates: K distinct features, then ascending order
        for t in range(K):
            state, r = _splitmix(state)
            k = t + np.int64(r % np.uint64(p - t))
            tmp = perm[t]
            perm[t] = perm[k]
            perm[k] = tmp
            cand[t] = perm[t]
        cand.sort()
        candidates[node, :] = cand

        # information gain * m = m*H(parent) - nl*H(left) - nr*H(right), with
        # n*H = n log n - sum c log c; tracked incrementally via xlogx
        parent_sum = 0.0
        for c in range(n_classes):
            parent_sum += xlogx[int(node_c[c])]
        base = xlogx[m] - parent_sum
        best_gain = _GAIN_EPS
        best_f = -1
        best_thr = 0.0
        vals = np.empty(m)
        for ci in range(K):
            f = cand[ci]
            for t in range(m):
                vals[t] = X[idx[start + t], f]
            order = np.argsort(vals, kind="mergesort")
            left_c[:] = 0.0
            sum_l = 0.0
            sum_r = parent_sum
            for t in range(m - 1):
                k = y[idx[start + order[t]]]
                lc = int(left_c[k])
                rc = int(node_c[k]) - lc
                sum_l += xlogx[lc + 1] - xlogx[lc]
                sum_r += xlogx[rc - 1] - xlogx[rc]
                left_c[k] += 1.0
                v0 = vals[order[t]]
                v1 = vals[order[t + 1]]
                if v0 < v1:
                    nl = t + 1
                    nr = m - nl
                    gain = (base - (xlogx[nl] - sum_l) - (xlogx[nr] - sum_r)) / m
                    if gain > best_gain + _GAIN_EPS or (best_f < 0 and gain > best_gain):
                        best_gain = gain
                        best_f = f
                        thr = 0.5 * (v0 + v1)
                        if not thr < v1:
                            thr = v0
                        best_thr = thr
        if best_f < 0:
            for t in range(K):
                candidates[node, t] = -1
            continue

        # partition idx[start:end] in place
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[idx[lo], best_f] <= best_thr:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[top, 0] = rnode
        stack[top, 1] = lo
        stack[top, 2] = end
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = start
        stack[top, 2] = lo
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            counts[:n_nodes].copy(), candidates[:n_nodes].copy())


@njit(cache=True, nogil=True)
def apply_tree(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out
