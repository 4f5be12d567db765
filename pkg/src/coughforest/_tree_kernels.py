"""Extremely-randomized tree growth and traversal kernels.

Two interchangeable implementations of the same algorithm:

* ``_grow_numba`` / ``_apply_numba`` -- explicit loops compiled with numba;
* ``_grow_numpy`` / ``_apply_numpy`` -- per-node vectorized numpy.

Randomness comes from a counter-based hash of ``(seed, node, draw)`` rather
than a stateful generator, so both paths consume identical random numbers
and grow bit-identical trees. Nodes are numbered in depth-first pre-order
(left child first).

Tree arrays (length ``n_nodes``):
``feature`` (-1 at leaves), ``threshold``, ``left``, ``right``,
``value`` (fraction of class 1), ``n_samples``, ``gain`` (weighted Gini
decrease, in sample-count units, of the split made at the node).
"""

import numpy as np

from . import _jit
from ._jit import njit

LEAF = -1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


# --------------------------------------------------------------------------
# counter-based uniforms


@njit
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def _node_key(seed, node):
    return _mix64(np.uint64(seed) + (np.uint64(node) + np.uint64(1)) * _GOLDEN)


@njit
def _uniform(key, j):
    z = _mix64(key + (np.uint64(j) + np.uint64(1)) * _GOLDEN)
    return float(z >> _S11) * _INV53


def _mix64_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _node_key_np(seed, node):
    with np.errstate(over="ignore"):
        z = np.array([seed], dtype=np.uint64) + (np.uint64(node) + np.uint64(1)) * _GOLDEN
        return _mix64_np(z)[0]


def _uniform_np(key, j):
    j = np.asarray(j, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix64_np(np.uint64(key) + (j + np.uint64(1)) * _GOLDEN)
    return (z >> _S11).astype(np.float64) * _INV53


def uniforms(seed, node, draws):
    """Reference uniforms in [0, 1) for ``draws`` at ``node`` (numpy path)."""
    return _uniform_np(_node_key_np(seed, node), draws)


# --------------------------------------------------------------------------
# numba path


@njit
def _grow_numba(Xt, y, max_features, seed, max_depth):
    n_feat, n = Xt.shape
    cap = 2 * n - 1 if n > 0 else 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    n_samples = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(cap)

    samples = np.arange(n)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_parent = np.empty(cap, dtype=np.int64)
    st_is_left = np.empty(cap, dtype=np.int64)
    keys = np.empty(n_feat)

    top = 0
    st_start[0], st_end[0], st_depth[0], st_parent[0], st_is_left[0] = 0, n, 0, -1, 0
    top = 1
    node_count = 0
    while top > 0:
        top -= 1
        start, end = st_start[top], st_end[top]
        depth, parent, is_left = st_depth[top], st_parent[top], st_is_left[top]
        node = node_count
        node_count += 1
        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node

        n_node = end - start
        pos = 0
        for i in range(start, end):
            pos += y[samples[i]]
        value[node] = pos / n_node
        n_samples[node] = n_node
        if n_node < 2 or pos == 0 or pos == n_node or depth == max_depth:
            continue

        p = pos / n_node
        g_node = 2.0 * p * (1.0 - p)
        key = _node_key(seed, node)
        for j in range(n_feat):
            keys[j] = _uniform(key, j)

        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        visited = 0
        for _ in range(n_feat):
            # next feature in ascending key order; keys of drawn features are set to 2
            f = 0
            for j in range(1, n_feat):
                if keys[j] < keys[f]:
                    f = j
            keys[f] = 2.0
            mn = Xt[f, samples[start]]
            mx = mn
            for i in range(start + 1, end):
                v = Xt[f, samples[i]]
                if v < mn:
                    mn = v
                elif v > mx:
                    mx = v
            if mx <= mn:
                continue
            u = _uniform(key, n_feat + f)
            thr = mn + u * (mx - mn)
            if thr <= mn or thr >= mx:
                thr = 0.5 * (mn + mx)
            n_l = 0
            pos_l = 0
            for i in range(start, end):
                s = samples[i]
                if Xt[f, s] <= thr:
                    n_l += 1
                    pos_l += y[s]
            n_r = n_node - n_l
            pos_r = pos - pos_l
            pl = pos_l / n_l
            pr = pos_r / n_r
            gl = 2.0 * pl * (1.0 - pl)
            gr = 2.0 * pr * (1.0 - pr)
            g = n_node * g_node - (n_l * gl + n_r * gr)
            if g > best_gain:
                best_gain = g
                best_f = f
                best_thr = thr
            visited += 1
            if visited == max_features:
                break
        if best_f < 0:
            continue

        # partition samples[start:end] so rows going left come first
        i, j = start, end - 1
        while i <= j:
            if Xt[best_f, samples[i]] <= best_thr:
                i += 1
            else:
                tmp = samples[i]
                samples[i] = samples[j]
                samples[j] = tmp
                j -= 1
        mid = i
        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = best_gain

        st_start[top], st_end[top], st_depth[top] = mid, end, depth + 1
        st_parent[top], st_is_left[top] = node, 0
        top += 1
        st_start[top], st_end[top], st_depth[top] = start, mid, depth + 1
        st_parent[top], st_is_left[top] = node, 1
        top += 1

    k = node_count
    return (feature[:k].copy(), threshold[:k].copy(), left[:k].copy(), right[:k].copy(),
            value[:k].copy(), n_samples[:k].copy(), gain[:k].copy())


@njit
def _apply_numba(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


# --------------------------------------------------------------------------
# numpy path


def _grow_numpy(X, y, max_features, seed, max_depth):
    n, n_feat = X.shape
    feature, threshold, left, right, value, n_samples, gain = [], [], [], [], [], [], []
    all_features = np.arange(n_feat)
    stack = [(np.arange(n), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        gain.append(0.0)

        n_node = idx.size
        yy = y[idx]
        pos = int(yy.sum())
        value.append(pos / n_node)
        n_samples.append(n_node)
        if n_node < 2 or pos == 0 or pos == n_node or depth == max_depth:
            continue

        p = pos / n_node
        g_node = 2.0 * p * (1.0 - p)
        key = _node_key_np(seed, node)
        order = np.argsort(_uniform_np(key, all_features), kind="stable")
        Xs = X[idx]
        mins = Xs.min(axis=0)
        maxs = Xs.max(axis=0)
        cand = order[maxs[order] > mins[order]][:max_features]
        if cand.size == 0:
            continue

        mn, mx = mins[cand], maxs[cand]
        thr = mn + _uniform_np(key, n_feat + cand) * (mx - mn)
        bad = (thr <= mn) | (thr >= mx)
        thr[bad] = 0.5 * (mn[bad] + mx[bad])
        go_left = Xs[:, cand] <= thr
        n_l = go_left.sum(axis=0)
        pos_l = (go_left & (yy[:, None] == 1)).sum(axis=0)
        n_r = n_node - n_l
        pos_r = pos - pos_l
        pl = pos_l / n_l
        pr = pos_r / n_r
        gl = 2.0 * pl * (1.0 - pl)
        gr = 2.0 * pr * (1.0 - pr)
        g = n_node * g_node - (n_l * gl + n_r * gr)
        best = int(np.argmax(g))

        f = int(cand[best])
        feature[node] = f
        threshold[node] = float(thr[best])
        gain[node] = float(g[best])
        mask = go_left[:, best]
        stack.append((idx[~mask], depth + 1, node, False))
        stack.append((idx[mask], depth + 1, node, True))

    return (np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.array(value, dtype=np.float64), np.array(n_samples, dtype=np.int64),
            np.array(gain, dtype=np.float64))


def _apply_numpy(X, feature, threshold, left, right):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] != LEAF
    while np.any(active):
        r, nd = rows[active], node[active]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] != LEAF
    return node


# --------------------------------------------------------------------------
# dispatch


def grow_tree(X, y, max_features, seed, max_depth=-1):
    """Grow one tree on all rows of ``X``; returns the tuple of node arrays.

    ``max_depth < 0`` grows until leaves are pure or cannot be split.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    if _jit.use_numba():
        return _grow_numba(np.ascontiguousarray(X.T), y, int(max_features), np.uint64(seed), int(max_depth))
    return _grow_numpy(X, y, int(max_features), seed, int(max_depth))


def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by every row of ``X``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if _jit.use_numba():
        return _apply_numba(X, feature, threshold, left, right)
    return _apply_numpy(X, feature, threshold, left, right)
