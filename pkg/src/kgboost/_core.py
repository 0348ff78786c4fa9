"""Compiled inner loops for tree growth, boosting and prior sampling.

Split candidates are addressed by their index ``s`` into the lexicographic
candidate list of :meth:`BinnedDataset.candidates`; ``cand_feat[s]`` and
``cand_bin[s]`` give the feature and bin.  Random inputs (uniforms, normals)
are drawn by the caller so that the streams stay under numpy's documented
generators.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def grow_tree(bins, r, cand_feat, cand_bin, nbmax, m, beta, U, leaf, chosen, hs, hc, used):
    """Grow one oblivious tree by noisy greedy selection.

    ``U[level, s]`` is the uniform draw attached to candidate ``s`` at
    ``level``.  On return ``leaf`` holds the leaf index of every row and
    ``chosen[:depth]`` the selected candidates in depth order.
    """
    N, d = bins.shape
    S = cand_feat.shape[0]
    depth = min(m, S)
    for i in range(N):
        leaf[i] = 0
    for s in range(S):
        used[s] = False
    for level in range(depth):
        L = 1 << level
        for l in range(L):
            for j in range(d):
                for b in range(nbmax):
                    hs[l, j, b] = 0.0
                    hc[l, j, b] = 0.0
        for i in range(N):
            li = leaf[i]
            ri = r[i]
            for j in range(d):
                hs[li, j, bins[i, j]] += ri
                hc[li, j, bins[i, j]] += 1.0
        # prefix sums over bins: hs[l, j, k] = sum of residuals with bin <= k
        for l in range(L):
            for j in range(d):
                for b in range(1, nbmax):
                    hs[l, j, b] += hs[l, j, b - 1]
                    hc[l, j, b] += hc[l, j, b - 1]
        best = -np.inf
        arg = -1
        for s in range(S):
            if used[s]:
                continue
            j = cand_feat[s]
            k = cand_bin[s]
            D = 0.0
            for l in range(L):
                tot = hs[l, j, nbmax - 1]
                cnt = hc[l, j, nbmax - 1]
                sl = hs[l, j, k]
                cl = hc[l, j, k]
                sr = tot - sl
                cr = cnt - cl
                if cl > 0.0:
                    D += sl * sl / cl
                if cr > 0.0:
                    D += sr * sr / cr
            D /= N
            if beta > 0.0:
                D -= beta * np.log(-np.log(U[level, s]))
            if D > best:
                best = D
                arg = s
        chosen[level] = arg
        used[arg] = True
        j = cand_feat[arg]
        k = cand_bin[arg]
        bit = 1 << level
        for i in range(N):
            if bins[i, j] > k:
                leaf[i] |= bit
    return depth


@njit(**_JIT)
def leaf_sums(leaf, r, n_leaves, sums, counts):
    for l in range(n_leaves):
        sums[l] = 0.0
        counts[l] = 0.0
    for i in range(leaf.shape[0]):
        sums[leaf[i]] += r[i]
        counts[leaf[i]] += 1.0


@njit(**_JIT)
def boost_chunk(bins, y, f, cand_feat, cand_bin, nbmax, m, beta, lr, shrink, U,
                out_feat, out_bin, out_depth, out_leaf, mse):
    """Run ``U.shape[0]`` boosting iterations, updating ``f`` in place.

    ``mse[t]`` receives ``||y - f||^2 / (2N)`` after iteration ``t`` when
    ``mse`` is non-empty.
    """
    N, d = bins.shape
    S = cand_feat.shape[0]
    n_iter = U.shape[0]
    Lmax = 1 << max(min(m, S) - 1, 0)
    hs = np.zeros((Lmax, d, nbmax))
    hc = np.zeros((Lmax, d, nbmax))
    used = np.zeros(max(S, 1), dtype=np.bool_)
    leaf = np.zeros(N, dtype=np.int64)
    chosen = np.zeros(max(m, 1), dtype=np.int64)
    r = np.empty(N)
    n_leaf_max = out_leaf.shape[1]
    sums = np.empty(n_leaf_max)
    counts = np.empty(n_leaf_max)
    track = mse.shape[0] > 0
    for t in range(n_iter):
        for i in range(N):
            r[i] = y[i] - f[i]
        depth = grow_tree(bins, r, cand_feat, cand_bin, nbmax, m, beta, U[t], leaf, chosen, hs, hc, used)
        n_leaves = 1 << depth
        leaf_sums(leaf, r, n_leaves, sums, counts)
        for l in range(n_leaf_max):
            if l < n_leaves and counts[l] > 0.0:
                out_leaf[t, l] = sums[l] / counts[l]
            else:
                out_leaf[t, l] = 0.0
        for q in range(out_feat.shape[1]):
            if q < depth:
                out_feat[t, q] = cand_feat[chosen[q]]
                out_bin[t, q] = cand_bin[chosen[q]]
            else:
                out_feat[t, q] = -1
                out_bin[t, q] = -1
        out_depth[t] = depth
        acc = 0.0
        for i in range(N):
            f[i] = shrink * f[i] + lr * out_leaf[t, leaf[i]]
            if track:
                e = y[i] - f[i]
                acc += e * e
        if track:
            mse[t] = acc / (2.0 * N)


@njit(**_JIT)
def prior_chunk(bins, h, cand_feat, cand_bin, nbmax, m, scale, U, Z,
                out_feat, out_bin, out_depth, out_leaf):
    """Random trees on zero residuals with N(0, N/max(N_j, 1)) leaf values.

    Accumulates ``scale * theta[leaf]`` into ``h`` at the training rows.
    """
    N, d = bins.shape
    S = cand_feat.shape[0]
    n_iter = U.shape[0]
    Lmax = 1 << max(min(m, S) - 1, 0)
    hs = np.zeros((Lmax, d, nbmax))
    hc = np.zeros((Lmax, d, nbmax))
    used = np.zeros(max(S, 1), dtype=np.bool_)
    leaf = np.zeros(N, dtype=np.int64)
    chosen = np.zeros(max(m, 1), dtype=np.int64)
    r = np.zeros(N)
    n_leaf_max = out_leaf.shape[1]
    sums = np.empty(n_leaf_max)
    counts = np.empty(n_leaf_max)
    for t in range(n_iter):
        depth = grow_tree(bins, r, cand_feat, cand_bin, nbmax, m, 1.0, U[t], leaf, chosen, hs, hc, used)
        n_leaves = 1 << depth
        leaf_sums(leaf, r, n_leaves, sums, counts)
        for l in range(n_leaf_max):
            if l < n_leaves:
                out_leaf[t, l] = Z[t, l] * np.sqrt(N / max(counts[l], 1.0))
            else:
                out_leaf[t, l] = 0.0
        for q in range(out_feat.shape[1]):
            if q < depth:
                out_feat[t, q] = cand_feat[chosen[q]]
                out_bin[t, q] = cand_bin[chosen[q]]
            else:
                out_feat[t, q] = -1
                out_bin[t, q] = -1
        out_depth[t] = depth
        for i in range(N):
            h[i] += scale * out_leaf[t, leaf[i]]


@njit(**_JIT)
def sample_structures(bins, r, cand_feat, cand_bin, nbmax, m, beta, U, out):
    """Draw ``U.shape[0]`` structures; ``out[t, :depth]`` gets candidate indices."""
    N, d = bins.shape
    S = cand_feat.shape[0]
    Lmax = 1 << max(min(m, S) - 1, 0)
    hs = np.zeros((Lmax, d, nbmax))
    hc = np.zeros((Lmax, d, nbmax))
    used = np.zeros(max(S, 1), dtype=np.bool_)
    leaf = np.zeros(N, dtype=np.int64)
    chosen = np.zeros(max(m, 1), dtype=np.int64)
    depth = 0
    for t in range(U.shape[0]):
        depth = grow_tree(bins, r, cand_feat, cand_bin, nbmax, m, beta, U[t], leaf, chosen, hs, hc, used)
        for q in range(depth):
            out[t, q] = chosen[q]
    return depth


@njit(**_JIT)
def predict_trees(qbins, feat, kbin, depth, leafvals, coef, out):
    """``out[i] += sum_t coef[t] * leafvals[t, leaf_t(row i)]`` in tree order."""
    n_rows = qbins.shape[0]
    for i in range(n_rows):
        acc = 0.0
        for t in range(feat.shape[0]):
            idx = 0
            for q in range(depth[t]):
                if qbins[i, feat[t, q]] > kbin[t, q]:
                    idx |= 1 << q
            acc += coef[t] * leafvals[t, idx]
        out[i] += acc
