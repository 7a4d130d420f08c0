"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

Trees are passed around as flat parallel arrays (``left``, ``right``,
``feature``, ``threshold``, ``value``, ``cover``); several trees may be
concatenated, in which case ``roots`` holds the index of each root.  A node is
a leaf iff ``left[node] < 0``.  Samples go left iff ``x < threshold``.

The public entry points (``level_splits``, ``ensemble_raw_sum``,
``treeshap``) dispatch on :func:`shiftscope._backend.active_backend`.
Both flavours are importable directly for testing and benchmarking.
"""

import numpy as np

from ._backend import active_backend, njit

# ---------------------------------------------------------------------------
# greedy split search, one tree level at a time
# ---------------------------------------------------------------------------


@njit(cache=True)
def level_splits_numba(X, order, resid, node_of, n_nodes, min_leaf):
    n, p = X.shape
    cnt = np.zeros(n_nodes)
    tot = np.zeros(n_nodes)
    sq = np.zeros(n_nodes)
    for i in range(n):
        k = node_of[i]
        if k >= 0:
            cnt[k] += 1.0
            tot[k] += resid[i]
            sq[k] += resid[i] * resid[i]

    best_gain = np.full(n_nodes, -1.0)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    cl = np.zeros(n_nodes)
    sl = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    for f in range(p):
        cl[:] = 0.0
        sl[:] = 0.0
        for j in range(n):
            i = order[f, j]
            k = node_of[i]
            if k < 0:
                continue
            x = X[i, f]
            nl = cl[k]
            nr = cnt[k] - nl
            if nl >= min_leaf and nr >= min_leaf and x > last[k]:
                sr = tot[k] - sl[k]
                gain = sl[k] * sl[k] / nl + sr * sr / nr - tot[k] * tot[k] / cnt[k]
                if gain > best_gain[k]:
                    best_gain[k] = gain
                    best_feat[k] = f
                    best_thr[k] = _midpoint(last[k], x)
            cl[k] = nl + 1.0
            sl[k] += resid[i]
            last[k] = x

    for k in range(n_nodes):
        if best_gain[k] <= 1e-12 * sq[k]:
            best_feat[k] = -1
            best_thr[k] = 0.0
            best_gain[k] = 0.0
    return best_feat, best_thr, best_gain


@njit(cache=True)
def _midpoint(lo, hi):
    mid = lo + 0.5 * (hi - lo)
    # adjacent doubles: the midpoint rounds onto ``lo`` and would misroute it
    if mid <= lo:
        return hi
    return mid


def level_splits_numpy(X, order, resid, node_of, n_nodes, min_leaf):
    n, p = X.shape
    active = node_of >= 0
    cnt = np.bincount(node_of[active], minlength=n_nodes).astype(float)
    tot = np.bincount(node_of[active], weights=resid[active], minlength=n_nodes)
    sq = np.bincount(node_of[active], weights=resid[active] ** 2, minlength=n_nodes)

    best_gain = np.full(n_nodes, -1.0)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    for f in range(p):
        nodes_sorted = node_of[order[f]]
        for k in range(n_nodes):
            idx = order[f][nodes_sorted == k]
            m = idx.size
            if m < 2 * min_leaf:
                continue
            xs = X[idx, f]
            left_sum = np.cumsum(resid[idx])[:-1]
            nl = np.arange(1, m, dtype=float)
            nr = cnt[k] - nl
            ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
            if not ok.any():
                continue
            pos = np.flatnonzero(ok)
            sl = left_sum[pos]
            sr = tot[k] - sl
            gains = sl * sl / nl[pos] + sr * sr / nr[pos] - tot[k] * tot[k] / cnt[k]
            j = int(np.argmax(gains))
            if gains[j] > best_gain[k]:
                best_gain[k] = gains[j]
                best_feat[k] = f
                best_thr[k] = _midpoint_py(xs[pos[j]], xs[pos[j] + 1])

    weak = best_gain <= 1e-12 * sq
    best_feat[weak] = -1
    best_thr[weak] = 0.0
    best_gain[weak] = 0.0
    return best_feat, best_thr, best_gain


def _midpoint_py(lo, hi):
    mid = lo + 0.5 * (hi - lo)
    return hi if mid <= lo else mid


def level_splits(X, order, resid, node_of, n_nodes, min_leaf):
    """Best (feature, threshold, gain) per active node of one tree level.

    ``order[f]`` lists sample indices sorted by feature ``f``; ``node_of``
    maps each sample to its node slot in ``[0, n_nodes)`` or -1 when the
    sample sits in a finished leaf.  Gain is the reduction in the sum of
    squared residuals.  A feature of -1 means "do not split".
    """
    fn = level_splits_numba if active_backend() == "numba" else level_splits_numpy
    return fn(X, order, resid, node_of, np.int64(n_nodes), float(min_leaf))


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@njit(cache=True)
def ensemble_raw_sum_numba(X, left, right, feature, threshold, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            while left[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out


def ensemble_raw_sum_numpy(X, left, right, feature, threshold, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        while True:
            internal = left[node] >= 0
            if not internal.any():
                break
            cur = node[internal]
            go_left = X[rows[internal], feature[cur]] < threshold[cur]
            node[internal] = np.where(go_left, left[cur], right[cur])
        out += value[node]
    return out


def ensemble_raw_sum(X, left, right, feature, threshold, value, roots):
    """Sum of leaf values over all trees, per row of ``X``."""
    fn = ensemble_raw_sum_numba if active_backend() == "numba" else ensemble_raw_sum_numpy
    return fn(X, left, right, feature, threshold, value, roots)


# ---------------------------------------------------------------------------
# path-dependent TreeSHAP
#
# The traversal of a tree is identical for every sample; only the
# one-fractions (whether the sample follows a branch) differ.  Both flavours
# therefore walk each tree once and carry path weights as vectors over
# samples: numba with an explicit stack over blocks of 256 rows, numpy with
# plain recursion over whole columns.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _extend_blk(feat, zf, of, pw, off, depth, zero_fraction, one, feature_index, nb):
    # ``one`` holds the per-sample one-fractions of the new element
    feat[off + depth] = feature_index
    zf[off + depth] = zero_fraction
    d1 = depth + 1.0
    for b in range(nb):
        of[off + depth, b] = one[b]
        pw[off + depth, b] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        up = (i + 1) / d1
        down = zero_fraction * (depth - i) / d1
        for b in range(nb):
            pw[off + i + 1, b] += one[b] * pw[off + i, b] * up
            pw[off + i, b] = pw[off + i, b] * down


@njit(cache=True)
def _unwind_blk(feat, zf, of, pw, off, depth, path_index, nb, tmp_next):
    zero = zf[off + path_index]
    d1 = depth + 1.0
    for b in range(nb):
        tmp_next[b] = pw[off + depth, b]
    for i in range(depth - 1, -1, -1):
        for b in range(nb):
            one = of[off + path_index, b]
            if one != 0.0:
                t = pw[off + i, b]
                pw[off + i, b] = tmp_next[b] * d1 / ((i + 1) * one)
                tmp_next[b] = t - pw[off + i, b] * zero * (depth - i) / d1
            else:
                pw[off + i, b] = pw[off + i, b] * d1 / (zero * (depth - i))
    for i in range(path_index, depth):
        feat[off + i] = feat[off + i + 1]
        zf[off + i] = zf[off + i + 1]
        for b in range(nb):
            of[off + i, b] = of[off + i + 1, b]


@njit(cache=True)
def _leaf_blk(phi, start, feat, zf, of, pw, off, depth, leaf_value, nb, tmp_next):
    d1 = depth + 1.0
    for k in range(1, depth + 1):
        zero = zf[off + k]
        j = feat[off + k]
        for b in range(nb):
            tmp_next[b] = pw[off + depth, b]
        for b in range(nb):
            one = of[off + k, b]
            total = 0.0
            nxt = tmp_next[b]
            for i in range(depth - 1, -1, -1):
                if one != 0.0:
                    t = nxt * d1 / ((i + 1) * one)
                    total += t
                    nxt = pw[off + i, b] - t * zero * ((depth - i) / d1)
                elif zero != 0.0:
                    total += (pw[off + i, b] / zero) / ((depth - i) / d1)
            phi[start + b, j] += total * (one - zero) * leaf_value


@njit(cache=True)
def _tree_shap_block(X, phi, start, nb, left, right, feature, threshold, value, cover, root,
                     feat, zf, of, pw, st_node, st_off, st_depth, st_zero, st_one, st_feat,
                     tmp_next, incoming):
    # explicit DFS over the tree; each frame carries per-sample one-fractions
    top = 0
    st_node[0] = root
    st_off[0] = 0
    st_depth[0] = 0
    st_zero[0] = 1.0
    st_feat[0] = -1
    for b in range(nb):
        st_one[0, b] = 1.0
    while top >= 0:
        node = st_node[top]
        parent_off = st_off[top]
        depth = st_depth[top]
        zero_in = st_zero[top]
        feat_in = st_feat[top]
        frame = top
        top -= 1

        off = parent_off + depth
        for i in range(depth):
            feat[off + i] = feat[parent_off + i]
            zf[off + i] = zf[parent_off + i]
            for b in range(nb):
                of[off + i, b] = of[parent_off + i, b]
                pw[off + i, b] = pw[parent_off + i, b]
        _extend_blk(feat, zf, of, pw, off, depth, zero_in, st_one[frame], feat_in, nb)

        if left[node] < 0:
            _leaf_blk(phi, start, feat, zf, of, pw, off, depth, value[node], nb, tmp_next)
            continue

        split = feature[node]
        thr = threshold[node]
        lo = left[node]
        hi = right[node]
        w = cover[node]
        incoming_zero = 1.0
        for b in range(nb):
            incoming[b] = 1.0
        k = 0
        while k <= depth:
            if feat[off + k] == split:
                break
            k += 1
        if k != depth + 1:
            incoming_zero = zf[off + k]
            for b in range(nb):
                incoming[b] = of[off + k, b]
            _unwind_blk(feat, zf, of, pw, off, depth, k, nb, tmp_next)
            depth -= 1

        # right child pushed first; every descendant of the left child is done
        # before the right child reads the shared parent segment
        for child in (hi, lo):
            top += 1
            st_node[top] = child
            st_off[top] = off
            st_depth[top] = depth + 1
            st_zero[top] = cover[child] / w * incoming_zero
            st_feat[top] = split
            go_left = child == lo
            for b in range(nb):
                routed = (X[start + b, split] < thr) == go_left
                st_one[top, b] = incoming[b] if routed else 0.0


@njit(cache=True)
def treeshap_numba(X, left, right, feature, threshold, value, cover, roots, max_depth):
    n, p = X.shape
    block = 256
    size = (max_depth + 2) * (max_depth + 3) // 2
    feat = np.empty(size, dtype=np.int64)
    zf = np.empty(size)
    of = np.empty((size, block))
    pw = np.empty((size, block))
    stack = 2 * max_depth + 2
    st_node = np.empty(stack, dtype=np.int64)
    st_off = np.empty(stack, dtype=np.int64)
    st_depth = np.empty(stack, dtype=np.int64)
    st_zero = np.empty(stack)
    st_one = np.empty((stack, block))
    st_feat = np.empty(stack, dtype=np.int64)
    tmp_next = np.empty(block)
    incoming = np.empty(block)
    phi = np.zeros((n, p))
    for start in range(0, n, block):
        nb = min(block, n - start)
        for t in range(roots.shape[0]):
            _tree_shap_block(X, phi, start, nb, left, right, feature, threshold, value, cover,
                             roots[t], feat, zf, of, pw, st_node, st_off, st_depth, st_zero,
                             st_one, st_feat, tmp_next, incoming)
    return phi


def treeshap_numpy(X, left, right, feature, threshold, value, cover, roots, max_depth):
    n, p = X.shape
    phi = np.zeros((n, p))
    for root in roots:
        _recurse_vec(X, phi, left, right, feature, threshold, value, cover,
                     int(root), [], [], [], [], 1.0, np.ones(n), -1)
    return phi


def _extend_vec(feat, zf, of, pw, zero, one, feature_index):
    depth = len(feat)
    feat.append(feature_index)
    zf.append(zero)
    of.append(one)
    pw.append(np.ones_like(one) if depth == 0 else np.zeros_like(one))
    for i in range(depth - 1, -1, -1):
        pw[i + 1] = pw[i + 1] + one * pw[i] * (i + 1) / (depth + 1)
        pw[i] = zero * pw[i] * (depth - i) / (depth + 1)


def _unwind_vec(feat, zf, of, pw, path_index):
    depth = len(feat) - 1
    one = of[path_index]
    zero = zf[path_index]
    hot = one != 0.0
    safe_one = np.where(hot, one, 1.0)
    next_one = pw[depth]
    for i in range(depth - 1, -1, -1):
        tmp = pw[i]
        via_one = next_one * (depth + 1) / ((i + 1) * safe_one)
        via_zero = tmp * (depth + 1) / (zero * (depth - i)) if zero != 0.0 else np.zeros_like(tmp)
        pw[i] = np.where(hot, via_one, via_zero)
        next_one = np.where(hot, tmp - pw[i] * zero * (depth - i) / (depth + 1), next_one)
    del feat[path_index], zf[path_index], of[path_index]
    pw.pop()


def _unwound_sum_vec(zf, of, pw, path_index):
    depth = len(zf) - 1
    one = of[path_index]
    zero = zf[path_index]
    hot = one != 0.0
    safe_one = np.where(hot, one, 1.0)
    next_one = pw[depth]
    total = np.zeros_like(one)
    for i in range(depth - 1, -1, -1):
        tmp = next_one * (depth + 1) / ((i + 1) * safe_one)
        if zero != 0.0:
            cold_term = (pw[i] / zero) / ((depth - i) / (depth + 1))
        else:
            cold_term = np.zeros_like(tmp)
        total = total + np.where(hot, tmp, cold_term)
        next_one = np.where(hot, pw[i] - tmp * zero * ((depth - i) / (depth + 1)), next_one)
    return total


def _recurse_vec(X, phi, left, right, feature, threshold, value, cover,
                 node, feat, zf, of, pw, parent_zero, parent_one, parent_feature):
    feat, zf, of, pw = list(feat), list(zf), list(of), list(pw)
    _extend_vec(feat, zf, of, pw, parent_zero, parent_one, parent_feature)
    depth = len(feat) - 1

    if left[node] < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum_vec(zf, of, pw, i)
            phi[:, feat[i]] += w * (of[i] - zf[i]) * value[node]
        return

    split = int(feature[node])
    goes_left = X[:, split] < threshold[node]
    lo, hi = int(left[node]), int(right[node])
    w = cover[node]
    incoming_zero = 1.0
    incoming_one = np.ones(X.shape[0])
    if split in feat:
        k = feat.index(split)
        incoming_zero = zf[k]
        incoming_one = of[k]
        _unwind_vec(feat, zf, of, pw, k)

    # each child is "hot" for the samples routed into it
    for child, routed in ((lo, goes_left), (hi, ~goes_left)):
        _recurse_vec(X, phi, left, right, feature, threshold, value, cover,
                     child, feat, zf, of, pw,
                     cover[child] / w * incoming_zero,
                     np.where(routed, incoming_one, 0.0), split)


def treeshap(X, left, right, feature, threshold, value, cover, roots, max_depth):
    """Unscaled path-dependent Shapley values summed over trees, shape (n, p)."""
    fn = treeshap_numba if active_backend() == "numba" else treeshap_numpy
    return fn(X, left, right, feature, threshold, value, cover, roots, np.int64(max_depth))
