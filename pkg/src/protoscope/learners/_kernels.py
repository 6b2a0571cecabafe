"""Compiled inner loops for CART construction, traversal and tree Shapley values.

A tree is five parallel arrays: feature (-1 marks a leaf), threshold,
left, right and value. Samples with x[feature] <= threshold go left.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def presort(X, samples):
    """Slot orderings: row f lists slots 0..m-1 sorted by X[samples[slot], f]."""
    m = samples.shape[0]
    d = X.shape[1]
    order = np.empty((d, m), dtype=np.int64)
    vals = np.empty(m)
    for f in range(d):
        for k in range(m):
            vals[k] = X[samples[k], f]
        order[f] = np.argsort(vals, kind="mergesort")
    return order


@njit(cache=True)
def build_tree(X, target, hess, samples, max_depth, min_leaf, max_features,
               seed, newton_leaves):
    return build_presorted(X, target, hess, samples, presort(X, samples), max_depth,
                           min_leaf, max_features, seed, newton_leaves)


@njit(cache=True)
def build_presorted(X, target, hess, samples, order, max_depth, min_leaf, max_features,
                    seed, newton_leaves):
    """Grow one CART tree on the rows listed in `samples` (repeats allowed).

    `order` comes from presort() and is consumed (partitioned in place).
    Splits maximize sum_child S_c**2 / n_c where S_c is the target sum of a
    child; for 0/1 targets that is the Gini criterion, for real targets the
    squared-error one. Leaves hold mean target, or sum(target)/sum(hess)
    when newton_leaves is set. Ties go to the earliest (feature, threshold).
    """
    d = X.shape[1]
    m_total = samples.shape[0]
    cap = 2 * m_total + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)

    np.random.seed(seed)
    goes_left = np.zeros(m_total, dtype=np.bool_)
    buf = np.empty(m_total, dtype=np.int64)
    candidates = np.arange(d)
    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m_total
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        m = end - start

        s = 0.0
        ss = 0.0
        hs = 0.0
        for i in range(start, end):
            row = samples[order[0, i]]
            t = target[row]
            s += t
            ss += t * t
            hs += hess[row]
        cover[node] = m
        if newton_leaves:
            value[node] = s / hs if hs > 1e-12 else 0.0
        else:
            value[node] = s / m

        spread = ss - s * s / m
        if (max_depth >= 0 and depth >= max_depth) or m < 2 * min_leaf \
                or spread <= 1e-12 * (1.0 + ss):
            continue

        if max_features < d:
            for i in range(d):
                candidates[i] = i
            for i in range(max_features):
                j = i + np.random.randint(0, d - i)
                tmp = candidates[i]
                candidates[i] = candidates[j]
                candidates[j] = tmp
            chosen = np.sort(candidates[:max_features])
        else:
            chosen = np.arange(d)

        best_gain = -np.inf
        best_feature = -1
        best_threshold = 0.0
        best_nl = 0
        for f in chosen:
            sl = 0.0
            lo = X[samples[order[f, start]], f]
            for i in range(start, end - 1):
                row = samples[order[f, i]]
                sl += target[row]
                nl = i - start + 1
                hi = X[samples[order[f, i + 1]], f]
                if nl >= min_leaf and m - nl >= min_leaf and lo < hi:
                    sr = s - sl
                    gain = sl * sl / nl + sr * sr / (m - nl)
                    if best_feature < 0 or gain > best_gain + 1e-12 * max(1.0, abs(best_gain)):
                        best_gain = gain
                        best_feature = f
                        best_nl = nl
                        mid = 0.5 * (lo + hi)
                        best_threshold = mid if mid < hi else lo
                lo = hi
                if m - nl < min_leaf:
                    break
        if best_feature < 0:
            continue

        for i in range(start, end):
            slot = order[best_feature, i]
            goes_left[slot] = i - start < best_nl
        # stable partition of every feature's ordering
        for f in range(d):
            k = 0
            for i in range(start, end):
                if goes_left[order[f, i]]:
                    buf[k] = order[f, i]
                    k += 1
            for i in range(start, end):
                if not goes_left[order[f, i]]:
                    buf[k] = order[f, i]
                    k += 1
            for i in range(m):
                order[f, start + i] = buf[i]

        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # right pushed first so the left subtree is expanded first
        stack_node[top] = n_nodes + 1
        stack_start[top] = start + best_nl
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = n_nodes
        stack_start[top] = start
        stack_end[top] = start + best_nl
        stack_depth[top] = depth + 1
        top += 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), cover[:n_nodes].copy())


@njit(cache=True)
def tree_apply(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def forest_apply(feature, threshold, left, right, value, roots, X):
    """Sum of tree outputs; trees are concatenated, roots hold their offsets."""
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for r in roots:
            node = r
            while feature[node] != LEAF:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out


@njit(cache=True)
def _factorials(d):
    fact = np.ones(d + 2)
    for k in range(1, d + 2):
        fact[k] = fact[k - 1] * k
    return fact


@njit(cache=True)
def _pair_phi(feature, threshold, left, right, value, root, x, b, fact, phi, scale,
              st_node, st_state, st_a, st_c, state):
    """Add scale * Shapley values of the game S -> tree(x_S, b_rest) to phi.

    Walks every path reachable by some hybrid of x and b. A leaf reached
    with features A forced to x and C forced to b contributes
    v*(|A|-1)!|C|!/(|A|+|C|)! to each feature of A and the negated
    |A|!(|C|-1)!/(|A|+|C|)! share to each feature of C.
    The st_* arrays and state are caller-owned scratch space.
    """
    d = x.shape[0]
    st_node[0] = root
    st_a[0] = 0
    st_c[0] = 0
    for k in range(d):
        st_state[0, k] = 0
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        a = st_a[top]
        c = st_c[top]
        for k in range(d):
            state[k] = st_state[top, k]
        while feature[node] != LEAF:
            f = feature[node]
            gx = x[f] <= threshold[node]
            gb = b[f] <= threshold[node]
            if gx == gb or state[f] == 1:
                node = left[node] if gx else right[node]
            elif state[f] == 2:
                node = left[node] if gb else right[node]
            else:
                # b's side is deferred on the stack
                st_node[top] = left[node] if gb else right[node]
                for k in range(d):
                    st_state[top, k] = state[k]
                st_state[top, f] = 2
                st_a[top] = a
                st_c[top] = c + 1
                top += 1
                state[f] = 1
                a += 1
                node = left[node] if gx else right[node]
        if a + c == 0:
            continue
        v = value[node] * scale
        w_in = fact[a - 1] * fact[c] / fact[a + c] if a > 0 else 0.0
        w_out = fact[a] * fact[c - 1] / fact[a + c] if c > 0 else 0.0
        for j in range(d):
            if state[j] == 1:
                phi[j] += v * w_in
            elif state[j] == 2:
                phi[j] -= v * w_out


@njit(cache=True)
def _scratch(n_nodes, d):
    cap = n_nodes + 1
    return (np.empty(cap, dtype=np.int64), np.zeros((cap, d), dtype=np.int8),
            np.zeros(cap, dtype=np.int64), np.zeros(cap, dtype=np.int64),
            np.zeros(d, dtype=np.int8))


@njit(cache=True)
def ensemble_shap(feature, threshold, left, right, value, roots, weights, X, B):
    """Interventional Shapley values of a weighted sum of trees.

    Returns phi (n x d) averaged over the background rows B.
    """
    n, d = X.shape
    m = B.shape[0]
    fact = _factorials(d)
    st_node, st_state, st_a, st_c, state = _scratch(feature.shape[0], d)
    phi = np.zeros((n, d))
    row = np.zeros(d)
    for i in range(n):
        for k in range(d):
            row[k] = 0.0
        for j in range(m):
            for t in range(roots.shape[0]):
                _pair_phi(feature, threshold, left, right, value, roots[t],
                          X[i], B[j], fact, row, weights[t],
                          st_node, st_state, st_a, st_c, state)
        for k in range(d):
            phi[i, k] = row[k] / m
    return phi


@njit(cache=True)
def _ensemble_value(feature, threshold, left, right, value, roots, weights, z):
    acc = 0.0
    for t in range(roots.shape[0]):
        node = roots[t]
        while feature[node] != LEAF:
            if z[feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        acc += weights[t] * value[node]
    return acc


@njit(cache=True)
def sigmoid_ensemble_shap(feature, threshold, left, right, value, roots, weights,
                          offset, X, B, max_players):
    """Exact interventional Shapley values of sigmoid(offset + weighted tree sum).

    For each (x, b) pair only features whose two values fall on different
    sides of some split can matter; the game is enumerated over that set.
    Pairs with more than max_players such features are flagged in the
    returned count and handled by rescaling the additive margin attribution.
    """
    n, d = X.shape
    m = B.shape[0]
    fact = _factorials(d)
    st_node, st_state, st_a, st_c, state = _scratch(feature.shape[0], d)
    phi = np.zeros((n, d))
    margin = np.zeros(d)
    players = np.empty(d, dtype=np.int64)
    relevant = np.zeros(d, dtype=np.bool_)
    z = np.empty(d)
    fallback = 0
    for i in range(n):
        x = X[i]
        for j in range(m):
            b = B[j]
            for k in range(d):
                relevant[k] = False
            for node in range(feature.shape[0]):
                f = feature[node]
                if f != LEAF and (x[f] <= threshold[node]) != (b[f] <= threshold[node]):
                    relevant[f] = True
            u = 0
            for k in range(d):
                if relevant[k]:
                    players[u] = k
                    u += 1
            if u == 0:
                continue
            if u > max_players:
                fallback += 1
                for k in range(d):
                    margin[k] = 0.0
                for t in range(roots.shape[0]):
                    _pair_phi(feature, threshold, left, right, value, roots[t],
                              x, b, fact, margin, weights[t],
                              st_node, st_state, st_a, st_c, state)
                fx = offset + _ensemble_value(feature, threshold, left, right, value,
                                              roots, weights, x)
                fb = offset + _ensemble_value(feature, threshold, left, right, value,
                                              roots, weights, b)
                px = 1.0 / (1.0 + np.exp(-fx))
                pb = 1.0 / (1.0 + np.exp(-fb))
                ratio = (px - pb) / (fx - fb) if fx != fb else px * (1.0 - px)
                for k in range(d):
                    phi[i, k] += ratio * margin[k] / m
                continue
            n_masks = 1 << u
            vals = np.empty(n_masks)
            for mask in range(n_masks):
                for k in range(d):
                    z[k] = b[k]
                for q in range(u):
                    if mask & (1 << q):
                        z[players[q]] = x[players[q]]
                fz = offset + _ensemble_value(feature, threshold, left, right, value,
                                              roots, weights, z)
                vals[mask] = 1.0 / (1.0 + np.exp(-fz))
            for mask in range(n_masks):
                size = 0
                for q in range(u):
                    if mask & (1 << q):
                        size += 1
                if size == u:
                    continue
                w = fact[size] * fact[u - size - 1] / fact[u]
                for q in range(u):
                    bit = 1 << q
                    if not mask & bit:
                        phi[i, players[q]] += w * (vals[mask | bit] - vals[mask]) / m
    return phi, fallback


@njit(cache=True)
def grow_forest(X, y, n_trees, max_depth, min_leaf, max_features, seeds):
    """Bootstrap-and-grow loop; tree t draws its rows with seeds[2t] and
    its split features with seeds[2t + 1]."""
    n, d = X.shape
    ones = np.ones(n)
    global_order = presort(X, np.arange(n))
    counts = np.zeros(n, dtype=np.int64)
    first_slot = np.zeros(n, dtype=np.int64)
    samples = np.empty(n, dtype=np.int64)
    order = np.empty((d, n), dtype=np.int64)
    out = []
    for t in range(n_trees):
        np.random.seed(seeds[2 * t])
        counts[:] = 0
        for i in range(n):
            counts[np.random.randint(0, n)] += 1
        # slots of row r are first_slot[r] .. first_slot[r] + counts[r] - 1
        slot = 0
        for r in range(n):
            first_slot[r] = slot
            for _ in range(counts[r]):
                samples[slot] = r
                slot += 1
        for f in range(d):
            k = 0
            for i in range(n):
                r = global_order[f, i]
                for c in range(counts[r]):
                    order[f, k] = first_slot[r] + c
                    k += 1
        out.append(build_presorted(X, y, ones, samples.copy(), order, max_depth, min_leaf,
                                   max_features, seeds[2 * t + 1], False))
    return out


@njit(cache=True)
def boost(X, y, n_stages, shrinkage, depth, min_leaf, init):
    """Newton-leaf gradient boosting on the logit scale; returns the trees
    and the training deviance after each stage (index 0 = initial)."""
    n, d = X.shape
    margin = np.full(n, init)
    samples = np.arange(n)
    sorted_once = presort(X, samples)
    out = []
    dev = np.empty(n_stages + 1)
    for m in range(n_stages + 1):
        acc = 0.0
        for i in range(n):
            z = margin[i]
            acc += max(z, 0.0) + np.log1p(np.exp(-abs(z))) - y[i] * z
        dev[m] = 2.0 * acc / n
        if m == n_stages:
            break
        p = 1.0 / (1.0 + np.exp(-margin))
        tree = build_presorted(X, y - p, p * (1.0 - p), samples, sorted_once.copy(), depth,
                               min_leaf, d, 0, True)
        out.append(tree)
        margin += shrinkage * tree_apply(tree[0], tree[1], tree[2], tree[3], tree[4], X)
    return out, dev
