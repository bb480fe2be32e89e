"""Compiled inner loops (numba).

Skeletons are passed around as flat integer codes so the compiled code never
touches Python objects.  A code row for a skeleton with ``K`` operator nodes
(intermediaries first, outputs last) is::

    [K, a_0, p_0, q_0, a_1, p_1, q_1, ..., -2, -2, ...]

where ``a`` is the arity and ``p``/``q`` the predecessor node numbers
(``q = -1`` for unary nodes).  Rows are padded with ``-2``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# unary label codes follow the default operator order, binary ones too
U_NEG, U_INV, U_SIN, U_COS, U_LOG, U_EXP, U_SQUARE, U_SQRT, U_ID = 0, 1, 2, 3, 4, 5, 6, 7, 8
B_ADD, B_SUB, B_MUL, B_DIV = 0, 1, 2, 3

UNARY_CODE = {"neg": U_NEG, "inv": U_INV, "sin": U_SIN, "cos": U_COS, "log": U_LOG,
              "exp": U_EXP, "square": U_SQUARE, "sqrt": U_SQRT, "id": U_ID}
BINARY_CODE = {"add": B_ADD, "sub": B_SUB, "mul": B_MUL, "div": B_DIV}


@njit(cache=True)
def canonical_codes(arity, p0, p1, n_in, n_inter, n_out, out):
    """Prune and canonically renumber a batch of construction tuples.

    ``arity``, ``p0``, ``p1`` have shape (D, n_inter + n_out).  Intermediaries
    that no output reaches are dropped; the survivors are renumbered in
    depth-first post-order from the outputs, visiting operands left to right.
    """
    D = arity.shape[0]
    K = n_inter + n_out
    remap = np.empty(n_in + n_inter, dtype=np.int64)
    order = np.empty(n_inter, dtype=np.int64)
    stack = np.empty(n_inter + 1, dtype=np.int64)
    state = np.empty(n_inter + 1, dtype=np.int64)
    for d in range(D):
        for v in range(n_in):
            remap[v] = v
        for v in range(n_in, n_in + n_inter):
            remap[v] = -1
        count = 0
        for j in range(n_out):
            k_out = n_inter + j
            for s in range(arity[d, k_out]):
                root = p0[d, k_out] if s == 0 else p1[d, k_out]
                if remap[root] >= 0:
                    continue
                sp = 0
                stack[0] = root
                state[0] = 0
                while sp >= 0:
                    top = stack[sp]
                    k = top - n_in
                    st = state[sp]
                    if st < arity[d, k]:
                        pred = p0[d, k] if st == 0 else p1[d, k]
                        state[sp] = st + 1
                        if remap[pred] < 0:
                            sp += 1
                            stack[sp] = pred
                            state[sp] = 0
                    else:
                        remap[top] = n_in + count
                        order[count] = k
                        count += 1
                        sp -= 1
        for c in range(out.shape[1]):
            out[d, c] = -2
        out[d, 0] = count + n_out
        for c in range(count):
            k = order[c]
            out[d, 1 + 3 * c] = arity[d, k]
            out[d, 2 + 3 * c] = remap[p0[d, k]]
            out[d, 3 + 3 * c] = remap[p1[d, k]] if arity[d, k] == 2 else -1
        for j in range(n_out):
            k = n_inter + j
            c = count + j
            out[d, 1 + 3 * c] = arity[d, k]
            out[d, 2 + 3 * c] = remap[p0[d, k]]
            out[d, 3 + 3 * c] = remap[p1[d, k]] if arity[d, k] == 2 else -1
    return out


@njit(cache=True, error_model="numpy")
def apply_range(arity, code, vals, src0, src1, dst, lo, hi):
    """``vals[dst, lo:hi] = op(vals[src0, lo:hi], vals[src1, lo:hi])``.

    Non-finite results (domain errors, division by zero, overflow) become nan
    so that they propagate to the output.
    """
    a = vals[src0]
    out = vals[dst]
    if arity == 2:
        b = vals[src1]
        if code == B_ADD:
            for r in range(lo, hi):
                out[r] = a[r] + b[r]
        elif code == B_SUB:
            for r in range(lo, hi):
                out[r] = a[r] - b[r]
        elif code == B_MUL:
            for r in range(lo, hi):
                out[r] = a[r] * b[r]
        else:
            for r in range(lo, hi):
                out[r] = a[r] / b[r]
    elif code == U_NEG:
        for r in range(lo, hi):
            out[r] = -a[r]
    elif code == U_INV:
        for r in range(lo, hi):
            out[r] = 1.0 / a[r]
    elif code == U_SIN:
        for r in range(lo, hi):
            out[r] = math.sin(a[r])
    elif code == U_COS:
        for r in range(lo, hi):
            out[r] = math.cos(a[r])
    elif code == U_LOG:
        for r in range(lo, hi):
            out[r] = math.log(a[r])
    elif code == U_EXP:
        for r in range(lo, hi):
            out[r] = math.exp(a[r])
    elif code == U_SQUARE:
        for r in range(lo, hi):
            out[r] = a[r] * a[r]
    elif code == U_SQRT:
        for r in range(lo, hi):
            out[r] = math.sqrt(a[r])
    else:
        for r in range(lo, hi):
            out[r] = a[r]
    for r in range(lo, hi):
        v = out[r]
        if v - v != 0.0:
            out[r] = np.nan


@njit(cache=True, error_model="numpy", inline="always")
def scalar_op(arity, code, a, b):
    if arity == 2:
        if code == B_ADD:
            v = a + b
        elif code == B_SUB:
            v = a - b
        elif code == B_MUL:
            v = a * b
        else:
            v = a / b
    elif code == U_NEG:
        v = -a
    elif code == U_INV:
        v = 1.0 / a
    elif code == U_SIN:
        v = math.sin(a)
    elif code == U_COS:
        v = math.cos(a)
    elif code == U_LOG:
        v = math.log(a)
    elif code == U_EXP:
        v = math.exp(a)
    elif code == U_SQUARE:
        v = a * a
    elif code == U_SQRT:
        v = math.sqrt(a)
    else:
        v = a
    if v - v != 0.0:
        return np.nan
    return v


@njit(cache=True, error_model="numpy")
def _screen_output(arity, code, sv, src0, src1, n_grid, n_screen, y, cap, partial):
    """Partial losses of the output node on the screen rows, per grid point.

    A grid point stops accumulating (and gets inf) as soon as its partial
    loss exceeds ``cap``.  Returns the smallest partial loss.
    """
    a = sv[src0]
    b = sv[src1]
    gmin = np.inf
    for g in range(n_grid):
        base = g * n_screen
        ps = 0.0
        for r in range(n_screen):
            d = scalar_op(arity, code, a[base + r], b[base + r]) - y[r]
            ps += d * d
            if not ps <= cap:
                ps = np.inf
                break
        partial[g] = ps
        if ps < gmin:
            gmin = ps
    return gmin


@njit(cache=True)
def _next_labels(labels, arity, n_ops, skip_to):
    """Advance the odometer (last node fastest).  Returns the lowest changed index or -1."""
    k = n_ops - 1 if skip_to < 0 else skip_to
    # resetting everything after a forced increment at ``skip_to``
    for r in range(k + 1, n_ops):
        labels[r] = 0
    while k >= 0:
        labels[k] += 1
        limit = 8 if arity[k] == 1 else 4
        if labels[k] < limit:
            return k
        labels[k] = 0
        k -= 1
    return -1


@njit(cache=True)
def redundant_at(labels, arity, p0, n_in, n_ops):
    """First node index whose unary label undoes its unary predecessor, or -1.

    Pairs treated as redundant (outer, inner): neg/neg, inv/inv, log/exp,
    exp/log, square/sqrt.  Rerouting the successors of such a node to the
    inner operand gives a smaller frame that is at least as good (equal where
    defined, and the pair can only add invalid rows).  The exception is an
    output whose inner operand is an input node: outputs cannot read inputs
    directly, so that pair is the only way to express the input itself.
    Assumes a single output (the last operator node).
    """
    for k in range(n_ops):
        if arity[k] != 1:
            continue
        pr = p0[k] - n_in
        if pr < 0 or arity[pr] != 1:
            continue
        if k == n_ops - 1 and p0[pr] < n_in:
            continue
        o = labels[k]
        i = labels[pr]
        if (o == U_NEG and i == U_NEG) or (o == U_INV and i == U_INV) \
                or (o == U_LOG and i == U_EXP) or (o == U_EXP and i == U_LOG) \
                or (o == U_SQUARE and i == U_SQRT):
            return k
    return -1


@njit(cache=True)
def count_nonredundant(arity, p0, n_in, n_ops):
    labels = np.zeros(n_ops, dtype=np.int64)
    total = 0
    ch = 0
    while ch >= 0:
        r = redundant_at(labels, arity, p0, n_in, n_ops)
        if r < 0:
            total += 1
            ch = _next_labels(labels, arity, n_ops, -1)
        else:
            ch = _next_labels(labels, arity, n_ops, r)
    return total


@njit(cache=True)
def _eval_rows(arity, labels, p0, p1, n_in, n_ops, vals, start, r_lo, r_hi):
    """Recompute operator nodes ``start..n_ops-1`` for rows ``r_lo..r_hi-1``.

    ``vals`` is (n_in + n_ops, n_rows).
    """
    for k in range(start, n_ops):
        apply_range(arity[k], labels[k], vals, p0[k], max(p1[k], 0), n_in + k, r_lo, r_hi)


@njit(cache=True)
def _full_loss(arity, labels, p0, p1, n_in, n_ops, vals, y, bound):
    """Square loss over all rows with early abandoning at ``bound``.

    ``vals`` must hold inputs (and the parameter value) in its first rows.
    Returns inf for invalid rows or when the partial loss exceeds ``bound``.
    """
    n = y.shape[0]
    out = n_in + n_ops - 1
    block = 16
    loss = 0.0
    r = 0
    while r < n:
        hi = min(n, r + block)
        _eval_rows(arity, labels, p0, p1, n_in, n_ops, vals, 0, r, hi)
        for q in range(r, hi):
            d = vals[out, q] - y[q]
            if d != d:
                return np.inf
            loss += d * d
        if loss > bound:
            return np.inf
        r = hi
    return loss


@njit(cache=True)
def _refine(arity, labels, p0, p1, n_in, n_ops, vals, y, pidx, grid, levels, best_loss, best_c):
    """Zoom levels 2.. around ``best_c``; returns (loss, c)."""
    G = grid.shape[0]
    step = (grid[G - 1] - grid[0]) / (G - 1)
    n = y.shape[0]
    for _ in range(1, levels):
        lo = best_c - step
        hi = best_c + step
        lvl_best = np.inf
        lvl_c = best_c
        delta = (hi - lo) / (G - 1)
        for g in range(G):
            # same arithmetic as numpy.linspace
            c = hi if g == G - 1 else lo + g * delta
            for r in range(n):
                vals[pidx, r] = c
            ls = _full_loss(arity, labels, p0, p1, n_in, n_ops, vals, y, lvl_best)
            if ls < lvl_best:
                lvl_best = ls
                lvl_c = c
        if lvl_best < best_loss:
            best_loss = lvl_best
            best_c = lvl_c
        step = delta
    return best_loss, best_c


@njit(cache=True)
def search_skeletons(codes, X, y, n_vars, n_params, grid, levels, n_screen,
                     screen_factor, stop_loss, complexity_offset, max_frames_per_skeleton,
                     class_best, class_skel, class_labels, class_c):
    """Score every labeling of every skeleton in ``codes``.

    Only single-output skeletons with at most one parameter are handled here.
    The per-complexity bests (``class_*`` arrays, indexed by complexity) are
    updated in place; a frame replaces the incumbent only if its loss is
    strictly smaller, so the first minimizer in enumeration order wins.
    Returns ``(frames_scored, stopped_early)``.

    ``screen_factor <= 0`` disables the row screen and early abandoning, so
    every frame gets the full grid search.
    """
    n = X.shape[0]
    n_in = n_vars + n_params
    max_ops = (codes.shape[1] - 1) // 3
    G = grid.shape[0]
    scored = 0
    # screen buffer: node x (grid point, row), row index fastest
    sv = np.empty((n_in + max_ops, G * n_screen))
    full = np.empty((n_in + max_ops, n))
    for v in range(n_vars):
        for r in range(n):
            full[v, r] = X[r, v]
    arity = np.empty(max_ops, dtype=np.int64)
    p0 = np.empty(max_ops, dtype=np.int64)
    p1 = np.empty(max_ops, dtype=np.int64)
    labels = np.zeros(max_ops, dtype=np.int64)
    partial = np.empty(G)
    dep = np.zeros(n_in + max_ops, dtype=np.bool_)
    used = np.zeros(n_in + max_ops, dtype=np.bool_)
    for g in range(G):
        for r in range(n_screen):
            for v in range(n_vars):
                sv[v, g * n_screen + r] = X[r, v]
            for j in range(n_params):
                sv[n_vars + j, g * n_screen + r] = grid[g]
    for s in range(codes.shape[0]):
        n_ops = codes[s, 0]
        for k in range(n_ops):
            arity[k] = codes[s, 1 + 3 * k]
            p0[k] = codes[s, 2 + 3 * k]
            p1[k] = codes[s, 3 + 3 * k]
        for v in range(n_in + n_ops):
            dep[v] = v >= n_vars and v < n_in
            used[v] = False
        for k in range(n_ops):
            d = dep[p0[k]]
            if arity[k] == 2:
                d = d or dep[p1[k]]
            dep[n_in + k] = d
        used[n_in + n_ops - 1] = True
        for k in range(n_ops - 1, -1, -1):
            if used[n_in + k]:
                used[p0[k]] = True
                if arity[k] == 2:
                    used[p1[k]] = True
        n_used_params = 0
        for j in range(n_params):
            if used[n_vars + j]:
                n_used_params += 1
        cplx = complexity_offset + n_used_params + n_ops
        out = n_in + n_ops - 1
        g_eff = G if dep[out] else 1
        pidx = n_vars
        for k in range(n_ops):
            labels[k] = 0
        ch = 0
        n_frames = 0
        while ch >= 0:
            red = redundant_at(labels, arity, p0, n_in, n_ops)
            if red >= 0:
                # skipped frames compute nothing, so keep the lowest stale index
                nk = _next_labels(labels, arity, n_ops, red)
                ch = -1 if nk < 0 else min(ch, nk)
                continue
            if max_frames_per_skeleton > 0 and n_frames >= max_frames_per_skeleton:
                break
            n_frames += 1
            scored += 1
            bound = class_best[cplx]
            # screen on the leading rows for every grid point; only nodes from
            # the lowest changed label onwards need recomputing
            # the screen compares per-row means: leading-row mean loss against
            # screen_factor times the incumbent's mean loss
            cap = screen_factor * bound if screen_factor > 0.0 else np.inf
            scap = cap * n_screen / n
            for k in range(ch, n_ops - 1):
                dst = n_in + k
                if dep[dst]:
                    apply_range(arity[k], labels[k], sv, p0[k], max(p1[k], 0), dst, 0, G * n_screen)
                else:
                    apply_range(arity[k], labels[k], sv, p0[k], max(p1[k], 0), dst, 0, n_screen)
                    for q in range(n_screen, G * n_screen):
                        sv[dst, q] = sv[dst, q - n_screen]
            k = n_ops - 1
            gmin = _screen_output(arity[k], labels[k], sv, p0[k], max(p1[k], 0), g_eff,
                                  n_screen, y, scap, partial)
            if gmin < scap:
                best = np.inf
                best_c = 0.0
                for g in range(g_eff):
                    # the partial loss bounds the full loss from below
                    lim = min(best, cap)
                    if partial[g] == np.inf or partial[g] > lim:
                        continue
                    if n_params > 0:
                        for r in range(n):
                            full[pidx, r] = grid[g]
                    ls = _full_loss(arity, labels, p0, p1, n_in, n_ops, full, y, lim)
                    if ls < best:
                        best = ls
                        best_c = grid[g] if n_params > 0 else 0.0
                if levels > 1 and g_eff > 1 and best < np.inf:
                    if screen_factor <= 0.0 or best < screen_factor * bound:
                        best, best_c = _refine(arity, labels, p0, p1, n_in, n_ops, full, y,
                                               pidx, grid, levels, best, best_c)
                if best < bound:
                    class_best[cplx] = best
                    class_skel[cplx] = s
                    for k in range(max_ops):
                        class_labels[cplx, k] = labels[k] if k < n_ops else -1
                    class_c[cplx] = best_c
                    if best <= stop_loss:
                        return scored, True
            ch = _next_labels(labels, arity, n_ops, -1)
    return scored, False


@njit(cache=True)
def all_frame_values(code, X, out_vals, out_labels):
    """Values of every non-redundant labeling of a parameterless skeleton.

    Writes one row per frame into ``out_vals`` (frames x samples) and its
    labels into ``out_labels``; returns the number of frames written.
    """
    n_vars = X.shape[1]
    n = X.shape[0]
    n_ops = code[0]
    arity = np.empty(n_ops, dtype=np.int64)
    p0 = np.empty(n_ops, dtype=np.int64)
    p1 = np.empty(n_ops, dtype=np.int64)
    for k in range(n_ops):
        arity[k] = code[1 + 3 * k]
        p0[k] = code[2 + 3 * k]
        p1[k] = max(code[3 + 3 * k], 0)
    vals = np.empty((n_vars + n_ops, n))
    for v in range(n_vars):
        for r in range(n):
            vals[v, r] = X[r, v]
    labels = np.zeros(n_ops, dtype=np.int64)
    count = 0
    ch = 0
    while ch >= 0:
        red = redundant_at(labels, arity, p0, n_vars, n_ops)
        if red >= 0:
            nk = _next_labels(labels, arity, n_ops, red)
            ch = -1 if nk < 0 else min(ch, nk)
            continue
        for k in range(ch, n_ops):
            apply_range(arity[k], labels[k], vals, p0[k], p1[k], n_vars + k, 0, n)
        for r in range(n):
            out_vals[count, r] = vals[n_vars + n_ops - 1, r]
        for k in range(n_ops):
            out_labels[count, k] = labels[k]
        count += 1
        ch = _next_labels(labels, arity, n_ops, -1)
    return count
