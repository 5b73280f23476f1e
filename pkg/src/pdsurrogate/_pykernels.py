"""Pure numpy implementations of the hot kernels.

Each function mirrors one in ``_ckernels.pyx`` with identical arguments,
outputs, tie rules and floating-point summation order.
"""
import numpy as np


def dp_cluster(z, w, kmax, tol):
    """Optimal contiguous weighted 1-D clustering for every k up to ``kmax``.

    Returns ``(cost, start)``, both shaped ``(kmax, m)``. ``cost[k, i]`` is the
    minimal weighted within-cluster sum of squares of points ``0..i`` split
    into ``k + 1`` contiguous clusters and ``start[k, i]`` the first index of
    the last cluster. Near-ties (within ``tol``) go to the smallest start.
    """
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m = z.shape[0]
    cw = np.concatenate(([0.0], np.cumsum(w)))
    cwz = np.concatenate(([0.0], np.cumsum(w * z)))
    cwz2 = np.concatenate(([0.0], np.cumsum(w * z * z)))
    cost = np.full((kmax, m), np.inf)
    start = np.full((kmax, m), -1, dtype=np.int64)

    def ss(j, i):
        # points j..i inclusive; j may be an array
        sw = cw[i + 1] - cw[j]
        s1 = cwz[i + 1] - cwz[j]
        s2 = cwz2[i + 1] - cwz2[j]
        return np.maximum(s2 - s1 * s1 / sw, 0.0)

    cost[0, :] = ss(np.zeros(m, dtype=np.int64), np.arange(m))
    start[0, :] = 0
    for k in range(1, kmax):
        for i in range(k, m):
            j = np.arange(k, i + 1)
            cand = cost[k - 1, j - 1] + ss(j, i)
            best = cand.min()
            pick = int(np.flatnonzero(cand <= best + tol)[0])
            cost[k, i] = cand[pick]
            start[k, i] = j[pick]
    return cost, start


def build_histograms(bins, rows, g, h, nbins):
    """Per-feature sums of gradient, hessian and row count over ``rows``."""
    p = bins.shape[1]
    G = np.zeros((p, nbins))
    H = np.zeros((p, nbins))
    C = np.zeros((p, nbins))
    gr = g[rows]
    hr = h[rows]
    for f in range(p):
        b = bins[rows, f]
        G[f] = np.bincount(b, weights=gr, minlength=nbins)
        H[f] = np.bincount(b, weights=hr, minlength=nbins)
        C[f] = np.bincount(b, minlength=nbins)
    return G, H, C


def predict_ensemble(X, feat, thr, is_cat, left, right, value, default_left,
                     mask_off, mask_len, masks, roots):
    """Sum of leaf values over all trees for every row of ``X``."""
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        active = feat[node] >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            f = feat[nd]
            x = X[idx, f]
            go_left = np.empty(idx.shape[0], dtype=bool)
            num = is_cat[nd] == 0
            go_left[num] = x[num] <= thr[nd[num]]
            cat = ~num
            if cat.any():
                xc = x[cat]
                ndc = nd[cat]
                ok = (xc >= 0) & (xc < mask_len[ndc]) & (xc == np.floor(xc))
                gl = default_left[ndc].astype(bool)
                code = np.where(ok, xc, 0).astype(np.int64)
                gl[ok] = masks[mask_off[ndc[ok]] + code[ok]].astype(bool)
                go_left[cat] = gl
            node[idx] = np.where(go_left, left[nd], right[nd])
            active = feat[node] >= 0
        out += value[node]
    return out
