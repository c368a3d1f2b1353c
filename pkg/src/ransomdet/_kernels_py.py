"""Numpy implementation of the tree kernels.

Mirrors ``_kernels.pyx`` operation for operation so both backends produce
bitwise-identical gains, partitions and predictions.
"""
import numpy as np

GINI = 0
NEWTON = 1

NAME = "python"


def split_gains(xt, order, feats, s1, s2, w, kind, lam, gamma, min_leaf):
    """Gain of every cut point for each feature in ``feats``.

    ``order[f]`` lists the node's rows sorted by feature ``f``. Entry
    ``[i, j]`` of the result is the gain of sending the first ``j + 1`` rows
    of ``order[feats[i]]`` left; cuts between equal values or leaving a side
    lighter than ``min_leaf`` are ``-inf``.
    """
    feats = np.asarray(feats, dtype=np.int64)
    rows = order[feats]
    xs = xt[feats[:, None], rows]
    cw = np.cumsum(w[rows], axis=1)
    nL = cw[:, :-1]
    N = cw[:, -1:]
    nR = N - nL
    valid = (xs[:, :-1] != xs[:, 1:]) & (nL >= min_leaf) & (nR >= min_leaf)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == GINI:
            cp = np.cumsum(s1[rows], axis=1)
            pL = cp[:, :-1]
            P = cp[:, -1:]
            pR = P - pL
            parent = 2.0 * P * (N - P) / N
            left = 2.0 * pL * (nL - pL) / nL
            right = 2.0 * pR * (nR - pR) / nR
            gains = (parent - left - right) / N
        else:
            cg = np.cumsum(s1[rows], axis=1)
            ch = np.cumsum(s2[rows], axis=1)
            GL = cg[:, :-1]
            HL = ch[:, :-1]
            G = cg[:, -1:]
            H = ch[:, -1:]
            GR = G - GL
            HR = H - HL
            parent = G * G / (H + lam)
            gains = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
    gains[~valid] = -np.inf
    return gains


def partition(order, go_left):
    """Split every per-feature sorted row list by ``go_left``, keeping order."""
    d = order.shape[0]
    m = go_left[order]
    return order[m].reshape(d, -1), order[~m].reshape(d, -1)


def predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        nd = node[idx]
        go = X[idx, feature[nd]] < threshold[nd]
        nxt = np.where(go, left[nd], right[nd])
        node[idx] = nxt
        active[idx] = feature[nxt] >= 0
    return value[node]
