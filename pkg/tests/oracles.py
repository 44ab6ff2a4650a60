"""Brute-force reference implementations used as test oracles."""

import numpy as np


def window_sums(fmap, k):
    """Channel sum of k x k window means, one window at a time."""
    c, h, w = fmap.shape
    out = np.zeros((h - k + 1, w - k + 1))
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            total = 0.0
            for ch in range(c):
                total += fmap[ch, i : i + k, j : j + k].sum() / (k * k)
            out[i, j] = total
    return out


def integer_window_totals(fmap, k):
    """Exact window totals for integer maps; same argmax as the means."""
    c, h, w = fmap.shape
    return np.array([[fmap[:, i : i + k, j : j + k].sum() for j in range(w - k + 1)] for i in range(h - k + 1)])


def argmax_row_major(values):
    """First occurrence of the maximum in row-major order."""
    best = None
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            if best is None or values[i, j] > values[best]:
                best = (i, j)
    return best


def concordance(labels, scores):
    """Fraction of positive-negative pairs ranked correctly, ties counting half."""
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def step_sum_ap(labels, scores):
    """Walk the ranked list one item at a time; ties put negatives first."""
    ranked = sorted(zip(scores, labels), key=lambda t: (-t[0], t[1]))
    n_pos = sum(labels)
    tp = 0
    prev_recall = 0.0
    ap = 0.0
    for k, (_, y) in enumerate(ranked, start=1):
        tp += y
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / k)
        prev_recall = recall
    return ap


def random_binary_case(rng, n_max=50, ties=False):
    """Labels with both classes present and scores in [0, 1]."""
    n = int(rng.integers(2, n_max + 1))
    y = rng.integers(0, 2, size=n)
    y[0], y[1] = 0, 1
    rng.shuffle(y)
    s = rng.integers(0, 5, size=n) / 4.0 if ties else rng.random(n)
    return y.tolist(), s.tolist()
