"""Deliberately naive reference implementations used as test oracles."""

import math

import numpy as np


def far_naive(scores, t):
    return sum(1 for s in scores if s > t) / len(scores)


def frr_naive(scores, t):
    return sum(1 for s in scores if s <= t) / len(scores)


def frr_inverse_naive(scores, alpha):
    # smallest observed t with FRR(t) >= alpha, scanning every candidate
    best = None
    for t in scores:
        if frr_naive(scores, t) >= alpha:
            if best is None or t < best:
                best = t
    return best


def far_inverse_naive(scores, alpha):
    # smallest observed t with 1 - FAR(t) >= 1 - alpha
    best = None
    for t in scores:
        if 1.0 - far_naive(scores, t) >= 1.0 - alpha:
            if best is None or t < best:
                best = t
    return best


def roc_naive(genuine, impostor, alpha):
    return frr_naive(genuine, far_inverse_naive(impostor, alpha))


def bias_naive(rates):
    rates = list(rates)
    geo = math.prod(rates) ** (1.0 / len(rates))
    return max(1.0, max(rates) / geo)


def pair_scores_naive(emb, ident):
    gen, imp = [], []
    n = len(emb)
    for i in range(n):
        for j in range(i + 1, n):
            u, v = emb[i], emb[j]
            s = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
            s = min(1.0, max(-1.0, s))
            (gen if ident[i] == ident[j] else imp).append(s)
    return sorted(gen), sorted(imp)


def cf_loss_naive(xn, ident, attr_of_id, params, targets, weights, z_far, z_frr):
    """Literal double sum over (image, identity) of the weighted squared errors.

    ``targets`` and ``weights`` are dicts keyed by (i, k); missing keys are
    cross-attribute pairs with weight zero.
    """
    w1, b1, w2, b2, mu = params
    far_terms, frr_terms = [], []
    for i in range(len(xn)):
        n = xn[i]
        h = w1 @ n + b1
        g = n + w2 @ np.maximum(h, 0.0) + b2
        for k in range(len(mu)):
            if attr_of_id[k] != attr_of_id[ident[i]]:
                continue
            s = float(g @ mu[k] / (np.linalg.norm(g) * np.linalg.norm(mu[k])))
            s = min(1.0, max(-1.0, s))
            term = weights[i, k] * (s - targets[i, k]) ** 2
            (frr_terms if ident[i] == k else far_terms).append(term)
    return math.fsum(far_terms) / z_far + math.fsum(frr_terms) / z_frr
