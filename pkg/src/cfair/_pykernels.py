"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module.  Results
agree with it to rounding (summation order differs).
"""

import numpy as np

BLOCK_ROWS = 1024


def _row_norms(X):
    return np.sqrt(np.einsum("ij,ij->i", X, X))


def pair_cosines(G, M):
    """Clamped cosine of every row of G with every row of M.

    ``einsum`` is used instead of a BLAS product so that each entry depends only
    on its two rows, never on the shapes of G and M.  The training loss relies
    on this to reproduce the pre-trained pseudo-scores bit for bit.
    """
    gn, mn = _row_norms(G), _row_norms(M)
    return np.clip(np.einsum("id,kd->ik", G, M) * (1.0 / np.multiply.outer(gn, mn)), -1.0, 1.0)


def pair_loss_grad(G, M, T, W):
    """Weighted squared error between cosines of rows of G and rows of M.

    Parameters
    ----------
    G : (B, d) module outputs
    M : (K, d) centroids
    T : (B, K) regression targets
    W : (B, K) pair weights (already divided by their normalizer)

    Returns
    -------
    loss : float
        ``sum_ik W_ik (cos(G_i, M_k) - T_ik)**2``
    dG : (B, d)
    dM : (K, d)
        Gradients of ``loss`` with respect to G and M.
    """
    gn, mn = _row_norms(G), _row_norms(M)
    Gh = G / gn[:, None]
    Mh = M / mn[:, None]
    S = pair_cosines(G, M)
    E = S - T
    loss = float(np.sum(W * E * E))
    R = 2.0 * W * E
    RS = R * S
    dG = (R @ Mh) / gn[:, None] - RS.sum(axis=1)[:, None] * G / (gn * gn)[:, None]
    dM = (R.T @ Gh) / mn[:, None] - RS.sum(axis=0)[:, None] * M / (mn * mn)[:, None]
    return loss, dG, dM


def pair_scores(U, ids):
    """Cosine scores of all pairs i < j of unit rows ``U``, split by identity.

    Returns ``(genuine, impostor)`` in row-major (i, j) order, clamped to [-1, 1].
    """
    U = np.ascontiguousarray(U, dtype=np.float64)
    ids = np.asarray(ids)
    n = U.shape[0]
    gen, imp = [], []
    for i0 in range(0, n, BLOCK_ROWS):
        i1 = min(n, i0 + BLOCK_ROWS)
        block = np.clip(U[i0:i1] @ U[i0:].T, -1.0, 1.0)
        rows, cols = np.nonzero(np.triu(np.ones(block.shape, dtype=bool), k=1))
        vals = block[rows, cols]
        same = ids[i0 + rows] == ids[i0 + cols]
        gen.append(vals[same])
        imp.append(vals[~same])
    if not gen:
        return np.empty(0), np.empty(0)
    return np.concatenate(gen), np.concatenate(imp)
