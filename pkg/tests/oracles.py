"""Independent reference computations used by the tests.

None of these call into the package's algebra; they rebuild the objects
from their definitions.
"""

import numpy as np


def indicator_vectors(breakpoints):
    """Group indicators ``e_r`` as rows, built directly from breakpoints."""
    N, p = breakpoints[-1], len(breakpoints) - 1
    e = np.zeros((p, N))
    for r in range(p):
        e[r, breakpoints[r]:breakpoints[r + 1]] = 1.0
    return e


def bidiagonal_sync_matrix(breakpoints):
    """``C_p`` as stacked ``[1, -1]`` difference rows inside each group."""
    rows = []
    N = breakpoints[-1]
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        for i in range(a, b - 1):
            row = np.zeros(N)
            row[i], row[i + 1] = 1.0, -1.0
            rows.append(row)
    return np.array(rows).reshape(-1, N)


def projector_compatible(M, breakpoints, tol=1e-9):
    """``max_r ||(I - Pi) M e_r|| <= tol ||M||`` with ``Pi`` onto ``span{e_r}``."""
    e = indicator_vectors(breakpoints)
    Q, _ = np.linalg.qr(e.T)
    Pi = Q @ Q.T
    worst = max(np.linalg.norm((np.eye(M.shape[0]) - Pi) @ M @ er) for er in e)
    return worst <= tol * np.linalg.norm(M, 2)


def block_row_sums(M, breakpoints):
    """Brute-force loops over block row sums; returns ``(alpha, spread)``."""
    p = len(breakpoints) - 1
    alpha = np.zeros((p, p))
    spread = 0.0
    for s in range(p):
        for r in range(p):
            sums = [sum(M[i, j] for j in range(breakpoints[r], breakpoints[r + 1]))
                    for i in range(breakpoints[s], breakpoints[s + 1])]
            alpha[s, r] = sums[0]
            spread = max(spread, max(sums) - min(sums))
    return alpha, spread


def random_compatible(rng, breakpoints):
    """Matrix with ``M e_r = sum_s alpha[s, r] e_s`` by construction.

    The images of the ``e_r`` are fixed by a random ``alpha``; the images
    of the rows of ``C_p`` are arbitrary.
    """
    e = indicator_vectors(breakpoints)
    C = bidiagonal_sync_matrix(breakpoints)
    N, p = e.shape[1], e.shape[0]
    alpha = rng.standard_normal((p, p))
    # columns: M e^T = e^T alpha; M C^T arbitrary
    basis = np.vstack([e, C])  # rows span R^N
    images = np.vstack([(e.T @ alpha).T, rng.standard_normal((N - p, N))])
    return np.linalg.solve(basis, images).T


def random_symmetric_compatible(rng, breakpoints):
    """Symmetric compatible matrix: ``Q diag Q^T`` with a block-adapted ``Q``.

    ``span{e_r}`` and its complement are both invariant, so each is spanned
    by eigenvectors.
    """
    e = indicator_vectors(breakpoints)
    N, p = e.shape[1], e.shape[0]
    Qk, _ = np.linalg.qr(e.T)
    full, _ = np.linalg.qr(np.hstack([Qk, rng.standard_normal((N, N - p))]))
    S1 = rng.standard_normal((p, p))
    S2 = rng.standard_normal((N - p, N - p))
    S = np.zeros((N, N))
    S[:p, :p] = S1 + S1.T
    S[p:, p:] = S2 + S2.T
    return full @ S @ full.T


def random_similar_to_symmetric_compatible(rng, breakpoints, cond_max=1e3):
    """``B = P S P^{-1}`` compatible and similar to symmetric ``S``.

    ``P`` preserves ``span{e_r}`` so compatibility survives the similarity;
    it is redrawn until ``cond(P) <= cond_max``.
    """
    S = random_symmetric_compatible(rng, breakpoints)
    e = indicator_vectors(breakpoints)
    N, p = e.shape[1], e.shape[0]
    basis = np.vstack([e, rng.standard_normal((N - p, N))])
    target = np.vstack([(e.T @ (np.eye(p) + 0.3 * rng.standard_normal((p, p)))).T,
                        rng.standard_normal((N - p, N))])
    P = np.linalg.solve(basis, target).T
    if np.linalg.cond(P) > cond_max:
        return random_similar_to_symmetric_compatible(rng, breakpoints, cond_max)
    return P @ S @ np.linalg.inv(P)


def lstsq_reduction(M, C):
    """``X`` minimizing ``||X C - C M||_F`` by least squares."""
    X, *_ = np.linalg.lstsq(C.T, (C @ M).T, rcond=None)
    return X.T
