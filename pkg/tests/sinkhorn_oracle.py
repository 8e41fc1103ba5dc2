"""Entropic optimal transport by damped Newton on the semi-dual.

Independent of the alternating-scaling solver under test: the row potentials
are eliminated in closed form and the column potentials are found by a
second-order method, so agreement checks the fixed point rather than the
iteration.
"""

import numpy as np
from scipy.special import logsumexp, softmax


def entropic_plan(S: np.ndarray, eps: float, tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """Plan maximizing <A, S> + eps * H(A) with rows summing to 1/T and columns to 1/B."""
    T, B = S.shape
    K = S / eps
    r, c = np.full(T, 1.0 / T), np.full(B, 1.0 / B)

    def objective(b):
        return r @ logsumexp(K + b, axis=1) - c @ b

    b = np.zeros(B)
    for _ in range(max_iter):
        P = softmax(K + b, axis=1)
        g = r @ P - c
        gmax = np.abs(g).max()
        if gmax < tol:
            break
        H = np.diag(r @ P) - (P * r[:, None]).T @ P
        # last potential pinned to zero; damping vanishes at the optimum
        # (column-marginal error much below 1e-12 is under the rounding floor of the plan)
        d = np.zeros(B)
        d[:-1] = np.linalg.solve(H[:-1, :-1] + gmax * np.eye(B - 1), -g[:-1])
        step, f0 = 1.0, objective(b)
        while objective(b + step * d) > f0 + 1e-4 * step * (g @ d) and step > 1e-12:
            step /= 2
        b = b + step * d
    return r[:, None] * softmax(K + b, axis=1)
