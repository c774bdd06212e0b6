"""NumPy fallback for the SMO loop (same arithmetic as the compiled kernel)."""
import numpy as np


def smo_loop(K, beta, grad, c, tol, max_iter, min_curvature):
    """Run maximal-violating-pair SMO in place on ``beta`` and ``grad``.

    Returns ``(iterations, final_violation)``.
    """
    it = 0
    while True:
        i = int(np.argmin(np.where(beta < c, grad, np.inf)))
        gi = grad[i] if beta[i] < c else np.inf
        masked = np.where(beta > 0.0, grad, -np.inf)
        j = int(np.argmax(masked))
        gj = masked[j]
        viol = gj - gi
        if viol < tol or it >= max_iter:
            break
        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if a <= min_curvature:
            a = min_curvature
        delta = (gj - gi) / (2.0 * a)
        cap_i = c - beta[i]
        cap_j = beta[j]
        if delta >= cap_i or delta >= cap_j:
            if cap_i <= cap_j:
                delta = cap_i
                beta[i] = c
                beta[j] = 0.0 if cap_i == cap_j else beta[j] - delta
            else:
                delta = cap_j
                beta[i] = beta[i] + delta
                beta[j] = 0.0
        else:
            beta[i] = beta[i] + delta
            beta[j] = beta[j] - delta
        grad += (2.0 * delta) * (K[i] - K[j])
        it += 1
    return it, float(viol)
