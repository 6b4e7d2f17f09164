"""Small vectorized numerical helpers."""

import numpy as np


def newton_invert(cdf, pdf, u, par, lo, hi, x0, tol=1e-12, max_iter=200):
    """Solve ``cdf(x, par) = u`` elementwise inside the bracket ``[lo, hi]``.

    Newton steps that leave the current bracket are replaced by bisection,
    and only unconverged entries are iterated. All array arguments are 1-d
    and of equal length.
    """
    x, lo, hi = x0.copy(), lo.copy(), hi.copy()
    active = np.arange(x.size)
    for _ in range(max_iter):
        xa, ua, pa = x[active], u[active], par[active]
        f = cdf(xa, pa) - ua
        la = np.where(f < 0, xa, lo[active])
        ha = np.where(f >= 0, xa, hi[active])
        x_new = xa - f / np.maximum(pdf(xa, pa), 1e-300)
        bad = ~((x_new > la) & (x_new < ha))
        x_new = np.where(bad, 0.5 * (la + ha), x_new)
        x[active], lo[active], hi[active] = x_new, la, ha
        keep = (np.abs(x_new - xa) > tol * np.maximum(1.0, np.abs(xa))) & (ha - la > tol)
        active = active[keep]
        if active.size == 0:
            break
    return x
