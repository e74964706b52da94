"""Compiled SGD epoch for the trainer; mirrors fnn.forward + grad.batch_backward.

Only the active sub-bank is passed in, so every rule here participates.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None
    HAVE_NUMBA = False
else:
    HAVE_NUMBA = True


def _sgd_epoch(X, y, order, batch_size, m, sigma, theta, lr, sigma_min, prob_eps):
    """One epoch of mini-batch SGD, updating m, sigma, theta in place.

    Returns False as soon as a batch loss is not finite.
    """
    N, D = X.shape
    A = m.shape[0]
    C = theta.shape[2]
    z = np.empty((A, D))
    phi = np.empty((A, D))
    r = np.empty(A)
    h = np.empty(A)
    g = np.empty((A, C))
    tau = np.empty(C)
    delta = np.empty(C)
    a = np.empty(A)
    dm = np.empty((A, D))
    ds = np.empty((A, D))
    dt = np.empty((A, D + 1, C))

    for start in range(0, N, batch_size):
        stop = min(start + batch_size, N)
        B = stop - start
        dm[:] = 0.0
        ds[:] = 0.0
        dt[:] = 0.0
        loss = 0.0
        for bi in range(start, stop):
            i = order[bi]
            rmax = -np.inf
            for k in range(A):
                acc = 0.0
                for j in range(D):
                    zz = (X[i, j] - m[k, j]) / sigma[k, j]
                    p = math.exp(-zz * zz)
                    z[k, j] = zz
                    phi[k, j] = p
                    acc += p * p
                r[k] = math.sqrt(acc)
                if r[k] > rmax:
                    rmax = r[k]
            wsum = 0.0
            for k in range(A):
                h[k] = math.exp(r[k] - rmax)
                wsum += h[k]
            for k in range(A):
                h[k] /= wsum
            for c in range(C):
                tau[c] = 0.0
            for k in range(A):
                for c in range(C):
                    v = theta[k, 0, c]
                    for j in range(D):
                        v += X[i, j] * theta[k, j + 1, c]
                    g[k, c] = v
                    tau[c] += h[k] * v
            tmax = -np.inf
            for c in range(C):
                if tau[c] > tmax:
                    tmax = tau[c]
            tsum = 0.0
            for c in range(C):
                delta[c] = math.exp(tau[c] - tmax)
                tsum += delta[c]
            for c in range(C):
                delta[c] /= tsum
            loss -= math.log(max(delta[y[i]], prob_eps))
            delta[y[i]] -= 1.0
            for c in range(C):
                delta[c] /= B

            abar = 0.0
            for k in range(A):
                v = 0.0
                for c in range(C):
                    v += g[k, c] * delta[c]
                    dt[k, 0, c] += h[k] * delta[c]
                    for j in range(D):
                        dt[k, j + 1, c] += h[k] * X[i, j] * delta[c]
                a[k] = v
                abar += h[k] * v
            for k in range(A):
                if r[k] == 0.0:
                    continue
                dr = h[k] * (a[k] - abar)
                for j in range(D):
                    common = dr * phi[k, j] / r[k] * phi[k, j] * 2.0 * z[k, j] / sigma[k, j]
                    dm[k, j] += common
                    ds[k, j] += common * z[k, j]

        if not math.isfinite(loss):
            return False
        for k in range(A):
            for j in range(D):
                m[k, j] -= lr * dm[k, j]
                s = sigma[k, j] - lr * ds[k, j]
                sigma[k, j] = s if s > sigma_min else sigma_min
            for j in range(D + 1):
                for c in range(C):
                    theta[k, j, c] -= lr * dt[k, j, c]
    return True


sgd_epoch = njit(cache=True, error_model="numpy")(_sgd_epoch) if HAVE_NUMBA else None
