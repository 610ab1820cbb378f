"""
Native dense symmetric eigensolver: Householder tridiagonalization followed by
implicit-shift QL iteration with eigenvector accumulation
"""

import math
import logging

import numpy as np

from pimspec.config import Config
from pimspec.utils.error_handlers import EigenConvergenceError

logger = logging.getLogger(__name__)


def householder_tridiagonalize(a):
    """Reduce symmetric ``a`` to tridiagonal T = Q^T a Q

    Returns the diagonal d, the off-diagonal e (length n - 1) and Q.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    reflectors = []

    for k in range(n - 2):
        u = a[k + 1:, k].copy()
        norm = math.sqrt(float(np.dot(u, u)))
        if norm == 0.0:
            reflectors.append(None)
            continue
        if u[0] < 0.0:
            norm = -norm
        u[0] += norm
        h = float(np.dot(u, u)) / 2.0
        v = a[k + 1:, k + 1:] @ u / h
        g = float(np.dot(u, v)) / (2.0 * h)
        v -= g * u
        a[k + 1:, k + 1:] -= np.outer(v, u) + np.outer(u, v)
        a[k, k + 1] = a[k + 1, k] = -norm
        a[k + 2:, k] = a[k, k + 2:] = 0.0
        reflectors.append((u, h))

    q = np.identity(n)
    for k, reflector in enumerate(reflectors):
        if reflector is None:
            continue
        u, h = reflector
        v = q[:, k + 1:] @ u / h
        q[:, k + 1:] -= np.outer(v, u)

    return np.diagonal(a).copy(), np.diagonal(a, 1).copy(), q


def tql_implicit(d, e, z, max_iter=None):
    """Implicit-shift QL on the tridiagonal (d, e), rotating the columns of z

    On return the eigenvalues are unsorted and the columns of z are the
    matching eigenvectors of the matrix z T z^T.
    """
    d = np.array(d, dtype=float)
    n = d.shape[0]
    e = np.concatenate([np.asarray(e, dtype=float), [0.0]])
    # rows of zt are the columns of z
    zt = np.array(z, dtype=float).T.copy()
    max_iter = max_iter or Config.QL_ITERATIONS_PER_ROW * n
    total = 0

    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) + dd == dd:
                    break
                m += 1
            if m == l:
                break

            total += 1
            if total > max_iter:
                raise EigenConvergenceError(
                    f"QL iteration did not converge within {max_iter} iterations",
                    payload={'converged_rows': l, 'iterations': total},
                )

            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            underflow = False

            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b

                lower, upper = zt[i].copy(), zt[i + 1].copy()
                zt[i + 1] = s * lower + c * upper
                zt[i] = c * lower - s * upper

            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0

    logger.debug(f"QL converged for n={n} in {total} iterations")
    return d, zt.T


def symmetric_eigh(a, max_iter=None):
    """All eigenpairs of symmetric ``a`` in ascending order"""
    d, e, q = householder_tridiagonalize(a)
    w, z = tql_implicit(d, e, q, max_iter=max_iter)
    order = np.argsort(w, kind='stable')
    return w[order], z[:, order]
