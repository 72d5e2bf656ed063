"""Dense vector/matrix helpers: induced norms, Kronecker products,
singular-value extremes, and relative distances.

Everything here runs in reference (double) arithmetic: norms, condition
numbers and error bounds are mathematical quantities of the exact maps, so
no simulated rounding is applied in this module.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, UnsupportedNormError

INF = math.inf

# Induced-norm pairs with an implemented closed form.  ||Y||_{1,q} is the
# max column q-norm; (inf,inf) is the max row sum; (2,2) the largest
# singular value; (2,inf) the max row 2-norm (transpose identity from
# (1,2)).  Other pairs have no cheap closed form and fail loudly.
SUPPORTED_NORM_PAIRS = {(1, 1), (1, 2), (1, INF), (2, 2), (2, INF), (INF, INF)}


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("expected a vector or a matrix")
    return a


def vec_norm(x, p) -> float:
    """l_p norm of a vector for p in {1, 2, inf}."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if p == 1:
        return float(np.sum(np.abs(x)))
    if p == 2:
        return float(np.linalg.norm(x))
    if p == INF:
        return float(np.max(np.abs(x))) if x.size else 0.0
    raise UnsupportedNormError(f"unsupported vector norm p={p}")


def min_abs(x) -> float:
    """The ||.||_{-inf} functional: the smallest |x_i|."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty vector")
    return float(np.min(np.abs(x)))


def induced_norm(m, p, q) -> float:
    """Matrix norm induced by the l_p (domain) and l_q (range) vector norms."""
    a = _as_matrix(m)
    key = (float(p) if p != INF else INF, float(q) if q != INF else INF)
    key = (int(key[0]) if key[0] in (1.0, 2.0) else key[0],
           int(key[1]) if key[1] in (1.0, 2.0) else key[1])
    if key not in SUPPORTED_NORM_PAIRS:
        raise UnsupportedNormError(f"induced norm (p,q)=({p},{q}) not supported")
    p, q = key
    if p == 1:
        # max column q-norm
        if q == 1:
            return float(np.max(np.sum(np.abs(a), axis=0)))
        if q == 2:
            return float(np.max(np.linalg.norm(a, axis=0)))
        return float(np.max(np.abs(a)))
    if p == 2 and q == 2:
        return sv_extremes(a)[1]
    if p == 2 and q == INF:
        # ||Y||_{2,inf} = ||Y^T||_{1,2}: max row 2-norm
        return float(np.max(np.linalg.norm(a, axis=1)))
    # (inf, inf): max row sum
    return float(np.max(np.sum(np.abs(a), axis=1)))


def kron(y, z) -> np.ndarray:
    """Kronecker product in the standard block layout."""
    return np.kron(_as_matrix(y), _as_matrix(z))


def sv_extremes(m, tol: float = 1e-12, max_sweeps: int = 60) -> tuple[float, float]:
    """Smallest and largest singular value via one-sided Jacobi.

    Columns are orthogonalized by plane rotations until every pairwise
    inner product is below ``tol`` relative to the column norms; the
    singular values are then the column norms.  Pairs are processed in a
    fixed round-robin schedule whose rounds touch disjoint columns, so
    each round is applied as one vectorized rotation.  One-sided Jacobi
    keeps high relative accuracy for the small singular values (no Gram
    matrix is formed).  Intended for small dense matrices.
    """
    a = _as_matrix(m).copy()
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    n = a.shape[1]
    if n == 1:
        s = float(np.linalg.norm(a[:, 0]))
        return s, s

    # circle-method schedule: n-1 rounds of disjoint pairs cover all pairs
    order = list(range(n)) + ([n] if n % 2 else [])  # n marks a bye column
    half = len(order) // 2
    rounds = []
    for _ in range(len(order) - 1):
        pairs = [(order[k], order[-1 - k]) for k in range(half)]
        rounds.append([(i, j) for i, j in pairs if i < n and j < n])
        order = [order[0], order[-1]] + order[1:-1]

    for _ in range(max_sweeps):
        rotated = False
        for pairs in rounds:
            ii = np.array([p[0] for p in pairs])
            jj = np.array([p[1] for p in pairs])
            ci = a[:, ii]
            cj = a[:, jj]
            gii = np.einsum("ij,ij->j", ci, ci)
            gjj = np.einsum("ij,ij->j", cj, cj)
            gij = np.einsum("ij,ij->j", ci, cj)
            active = (gij != 0.0) & (np.abs(gij) > tol * np.sqrt(gii * gjj))
            if not np.any(active):
                continue
            rotated = True
            tau = (gjj[active] - gii[active]) / (2.0 * gij[active])
            t = np.copysign(1.0, tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            ca = ci[:, active]
            cb = cj[:, active]
            a[:, ii[active]] = c * ca - s * cb
            a[:, jj[active]] = s * ca + c * cb
        if not rotated:
            break
    sv = np.linalg.norm(a, axis=0)
    return float(np.min(sv)), float(np.max(sv))


def rel_dist_componentwise(xh, x) -> float:
    """max_i |xh_i - x_i| / |x_i| with the conventions 0/0 = 0 and y/0 = inf.

    Finite exactly when the support of xh is contained in the support of x.
    Non-finite entries in xh count as infinite distance.
    """
    xh = np.asarray(xh, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if xh.shape != x.shape:
        raise ValueError("shape mismatch")
    if not np.all(np.isfinite(xh)) or not np.all(np.isfinite(x)):
        return INF
    diff = np.abs(xh - x)
    den = np.abs(x)
    zero_den = den == 0.0
    if np.any(diff[zero_den] != 0.0):
        return INF
    out = np.zeros_like(diff)
    nz = ~zero_den
    out[nz] = diff[nz] / den[nz]
    return float(np.max(out)) if out.size else 0.0


def rel_dist_normwise(xh, x, p=2) -> float:
    """||xh - x|| / ||x|| in the requested vector norm (arrays are flattened)."""
    xh = np.asarray(xh, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if xh.shape != x.shape:
        raise ValueError("shape mismatch")
    nx = vec_norm(x, p)
    if nx == 0.0:
        raise DomainError("normwise distance to the zero element is undefined")
    if not np.all(np.isfinite(xh)):
        return INF
    return vec_norm(xh - x, p) / nx


def rel_dist_columnwise(xh, x, p=2) -> float:
    """Max over columns of the normwise relative distance; vectors are a
    single column.  Columns of x that are zero are skipped unless the
    corresponding column of xh differs, in which case the distance is inf."""
    xh = np.asarray(xh, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xh.shape != x.shape:
        raise ValueError("shape mismatch")
    if xh.ndim == 1:
        return rel_dist_normwise(xh, x, p)
    worst = 0.0
    for t in range(x.shape[1]):
        col = x[:, t]
        if np.all(col == 0.0):
            if np.any(xh[:, t] != 0.0):
                return INF
            continue
        worst = max(worst, rel_dist_normwise(xh[:, t], col, p))
    return worst
