"""Half-vectorizations, companion forms and spectral tests.

The quadratic-monomial vector ``vecv`` and the symmetric half-vectorization
``vecs`` use the row-major upper-triangular ordering
(0,0), (0,1), ..., (0,n-1), (1,1), ..., (n-1,n-1).  This ordering is also the
on-disk order for every packed vector written by the rest of the package.
"""

from dataclasses import dataclass, field

import numpy as np

SYM_TOL = 1e-10


def _upper_indices(n):
    return np.triu_indices(n)


def vecv(b):
    """Quadratic monomials [b1^2, b1*b2, ..., b1*bn, b2^2, ..., bn^2] of a vector."""
    b = np.asarray(b, dtype=float)
    if b.ndim != 1:
        raise ValueError("vecv expects a vector, got shape %s" % (b.shape,))
    i, j = _upper_indices(b.size)
    return b[i] * b[j]


def vecv_rows(X):
    """Row-wise vecv of an (N, n) array; returns (N, n(n+1)/2)."""
    X = np.asarray(X, dtype=float)
    i, j = _upper_indices(X.shape[1])
    return X[:, i] * X[:, j]


def vecs(P):
    """Half-vectorize a symmetric matrix, doubling off-diagonal entries.

    Satisfies vecs(P)^T vecv(x) == x^T P x.  P is symmetrized by averaging;
    asymmetry beyond SYM_TOL (relative) is an error.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("vecs expects a square matrix, got shape %s" % (P.shape,))
    scale = max(1.0, np.abs(P).max())
    if np.abs(P - P.T).max() > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric to tolerance %g" % SYM_TOL)
    P = 0.5 * (P + P.T)
    i, j = _upper_indices(P.shape[0])
    w = np.where(i == j, 1.0, 2.0)
    return w * P[i, j]


def unvecs(v, n):
    """Inverse of vecs: rebuild the symmetric n-by-n matrix."""
    v = np.asarray(v, dtype=float)
    if v.size != n * (n + 1) // 2:
        raise ValueError("expected length %d for n=%d, got %d" % (n * (n + 1) // 2, n, v.size))
    P = np.zeros((n, n))
    i, j = _upper_indices(n)
    P[i, j] = np.where(i == j, v, 0.5 * v)
    P = P + np.triu(P, 1).T
    return P


def poly_from_roots(roots):
    """Monic polynomial coefficients [a0, ..., a_{n-1}] from its roots.

    Complex roots must appear in conjugate pairs so the coefficients are real.
    """
    roots = np.atleast_1d(np.asarray(roots, dtype=complex))
    scale = 1.0 + np.abs(roots).max()
    complex_roots = roots[np.abs(roots.imag) > 1e-12 * scale]
    if complex_roots.size:
        # every complex root must have a conjugate partner in the multiset
        remaining = list(complex_roots)
        while remaining:
            r = remaining.pop()
            gaps = [abs(c - np.conj(r)) for c in remaining]
            if not gaps or min(gaps) > 1e-9 * scale:
                raise ValueError("complex root %s has no conjugate partner" % r)
            remaining.pop(int(np.argmin(gaps)))
    coeffs = np.real(np.poly(roots))  # descending, monic
    alpha = coeffs[1:][::-1].copy()   # ascending [a0, ..., a_{n-1}]
    value = np.polyval(np.concatenate(([1.0], alpha[::-1])), roots)
    bound = 1e-9 * (1.0 + np.abs(roots) ** roots.size)
    if np.any(np.abs(value) > bound):
        raise ValueError("expanded polynomial does not annihilate its roots")
    return alpha


def companion_from_alpha(alpha):
    """Companion matrix with last row [-a0, ..., -a_{n-1}] and superdiagonal ones."""
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.size
    A = np.zeros((n, n))
    if n > 1:
        A[np.arange(n - 1), np.arange(1, n)] = 1.0
    A[-1, :] = -alpha
    return A


@dataclass
class CompanionPair:
    """Companion realization (A_mat, b_vec) of a monic polynomial.

    alpha holds the ascending coefficients [a0, ..., a_{n-1}] of
    s^n + a_{n-1} s^{n-1} + ... + a0.
    """

    alpha: np.ndarray
    A_mat: np.ndarray = field(init=False)
    b_vec: np.ndarray = field(init=False)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.ndim != 1 or self.alpha.size < 1:
            raise ValueError("alpha must be a nonempty coefficient vector")
        self.A_mat = companion_from_alpha(self.alpha)
        self.b_vec = np.zeros(self.alpha.size)
        self.b_vec[-1] = 1.0

    @property
    def dim(self):
        return self.alpha.size


def is_hurwitz(A):
    """Return (verdict, margin) where margin is the largest eigenvalue real part."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("is_hurwitz expects a square matrix, got shape %s" % (A.shape,))
    margin = float(np.max(np.linalg.eigvals(A).real))
    return margin < 0.0, margin


def char_poly_alpha(A):
    """Ascending coefficients [a0, ..., a_{n-1}] of det(sI - A)."""
    A = np.asarray(A, dtype=float)
    coeffs = np.real(np.poly(A))
    return coeffs[1:][::-1].copy()
