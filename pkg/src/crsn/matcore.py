"""Dense symmetric-matrix utilities shared by every module.

All matrix quantities in the toolkit (covariances, trigger matrices,
LMI blocks) are small dense symmetric arrays.  This module fixes the
conventions: symmetrization after arithmetic composites, a common PSD
tolerance, column-stacking vectorization, and the half-vectorization
bijection used by the branch-and-bound coordinates.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

# A matrix counts as PSD when min eigenvalue >= -PSD_RTOL * max(1, ||A||_2).
PSD_RTOL = 1e-8


def _as_square(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def symmetrize(a) -> np.ndarray:
    """Return (A + A^T)/2, the exact-symmetric representative of A."""
    a = _as_square(a)
    return 0.5 * (a + a.T)


def eigh_sym(a):
    """Eigendecomposition of a symmetric matrix (ascending eigenvalues)."""
    return np.linalg.eigh(symmetrize(a))


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(a))[0])


def spectral_norm_sym(a) -> float:
    """2-norm of a symmetric matrix (largest |eigenvalue|)."""
    w = np.linalg.eigvalsh(symmetrize(a))
    return float(max(abs(w[0]), abs(w[-1])))


def is_psd(a, rtol: float = PSD_RTOL) -> bool:
    """PSD test with the toolkit tolerance: lam_min >= -rtol*max(1, ||A||_2)."""
    w = np.linalg.eigvalsh(symmetrize(a))
    scale = max(1.0, abs(w[0]), abs(w[-1]))
    return w[0] >= -rtol * scale


def psd_project(a) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clamp negative eigenvalues to zero."""
    w, v = eigh_sym(a)
    w = np.clip(w, 0.0, None)
    return symmetrize((v * w) @ v.T)


def sqrt_psd(a) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative noise clamped)."""
    w, v = eigh_sym(a)
    w = np.sqrt(np.clip(w, 0.0, None))
    return symmetrize((v * w) @ v.T)


def vec(a) -> np.ndarray:
    """Column-stacking vectorization."""
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, order="F").copy()


def unvec(v, n: int) -> np.ndarray:
    """Inverse of :func:`vec` for an n-by-n matrix."""
    v = np.asarray(v, dtype=float)
    if v.size != n * n:
        raise InvalidInputError(f"vec length {v.size} does not match n={n}")
    return v.reshape(n, n, order="F").copy()


def tri_pairs(n: int) -> list[tuple[int, int]]:
    """Lower-triangle index pairs in column-wise order: (0,0),(1,0),...,(1,1),..."""
    return [(i, j) for j in range(n) for i in range(j, n)]


def tri_index(n: int, i: int, j: int) -> int:
    """Position of entry (i, j) (order-insensitive) in the vech ordering."""
    if i < j:
        i, j = j, i
    return j * n - (j * (j - 1)) // 2 + (i - j)


def vech(a) -> np.ndarray:
    """Stack the lower triangle column-wise."""
    a = _as_square(a)
    n = a.shape[0]
    return np.array([a[i, j] for i, j in tri_pairs(n)])


def unvech(v) -> np.ndarray:
    """Rebuild the symmetric matrix from its half-vectorization."""
    v = np.asarray(v, dtype=float)
    p = v.size
    n = int(round((np.sqrt(8 * p + 1) - 1) / 2))
    if n * (n + 1) // 2 != p:
        raise InvalidInputError(f"vech length {p} is not triangular")
    a = np.zeros((n, n))
    for k, (i, j) in enumerate(tri_pairs(n)):
        a[i, j] = v[k]
        a[j, i] = v[k]
    return a


def duplication_matrix(n: int) -> np.ndarray:
    """D with vec(X) = D @ vech(X) for symmetric X."""
    p = n * (n + 1) // 2
    d = np.zeros((n * n, p))
    for j in range(n):
        for i in range(n):
            d[j * n + i, tri_index(n, i, j)] = 1.0
    return d


def kron(a, b) -> np.ndarray:
    """Kronecker product (thin wrapper with finite-entry validation)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("kron arguments must be finite")
    return np.kron(a, b)


def solve_psym(a, b) -> np.ndarray:
    """Solve A X = B for symmetric positive-definite A via Cholesky."""
    a = symmetrize(a)
    try:
        l = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError("matrix is not positive definite") from exc
    y = np.linalg.solve(l, b)
    return np.linalg.solve(l.T, y)


def inv_psym(a) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix."""
    n = np.asarray(a).shape[0] if np.ndim(a) >= 1 else 1
    return symmetrize(solve_psym(a, np.eye(n)))
