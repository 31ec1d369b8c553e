"""Low-rank-plus-diagonal linear algebra.

Everything here works on covariances of the form ``L @ L.T + diag(psi)``
(or precisions ``diag(e) - G @ G.T``) without ever forming a D x D matrix.
The only dense factorizations are on M x M matrices, with M the number of
latent factors.
"""

import math

import numpy as np

from .errors import IndefiniteMatrixError, SingularMatrixError

PIVOT_MIN = 1e-300
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SYMMETRY_RTOL = 1e-12


def logsumexp(v, axis=None):
    """Numerically stable ``log(sum(exp(v)))``.

    Works on scalars-of-vectors (``axis=None`` reduces everything) or along
    one axis of an array.  Entries may be ``-inf``; if every entry along the
    reduced axis is ``-inf`` the result is ``-inf``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ValueError("logsumexp of an empty sequence")
    vmax = np.max(v, axis=axis, keepdims=True)
    # rows that are entirely -inf would give nan from (-inf) - (-inf)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def solve_small(a, b):
    """Solve ``a @ x = b`` by Gaussian elimination with partial pivoting.

    ``b`` may be a vector or an M x R matrix; the result has the same shape.
    Raises :class:`SingularMatrixError` when a pivot falls below 1e-300.
    """
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"solve_small needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    if b.shape[0] != n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {n}")

    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < PIVOT_MIN:
            raise SingularMatrixError(f"pivot {a[piv, col]:.3e} in column {col}")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        factors = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= np.outer(factors, a[col, col:])
        b[col + 1:] -= np.outer(factors, b[col])

    x = np.empty_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x[:, 0] if vector_rhs else x


class SymEigResult:
    """Eigenpairs of a small symmetric matrix, eigenvalues descending.

    ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``.
    """

    __slots__ = ("eigenvalues", "eigenvectors")

    def __init__(self, eigenvalues, eigenvectors):
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _offdiag_norm(a):
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def sym_eig_small(a):
    """Eigendecomposition of a small symmetric matrix by cyclic Jacobi sweeps.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``1e-12 * max(1, ||a||_F)``.  Each eigenvector's first non-negligible
    entry is made non-negative so results are reproducible.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"sym_eig_small needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a)))) if n else 1.0
    if n and np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    tol = JACOBI_TOL * max(1.0, float(np.linalg.norm(a)))

    for _ in range(JACOBI_MAX_SWEEPS):
        if _offdiag_norm(a) < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) Givens rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    for j in range(n):
        nz = np.flatnonzero(np.abs(v[:, j]) > 1e-14)
        if nz.size and v[nz[0], j] < 0:
            v[:, j] = -v[:, j]
    return SymEigResult(w, v)


def _check_psi(psi):
    psi = np.asarray(psi, dtype=np.float64)
    if np.any(~(psi > 0)):
        raise ValueError("diagonal entries must be strictly positive")
    return psi


def _inner_matrix(lam, psi):
    # L = I + Lambda^T Psi^{-1} Lambda  (M x M)
    scaled = lam / psi[:, None]
    return np.eye(lam.shape[1]) + lam.T @ scaled, scaled


def lowrank_inverse_action(lam, psi, v):
    """Apply ``(lam @ lam.T + diag(psi))^{-1}`` to ``v`` via Woodbury.

    ``v`` is a length-D vector or a D x R matrix.  Returns the product and
    ``beta = lam.T @ Sigma^{-1}`` (M x D), which equals
    ``L^{-1} lam.T Psi^{-1}`` with ``L = I + lam.T Psi^{-1} lam``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    psi = _check_psi(psi)
    v = np.asarray(v, dtype=np.float64)
    inner, scaled = _inner_matrix(lam, psi)
    if lam.shape[1] == 0:
        beta = np.zeros((0, lam.shape[0]))
    else:
        beta = solve_small(inner, scaled.T)
    v_scaled = v / psi if v.ndim == 1 else v / psi[:, None]
    return v_scaled - scaled @ (beta @ v), beta


def lowrank_logdet(lam, psi):
    """``log det(lam @ lam.T + diag(psi))`` by the matrix determinant lemma."""
    lam = np.asarray(lam, dtype=np.float64)
    psi = _check_psi(psi)
    total = float(np.sum(np.log(psi)))
    if lam.shape[1] == 0:
        return total
    inner, _ = _inner_matrix(lam, psi)
    try:
        chol = np.linalg.cholesky(inner)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteMatrixError("I + L^T Psi^-1 L is not positive definite") from exc
    return total + 2.0 * float(np.sum(np.log(np.diag(chol))))
