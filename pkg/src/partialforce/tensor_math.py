"""Small dense linear-algebra kernels.

Everything here works on float64 numpy arrays.  The decompositions accept
either a single matrix or a stack of matrices with arbitrary leading batch
dimensions, because the training code needs them once per sample.
"""

from dataclasses import dataclass

import numpy as np


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


class RankDeficientError(ArithmeticError):
    """Raised for (numerically) rank-deficient input; carries the condition estimate."""

    def __init__(self, message, condition=np.inf):
        super().__init__(message)
        self.condition = condition


RANK_TOL = 1e-12
SVD_FALLBACK_COND = 1e10
JACOBI_TOL = 1e-12
SYMMETRY_TOL = 1e-9
# vectorised Jacobi costs O(d^2) numpy calls per sweep; beyond this use LAPACK
JACOBI_MAX_DIM = 16


@dataclass
class EconomySvd:
    u: np.ndarray
    sigma: np.ndarray
    v_r: np.ndarray
    rank_deficient: bool = False


@dataclass
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _jacobi(a, max_sweeps=60):
    """Cyclic Jacobi on a stack of symmetric matrices, shape (B, d, d)."""
    a = a.copy()
    bsz, d, _ = a.shape
    v = np.broadcast_to(np.eye(d), (bsz, d, d)).copy()
    fro = np.sqrt(np.einsum("bij,bij->b", a, a))
    offmask = ~np.eye(d, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.einsum("bij,bij->b", a * offmask, a * offmask))
        if np.all(off <= JACOBI_TOL * fro):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[:, p, q]
                active = np.abs(apq) > 0.0
                if not active.any():
                    continue
                app = a[:, p, p]
                aqq = a[:, q, q]
                safe = np.where(active, apq, 1.0)
                theta = (aqq - app) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J rotating columns (p, q)
                cp = a[:, :, p].copy()
                cq = a[:, :, q]
                a[:, :, p] = c[:, None] * cp - s[:, None] * cq
                a[:, :, q] = s[:, None] * cp + c[:, None] * cq
                rp = a[:, p, :].copy()
                rq = a[:, q, :]
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
                a[:, p, q] = 0.0
                a[:, q, p] = 0.0
                vp = v[:, :, p].copy()
                vq = v[:, :, q]
                v[:, :, p] = c[:, None] * vp - s[:, None] * vq
                v[:, :, q] = s[:, None] * vp + c[:, None] * vq
    return np.diagonal(a, axis1=1, axis2=2).copy(), v


def sym_eig(a, method="auto"):
    """Eigen-decomposition of a symmetric matrix (or stack), eigenvalues descending.

    Eigenvectors are the columns of ``eigenvectors``.  ``method`` is
    ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to JACOBI_MAX_DIM).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ContractError(f"sym_eig needs square matrices, got {a.shape}")
    asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)), initial=0.0)
    if asym >= SYMMETRY_TOL:
        raise ContractError(f"matrix is not symmetric (max |a - a^T| = {asym:.3e})")
    batch = a.shape[:-2]
    d = a.shape[-1]
    flat = 0.5 * (a + np.swapaxes(a, -1, -2)).reshape(-1, d, d)
    if method == "auto":
        method = "jacobi" if d <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, v = _jacobi(flat)
    elif method == "lapack":
        w, v = np.linalg.eigh(flat)
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return SymEig(w.reshape(batch + (d,)), v.reshape(batch + (d, d)))


def condition_number(g):
    """|lambda_max| / |lambda_min| of a symmetric positive definite matrix (or stack)."""
    eig = sym_eig(g).eigenvalues
    lmin = eig[..., -1]
    if np.any(lmin <= 0.0):
        raise RankDeficientError("matrix is not positive definite", condition=np.inf)
    kappa = np.abs(eig[..., 0]) / np.abs(lmin)
    return float(kappa) if np.ndim(kappa) == 0 else kappa


def economy_svd(a):
    """Thin SVD of a wide matrix ``a`` (d x N, d <= N) via the d x d Gram matrix.

    Returns u (d x d), sigma (d, descending) and v_r (N x d) with
    ``a = u @ diag(sigma) @ v_r.T``.  Rank deficiency is flagged, not raised.
    """
    a = np.asarray(a, dtype=np.float64)
    d, n = a.shape[-2:]
    if d > n:
        raise ContractError(f"economy_svd expects d <= N, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("economy_svd input contains non-finite entries")
    eig = sym_eig(a @ np.swapaxes(a, -1, -2))
    lam = np.clip(eig.eigenvalues, 0.0, None)
    sigma = np.sqrt(lam)
    smax = sigma[..., :1]
    deficient = bool(np.any(sigma[..., -1:] < RANK_TOL * smax)) or bool(np.any(smax == 0.0))
    inv = np.where(sigma > 0.0, 1.0 / np.where(sigma > 0.0, sigma, 1.0), 0.0)
    v_r = np.swapaxes(a, -1, -2) @ eig.eigenvectors * inv[..., None, :]
    return EconomySvd(eig.eigenvectors, sigma, v_r, deficient)


def gram_cholesky(a):
    """Cholesky factor of ``a a^T`` after checking full row rank.

    Returns ``(chol, cond)``; raises RankDeficientError when the Gram
    eigenvalue ratio is below RANK_TOL.
    """
    gram = a @ np.swapaxes(a, -1, -2)
    eig = sym_eig(gram).eigenvalues
    lmax = eig[..., 0]
    lmin = eig[..., -1]
    if np.any(lmin <= RANK_TOL * lmax) or np.any(lmax <= 0.0):
        with np.errstate(divide="ignore"):
            cond = np.max(np.where(lmin > 0.0, lmax / np.where(lmin > 0.0, lmin, 1.0), np.inf))
        raise RankDeficientError(f"matrix is rank deficient (Gram condition {cond:.3e})", cond)
    return np.linalg.cholesky(gram), lmax / lmin


def pinv_full_row_rank(a):
    """Right inverse ``a^T (a a^T)^{-1}`` of a full-row-rank d x N matrix (or stack).

    Uses a Cholesky solve of the Gram matrix; falls back to an SVD when the
    Gram condition number exceeds 1e10.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-2] > a.shape[-1]:
        raise ContractError(f"pinv_full_row_rank expects a wide matrix, got {a.shape}")
    chol, cond = gram_cholesky(a)
    if np.max(cond) > SVD_FALLBACK_COND:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        return np.swapaxes(vt, -1, -2) @ (np.swapaxes(u, -1, -2) / s[..., :, None])
    # a^T G^{-1} = (G^{-1} a)^T with G = L L^T
    y = np.linalg.solve(chol, a)
    x = np.linalg.solve(np.swapaxes(chol, -1, -2), y)
    return np.swapaxes(x, -1, -2)
