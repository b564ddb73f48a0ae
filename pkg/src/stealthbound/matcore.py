"""Dense linear algebra used throughout the package.

Matrices are plain ``numpy.ndarray`` objects.  Everything here is a pure
function: inputs are never modified and results are freshly allocated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    InstabilityError,
    InvalidInputError,
)

SYM_RTOL = 1e-10
STABILITY_MARGIN = 1e-8


def as_mat(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array (vectors become columns)."""
    arr = np.array(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def _square(M, name: str) -> np.ndarray:
    arr = as_mat(M, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def symmetrize(M, name: str = "matrix") -> np.ndarray:
    """Check near-symmetry and return ``(M + M^T) / 2``."""
    arr = _square(M, name)
    scale = max(1.0, np.linalg.norm(arr))
    if np.linalg.norm(arr - arr.T) > SYM_RTOL * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    return 0.5 * (arr + arr.T)


@dataclass(frozen=True)
class SymEigDecomp:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _off_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def jacobi_eigh(M, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigDecomp:
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Sweeps over all (p, q) pairs, annihilating each off-diagonal entry with a
    plane rotation, until the off-diagonal Frobenius norm drops below
    ``tol * ||M||_F``.
    """
    a = symmetrize(M).copy()
    n = a.shape[0]
    v = np.eye(n)
    target = tol * np.linalg.norm(a)
    for _ in range(max_sweeps):
        if _off_norm(a) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) > 1e150 * abs(apq):
                    t = apq / diff  # theta huge: t ~ 1 / (2 theta)
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        if _off_norm(a) > target:
            raise ConvergenceError("Jacobi sweeps did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return SymEigDecomp(w[order], v[:, order])


def sym_eig(M, method: str = "lapack") -> SymEigDecomp:
    """Symmetric eigendecomposition with eigenvalues sorted ascending.

    ``method="lapack"`` (default) calls the LAPACK divide-and-conquer driver;
    ``method="jacobi"`` uses :func:`jacobi_eigh`.
    """
    if method == "jacobi":
        return jacobi_eigh(M)
    if method != "lapack":
        raise ValueError(f"unknown eigen method {method!r}")
    a = symmetrize(M)
    w, v = np.linalg.eigh(a)
    return SymEigDecomp(w, v)


def min_eig(M) -> float:
    a = symmetrize(M)
    return float(np.linalg.eigvalsh(a)[0])


def max_eig(M) -> float:
    a = symmetrize(M)
    return float(np.linalg.eigvalsh(a)[-1])


def is_psd(M, tol: float = 1e-9) -> bool:
    """True iff the smallest eigenvalue is at least ``-tol * max(1, ||M||_F)``."""
    a = symmetrize(M)
    return min_eig(a) >= -tol * max(1.0, np.linalg.norm(a))


def spectral_radius(A, max_doublings: int = 60) -> float:
    """Estimate the spectral radius from ``||A^(2^j)||_F^(1/2^j)``.

    Repeated squaring with renormalisation, so the estimate approaches the
    spectral radius from above without overflow.
    """
    B = _square(A, "A")
    log_scale = 0.0
    est = np.inf
    for j in range(max_doublings):
        nb = np.linalg.norm(B)
        if nb == 0.0:
            return 0.0
        B = B / nb
        log_scale += math.log(nb) * 2.0 ** (-j)
        new = math.exp(log_scale)
        if abs(new - est) <= 1e-13 * new:
            return new
        est = new
        B = B @ B
    return est


def require_stable(A, name: str = "A") -> float:
    rho = spectral_radius(A)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise InstabilityError(f"{name} is not Schur stable (spectral radius ~ {rho:.12g})")
    return rho


def solve(A, b) -> np.ndarray:
    """Solve ``A x = b``: Cholesky when ``A`` is SPD, partial-pivot LU otherwise."""
    A = _square(A, "A")
    b = np.asarray(b, dtype=float)
    if np.allclose(A, A.T, rtol=0.0, atol=SYM_RTOL * max(1.0, np.linalg.norm(A))):
        try:
            return sla.cho_solve(sla.cho_factor(A), b)
        except np.linalg.LinAlgError:
            pass
    return sla.lu_solve(sla.lu_factor(A), b)


def inv(A) -> np.ndarray:
    A = _square(A, "A")
    X = solve(A, np.eye(A.shape[0]))
    if np.allclose(A, A.T, rtol=0.0, atol=SYM_RTOL * max(1.0, np.linalg.norm(A))):
        X = 0.5 * (X + X.T)
    return X


def sqrtm_psd(M) -> np.ndarray:
    d = sym_eig(M)
    w = np.clip(d.eigenvalues, 0.0, None)
    V = d.eigenvectors
    return (V * np.sqrt(w)) @ V.T


def inv_sqrtm_pd(M) -> np.ndarray:
    d = sym_eig(M)
    if d.eigenvalues[0] <= 0.0:
        raise DomainError("matrix is not positive definite")
    V = d.eigenvectors
    return (V / np.sqrt(d.eigenvalues)) @ V.T


def logdet(M) -> float:
    """Log-determinant of a symmetric positive definite matrix."""
    w = sym_eig(M).eigenvalues
    if w[0] <= 0.0:
        raise DomainError(f"logdet needs a positive definite matrix (min eigenvalue {w[0]:.3g})")
    return float(np.sum(np.log(w)))


def solve_dlyap(A, Q, max_doublings: int = 200) -> np.ndarray:
    """Solve ``X = A X A^T + Q`` by the doubling iteration.

    ``X <- X + A X A^T``, ``A <- A^2`` until the update is below
    ``1e-12 * ||X||_F``.
    """
    A = _square(A, "A")
    Q = symmetrize(Q, "Q")
    if A.shape != Q.shape:
        raise DimensionError(f"A {A.shape} and Q {Q.shape} differ in shape")
    require_stable(A)
    X = Q.copy()
    Ak = A.copy()
    for _ in range(max_doublings):
        update = Ak @ X @ Ak.T
        X = X + update
        X = 0.5 * (X + X.T)
        Ak = Ak @ Ak
        if np.linalg.norm(update) < 1e-12 * max(np.linalg.norm(X), 1e-300):
            return X
    raise ConvergenceError("doubling iteration for the Lyapunov equation did not converge")


def riccati_step(S, A, B, W, V) -> np.ndarray:
    """One step of ``S <- A^T S A + W - A^T S B (B^T S B + V)^-1 B^T S A``."""
    BtSA = B.T @ S @ A
    nxt = A.T @ S @ A + W - BtSA.T @ solve(B.T @ S @ B + V, BtSA)
    return 0.5 * (nxt + nxt.T)


def solve_dare(A, B, W, V, tol: float = 1e-11, max_iter: int = 10**6) -> np.ndarray:
    """Control Riccati equation solved by fixed-point iteration from ``S = W``."""
    A = _square(A, "A")
    B = as_mat(B, "B")
    W = symmetrize(W, "W")
    V = symmetrize(V, "V")
    n = A.shape[0]
    if B.shape[0] != n or W.shape != (n, n) or V.shape != (B.shape[1], B.shape[1]):
        raise DimensionError("inconsistent Riccati dimensions")
    if min_eig(V) <= 0.0:
        raise DomainError("input weight must be positive definite")
    S = W.copy()
    eps = np.finfo(float).eps
    for _ in range(max_iter):
        nxt = riccati_step(S, A, B, W, V)
        diff = np.linalg.norm(nxt - S)
        S = nxt
        # second clause: stagnation at rounding level for large-norm solutions
        if diff < tol or diff <= 8 * n * eps * np.linalg.norm(S):
            return S
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")


def solve_filter_dare(A, C, Q, R, tol: float = 1e-11, max_iter: int = 10**6) -> np.ndarray:
    """Steady-state a-priori error covariance of the Kalman filter.

    ``P = A P A^T - A P C^T (C P C^T + R)^-1 C P A^T + Q`` (the dual of
    :func:`solve_dare`).
    """
    A = _square(A, "A")
    C = as_mat(C, "C")
    if min_eig(R) <= 0.0:
        raise DomainError("sensor noise covariance must be positive definite")
    return solve_dare(A.T, C.T, Q, R, tol=tol, max_iter=max_iter)


def expm(M, tol: float = 1e-16) -> np.ndarray:
    """Matrix exponential by scaling and squaring of the Taylor series.

    Terms are summed until the term norm falls below ``tol`` times the
    partial-sum norm.
    """
    M = _square(M, "M")
    norm = np.linalg.norm(M, 1)
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    X = M / (2.0**s)
    term = np.eye(M.shape[0])
    total = term.copy()
    for k in range(1, 200):
        term = term @ X / k
        total = total + term
        if np.linalg.norm(term, 1) < tol * np.linalg.norm(total, 1):
            break
    for _ in range(s):
        total = total @ total
    return total


def block_diag(*blocks) -> np.ndarray:
    return sla.block_diag(*[as_mat(b) for b in blocks])
