"""Dense float64 tensors and the exact linear-algebra kernels used everywhere else.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every public
function here rejects non-finite results instead of propagating them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

Tensor = np.ndarray


class NonFiniteError(ValueError):
    """Raised when an operation would produce NaN or Inf."""


class ConvergenceError(RuntimeError):
    pass


def as_tensor(x) -> Tensor:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    return check_finite(a)


def check_finite(a: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return a


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product ``a @ b`` with shape and finiteness checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul result")


def frob_norm_sq(a: Tensor) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


@dataclass(frozen=True)
class EigenDecomp:
    """Eigenpairs of a symmetric matrix.

    ``vectors`` holds eigenvectors as columns; ``values`` is sorted descending.
    """

    vectors: Tensor
    values: Tensor

    def reconstruct(self) -> Tensor:
        return (self.vectors * self.values) @ self.vectors.T


@njit(cache=True)
def _jacobi_sweeps(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if np.sqrt(2.0 * off) <= tol:
            return v, sweep, True
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return v, max_sweeps, False


def sym_eig(a: Tensor, max_sweeps: int = 100) -> EigenDecomp:
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    The input is symmetrized as ``(a + a.T) / 2`` before iterating. Iteration
    stops once the off-diagonal Frobenius norm drops below ``1e-12 * ||a||_F``.
    Eigenvalues come back sorted descending, and every eigenvector is flipped
    so its first component with magnitude above 1e-12 is positive.
    """
    a = check_finite(np.asarray(a, dtype=np.float64), "sym_eig input")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"sym_eig expects a square matrix, got shape {a.shape}")
    norm = np.sqrt(frob_norm_sq(a))
    if np.sqrt(frob_norm_sq(a - a.T)) > 1e-8 * norm:
        raise ValueError("sym_eig input is not symmetric")
    work = np.ascontiguousarray(0.5 * (a + a.T))
    v, sweeps, ok = _jacobi_sweeps(work, 1e-12 * norm, max_sweeps)
    if not ok:
        raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    values = np.diag(work).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    v = v[:, order]
    for j in range(v.shape[1]):
        col = v[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12)
        if lead.size and col[lead[0]] < 0:
            v[:, j] = -col
    return EigenDecomp(vectors=np.ascontiguousarray(v), values=values)


def spd_power(a: Tensor, exponent: float, eps: float = 1e-5) -> Tensor:
    """``V diag(max(lambda, eps) ** exponent) V^T`` for symmetric PSD ``a``.

    ``eps`` is an absolute floor on the eigenvalues.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    dec = sym_eig(a)
    lam = np.maximum(dec.values, eps) ** exponent
    out = (dec.vectors * lam) @ dec.vectors.T
    return check_finite(0.5 * (out + out.T), "spd_power result")


def random_orthogonal(c: int, rng: np.random.Generator) -> Tensor:
    """Haar-distributed orthogonal matrix from QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((c, c)))
    return q * np.sign(np.diag(r))


def random_spd(c: int, rng: np.random.Generator, lo: float = 0.1, hi: float = 10.0) -> Tensor:
    """SPD matrix with eigenvalues drawn uniformly from ``[lo, hi]``."""
    q = random_orthogonal(c, rng)
    lam = rng.uniform(lo, hi, size=c)
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)
