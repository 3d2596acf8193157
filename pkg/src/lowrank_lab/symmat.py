"""Dense symmetric-matrix kernel.

Everything downstream (flows, greedy solvers, spectral diagnostics) funnels
through these few operations, so the conventions are pinned here once:

* matrices are plain ``numpy.ndarray``; ``symmetrize`` makes symmetry exact,
* eigenvalues are sorted descending,
* eigenvector signs are fixed (largest-magnitude component positive, ties
  broken by lowest index) so repeated calls are bit-identical.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInput, NotPSD

# Default tolerances; every caller may override.
TOL_EIG = 1e-10
TOL_PSD = 1e-9


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the exactly symmetric part (A + A^T)/2."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise InvalidInput("dimension must be >= 1")
    return (a + a.T) / 2.0


def check_finite(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    return a


class EigDecomp(NamedTuple):
    """Eigendecomposition with descending eigenvalues.

    ``vectors[:, i]`` pairs with ``values[i]``; the reconstruction
    ``V diag(values) V^T`` matches the input to ``TOL_EIG`` relative.
    """

    values: np.ndarray
    vectors: np.ndarray


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # Largest-magnitude component of each column made positive; argmax
    # already breaks magnitude ties at the lowest index.
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eig(a: np.ndarray) -> EigDecomp:
    """Deterministic symmetric eigendecomposition, eigenvalues descending."""
    a = symmetrize(check_finite(a))
    vals, vecs = np.linalg.eigh(a)
    order = np.arange(vals.shape[0])[::-1]  # eigh returns ascending
    return EigDecomp(vals[order].copy(), _fix_signs(vecs[:, order]))


def top_eigpair(a: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Top eigenvalue, its unit eigenvector, and the gap lambda_1 - lambda_2.

    The gap is 0.0 for 1x1 inputs and for degenerate top eigenvalues.
    """
    dec = eig(a)
    gap = float(dec.values[0] - dec.values[1]) if dec.values.size > 1 else 0.0
    return float(dec.values[0]), dec.vectors[:, 0].copy(), gap


def _is_diagonal(a: np.ndarray) -> bool:
    return np.count_nonzero(a - np.diag(np.diagonal(a))) == 0


def frac_power(a: np.ndarray, p: float, tol_psd: float = TOL_PSD) -> np.ndarray:
    """Fractional matrix power of a PSD matrix, V diag(clip(lam,0)^p) V^T.

    Eigenvalues in [-tol_psd * ||a||_2, 0) are clipped to zero; anything
    below that raises NotPSD. Exact on diagonal inputs (no eigensolver).
    """
    if p <= 0:
        raise InvalidInput(f"power must be positive, got {p}")
    a = symmetrize(check_finite(a))
    if _is_diagonal(a):
        d = np.diagonal(a).copy()
        bound = tol_psd * (np.max(np.abs(d)) if d.size else 0.0)
        if np.min(d, initial=0.0) < -bound:
            raise NotPSD(f"diagonal entry {np.min(d)} below -{bound:.3g}")
        return np.diag(np.clip(d, 0.0, None) ** p)
    vals, vecs = np.linalg.eigh(a)
    bound = tol_psd * np.max(np.abs(vals))
    if vals[0] < -bound:
        raise NotPSD(f"lambda_min = {vals[0]:.6g} below -{bound:.3g}")
    powered = np.clip(vals, 0.0, None) ** p
    return symmetrize((vecs * powered) @ vecs.T)


def matrix_power_psd(a: np.ndarray, p: float, tol_psd: float = TOL_PSD) -> np.ndarray:
    """Like ``frac_power`` but takes the fast exact path for integer powers."""
    if float(p).is_integer() and p >= 1:
        return np.linalg.matrix_power(np.asarray(a, dtype=float), int(p))
    return frac_power(a, p, tol_psd=tol_psd)


def nuclear_norm(a: np.ndarray) -> float:
    """Sum of singular values; for symmetric input these are |eigenvalues|."""
    a = symmetrize(check_finite(a))
    return float(np.sum(np.abs(np.linalg.eigvalsh(a))))


def singular_values(a: np.ndarray) -> np.ndarray:
    """Singular values of a symmetric matrix, descending."""
    a = symmetrize(check_finite(a))
    return np.sort(np.abs(np.linalg.eigvalsh(a)))[::-1]


def low_rankness(a: np.ndarray, r: int) -> float:
    """Distance to the nearest rank-r matrix: sqrt(sum_{i>r} sigma_i^2)."""
    a = symmetrize(check_finite(a))
    d = a.shape[0]
    if not 0 <= r <= d:
        raise InvalidInput(f"rank cutoff {r} outside [0, {d}]")
    sig = singular_values(a)
    return float(np.sqrt(np.sum(sig[r:] ** 2)))


def frob(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, "fro"))
