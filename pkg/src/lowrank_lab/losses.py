"""Convex objectives over symmetric matrices with exact gradients.

Three kinds cover every experiment in this lab:

* ``SensingLoss``   -- f(W) = 1/2 sum_i (<W, X_i> - y_i)^2,
* ``FullObservationLoss`` -- f(W) = 1/2 ||W - target||_F^2,
* ``LinearLoss``    -- f(W) = offset - <W, Q>.

All three satisfy f(W) = f(W^T), so gradients are symmetric for symmetric
arguments (bitwise: they are assembled from exactly symmetric pieces).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .symmat import check_finite, symmetrize


@dataclass
class Measurement:
    """One linear measurement <X, W> = y with symmetric X."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        self.x = symmetrize(check_finite(self.x))
        self.y = float(self.y)


def completion_measurement(dim: int, i: int, j: int, y: float) -> Measurement:
    """Single-entry observation W_ij = y, stored as X = (e_i e_j^T + e_j e_i^T)/2."""
    if not (0 <= i < dim and 0 <= j < dim):
        raise InvalidInput(f"indices ({i},{j}) outside dimension {dim}")
    x = np.zeros((dim, dim))
    x[i, j] += 0.5
    x[j, i] += 0.5
    return Measurement(x, y)


class _LossBase:
    dim: int

    def _check(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim, self.dim):
            raise InvalidInput(f"state shape {w.shape} != ({self.dim},{self.dim})")
        return w


@dataclass
class SensingLoss(_LossBase):
    """Matrix sensing / completion objective from a list of measurements."""

    measurements: list[Measurement]
    dim: int | None = None
    _xs: np.ndarray = field(init=False, repr=False)
    _ys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim is None:
            if not self.measurements:
                raise InvalidInput("empty measurement list needs an explicit dim")
            self.dim = self.measurements[0].x.shape[0]
        for m in self.measurements:
            if m.x.shape != (self.dim, self.dim):
                raise InvalidInput("measurement dimension mismatch")
        if self.measurements:
            self._xs = np.stack([m.x for m in self.measurements])
            self._ys = np.array([m.y for m in self.measurements])
        else:
            self._xs = np.zeros((0, self.dim, self.dim))
            self._ys = np.zeros(0)

    def residuals(self, w: np.ndarray) -> np.ndarray:
        w = self._check(w)
        return np.einsum("mij,ij->m", self._xs, w) - self._ys

    def value(self, w: np.ndarray) -> float:
        return 0.5 * float(np.sum(self.residuals(w) ** 2))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("m,mij->ij", self.residuals(w), self._xs)

    def hessian_apply(self, delta: np.ndarray) -> np.ndarray:
        delta = self._check(delta)
        return np.einsum("m,mij->ij", np.einsum("mij,ij->m", self._xs, delta), self._xs)

    def hessian_norm(self) -> float:
        """Operator norm of the (constant) Hessian; equals the top eigenvalue
        of the measurement Gram matrix <X_a, X_b>."""
        if not self.measurements:
            return 0.0
        gram = np.einsum("aij,bij->ab", self._xs, self._xs)
        return float(np.linalg.eigvalsh(gram)[-1])


@dataclass
class FullObservationLoss(_LossBase):
    """f(W) = 1/2 ||W - target||_F^2."""

    target: np.ndarray

    def __post_init__(self):
        self.target = symmetrize(check_finite(self.target))
        self.dim = self.target.shape[0]

    def value(self, w: np.ndarray) -> float:
        diff = self._check(w) - self.target
        return 0.5 * float(np.sum(diff * diff))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self._check(w) - self.target

    def hessian_apply(self, delta: np.ndarray) -> np.ndarray:
        return self._check(delta).copy()

    def hessian_norm(self) -> float:
        return 1.0


@dataclass
class LinearLoss(_LossBase):
    """f(W) = offset - <W, Q>; gradient is the constant -Q."""

    q: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.q = symmetrize(check_finite(self.q))
        self.offset = float(self.offset)
        self.dim = self.q.shape[0]

    def value(self, w: np.ndarray) -> float:
        return self.offset - float(np.sum(self._check(w) * self.q))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        self._check(w)
        return -self.q

    def hessian_apply(self, delta: np.ndarray) -> np.ndarray:
        self._check(delta)
        return np.zeros((self.dim, self.dim))

    def hessian_norm(self) -> float:
        return 0.0


LossSpec = SensingLoss | FullObservationLoss | LinearLoss


def value(spec: LossSpec, w: np.ndarray) -> float:
    return spec.value(w)


def gradient(spec: LossSpec, w: np.ndarray) -> np.ndarray:
    return spec.gradient(w)


def symmetrize_loss(spec: LossSpec) -> LossSpec:
    """Identity on the built-in kinds: they already satisfy f(W) = f(W^T).

    Kept as the contract point where a non-symmetric extension would wrap
    its objective as (f(W) + f(W^T))/2.
    """
    return spec


def build_counterexample_loss(big_r: float) -> SensingLoss:
    """Six-entry 4x4 completion instance with observed values {1, R} patterned
    so that both a rank-1 and a smaller-nuclear-norm rank-2 completion fit
    exactly.

    Observed positions, each its own measurement so (i,j) and (j,i) both
    contribute: (0,2)=1, (0,3)=R, (1,2)=R, (2,0)=1, (2,1)=R, (3,0)=R.
    """
    if big_r <= 1:
        raise InvalidInput(f"R must be > 1, got {big_r}")
    entries = [
        (0, 2, 1.0),
        (0, 3, big_r),
        (1, 2, big_r),
        (2, 0, 1.0),
        (2, 1, big_r),
        (3, 0, big_r),
    ]
    return SensingLoss([completion_measurement(4, i, j, y) for i, j, y in entries])
