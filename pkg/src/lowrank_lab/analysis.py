"""Spectral analysis of the flow linearization, trajectory metrics, slope fits.

The flow g(W) = -(W G + G W), G = grad f(W), has Jacobian

    J(Wb)[D] = -(G D + D G) - (H[D] Wb + Wb H[D]),

with H the Hessian of f. At a critical point its spectrum splits into three
labeled families (products of gradient eigenvalues, factored-loss Hessian
eigenvalues, and zeros on the antisymmetric block); ``critical_point_spectrum``
assembles the operator numerically and checks that classification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory
from .errors import ClassificationMismatch, InvalidInput
from .losses import LossSpec
from .symmat import eig, frob, symmetrize


@dataclass
class JacobianOp:
    """Linearization of the depth-2 flow at a base point.

    ``apply`` uses the exact Hessian of the loss; ``apply_fd`` central
    finite differences of the flow field. The two agree to ~1e-6 relative
    on the symmetric subspace.
    """

    spec: LossSpec
    base_point: np.ndarray

    def __post_init__(self):
        self.base_point = symmetrize(np.asarray(self.base_point, dtype=float))
        self._g = self.spec.gradient(self.base_point)

    def flow_field(self, w: np.ndarray) -> np.ndarray:
        # the flow lives on symmetric matrices; the field is constant along
        # antisymmetric directions (pure gauge), hence the symmetrization
        w = symmetrize(w)
        g = self.spec.gradient(w)
        return -(w @ g + g @ w)

    def apply(self, delta: np.ndarray) -> np.ndarray:
        delta = symmetrize(np.asarray(delta, dtype=float))
        w, g = self.base_point, self._g
        h = self.spec.hessian_apply(delta)
        return -(g @ delta + delta @ g) - (h @ w + w @ h)

    def apply_fd(self, delta: np.ndarray, h: float = 1e-5) -> np.ndarray:
        w = self.base_point
        return (self.flow_field(w + h * delta) - self.flow_field(w - h * delta)) / (2 * h)


def sym_basis(d: int) -> list[np.ndarray]:
    """Orthonormal basis of symmetric matrices: e_i e_i^T, (e_i e_j^T + e_j e_i^T)/sqrt2."""
    basis = []
    for i in range(d):
        b = np.zeros((d, d))
        b[i, i] = 1.0
        basis.append(b)
    for i in range(d):
        for j in range(i + 1, d):
            b = np.zeros((d, d))
            b[i, j] = b[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(b)
    return basis


def sym_vec(m: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    return np.array([float(np.sum(b * m)) for b in basis])


def assemble_operator(apply_fn, d: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Matrix of a linear map on the symmetric subspace in the basis above."""
    basis = sym_basis(d)
    cols = [sym_vec(apply_fn(b), basis) for b in basis]
    return np.array(cols).T, basis


@dataclass
class ZeroSpectrum:
    pairs: list[tuple[float, np.ndarray]]
    antisym_zero_dim: int


def jacobian_at_zero_spectrum(spec: LossSpec) -> ZeroSpectrum:
    """Eigenpairs (mu_i + mu_j, u_i u_j^T + u_j u_i^T) of the linearization at 0.

    mu_i, u_i come from minus the gradient at zero. The remaining d(d-1)/2
    directions (antisymmetric matrices) carry eigenvalue 0.
    """
    d = spec.dim
    dec = eig(-spec.gradient(np.zeros((d, d))))
    pairs = []
    for i in range(d):
        for j in range(i, d):
            ui, uj = dec.vectors[:, i], dec.vectors[:, j]
            mat = np.outer(ui, uj) + np.outer(uj, ui)
            pairs.append((float(dec.values[i] + dec.values[j]), mat / frob(mat)))
    return ZeroSpectrum(pairs=pairs, antisym_zero_dim=d * (d - 1) // 2)


def _hessian_of_factored_loss(spec: LossSpec, u: np.ndarray) -> np.ndarray:
    """Matrix of -D^2 of the factored loss f(U U^T)/2 at U, on vec(R^{d x r})."""
    d, r = u.shape
    g = spec.gradient(u @ u.T)
    n = d * r
    h = np.zeros((n, n))
    for k in range(n):
        delta = np.zeros((d, r))
        delta[k // r, k % r] = 1.0
        sym_part = delta @ u.T + u @ delta.T
        out = -(g @ delta + spec.hessian_apply(sym_part) @ u)
        h[:, k] = out.reshape(-1)
    return (h + h.T) / 2.0


@dataclass
class CriticalSpectrum:
    eigenvalues: np.ndarray          # computed spectrum on the symmetric subspace
    type1: list[tuple[float, np.ndarray]]  # (mu_i + mu_j, left eigenvector matrix)
    type2: np.ndarray                # factored-loss Hessian eigenvalues xi_p
    antisym_zero_dim: int
    match_residual: float
    left_residuals: np.ndarray
    max_imag: float


def critical_point_spectrum(spec: LossSpec, w_bar: np.ndarray, r: int,
                            match_tol: float = 1e-4,
                            crit_tol: float = 1e-8) -> CriticalSpectrum:
    """Assemble J at a rank-r critical point and label its spectrum.

    Predicted multiset: {mu_i + mu_j} over eigenvalues of minus the gradient
    restricted to the complement of range(Wb) (left eigenvectors v_i v_j^T +
    v_j v_i^T), plus the eigenvalues of minus the factored-loss Hessian at a
    width-r factorization of Wb (gauge zeros removed). Raises
    ClassificationMismatch when the matching residual exceeds ``match_tol``.
    """
    w_bar = symmetrize(np.asarray(w_bar, dtype=float))
    d = spec.dim
    if not 0 <= r <= d:
        raise InvalidInput(f"rank {r} outside [0, {d}]")
    op = JacobianOp(spec, w_bar)
    gnorm = frob(op.flow_field(w_bar))
    if gnorm > crit_tol * max(1.0, frob(w_bar)):
        raise InvalidInput(f"not a critical point: ||g(W)|| = {gnorm:.3g}")
    a, basis = assemble_operator(op.apply, d)
    computed = np.linalg.eigvals(a)
    max_imag = float(np.max(np.abs(computed.imag), initial=0.0))
    computed_real = np.sort(computed.real)[::-1]

    dec = eig(w_bar)
    comp = dec.vectors[:, r:]                      # orthogonal complement of range(Wb)
    neg_grad = -spec.gradient(w_bar)
    small = eig(comp.T @ neg_grad @ comp) if r < d else None
    type1 = []
    if small is not None:
        vs = comp @ small.vectors                      # lifted eigenvectors
        for i in range(d - r):
            for j in range(i, d - r):
                mat = np.outer(vs[:, i], vs[:, j]) + np.outer(vs[:, j], vs[:, i])
                type1.append((float(small.values[i] + small.values[j]), mat / frob(mat)))

    if r > 0:
        u = dec.vectors[:, :r] * np.sqrt(np.clip(dec.values[:r], 0.0, None))
        h = _hessian_of_factored_loss(spec, u)
        gauge_dim = r * (r - 1) // 2
        if gauge_dim:
            cols = []
            for p in range(r):
                for q in range(p + 1, r):
                    rot = np.zeros((r, r))
                    rot[p, q], rot[q, p] = 1.0, -1.0
                    cols.append((u @ rot).reshape(-1))
            q_gauge, _ = np.linalg.qr(np.array(cols).T)
            full_u, sv, _ = np.linalg.svd(q_gauge, full_matrices=True)
            complement = full_u[:, q_gauge.shape[1]:]
        else:
            complement = np.eye(d * r)
        type2 = np.sort(np.linalg.eigvalsh(complement.T @ h @ complement))[::-1]
    else:
        type2 = np.zeros(0)

    predicted = np.sort(np.concatenate([[v for v, _ in type1], type2]))[::-1]
    if predicted.shape != computed_real.shape:
        raise ClassificationMismatch(
            f"predicted {predicted.size} eigenvalues, computed {computed_real.size}")
    resid = float(np.max(np.abs(predicted - computed_real), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(computed_real), initial=0.0)))
    if resid > match_tol * scale:
        raise ClassificationMismatch(
            f"matching residual {resid:.3g} above {match_tol:.3g}",
            residuals=np.abs(predicted - computed_real))

    left_residuals = []
    for val, mat in type1:
        v = sym_vec(mat, basis)
        left_residuals.append(float(np.linalg.norm(a.T @ v - val * v)))
    return CriticalSpectrum(
        eigenvalues=computed_real, type1=type1, type2=type2,
        antisym_zero_dim=d * (d - 1) // 2, match_residual=resid,
        left_residuals=np.array(left_residuals), max_imag=max_imag)


def _states_of(reference) -> np.ndarray:
    if isinstance(reference, Trajectory):
        return reference.states
    arr = np.asarray(reference, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    return arr


def traj_set_distance(traj: Trajectory, reference) -> np.ndarray:
    """Per-time min Frobenius distance from traj states to a reference set.

    ``reference`` may be a Trajectory or an array/list of states (a discrete
    critical-point set works too).
    """
    ref = _states_of(reference)
    if ref.size == 0:
        raise InvalidInput("reference is empty")
    a = traj.states.reshape(len(traj), -1)
    b = ref.reshape(ref.shape[0], -1)
    if a.shape[1] != b.shape[1]:
        raise InvalidInput("dimension mismatch between trajectory and reference")
    out = np.empty(a.shape[0])
    bb = np.sum(b * b, axis=1)
    chunk = max(1, int(2**22 // max(b.shape[0], 1)))
    for lo in range(0, a.shape[0], chunk):
        blk = a[lo:lo + chunk]
        d2 = np.sum(blk * blk, axis=1)[:, None] + bb[None, :] - 2.0 * blk @ b.T
        out[lo:lo + chunk] = np.sqrt(np.clip(np.min(d2, axis=1), 0.0, None))
    return out


def alignment(traj: Trajectory, v: np.ndarray) -> np.ndarray:
    """|<v, top eigenvector of W(t)>| per recorded state."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    out = np.empty(len(traj))
    for k, w in enumerate(traj.states):
        dec = eig(w)
        out[k] = abs(float(np.dot(v, dec.vectors[:, 0])))
    return out


def scaling_slope(xs, ys) -> tuple[float, float, float]:
    """OLS fit of log y against log x; returns (slope, intercept, r_squared)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3 or ys.size != xs.size:
        raise InvalidInput("need at least 3 paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidInput("log-log fit needs positive values")
    lx, ly = np.log(xs), np.log(ys)
    vx = lx - lx.mean()
    vy = ly - ly.mean()
    denom = float(np.sum(vx * vx))
    if denom == 0:
        raise InvalidInput("x values are all identical")
    slope = float(np.sum(vx * vy)) / denom
    intercept = float(ly.mean() - slope * lx.mean())
    ss_res = float(np.sum((ly - slope * lx - intercept) ** 2))
    ss_tot = float(np.sum(vy * vy))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2
