"""Comparison solvers: rank-1 matrix pursuit and nuclear-norm minimization.

Rank-1 pursuit greedily adds the top eigenvector of minus the gradient to a
basis and refits only the coefficients (by normal equations; all losses here
are quadratic). The nuclear-norm solver is a proximal-gradient method with
singular-value soft-thresholding and a geometric continuation of the penalty
toward zero, approximating min ||W||_* s.t. f(W) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, InvalidInput, Unsupported
from .losses import FullObservationLoss, LinearLoss, LossSpec, SensingLoss
from .symmat import symmetrize, top_eigpair


@dataclass
class R1mpState:
    """Basis of unit vectors plus coefficients; estimate = sum a_i u_i u_i^T."""

    basis: list[np.ndarray] = field(default_factory=list)
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual_gradient: np.ndarray | None = None

    def estimate(self, dim: int) -> np.ndarray:
        w = np.zeros((dim, dim))
        for a, u in zip(self.coefficients, self.basis):
            w += a * np.outer(u, u)
        return w


def _refit(spec: LossSpec, basis: list[np.ndarray]) -> tuple[np.ndarray, bool]:
    """Least-squares coefficients over span{u_i u_i^T}; returns (alpha, ridged)."""
    r = len(basis)
    if isinstance(spec, SensingLoss):
        a = np.array([[u @ x @ u for u in basis] for x in spec._xs])  # (m, r)
        gram = a.T @ a
        rhs = a.T @ spec._ys
    elif isinstance(spec, FullObservationLoss):
        overlaps = np.array([[float(np.dot(u, v)) ** 2 for v in basis] for u in basis])
        gram = overlaps
        rhs = np.array([u @ spec.target @ u for u in basis])
    else:
        raise Unsupported("coefficient refit needs a quadratic loss")
    ridged = False
    try:
        alpha = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(alpha)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        alpha = np.linalg.solve(gram + 1e-12 * np.eye(r), rhs)
        ridged = True
    return alpha, ridged


def r1mp_run(spec: LossSpec, max_rank: int, exit_tol: float = 1e-8):
    """Rank-1 matrix pursuit. Returns (estimate, history).

    history is a list of per-phase dicts: rank, escape eigenvalue, loss after
    refit, and whether the normal equations needed a ridge.
    """
    if isinstance(spec, LinearLoss):
        raise Unsupported("pursuit with refit is unbounded for linear losses")
    if max_rank > spec.dim:
        raise InvalidInput("max_rank exceeds the dimension")
    state = R1mpState()
    est = np.zeros((spec.dim, spec.dim))
    history: list[dict] = []
    for r in range(1, max_rank + 1):
        neg_grad = -spec.gradient(est)
        lam, u, _ = top_eigpair(neg_grad)
        if lam <= exit_tol:
            break
        state.basis.append(u)
        state.coefficients, ridged = _refit(spec, state.basis)
        est = state.estimate(spec.dim)
        state.residual_gradient = spec.gradient(est)
        history.append({
            "rank": r,
            "escape_eigenvalue": float(lam),
            "loss": spec.value(est),
            "ridged": ridged,
        })
    return est, history


@dataclass
class ProxConfig:
    stages: int = 40
    steps_per_stage: int = 500
    shrink: float = 0.5
    step: float | None = None  # None: 1 / sum_i ||X_i||_F^2
    feas_tol: float = 1e-8
    psd: bool = True  # restrict to the PSD cone (the problem the flows solve)

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise InvalidInput("shrink must be in (0,1)")
        if self.stages < 1 or self.steps_per_stage < 1:
            raise InvalidInput("stages and steps_per_stage must be >= 1")


def svt(z: np.ndarray, tau: float) -> np.ndarray:
    """Singular-value soft-thresholding, the prox of tau * ||.||_*."""
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    keep = np.clip(s - tau, 0.0, None)
    return (u * keep) @ vt


def svt_psd(z: np.ndarray, tau: float) -> np.ndarray:
    """Prox of tau * ||.||_* plus the PSD-cone indicator (eigenvalue shrink-clip).

    Needed because the unconstrained minimizer can be non-unique: completions
    with indefinite blocks may tie the PSD one on nuclear norm.
    """
    vals, vecs = np.linalg.eigh(symmetrize(z))
    keep = np.clip(vals - tau, 0.0, None)
    return (vecs * keep) @ vecs.T


def nuclear_min(spec: SensingLoss, lambda_path: np.ndarray | None = None,
                prox_cfg: ProxConfig | None = None) -> np.ndarray:
    """Approximate argmin ||W||_* subject to f(W) = 0 for a sensing loss.

    Runs proximal gradient on f(W) + lam ||W||_* while lam is annealed
    geometrically from ||grad f(0)||_2 toward zero; raises Infeasible when
    the final iterate cannot reach f(W) <= feas_tol.
    """
    if not isinstance(spec, SensingLoss):
        raise Unsupported("nuclear_min is defined for sensing losses")
    cfg = prox_cfg or ProxConfig()
    d = spec.dim
    if lambda_path is None:
        lam0 = float(np.linalg.norm(spec.gradient(np.zeros((d, d))), 2))
        lam0 = max(lam0, 1e-12)
        lambda_path = lam0 * cfg.shrink ** np.arange(cfg.stages)
    lambda_path = np.asarray(lambda_path, dtype=float)
    if np.any(np.diff(lambda_path) > 0) or np.any(lambda_path <= 0):
        raise InvalidInput("lambda_path must be positive and non-increasing")
    lip = float(np.sum(spec._xs**2))
    tau = cfg.step if cfg.step is not None else 1.0 / max(lip, 1e-12)
    prox = svt_psd if cfg.psd else svt
    w = np.zeros((d, d))
    for lam in lambda_path:
        for _ in range(cfg.steps_per_stage):
            w = symmetrize(prox(w - tau * spec.gradient(w), tau * lam))
    if spec.value(w) > cfg.feas_tol:
        raise Infeasible(f"residual {spec.value(w):.3g} above {cfg.feas_tol:.3g}")
    return w
