"""Greedy low-rank learning: rank-incremental GD with escape-direction restarts.

Phase r starts from the previous critical point perturbed along the unit top
eigenvector u_r of minus the gradient, widens the factor by one column, and
runs the inner optimizer to stationarity. The loop exits once the top
eigenvalue of minus the gradient drops below ``exit_tol`` (certifying global
minimality over the PSD cone for convex losses) or the rank budget runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    DeepFactorState,
    IntegratorConfig,
    Trajectory,
    _Recorder,
    gd_deep_factored,
    gd_factored,
)
from .errors import InvalidInput, NoEscape
from .losses import LossSpec
from .symmat import frob, top_eigpair

DEGENERATE_GAP = 1e-8


@dataclass
class GlrlConfig:
    inner: IntegratorConfig
    epsilon: float = 1e-7
    max_rank: int | None = None
    exit_tol: float = 1e-8
    depth: int = 2

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidInput("epsilon must be > 0")
        if self.max_rank is not None and self.max_rank < 1:
            raise InvalidInput("max_rank must be >= 1")
        if self.exit_tol < 0:
            raise InvalidInput("exit_tol must be >= 0")
        if self.depth < 2:
            raise InvalidInput("depth must be >= 2")


@dataclass
class GlrlPhase:
    rank: int
    escape_eigenvalue: float
    escape_gap: float
    escape_vector: np.ndarray
    trajectory: Trajectory
    critical_point: np.ndarray
    final_grad_norm: float
    converged: bool


@dataclass
class GlrlReport:
    phases: list[GlrlPhase]
    converged: bool
    final_w: np.ndarray
    final_top_eig: float
    flags: list[str] = field(default_factory=list)

    @property
    def critical_points(self) -> list[np.ndarray]:
        """W_0 = 0 followed by the per-phase critical points."""
        d = self.final_w.shape[0]
        return [np.zeros((d, d))] + [p.critical_point for p in self.phases]


def default_stop_grad_norm(spec: LossSpec) -> float:
    """Stationarity threshold used when the inner config leaves it at 0."""
    g0 = frob(spec.gradient(np.zeros((spec.dim, spec.dim))))
    return 1e-9 * max(1.0, g0)


def _resolve_inner(spec: LossSpec, cfg: GlrlConfig) -> IntegratorConfig:
    inner = cfg.inner
    if inner.stop_grad_norm <= 0:
        inner = replace(inner, stop_grad_norm=default_stop_grad_norm(spec))
    return inner


def glrl_run(spec: LossSpec, cfg: GlrlConfig) -> GlrlReport:
    """Depth-2 greedy low-rank learning."""
    if cfg.depth != 2:
        raise InvalidInput("glrl_run is the depth-2 loop; use deep_glrl_run")
    inner = _resolve_inner(spec, cfg)
    d = spec.dim
    max_rank = cfg.max_rank if cfg.max_rank is not None else d
    w = np.zeros((d, d))
    u_prev = np.zeros((d, 0))
    phases: list[GlrlPhase] = []
    flags: list[str] = []
    lam, _, _ = top_eigpair(-spec.gradient(w))
    while lam > cfg.exit_tol and len(phases) < max_rank:
        r = len(phases) + 1
        lam, u, gap = top_eigpair(-spec.gradient(w))
        if gap < DEGENERATE_GAP:
            flags.append(f"DegenerateEscape(rank={r}, gap={gap:.3g})")
        u0 = np.hstack([u_prev, math.sqrt(cfg.epsilon) * u[:, None]])
        traj = gd_factored(spec, u0, inner, horizon=math.inf)
        u_prev = traj.final_factor
        w = u_prev @ u_prev.T
        converged = traj.grad_norm[-1] <= inner.stop_grad_norm
        if not converged:
            flags.append(f"PhaseNotConverged(rank={r})")
        phases.append(GlrlPhase(
            rank=r, escape_eigenvalue=lam, escape_gap=gap, escape_vector=u,
            trajectory=traj, critical_point=w.copy(),
            final_grad_norm=float(traj.grad_norm[-1]), converged=converged))
        lam, _, _ = top_eigpair(-spec.gradient(w))
    converged = lam <= cfg.exit_tol
    if not converged and len(phases) >= max_rank:
        flags.append("RankBudgetExhausted")
    return GlrlReport(phases=phases, converged=converged, final_w=w,
                      final_top_eig=float(lam), flags=flags)


def _widen_deep_factors(factors: list[np.ndarray] | None, u: np.ndarray,
                        eps_root: float, depth: int) -> list[np.ndarray]:
    d = u.shape[0]
    if factors is None:
        mids = [np.array([[eps_root]]) for _ in range(depth - 2)]
        return [eps_root * u[:, None], *mids, eps_root * u[None, :]]
    first = np.hstack([factors[0], eps_root * u[:, None]])
    mids = []
    for m in factors[1:-1]:
        r = m.shape[0]
        wide = np.zeros((r + 1, r + 1))
        wide[:r, :r] = m
        wide[r, r] = eps_root
        mids.append(wide)
    last = np.vstack([factors[-1], eps_root * u[None, :]])
    return [first, *mids, last]


def deep_glrl_run(spec: LossSpec, cfg: GlrlConfig) -> GlrlReport:
    """Depth-L (L >= 3) greedy low-rank learning with block-diagonal widening.

    New blocks carry eps' = epsilon^{1/L} so the end-to-end perturbation is
    exactly epsilon * u u^T, and the widened factors inherit balancedness from
    the converged previous phase.
    """
    if cfg.depth < 3:
        raise InvalidInput("deep_glrl_run needs depth >= 3")
    inner = _resolve_inner(spec, cfg)
    d = spec.dim
    max_rank = cfg.max_rank if cfg.max_rank is not None else d
    eps_root = cfg.epsilon ** (1.0 / cfg.depth)
    w = np.zeros((d, d))
    factors: list[np.ndarray] | None = None
    phases: list[GlrlPhase] = []
    flags: list[str] = []
    lam, _, _ = top_eigpair(-spec.gradient(w))
    while lam > cfg.exit_tol and len(phases) < max_rank:
        r = len(phases) + 1
        lam, u, gap = top_eigpair(-spec.gradient(w))
        if gap < DEGENERATE_GAP:
            flags.append(f"DegenerateEscape(rank={r}, gap={gap:.3g})")
        widened = _widen_deep_factors(factors, u, eps_root, cfg.depth)
        drift = DeepFactorState(widened, balanced_tol=np.inf).balance_drift()
        state = DeepFactorState(widened, balanced_tol=max(1e-10, 2.0 * drift))
        traj = gd_deep_factored(spec, state, inner, horizon=math.inf)
        factors = traj.final_factors
        w = traj.final_state
        converged = traj.grad_norm[-1] <= inner.stop_grad_norm
        if not converged:
            flags.append(f"PhaseNotConverged(rank={r})")
        phases.append(GlrlPhase(
            rank=r, escape_eigenvalue=lam, escape_gap=gap, escape_vector=u,
            trajectory=traj, critical_point=w.copy(),
            final_grad_norm=float(traj.grad_norm[-1]), converged=converged))
        lam, _, _ = top_eigpair(-spec.gradient(w))
    converged = lam <= cfg.exit_tol
    if not converged and len(phases) >= max_rank:
        flags.append("RankBudgetExhausted")
    return GlrlReport(phases=phases, converged=converged, final_w=w,
                      final_top_eig=float(lam), flags=flags)


def escape_time_shift(epsilon: float, mu1: float) -> float:
    """Time offset log(1/epsilon) / (2 mu1) aligning phase clocks across epsilon."""
    if mu1 <= 0:
        raise NoEscape(f"top eigenvalue {mu1} is not positive")
    if epsilon <= 0:
        raise InvalidInput("epsilon must be > 0")
    return math.log(1.0 / epsilon) / (2.0 * mu1)


def trajectory_from_states(spec: LossSpec, times: np.ndarray,
                           states: np.ndarray) -> Trajectory:
    """Assemble a Trajectory (with recomputed diagnostics) from raw states."""
    rec = _Recorder(spec, 1)
    for k, (t, w) in enumerate(zip(times, states)):
        g = spec.gradient(w)
        rec.record(k, float(t), np.asarray(w), frob(w @ g + g @ w))
    return rec.build()


def glrl_trajectory_shifted(spec: LossSpec, cfg: GlrlConfig, r: int,
                            t_grid: np.ndarray,
                            report: GlrlReport | None = None) -> Trajectory:
    """Phase-r trajectory reparameterized by t' = t - log(1/eps)/(2 mu1).

    On this clock the phase's limiting trajectory is epsilon-independent up
    to a vanishing error, so runs with different epsilon can be compared
    pointwise. States are linearly interpolated between records; queries
    outside the recorded (shifted) range clamp to the endpoint states.
    """
    if report is None:
        report = glrl_run(spec, cfg) if cfg.depth == 2 else deep_glrl_run(spec, cfg)
    if not 1 <= r <= len(report.phases):
        raise InvalidInput(f"no phase {r} in report with {len(report.phases)} phases")
    phase = report.phases[r - 1]
    if phase.escape_eigenvalue <= 0:
        raise NoEscape(f"phase {r} escape eigenvalue {phase.escape_eigenvalue} <= 0")
    shift = escape_time_shift(cfg.epsilon, phase.escape_eigenvalue)
    t_grid = np.asarray(t_grid, dtype=float)
    shifted = phase.trajectory.times - shift
    if t_grid.size == 0:
        empty = np.zeros((0, spec.dim, spec.dim))
        return trajectory_from_states(spec, np.zeros(0), empty)
    idx = np.clip(np.searchsorted(shifted, t_grid), 1, len(shifted) - 1)
    t0, t1 = shifted[idx - 1], shifted[idx]
    lam = np.clip((t_grid - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0, 1.0)
    states = (1 - lam)[:, None, None] * phase.trajectory.states[idx - 1] \
        + lam[:, None, None] * phase.trajectory.states[idx]
    return trajectory_from_states(spec, t_grid, states)
