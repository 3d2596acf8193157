"""Self-contained builders/verifiers for the two hand-constructed instances.

1. A 4x4 completion problem whose flow-from-tiny-init limit is a rank-1
   matrix with nuclear norm 2R^2 + 2, far above the feasible minimum 4R:
   small-initialization gradient flow is a rank minimizer here, not a
   nuclear-norm minimizer. The escape phase reduces exactly to a planar ODE
   in (x, y), which serves as an independent oracle for the matrix flow.

2. A depth-4 diagonal instance whose escape direction from zero is NOT the
   top eigenvector of minus the gradient: the coordinate with the largest
   product (initial value x growth rate) blows up first. Generic noise
   restores the top-eigenvector escape, faster for larger noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import alignment
from .dynamics import IntegratorConfig, Trajectory, blowup_times, flow_depth2
from .errors import Diverged, InvalidInput, NoAlignment
from .glrl import trajectory_from_states
from .losses import LinearLoss, LossSpec, SensingLoss, build_counterexample_loss
from .symmat import (
    frac_power,
    frob,
    matrix_power_psd,
    nuclear_norm,
    symmetrize,
    top_eigpair,
)


@dataclass
class Counterexample4x4:
    big_r: float
    m_norm: np.ndarray
    m_rank: np.ndarray
    loss: SensingLoss


def build_4x4(big_r: float) -> Counterexample4x4:
    """Construct the 4x4 instance and verify its defining identities."""
    if big_r <= 1:
        raise InvalidInput(f"R must be > 1, got {big_r}")
    r = float(big_r)
    v = np.array([1.0, r, 1.0, r])
    m_rank = np.outer(v, v)
    m_norm = np.array([
        [r, 1.0, 1.0, r],
        [1.0, r, r, 1.0],
        [1.0, r, r, 1.0],
        [r, 1.0, 1.0, r],
    ])
    loss = build_counterexample_loss(r)
    for w, name in ((m_rank, "rank-1"), (m_norm, "min-nuclear")):
        if loss.value(w) != 0.0:
            raise InvalidInput(f"{name} completion is not feasible: f={loss.value(w)}")
    for got, want in ((nuclear_norm(m_rank), 2 * r**2 + 2), (nuclear_norm(m_norm), 4 * r)):
        if abs(got - want) > 1e-9 * want:
            raise InvalidInput(f"nuclear norm {got} != {want}")
    return Counterexample4x4(big_r=r, m_norm=m_norm, m_rank=m_rank, loss=loss)


@dataclass
class RefutationRow:
    scale: float
    dist_to_rank: float
    dist_to_norm: float
    final_nuclear: float
    final_grad_norm: float


@dataclass
class RefutationReport:
    rows: list[RefutationRow]
    passed: bool


def verify_gf_refutes_conjecture(ce: Counterexample4x4, init_scales,
                                 cfg: IntegratorConfig,
                                 horizon: float = math.inf) -> RefutationReport:
    """Run the depth-2 flow from scale * I and record where it lands.

    PASS iff at the smallest scale the endpoint sits within 1% of the rank-1
    completion while its nuclear norm exceeds ten times the feasible minimum
    4R (i.e. the flow did not pick the minimum nuclear norm solution).
    """
    scales = sorted(float(s) for s in init_scales)[::-1]
    if not scales or scales[-1] <= 0:
        raise InvalidInput("init_scales must be positive")
    rows = []
    for s in scales:
        traj = flow_depth2(ce.loss, s * np.eye(4), cfg, horizon)
        w = traj.final_state
        rows.append(RefutationRow(
            scale=s,
            dist_to_rank=frob(w - ce.m_rank),
            dist_to_norm=frob(w - ce.m_norm),
            final_nuclear=nuclear_norm(w),
            final_grad_norm=float(traj.grad_norm[-1])))
    last = rows[-1]
    passed = (last.dist_to_rank <= 1e-2 * frob(ce.m_rank)
              and last.final_nuclear >= 10.0 * 4.0 * ce.big_r)
    return RefutationReport(rows=rows, passed=passed)


def xy_field(p: np.ndarray, big_r: float) -> np.ndarray:
    """Planar reduction of the 4x4 flow restricted to states (x,y,x,y)(...)^T."""
    x, y = p
    return np.array([
        (1.0 - x * x) * x - y * (x * y - big_r),
        -x * (x * y - big_r),
    ])


def xy_energy(p: np.ndarray, big_r: float) -> float:
    """Lyapunov function of the planar flow (decays along trajectories)."""
    x, y = p
    return 0.5 * (x * x - 1.0) ** 2 + (x * y - big_r) ** 2


def xy_stationary_points(big_r: float) -> list[np.ndarray]:
    return [np.zeros(2), np.array([1.0, big_r]), np.array([-1.0, -big_r])]


@dataclass
class XyTrajectory:
    times: np.ndarray
    points: np.ndarray  # (n, 2)
    big_r: float

    def lifted_states(self) -> np.ndarray:
        """(x,y,x,y)(x,y,x,y)^T per record; tracks the rank-1 matrix flow."""
        w = np.concatenate([self.points, self.points], axis=1)
        return np.einsum("ni,nj->nij", w, w)

    def lifted_trajectory(self, spec: LossSpec) -> Trajectory:
        return trajectory_from_states(spec, self.times, self.lifted_states())


def xy_oracle(big_r: float, eps: float, horizon: float,
              cfg: IntegratorConfig) -> XyTrajectory:
    """Integrate the planar ODE from the tiny top-eigenvector seed.

    Starting at sqrt(eps/2) * v1 (v1 the unit top eigenvector of
    [[1, R], [R, 0]]) lifts to exactly eps * u1 u1^T, the escape seed of the
    matrix flow, so lifted and matrix trajectories coincide.
    """
    if eps <= 0:
        raise InvalidInput("eps must be > 0")
    _, v1, _ = top_eigpair(np.array([[1.0, big_r], [big_r, 0.0]]))
    p = math.sqrt(eps / 2.0) * v1
    times = [0.0]
    points = [p.copy()]
    t = 0.0
    h = cfg.step
    steps = 0
    while t < horizon and steps < cfg.max_steps:
        hh = min(h, horizon - t)
        if cfg.scheme == "rk4":
            k1 = xy_field(p, big_r)
            k2 = xy_field(p + 0.5 * hh * k1, big_r)
            k3 = xy_field(p + 0.5 * hh * k2, big_r)
            k4 = xy_field(p + hh * k3, big_r)
            p = p + (hh / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            p = p + hh * xy_field(p, big_r)
        t += hh
        steps += 1
        if not np.all(np.isfinite(p)) or np.linalg.norm(p) ** 2 >= 1e12:
            raise Diverged(f"planar state diverged at t={t:.6g}")
        if steps % cfg.record_every == 0:
            times.append(t)
            points.append(p.copy())
    if times[-1] != t:
        times.append(t)
        points.append(p.copy())
    return XyTrajectory(times=np.array(times), points=np.array(points), big_r=big_r)


DEEP_ESCAPE_RATES = np.array([2.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1])


@dataclass
class DeepEscapeInstance:
    """Diagonal depth-4 instance where coordinate 2 (index 1) outruns the top.

    ``grad0`` holds the growth rates, i.e. minus the gradient at zero is
    +grad0; the matching loss is LinearLoss(q=grad0). ``w0`` is diagonal with
    entry (1,1) boosted to 16*alpha, the rest Unif[0.9, 1.1]*alpha.
    """

    grad0: np.ndarray
    w0: np.ndarray
    depth: int = 4
    alpha: float = 1e-16

    def loss(self) -> LinearLoss:
        return LinearLoss(q=self.grad0)

    def rescaled(self, alpha_new: float) -> "DeepEscapeInstance":
        """Same shape at a new overall scale (flow trajectories are related
        by an exact time rescaling, so conclusions transfer)."""
        return DeepEscapeInstance(
            grad0=self.grad0.copy(),
            w0=self.w0 * (alpha_new / self.alpha),
            depth=self.depth, alpha=alpha_new)


def build_deep_escape_instance(rng: np.random.Generator,
                               alpha: float = 1e-16) -> DeepEscapeInstance:
    d = DEEP_ESCAPE_RATES.size
    diag = rng.uniform(0.9, 1.1, size=d) * alpha
    diag[1] = 16.0 * alpha
    return DeepEscapeInstance(grad0=np.diag(DEEP_ESCAPE_RATES),
                              w0=np.diag(diag), alpha=alpha)


@dataclass
class DeepEscapeReport:
    blowup: np.ndarray                 # closed-form per-index blow-up times
    winner: int                        # argmin of blowup
    noiseless_ok: bool                 # winner == 1 and strictly first
    final_alignment: dict              # eps -> list of |<e1, u1(end)>| per seed
    growths: dict                      # eps -> list of achieved ||W||/||W(0)||


def _integrate_to_growth(spec, w0, depth, growth_target, rel_step=1e-3,
                         max_steps=200_000, record_every=50) -> Trajectory:
    """Relative-step Euler on the M-dynamics, stopped at a W-norm growth target.

    The fixed relative displacement per step is what lets one run cross the
    many decades between a near-zero seed and the blow-up region.
    """
    p = depth / 2.0
    m = frac_power(w0, 2.0 / depth)
    times, states = [], []
    t = 0.0
    w = matrix_power_psd(m, p)
    target = frob(w) * growth_target
    times.append(t)
    states.append(w)
    for step in range(1, max_steps + 1):
        g = spec.gradient(w)
        rhs = -(g @ w + w @ g)
        nr = frob(rhs)
        if nr == 0:
            break
        h = rel_step * frob(m) / nr
        m = m + h * rhs
        t += h
        w = matrix_power_psd(symmetrize(m), p)
        done = not np.all(np.isfinite(w)) or frob(w) >= target
        if done or step % record_every == 0:
            times.append(t)
            states.append(w)
        if done:
            break
    return trajectory_from_states(spec, np.array(times), np.array(states))


def deep_escape_demo(inst: DeepEscapeInstance, noise_eps, seeds,
                     growth_target: float = 1e10,
                     run_alpha: float = 1e-8) -> DeepEscapeReport:
    """(a) certify the noiseless blow-up ordering from the closed form;
    (b) integrate noisy copies and report final top-eigenvector alignment.

    Noisy runs use a copy rescaled to ``run_alpha`` (the original 1e-16 scale
    is equivalent under time rescaling but numerically awkward); noise is
    W(0) + (alpha * eps / 2)(Z + Z^T) with standard normal Z per seed.
    """
    p = inst.depth / 2.0
    m0 = np.diagonal(inst.w0) ** (2.0 / inst.depth)
    rates = np.diagonal(inst.grad0)
    times = blowup_times(m0, rates, p)
    winner = int(np.argmin(times))
    others = np.delete(times, winner)
    noiseless_ok = winner == 1 and np.all(times[winner] < others)

    resc = inst.rescaled(run_alpha)
    spec = resc.loss()
    e1 = np.zeros(spec.dim)
    e1[0] = 1.0
    final_alignment: dict = {}
    growths: dict = {}
    for eps in noise_eps:
        final_alignment[eps] = []
        growths[eps] = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            z = rng.standard_normal((spec.dim, spec.dim))
            w0 = resc.w0 + (resc.alpha * eps / 2.0) * (z + z.T)
            traj = _integrate_to_growth(spec, w0, resc.depth, growth_target)
            final_alignment[eps].append(float(alignment(traj, e1)[-1]))
            growths[eps].append(float(frob(traj.final_state) / frob(traj.states[0])))
    return DeepEscapeReport(blowup=times, winner=winner, noiseless_ok=bool(noiseless_ok),
                            final_alignment=final_alignment, growths=growths)


@dataclass
class Rank1EscapeReport:
    trajectory: Trajectory
    alignments: np.ndarray
    final_alignment: float
    passed: bool


def rank1_escape_invariance(dim: int, depth: int, grad0: np.ndarray,
                            u0: np.ndarray, cfg: IntegratorConfig,
                            growth_target: float = 1e10) -> Rank1EscapeReport:
    """Rank-1 seeds escape along the top eigenvector regardless of depth.

    Integrates the constant-gradient deep flow from M(0) = u0 u0^T (passed as
    W(0) = ||u0||^{L-2} u0 u0^T) and checks that the top eigenvector of the
    state aligns with the top eigenvector v1 of ``grad0`` (alignment >= 0.999
    by the time the growth target / overflow guard is hit).
    """
    u0 = np.asarray(u0, dtype=float)
    if np.linalg.norm(u0) == 0:
        raise InvalidInput("u0 must be nonzero")
    _, v1, _ = top_eigpair(grad0)
    if abs(float(np.dot(v1, u0))) <= 1e-12 * np.linalg.norm(u0):
        raise NoAlignment("u0 is orthogonal to the top eigenvector")
    spec = LinearLoss(q=grad0)
    w0 = np.linalg.norm(u0) ** (depth - 2) * np.outer(u0, u0)
    traj = _integrate_to_growth(spec, w0, depth, growth_target,
                                rel_step=cfg.step if cfg.relative_step else 1e-3,
                                max_steps=cfg.max_steps)
    aligns = alignment(traj, v1)
    return Rank1EscapeReport(trajectory=traj, alignments=aligns,
                             final_alignment=float(aligns[-1]),
                             passed=bool(aligns[-1] >= 0.999))
