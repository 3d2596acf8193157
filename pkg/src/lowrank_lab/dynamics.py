"""Time integration of the matrix-factorization flows, plus their closed forms.

Flows covered:

* ``flow_depth2``      -- dW/dt = -(W G + G W) with G = grad f(W),
* ``gd_factored``      -- (stochastic-free) GD on U for the loss f(U U^T)/2,
* ``flow_deep``        -- depth-L dynamics evolved in M = W^{2/L} coordinates:
                          dM/dt = -(G M^{L/2} + M^{L/2} G), G = grad f(M^{L/2}),
* ``gd_deep_factored`` -- simultaneous GD on balanced factors U_1..U_L of
                          f(U_1 ... U_L),
* ``flow_kernel_depth``-- SVD-kernel form of the depth-L dynamics, valid for
                          any depth including the L -> infinity limit.

Schemes: plain Euler, classic RK4, and an RMSprop-style adaptive-step GD
(v <- a v + (1-a)||grad||^2, step = eta / (sqrt(v / (1 - a^{t+1})) + eps)).
With ``relative_step=True`` the Euler/RK4 step is scaled per iteration to a
fixed relative displacement, which is what lets one trajectory span many
decades of state norm (quiescent spells and finite-time blow-ups alike).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BlowUp, Diverged, InvalidInput, NotPSD
from .losses import LossSpec, SensingLoss
from .symmat import (
    TOL_PSD,
    frac_power,
    frob,
    matrix_power_psd,
    symmetrize,
)

OVERFLOW_GUARD = 1e12


@dataclass
class AdaptiveConfig:
    """Parameters of the RMSprop-style adaptive learning rate."""

    alpha: float = 0.99
    epsilon: float = 1e-4

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInput(f"alpha must be in (0,1), got {self.alpha}")
        if self.epsilon <= 0:
            raise InvalidInput(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class IntegratorConfig:
    scheme: str = "rk4"  # "euler" | "rk4" | "adaptive_gd"
    step: float = 1e-3
    adaptive: AdaptiveConfig | None = None
    max_steps: int = 1_000_000
    stop_grad_norm: float = 0.0
    record_every: int = 1
    relative_step: bool = False
    # Euler option for stiff valleys: per-step size safety/(curvature bound),
    # with ``step`` reinterpreted as the safety factor (must stay below 2).
    stability_capped: bool = False
    # gradient-norm stopping arms only after the norm first exceeds this
    # (0 = armed immediately); needed when runs start near a repeller where
    # the gradient is still tiny
    stop_grad_arm: float = 0.0

    def __post_init__(self):
        if self.scheme not in ("euler", "rk4", "adaptive_gd"):
            raise InvalidInput(f"unknown scheme {self.scheme!r}")
        if self.step <= 0:
            raise InvalidInput("step must be > 0")
        if self.scheme == "adaptive_gd" and self.adaptive is None:
            raise InvalidInput("adaptive_gd needs an AdaptiveConfig")
        if self.max_steps < 1 or self.record_every < 1:
            raise InvalidInput("max_steps and record_every must be >= 1")
        if self.stability_capped:
            if self.scheme != "euler":
                raise InvalidInput("stability_capped applies to the euler scheme")
            if not 0 < self.step < 2:
                raise InvalidInput("capped euler needs a safety factor in (0, 2)")


@dataclass
class Trajectory:
    """Recorded states of one run plus per-record diagnostics.

    ``lowrank[:, r-1]`` holds the r-low-rankness of the state. For factored
    runs ``final_factor``/``final_factors`` carry the factor(s) at the last
    step so a caller can warm-start the next phase.
    """

    times: np.ndarray
    states: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    eigvals: np.ndarray
    lowrank: np.ndarray
    warnings: list[str] = field(default_factory=list)
    final_factor: np.ndarray | None = None
    final_factors: list[np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


class _Recorder:
    def __init__(self, spec: LossSpec, record_every: int):
        self.spec = spec
        self.every = record_every
        self.times: list[float] = []
        self.states: list[np.ndarray] = []
        self.loss: list[float] = []
        self.gnorm: list[float] = []
        self.eig: list[np.ndarray] = []
        self.low: list[np.ndarray] = []
        self.warnings: list[str] = []
        self._last_step = -1

    def record(self, step: int, t: float, w: np.ndarray, gnorm: float):
        if step == self._last_step:
            return
        self._last_step = step
        self.times.append(t)
        self.states.append(w.copy())
        self.loss.append(self.spec.value(w))
        self.gnorm.append(gnorm)
        sym_vals = np.linalg.eigvalsh(symmetrize(w))[::-1]
        self.eig.append(sym_vals)
        sig = np.sort(np.abs(np.linalg.svd(w, compute_uv=False)))  # ascending
        tails = np.sqrt(np.cumsum(sig**2))  # tails[k] = ||sigma_{>d-1-k}||
        self.low.append(tails[::-1][1:].tolist() + [0.0])
        return

    def maybe(self, step: int, t: float, w: np.ndarray, gnorm: float):
        if step % self.every == 0:
            self.record(step, t, w, gnorm)

    def build(self, **extra) -> Trajectory:
        return Trajectory(
            times=np.array(self.times),
            states=np.array(self.states),
            loss=np.array(self.loss),
            grad_norm=np.array(self.gnorm),
            eigvals=np.array(self.eig),
            lowrank=np.array(self.low),
            warnings=self.warnings,
            **extra,
        )


def _check_psd(w: np.ndarray, what: str = "initial state") -> np.ndarray:
    w = symmetrize(w)
    vals = np.linalg.eigvalsh(w)
    bound = TOL_PSD * np.max(np.abs(vals), initial=0.0)
    if vals[0] < -bound:
        raise NotPSD(f"{what}: lambda_min = {vals[0]:.3g} below -{bound:.3g}")
    return w


def _integrate(rhs, y0, cfg: IntegratorConfig, horizon: float, recorder: _Recorder,
               to_record, guard: float = OVERFLOW_GUARD):
    """Shared stepping loop; ``to_record(y)`` maps raw state to recorded state.

    Raises Diverged (with the partial trajectory attached) when the raw state
    norm crosses ``guard`` or turns non-finite.
    """
    y = y0.copy()
    t = 0.0
    v = 0.0  # adaptive second-moment accumulator
    step = 0
    armed = cfg.stop_grad_arm <= 0
    dy = rhs(y)
    recorder.maybe(0, t, to_record(y), frob(dy))
    while step < cfg.max_steps and t < horizon:
        nd = frob(dy)
        if not armed and nd >= cfg.stop_grad_arm:
            armed = True
        if armed and cfg.stop_grad_norm > 0 and nd <= cfg.stop_grad_norm:
            break
        if cfg.scheme == "adaptive_gd":
            a = cfg.adaptive.alpha
            v = a * v + (1 - a) * nd**2
            h = cfg.step / (math.sqrt(v / (1 - a ** (step + 1))) + cfg.adaptive.epsilon)
            h = min(h, horizon - t)
            if not math.isinf(horizon) and h <= abs(horizon) * 1e-9:
                break  # already at the horizon up to roundoff
            y = y + h * dy
        else:
            h = cfg.step
            if cfg.relative_step:
                h = cfg.step * frob(y) / nd if nd > 0 else horizon - t
            h = min(h, horizon - t)
            if not math.isinf(horizon) and h <= abs(horizon) * 1e-9:
                break
            if cfg.scheme == "euler":
                y = y + h * dy
            else:  # rk4
                k1 = dy
                k2 = rhs(y + 0.5 * h * k1)
                k3 = rhs(y + 0.5 * h * k2)
                k4 = rhs(y + h * k3)
                y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        step += 1
        ny = frob(y)
        if not np.isfinite(ny) or ny >= guard:
            recorder.warnings.append(f"diverged at step {step}, t={t:.6g}")
            raise Diverged(f"state norm {ny:.3g} crossed guard at t={t:.6g}",
                           trajectory=recorder.build())
        dy = rhs(y)
        recorder.maybe(step, t, to_record(y), frob(dy))
    recorder.record(step, t, to_record(y), frob(rhs(y)))
    return y


def _capped_numpy(spec, y, safety, hnorm, n_steps, guard2, stop2, arm2, armed,
                  t_rem, factored, capped=True):
    """Reference implementation of one (capped-)Euler chunk (any loss kind)."""
    t = 0.0
    for it in range(n_steps):
        w = y @ y.T if factored else y
        gf = spec.gradient(w)
        if factored:
            desc = gf @ y
            n2 = float(np.sum(desc * desc))
        else:
            desc = -(w @ gf + gf @ w)
            n2 = float(np.sum(desc * desc))
        if not armed and n2 >= arm2:
            armed = True
        if armed and stop2 > 0.0 and n2 <= stop2:
            return it, 1, t, armed
        if capped:
            eta = safety / (2.0 * hnorm * np.trace(w) + 2.0 * frob(gf) + 1e-300)
        else:
            eta = safety
        hit_horizon = False
        if eta >= t_rem - t:
            eta = t_rem - t
            hit_horizon = True
        if factored:
            y -= eta * desc
        else:
            y += eta * desc
        t += eta
        ny2 = float(np.sum(y * y))
        state_norm2 = ny2 * ny2 if factored else ny2
        if not np.isfinite(state_norm2) or state_norm2 >= guard2:
            return it + 1, 2, t, armed
        if hit_horizon:
            return it + 1, 3, t, armed
    return n_steps, 0, t, armed


def _plain_euler_kernel_ok(spec, cfg: IntegratorConfig) -> bool:
    """Constant-step Euler on a sensing loss can run through the compiled
    kernel; the update rule is identical to the generic path."""
    return (cfg.scheme == "euler" and not cfg.relative_step
            and _kernels.HAVE_NUMBA and isinstance(spec, SensingLoss)
            and len(spec.measurements) > 0)


def _run_fast_euler(spec, y0, cfg: IntegratorConfig, horizon: float,
                    rec: _Recorder, factored: bool, capped: bool):
    """Drive (capped-)Euler chunks -- numba kernels on sensing losses -- and record."""
    safety = cfg.step
    hnorm = spec.hessian_norm() if capped else 0.0
    stop2 = cfg.stop_grad_norm**2 if cfg.stop_grad_norm > 0 else 0.0
    arm2 = cfg.stop_grad_arm**2
    armed = cfg.stop_grad_arm <= 0
    guard2 = OVERFLOW_GUARD**2
    y = np.array(y0, dtype=float, copy=True, order="C")
    use_kernel = _kernels.HAVE_NUMBA and isinstance(spec, SensingLoss) \
        and len(spec.measurements) > 0

    def grad_norm(y_cur):
        w = y_cur @ y_cur.T if factored else y_cur
        g = spec.gradient(w)
        return frob(g @ y_cur) if factored else frob(w @ g + g @ w)

    t, steps = 0.0, 0
    rec.record(0, t, y @ y.T if factored else y, grad_norm(y))
    status = 0
    while steps < cfg.max_steps and t < horizon:
        chunk = min(cfg.record_every, cfg.max_steps - steps)
        if use_kernel:
            if factored:
                taken, status, dt, armed = _kernels.capped_gd_u(
                    y, spec._xs, spec._ys, safety, hnorm, chunk, stop2, arm2,
                    armed, horizon - t, guard2, capped)
            else:
                taken, status, dt, armed = _kernels.capped_euler_w(
                    y, spec._xs, spec._ys, safety, hnorm, chunk, guard2, stop2,
                    arm2, armed, horizon - t, capped)
        else:
            taken, status, dt, armed = _capped_numpy(
                spec, y, safety, hnorm, chunk, guard2, stop2, arm2, armed,
                horizon - t, factored, capped)
        steps += taken
        t += dt
        rec.record(steps, t, y @ y.T if factored else y, grad_norm(y))
        if status == 2:
            rec.warnings.append(f"diverged at step {steps}, t={t:.6g}")
            raise Diverged(f"state norm crossed guard at t={t:.6g}",
                           trajectory=rec.build())
        if status in (1, 3):
            break
    return y


def flow_depth2(spec: LossSpec, w0: np.ndarray, cfg: IntegratorConfig,
                horizon: float) -> Trajectory:
    """Integrate dW/dt = -(W grad f(W) + grad f(W) W) from PSD W0."""
    w0 = _check_psd(np.asarray(w0, dtype=float))
    if w0.shape != (spec.dim, spec.dim):
        raise InvalidInput("W0 dimension does not match the loss")
    rec = _Recorder(spec, cfg.record_every)
    if cfg.stability_capped or _plain_euler_kernel_ok(spec, cfg):
        _run_fast_euler(spec, w0, cfg, horizon, rec, factored=False,
                        capped=cfg.stability_capped)
        return rec.build()

    def rhs(w):
        g = spec.gradient(w)
        return -(w @ g + g @ w)

    _integrate(rhs, w0, cfg, horizon, rec, to_record=lambda y: y)
    return rec.build()


def gd_factored(spec: LossSpec, u0: np.ndarray, cfg: IntegratorConfig,
                horizon: float) -> Trajectory:
    """Gradient descent on U for the loss f(U U^T)/2; records W = U U^T.

    ``euler`` is plain GD, ``adaptive_gd`` the RMSprop-style variant, and
    ``rk4`` integrates the continuous U-flow (useful as an oracle).
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim == 1:
        u0 = u0[:, None]
    if u0.shape[0] != spec.dim:
        raise InvalidInput("factor row dimension does not match the loss")

    rec = _Recorder(spec, cfg.record_every)
    if cfg.stability_capped or _plain_euler_kernel_ok(spec, cfg):
        u_end = _run_fast_euler(spec, u0, cfg, horizon, rec, factored=True,
                                capped=cfg.stability_capped)
        return rec.build(final_factor=u_end)

    def neg_grad(u):
        return -spec.gradient(u @ u.T) @ u

    u_end = _integrate(neg_grad, u0, cfg, horizon, rec,
                       to_record=lambda u: u @ u.T)
    traj = rec.build(final_factor=u_end)
    return traj


@dataclass
class DeepFactorState:
    """Depth-L factor list with a balancedness certificate."""

    factors: list[np.ndarray]
    balanced_tol: float = 1e-8

    def __post_init__(self):
        if len(self.factors) < 2:
            raise InvalidInput("need at least 2 factors")
        self.factors = [np.asarray(u, dtype=float) for u in self.factors]
        for a, b in zip(self.factors, self.factors[1:]):
            if a.shape[1] != b.shape[0]:
                raise InvalidInput("inner factor dimensions do not conform")
        drift = self.balance_drift()
        if drift > self.balanced_tol:
            raise InvalidInput(
                f"factors violate balancedness: drift {drift:.3g} > {self.balanced_tol:.3g}")

    @property
    def depth(self) -> int:
        return len(self.factors)

    def balance_drift(self) -> float:
        worst = 0.0
        for a, b in zip(self.factors, self.factors[1:]):
            worst = max(worst, frob(a.T @ a - b @ b.T))
        return worst

    def product(self) -> np.ndarray:
        w = self.factors[0]
        for u in self.factors[1:]:
            w = w @ u
        return w


def balanced_init(dim: int, depth: int, scale: float, rng: np.random.Generator,
                  diag: np.ndarray | None = None) -> DeepFactorState:
    """Balanced random factors U_i = V_i D^{1/L} V_{i+1}^T with V_{L+1} = V_1.

    The end-to-end product is V_1 D V_1^T: symmetric PSD with Frobenius norm
    ``scale``. ``diag`` fixes the diagonal profile (rescaled to ``scale``);
    by default it is sampled |N(0,1)|.
    """
    if scale <= 0:
        raise InvalidInput("scale must be > 0")
    if depth < 2:
        raise InvalidInput("depth must be >= 2")
    if diag is None:
        diag = np.abs(rng.standard_normal(dim))
    diag = np.asarray(diag, dtype=float)
    if np.any(diag < 0) or np.linalg.norm(diag) == 0:
        raise InvalidInput("diag must be nonnegative and nonzero")
    diag = diag * (scale / np.linalg.norm(diag))
    vs = []
    for _ in range(depth):
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        vs.append(q * np.sign(np.diagonal(r)))
    vs.append(vs[0])
    root = diag ** (1.0 / depth)
    factors = [vs[i] @ np.diag(root) @ vs[i + 1].T for i in range(depth)]
    return DeepFactorState(factors, balanced_tol=1e-10 * max(1.0, scale))


def flow_deep(spec: LossSpec, w0: np.ndarray, depth: int, cfg: IntegratorConfig,
              horizon: float) -> Trajectory:
    """Depth-L end-to-end flow evolved in M = W^{2/L}; records W = M^{L/2}."""
    if depth < 3:
        raise InvalidInput("flow_deep needs depth >= 3; use flow_depth2")
    w0 = _check_psd(np.asarray(w0, dtype=float))
    p = depth / 2.0
    m0 = frac_power(w0, 2.0 / depth)

    def rhs(m):
        mp = matrix_power_psd(symmetrize(m), p)
        g = spec.gradient(mp)
        return -(g @ mp + mp @ g)

    rec = _Recorder(spec, cfg.record_every)
    _integrate(rhs, m0, cfg, horizon, rec,
               to_record=lambda m: matrix_power_psd(symmetrize(m), p),
               guard=OVERFLOW_GUARD ** (1.0 / p))
    return rec.build()


def _deep_grads(factors: list[np.ndarray], g: np.ndarray) -> list[np.ndarray]:
    n = len(factors)
    prefixes = [None] * n  # prefixes[i] = U_1 ... U_{i-1}
    suffixes = [None] * n  # suffixes[i] = U_{i+1} ... U_L
    acc = None
    for i in range(n):
        prefixes[i] = acc
        acc = factors[i] if acc is None else acc @ factors[i]
    acc = None
    for i in range(n - 1, -1, -1):
        suffixes[i] = acc
        acc = factors[i] if acc is None else factors[i] @ acc
    grads = []
    for i in range(n):
        left = g if prefixes[i] is None else prefixes[i].T @ g
        grads.append(left if suffixes[i] is None else left @ suffixes[i].T)
    return grads


def gd_deep_factored(spec: LossSpec, state: DeepFactorState, cfg: IntegratorConfig,
                     horizon: float) -> Trajectory:
    """Simultaneous GD on all factors of f(U_1 ... U_L); records the product.

    Balancedness is monitored: drifting beyond 100x the initial tolerance adds
    a warning to the trajectory but does not stop the run.
    """
    factors = [u.copy() for u in state.factors]
    drift_limit = 100.0 * max(state.balanced_tol, state.balance_drift(), 1e-300)
    rec = _Recorder(spec, cfg.record_every)
    t, v, step = 0.0, 0.0, 0
    warned = False

    def total_norm(gs):
        return math.sqrt(sum(float(np.sum(g * g)) for g in gs))

    w = DeepFactorState(factors, balanced_tol=np.inf).product()
    grads = _deep_grads(factors, spec.gradient(w))
    rec.maybe(0, t, w, total_norm(grads))
    while step < cfg.max_steps and t < horizon:
        gn = total_norm(grads)
        if cfg.stop_grad_norm > 0 and gn <= cfg.stop_grad_norm:
            break
        if cfg.scheme == "adaptive_gd":
            a = cfg.adaptive.alpha
            v = a * v + (1 - a) * gn**2
            h = cfg.step / (math.sqrt(v / (1 - a ** (step + 1))) + cfg.adaptive.epsilon)
        else:
            h = cfg.step
        h = min(h, horizon - t)
        for i in range(len(factors)):
            factors[i] = factors[i] - h * grads[i]
        t += h
        step += 1
        w = factors[0]
        for u in factors[1:]:
            w = w @ u
        nw = frob(w)
        if not np.isfinite(nw) or nw >= OVERFLOW_GUARD:
            rec.warnings.append(f"diverged at step {step}, t={t:.6g}")
            raise Diverged(f"product norm {nw:.3g} crossed guard", trajectory=rec.build())
        grads = _deep_grads(factors, spec.gradient(w))
        if not warned and step % cfg.record_every == 0:
            drift = DeepFactorState(factors, balanced_tol=np.inf).balance_drift()
            if drift > drift_limit:
                rec.warnings.append(
                    f"balance drift {drift:.3g} exceeded {drift_limit:.3g} at step {step}")
                warned = True
        rec.maybe(step, t, w, total_norm(grads))
    rec.record(step, t, w, total_norm(grads))
    return rec.build(final_factors=factors)


def kernel_matrix(sigmas: np.ndarray, depth) -> np.ndarray:
    """Depth-L coupling kernel in the SVD basis.

    K[i,i] = sigma_i^{2-2/L}; off-diagonal
    K[i,j] = (sigma_i^2 - sigma_j^2) / (L sigma_i^{2/L} - L sigma_j^{2/L}),
    filled by continuity with the diagonal value when sigma_i ~ sigma_j.
    ``depth=math.inf`` gives the limit K[i,i] = sigma_i^2,
    K[i,j] = (sigma_i^2 - sigma_j^2) / (ln sigma_i^2 - ln sigma_j^2).
    """
    s = np.asarray(sigmas, dtype=float)
    if np.any(s < 0):
        raise InvalidInput("singular values must be nonnegative")
    infinite = math.isinf(depth)
    if not infinite and (depth < 1 or int(depth) != depth):
        raise InvalidInput(f"depth must be a positive integer or inf, got {depth}")
    n = s.shape[0]
    si = s[:, None] * np.ones((1, n))
    sj = si.T
    close = np.abs(si - sj) <= 1e-12 * np.maximum(np.maximum(si, sj), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if infinite:
            diag_val = s**2
            num = si**2 - sj**2
            den = np.log(si**2) - np.log(sj**2)
            k = np.where(close, 0.0, num) / np.where(close, 1.0, den)
            # a zero singular value pinned against a positive one: limit is 0
            k = np.where((si == 0) ^ (sj == 0), 0.0, k)
        else:
            ell = float(depth)
            diag_val = s ** (2 - 2 / ell)
            num = si**2 - sj**2
            den = ell * si ** (2 / ell) - ell * sj ** (2 / ell)
            k = np.where(close, 0.0, num) / np.where(close, 1.0, den)
    # continuity fill: the off-diagonal formula is 0/0 at sigma_i ~ sigma_j
    # and its limit equals the diagonal expression
    return np.where(close, np.broadcast_to(diag_val[:, None], (n, n)), k)


def flow_kernel_depth(spec: LossSpec, w0: np.ndarray, depth, cfg: IntegratorConfig,
                      horizon: float) -> Trajectory:
    """Depth-L dynamics via per-step SVD and the coupling kernel.

    Works for arbitrary square W (SVD-based) and for ``depth=math.inf``.
    Times are normalized (multiplied by L): one step of size ``cfg.step``
    advances normalized time by ``cfg.step``, so trajectories of different
    depths are comparable at equal recorded times.
    """
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (spec.dim, spec.dim):
        raise InvalidInput("W0 dimension does not match the loss")

    def rhs(w):
        u, s, vt = np.linalg.svd(w)
        k = kernel_matrix(s, depth)
        g = spec.gradient(w)
        return -(u @ ((u.T @ g @ vt.T) * k) @ vt)

    rec = _Recorder(spec, cfg.record_every)
    _integrate(rhs, w0, cfg, horizon, rec, to_record=lambda y: y)
    return rec.build()


def sigma_closed_form(alpha: float, mu: float, t) -> np.ndarray | float:
    """Per-mode solution of dx/dt = 2 x (mu - x) started at x(0) = alpha.

    For mu != 0:  alpha mu / (alpha + (mu - alpha) exp(-2 mu t)); the mu = 0
    limit is alpha / (1 + 2 alpha t).
    """
    if alpha <= 0:
        raise InvalidInput("alpha must be > 0")
    t = np.asarray(t, dtype=float)
    if mu == 0:
        out = alpha / (1.0 + 2.0 * alpha * t)
    elif mu > 0:
        out = alpha * mu / (alpha + (mu - alpha) * np.exp(-2.0 * mu * t))
    else:
        # rewrite with exp(2 mu t) <= 1 so nothing overflows for large t
        e = np.exp(2.0 * mu * t)
        out = alpha * mu * e / (alpha * e + (mu - alpha))
    return out if out.ndim else float(out)


def deep_diag_closed_form(m0: np.ndarray, mu: np.ndarray, p: float, t: float) -> np.ndarray:
    """Componentwise solution of dm/dt = 2 mu m^P for diagonal initial data.

    m_i(t) = (m0_i^{-(P-1)} - 2 mu_i (P-1) t)^{-1/(P-1)}; zero components stay
    zero. ``mu`` holds the growth rates (eigenvalues of minus the gradient at
    zero). Raises BlowUp at or past t_i = m0_i^{-(P-1)} / (2 mu_i (P-1)).
    """
    if p <= 1:
        raise InvalidInput("P must be > 1")
    m0 = np.asarray(m0, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if m0.shape != mu.shape:
        raise InvalidInput("m0 and mu must have matching shapes")
    if np.any(m0 < 0):
        raise InvalidInput("m0 must be nonnegative")
    out = np.zeros_like(m0)
    nz = m0 > 0
    base = m0[nz] ** (-(p - 1)) - 2.0 * mu[nz] * (p - 1) * t
    if np.any(base <= 0):
        bad = np.flatnonzero(nz)[base <= 0][0]
        t_star = m0[bad] ** (-(p - 1)) / (2.0 * mu[bad] * (p - 1))
        raise BlowUp(int(bad), float(t_star))
    out[nz] = base ** (-1.0 / (p - 1))
    return out


def blowup_times(m0: np.ndarray, mu: np.ndarray, p: float) -> np.ndarray:
    """Finite-time blow-up horizon per component; inf where there is none."""
    m0 = np.asarray(m0, dtype=float)
    mu = np.asarray(mu, dtype=float)
    out = np.full(m0.shape, np.inf)
    grow = (m0 > 0) & (mu > 0)
    out[grow] = m0[grow] ** (-(p - 1)) / (2.0 * mu[grow] * (p - 1))
    return out
