"""Config-driven experiment harness and command-line interface.

Instances are generated from a single 64-bit seed through named, order-stable
substreams (SeedSequence spawn index 0 = ground truth, 1 = measurements,
2 = init, 3 = noise), so adding a consumer never perturbs existing ones.
Outputs are plain CSV (17 significant digits) plus the resolved config.

Config files are flat ``key = value`` text; ``#`` starts a comment. Every
flag of the CLI mirrors a config key, and explicit flags override the file.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import baselines, counterexamples, glrl
from .analysis import jacobian_at_zero_spectrum, scaling_slope, traj_set_distance
from .dynamics import (
    AdaptiveConfig,
    IntegratorConfig,
    Trajectory,
    balanced_init,
    flow_kernel_depth,
    gd_deep_factored,
    gd_factored,
)
from .errors import Diverged, InvalidInput
from .losses import FullObservationLoss, Measurement, SensingLoss, completion_measurement
from .symmat import eig, frob, symmetrize

ENV_OUTPUT_ROOT = "LOWRANK_LAB_OUT"

STREAMS = ("ground_truth", "measurements", "init", "noise")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Named substreams of one master seed (PCG64; spawn order is the API)."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def gen_ground_truth(dim: int, rank: int, frob_norm: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Random rank-r PSD matrix U_r S U_r^T with exact Frobenius norm."""
    if not 1 <= rank <= dim:
        raise InvalidInput(f"rank {rank} outside [1, {dim}]")
    if frob_norm <= 0:
        raise InvalidInput("frob_norm must be > 0")
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diagonal(r))
    s = np.abs(rng.standard_normal(rank))
    s = s * (frob_norm / np.linalg.norm(s))
    return symmetrize((q[:, :rank] * s) @ q[:, :rank].T)


def gen_measurements(wstar: np.ndarray, p: float,
                     rng: np.random.Generator) -> list[Measurement]:
    """Observe each unordered entry pair (i, j), i <= j, with probability p."""
    if not 0 < p <= 1:
        raise InvalidInput(f"observe probability {p} outside (0, 1]")
    d = wstar.shape[0]
    out = []
    for i in range(d):
        for j in range(i, d):
            if rng.random() < p:
                out.append(completion_measurement(d, i, j, wstar[i, j]))
    return out


@dataclass
class ExperimentConfig:
    seed: int = 0
    dim: int = 8
    rank: int = 2
    observe_prob: float = 0.3
    frob_norm: float = 0.0          # 0 -> dim
    depth: int = 2
    init_shape: str = "random"      # identity | random | rank1_top_eig
    init_scale: float = 1e-3
    loss_kind: str = "completion"   # completion | full_observation | counterexample
    counterexample_r: float = 100.0
    algorithm: str = "gd"           # gd | glrl | deep_glrl | r1mp | nuclear_min | kernel_depth
    scheme: str = "euler"
    step: float = 1e-3
    adaptive_alpha: float = 0.99
    adaptive_epsilon: float = 1e-4
    max_steps: int = 200_000
    stop_grad_norm: float = 0.0
    record_every: int = 100
    horizon: float = math.inf
    epsilon: float = 1e-7
    max_rank: int = 0               # 0 -> dim
    exit_tol: float = 1e-8
    kernel_depth: float = 4         # may be inf
    outputs: str = ""

    def validate(self):
        if not 0 < self.observe_prob <= 1:
            raise InvalidInput("observe_prob must be in (0, 1]")
        if not 1 <= self.rank <= self.dim:
            raise InvalidInput("rank must be in [1, dim]")
        if self.depth < 2:
            raise InvalidInput("depth must be >= 2")
        if self.init_shape not in ("identity", "random", "rank1_top_eig"):
            raise InvalidInput(f"unknown init_shape {self.init_shape!r}")
        if self.loss_kind not in ("completion", "full_observation", "counterexample"):
            raise InvalidInput(f"unknown loss_kind {self.loss_kind!r}")
        if self.init_scale <= 0:
            raise InvalidInput("init_scale must be > 0")
        return self

    def integrator(self) -> IntegratorConfig:
        adaptive = None
        if self.scheme == "adaptive_gd":
            adaptive = AdaptiveConfig(alpha=self.adaptive_alpha,
                                      epsilon=self.adaptive_epsilon)
        return IntegratorConfig(scheme=self.scheme, step=self.step, adaptive=adaptive,
                                max_steps=self.max_steps,
                                stop_grad_norm=self.stop_grad_norm,
                                record_every=self.record_every)


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"config line {n}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def config_from_mapping(pairs: dict[str, str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    valid = {f.name: f.type for f in fields(ExperimentConfig)}
    for key, val in pairs.items():
        if key not in valid:
            raise InvalidInput(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            setattr(cfg, key, val.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(cfg, key, int(val))
        elif isinstance(current, float):
            setattr(cfg, key, float(val))
        else:
            setattr(cfg, key, val)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [f"{k} = {v:.17g}" if isinstance(v, float) else f"{k} = {v}"
             for k, v in asdict(cfg).items()]
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_trajectory_csv(path: str, traj: Trajectory,
                         dist_to_ref: np.ndarray | None = None):
    d = traj.eigvals.shape[1] if len(traj) else 0
    cols = (["time", "loss", "grad_norm"]
            + [f"lambda_{i+1}" for i in range(d)]
            + [f"lowrank_{i+1}" for i in range(d)]
            + (["dist_to_ref"] if dist_to_ref is not None else []))
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(traj)):
            row = [traj.times[k], traj.loss[k], traj.grad_norm[k],
                   *traj.eigvals[k], *traj.lowrank[k]]
            if dist_to_ref is not None:
                row.append(dist_to_ref[k])
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_states_csv(path: str, traj: Trajectory):
    with open(path, "w") as fh:
        d = traj.states.shape[1] if len(traj) else 0
        cols = ["time"] + [f"w_{i+1}_{j+1}" for i in range(d) for j in range(d)]
        fh.write(",".join(cols) + "\n")
        for t, w in zip(traj.times, traj.states):
            fh.write(",".join(_fmt(x) for x in [t, *w.reshape(-1)]) + "\n")


def read_states_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0]
    n = data.shape[1] - 1
    d = int(round(math.isqrt(n)))
    if d * d != n:
        raise InvalidInput(f"{path}: {n} state columns is not a square")
    return times, data[:, 1:].reshape(-1, d, d)


def write_summary_csv(path: str, rows: list[dict]):
    if not rows:
        rows = [{}]
    cols = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(
                _fmt(v) if isinstance(v, (int, float, np.floating)) else str(v)
                for v in (row.get(c, "") for c in cols)) + "\n")


def write_matrix_csv(path: str, mat: np.ndarray):
    np.savetxt(path, np.asarray(mat), delimiter=",", fmt="%.17g")


@dataclass
class Instance:
    spec: SensingLoss | FullObservationLoss
    wstar: np.ndarray | None
    streams: dict[str, np.random.Generator]


def build_instance(cfg: ExperimentConfig) -> Instance:
    streams = rng_streams(cfg.seed)
    frob_norm = cfg.frob_norm if cfg.frob_norm > 0 else float(cfg.dim)
    if cfg.loss_kind == "counterexample":
        ce = counterexamples.build_4x4(cfg.counterexample_r)
        return Instance(spec=ce.loss, wstar=ce.m_rank, streams=streams)
    wstar = gen_ground_truth(cfg.dim, cfg.rank, frob_norm, streams["ground_truth"])
    if cfg.loss_kind == "full_observation":
        return Instance(spec=FullObservationLoss(wstar), wstar=wstar, streams=streams)
    ms = gen_measurements(wstar, cfg.observe_prob, streams["measurements"])
    return Instance(spec=SensingLoss(ms, dim=cfg.dim), wstar=wstar, streams=streams)


def initial_factor(cfg: ExperimentConfig, spec, rng: np.random.Generator):
    """Depth-2 factor (or deep factor state) matching the configured shape."""
    d = spec.dim
    if cfg.init_shape == "identity":
        if cfg.depth == 2:
            return math.sqrt(cfg.init_scale / math.sqrt(d)) * np.eye(d)
        diag = np.ones(d)
        return balanced_init(d, cfg.depth, cfg.init_scale, rng, diag=diag)
    if cfg.init_shape == "rank1_top_eig":
        dec = eig(-spec.gradient(np.zeros((d, d))))
        u1 = dec.vectors[:, 0]
        if cfg.depth != 2:
            raise InvalidInput("rank1_top_eig init is defined for depth 2")
        return math.sqrt(cfg.init_scale) * u1[:, None]
    state = balanced_init(d, cfg.depth, cfg.init_scale, rng)
    return state.factors[0] if cfg.depth == 2 else state


def test_loss(w: np.ndarray, wstar: np.ndarray) -> float:
    """Normalized full-observation error ||W - W*||_F^2 / d^2."""
    d = wstar.shape[0]
    return float(np.sum((w - wstar) ** 2)) / d**2


def _out_dir(cfg: ExperimentConfig) -> str:
    root = cfg.outputs or os.environ.get(ENV_OUTPUT_ROOT, ".")
    os.makedirs(root, exist_ok=True)
    return root


def _concat_phase_trajectories(report: glrl.GlrlReport) -> Trajectory:
    """Stitch per-phase records into one monotone-time trajectory."""
    times, states, loss, gnorm, eig_rows, low_rows = [], [], [], [], [], []
    offset = 0.0
    for phase in report.phases:
        tr = phase.trajectory
        times.extend((tr.times + offset).tolist())
        offset = times[-1] if times else 0.0
        offset += tr.times[1] - tr.times[0] if len(tr) > 1 else 1.0
        states.extend(tr.states)
        loss.extend(tr.loss.tolist())
        gnorm.extend(tr.grad_norm.tolist())
        eig_rows.extend(tr.eigvals.tolist())
        low_rows.extend(tr.lowrank.tolist())
    return Trajectory(times=np.array(times), states=np.array(states),
                      loss=np.array(loss), grad_norm=np.array(gnorm),
                      eigvals=np.array(eig_rows), lowrank=np.array(low_rows))


def run_experiment(cfg: ExperimentConfig) -> dict[str, str]:
    """Execute one configured run; returns the map of written files."""
    cfg.validate()
    out = _out_dir(cfg)
    paths = {"config": os.path.join(out, "resolved.cfg")}
    with open(paths["config"], "w") as fh:
        fh.write(serialize_config(cfg))
    inst = build_instance(cfg)
    spec = inst.spec
    integ = cfg.integrator()
    summary_rows: list[dict] = []

    if cfg.algorithm == "gd":
        init = initial_factor(cfg, spec, inst.streams["init"])
        if cfg.depth == 2:
            traj = gd_factored(spec, init, integ, cfg.horizon)
        else:
            traj = gd_deep_factored(spec, init, integ, cfg.horizon)
        summary_rows.append(_final_row(cfg, "gd", traj.final_state, inst,
                                       loss=traj.loss[-1]))
    elif cfg.algorithm in ("glrl", "deep_glrl"):
        gcfg = glrl.GlrlConfig(inner=integ, epsilon=cfg.epsilon,
                               max_rank=cfg.max_rank or None,
                               exit_tol=cfg.exit_tol,
                               depth=2 if cfg.algorithm == "glrl" else cfg.depth)
        report = (glrl.glrl_run(spec, gcfg) if cfg.algorithm == "glrl"
                  else glrl.deep_glrl_run(spec, gcfg))
        traj = _concat_phase_trajectories(report)
        for phase in report.phases:
            row = _final_row(cfg, f"{cfg.algorithm}_phase{phase.rank}",
                             phase.critical_point, inst,
                             loss=spec.value(phase.critical_point))
            row["escape_eigenvalue"] = phase.escape_eigenvalue
            row["converged"] = phase.converged
            summary_rows.append(row)
        summary_rows.append(_final_row(cfg, cfg.algorithm, report.final_w, inst,
                                       loss=spec.value(report.final_w),
                                       converged=report.converged,
                                       flags=";".join(report.flags)))
    elif cfg.algorithm == "r1mp":
        est, history = baselines.r1mp_run(spec, cfg.max_rank or cfg.dim, cfg.exit_tol)
        traj = glrl.trajectory_from_states(spec, np.arange(1.0), est[None])
        for h in history:
            summary_rows.append({"algorithm": f"r1mp_rank{h['rank']}", **h})
        summary_rows.append(_final_row(cfg, "r1mp", est, inst, loss=spec.value(est)))
    elif cfg.algorithm == "nuclear_min":
        west = baselines.nuclear_min(spec)
        traj = glrl.trajectory_from_states(spec, np.arange(1.0), west[None])
        summary_rows.append(_final_row(cfg, "nuclear_min", west, inst,
                                       loss=spec.value(west)))
    elif cfg.algorithm == "kernel_depth":
        z = inst.streams["init"].standard_normal((spec.dim, spec.dim))
        w0 = cfg.init_scale * z / frob(z)
        depth = cfg.kernel_depth if not math.isinf(cfg.kernel_depth) else math.inf
        traj = flow_kernel_depth(spec, w0, depth, integ, cfg.horizon)
        summary_rows.append(_final_row(cfg, "kernel_depth", traj.final_state, inst,
                                       loss=traj.loss[-1]))
    else:
        raise InvalidInput(f"unknown algorithm {cfg.algorithm!r}")

    paths["trajectory"] = os.path.join(out, "trajectory.csv")
    paths["states"] = os.path.join(out, "states.csv")
    paths["summary"] = os.path.join(out, "summary.csv")
    write_trajectory_csv(paths["trajectory"], traj)
    write_states_csv(paths["states"], traj)
    write_summary_csv(paths["summary"], summary_rows)
    if inst.wstar is not None:
        paths["wstar"] = os.path.join(out, "wstar.csv")
        write_matrix_csv(paths["wstar"], inst.wstar)
    return paths


def _final_row(cfg: ExperimentConfig, name: str, w: np.ndarray, inst: Instance,
               **extra) -> dict:
    row = {"algorithm": name,
           "train_loss": inst.spec.value(w),
           "nuclear_norm": float(np.sum(np.abs(np.linalg.eigvalsh(symmetrize(w)))))}
    if inst.wstar is not None:
        row["test_loss"] = test_loss(w, inst.wstar)
    row.update(extra)
    return row


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key=value config file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None)


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    if args.config:
        with open(args.config) as fh:
            pairs.update(parse_config_text(fh.read()))
    for f in fields(ExperimentConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            pairs[f.name] = str(val)
    return config_from_mapping(pairs).validate()


def _cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    inst = build_instance(cfg)
    with open(os.path.join(out, "resolved.cfg"), "w") as fh:
        fh.write(serialize_config(cfg))
    if inst.wstar is not None:
        write_matrix_csv(os.path.join(out, "wstar.csv"), inst.wstar)
    if isinstance(inst.spec, SensingLoss):
        with open(os.path.join(out, "measurements.csv"), "w") as fh:
            fh.write("i,j,y\n")
            for m in inst.spec.measurements:
                i, j = np.unravel_index(int(np.argmax(np.abs(m.x))), m.x.shape)
                fh.write(f"{i},{j},{_fmt(m.y)}\n")
    print(f"instance written to {out}")
    return 0


def _cmd_run(args, algorithm: str | None = None) -> int:
    cfg = _resolve_config(args)
    if algorithm:
        cfg.algorithm = algorithm
    paths = run_experiment(cfg)
    print("\n".join(f"{k}: {v}" for k, v in paths.items()))
    return 0


def _cmd_counterexample(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    ce = counterexamples.build_4x4(cfg.counterexample_r)
    # the late valley is stiff: ride it with stability-capped Euler steps
    integ = IntegratorConfig(scheme="euler", step=1.5, stability_capped=True,
                             max_steps=cfg.max_steps,
                             stop_grad_norm=cfg.stop_grad_norm or 5e-3,
                             stop_grad_arm=0.1, record_every=cfg.record_every)
    scales = [cfg.init_scale]
    report = counterexamples.verify_gf_refutes_conjecture(ce, scales, integ)
    wmin = baselines.nuclear_min(ce.loss)
    rows = [{"scale": r.scale, "dist_to_rank": r.dist_to_rank,
             "dist_to_norm": r.dist_to_norm, "final_nuclear": r.final_nuclear}
            for r in report.rows]
    rows.append({"scale": "nuclear_min", "dist_to_rank": frob(wmin - ce.m_rank),
                 "dist_to_norm": frob(wmin - ce.m_norm),
                 "final_nuclear": float(np.linalg.norm(np.linalg.svd(wmin, compute_uv=False), 1))})
    write_summary_csv(os.path.join(out, "summary.csv"), rows)
    print(f"refutation passed: {report.passed}; summary in {out}")
    return 0


def _cmd_deep_escape(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    inst = counterexamples.build_deep_escape_instance(rng_streams(cfg.seed)["init"])
    report = counterexamples.deep_escape_demo(
        inst, noise_eps=(1e-5, 1e-3), seeds=range(cfg.seed, cfg.seed + 5))
    rows = [{"eps": eps, "seed": s, "alignment": a, "growth": g}
            for eps in report.final_alignment
            for s, (a, g) in enumerate(zip(report.final_alignment[eps], report.growths[eps]))]
    write_summary_csv(os.path.join(out, "summary.csv"), rows)
    write_matrix_csv(os.path.join(out, "blowup_times.csv"), report.blowup[None])
    print(f"noiseless ordering ok: {report.noiseless_ok}; summary in {out}")
    return 0


def _cmd_analyze(args) -> int:
    if args.task == "distance":
        t_a, s_a = read_states_csv(args.traj)
        _, s_b = read_states_csv(args.ref)
        traj = Trajectory(times=t_a, states=s_a, loss=np.zeros(len(t_a)),
                          grad_norm=np.zeros(len(t_a)),
                          eigvals=np.zeros((len(t_a), s_a.shape[1])),
                          lowrank=np.zeros((len(t_a), s_a.shape[1])))
        dist = traj_set_distance(traj, s_b)
        with open(args.out_file, "w") as fh:
            fh.write("time,dist\n")
            for t, v in zip(t_a, dist):
                fh.write(f"{_fmt(t)},{_fmt(v)}\n")
        print(f"max distance {np.max(dist):.6g} -> {args.out_file}")
        return 0
    if args.task == "slope":
        data = np.loadtxt(args.traj, delimiter=",", skiprows=1, ndmin=2)
        slope, intercept, r2 = scaling_slope(data[:, 0], data[:, 1])
        print(f"slope={slope:.6g} intercept={intercept:.6g} r2={r2:.6g}")
        return 0
    if args.task == "spectrum":
        cfg = _resolve_config(args)
        inst = build_instance(cfg)
        spec = jacobian_at_zero_spectrum(inst.spec)
        with open(args.out_file, "w") as fh:
            fh.write("eigenvalue\n")
            for val, _ in spec.pairs:
                fh.write(_fmt(val) + "\n")
        print(f"{len(spec.pairs)} symmetric-block eigenvalues -> {args.out_file}")
        return 0
    raise InvalidInput(f"unknown analyze task {args.task!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lowrank-lab",
        description="greedy low-rank learning / matrix-flow experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "run-gd", "run-glrl", "run-deep-glrl", "run-baseline",
                 "counterexample-4x4", "deep-escape", "kernel-depth"):
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name == "run-baseline":
            p.add_argument("--method", choices=("r1mp", "nuclear_min"), default="r1mp")
    p = sub.add_parser("analyze")
    p.add_argument("--task", choices=("distance", "slope", "spectrum"), required=True)
    p.add_argument("--traj", help="states.csv of the trajectory (or x,y csv for slope)")
    p.add_argument("--ref", help="states.csv of the reference")
    p.add_argument("--out-file", default="analysis.csv")
    _add_config_flags(p)

    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "run-gd":
            return _cmd_run(args, "gd")
        if args.command == "run-glrl":
            return _cmd_run(args, "glrl")
        if args.command == "run-deep-glrl":
            return _cmd_run(args, "deep_glrl")
        if args.command == "run-baseline":
            return _cmd_run(args, args.method)
        if args.command == "kernel-depth":
            return _cmd_run(args, "kernel_depth")
        if args.command == "counterexample-4x4":
            return _cmd_counterexample(args)
        if args.command == "deep-escape":
            return _cmd_deep_escape(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
    except Diverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 2
    except (InvalidInput, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
