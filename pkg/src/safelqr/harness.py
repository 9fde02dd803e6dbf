"""Closed-loop simulation, benchmark cost, regret, and persistence.

The harness owns the true plant and the disturbance stream; the controller
sees only states and emits only actions. Logs are flat numpy arrays sized to
the horizon, deterministic given (config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import Instance, config_hash
from .controller import (PHASE_NAMES, EpisodeSchedule, SafeAdaptiveController,
                         make_schedule)
from .dap import DapPolicy, eval_f, g_action, g_state, quadratic_objective
from .estimation import SampleFloorError
from .model import (DisturbanceModel, SystemModel, sample_disturbance,
                    step_plant)
from .qp import QuadObjective, build_safe_set, check_feasible, solve_qp
from .tightening import compute_bundle, check_monotone_schedule, \
    initial_feasibility_margin

VIOLATION_TOL = 1e-9


class PreflightError(RuntimeError):
    def __init__(self, report):
        super().__init__(f"preflight failed: {report.failures()}")
        self.report = report


@dataclass
class PreflightReport:
    eq13_ok: bool
    eq13_slacks: np.ndarray
    monotone_ok: bool
    monotone_violation: int | None
    strict_feasible: bool
    zero_policy_ok: bool
    floor_met: list
    floor_required: bool
    eta_bar_ok: bool
    H_floor_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        base = (self.eq13_ok and self.monotone_ok and self.strict_feasible
                and self.zero_policy_ok and self.eta_bar_ok and self.H_floor_ok)
        if self.floor_required:
            base = base and all(self.floor_met)
        return base

    def failures(self) -> list:
        out = []
        if not self.eq13_ok:
            out.append(f"initial-feasibility margin violated (slacks {self.eq13_slacks})")
        if not self.monotone_ok:
            out.append(f"schedule monotonicity violated at episode {self.monotone_violation}")
        if not self.strict_feasible:
            out.append("strict initial feasibility check failed")
        if not self.zero_policy_ok:
            out.append("zero policy outside the initial robust set")
        if not self.eta_bar_ok:
            out.append("excitation level exceeds w_max/kappa_B")
        if not self.H_floor_ok:
            out.append("H below the benchmark floor log(2 kappa)/log(1/(1-gamma))")
        if self.floor_required and not all(self.floor_met):
            out.append(f"sample floor unmet in episodes {[i for i, v in enumerate(self.floor_met) if not v]}")
        return out


def build_schedule(instance: Instance, T1: int | None = None,
                   num_episodes: int | None = None) -> EpisodeSchedule:
    return make_schedule(
        T1=instance.T1 if T1 is None else T1,
        N=instance.num_episodes if num_episodes is None else num_episodes,
        inputs=instance.tightening_inputs(), eps_F=instance.eps_F,
        p=instance.p, est=instance.estimation_constants(),
        r_ini=instance.prior.r_ini, c_delta=instance.c_delta,
        c_eta=instance.c_eta, c_H=instance.c_H,
        eta_bar_override=instance.eta_bar_override)


def preflight(instance: Instance, schedule: EpisodeSchedule) -> PreflightReport:
    """Checks before any simulation: the Eq-13-style margin, schedule
    monotonicity with the radius clause on the capped radius sequence, the
    direct strict-feasibility probe, and zero-policy membership."""
    inputs = instance.tightening_inputs()
    ep0 = schedule.episodes[0]
    bundle0 = compute_bundle(inputs, ep0.H, ep0.delta_M, instance.prior.r_ini,
                             ep0.eta_bar)
    eq13_ok, slacks = initial_feasibility_margin(bundle0, instance.eps0,
                                                 instance.eps_F[0],
                                                 instance.eps_F[1])
    etas, Hs, deltas, _ = schedule.sequences()
    mono_ok, mono_bad = check_monotone_schedule(
        etas, Hs, deltas, schedule.capped_radii(), eps0=instance.eps0,
        c1=inputs.c1(), m=instance.m, n=instance.n)
    omega0 = build_safe_set(instance.prior.center, bundle0.eps_x,
                            bundle0.eps_u, ep0.H, instance.constraints,
                            instance.cert)
    feasible, witness = check_feasible(omega0, eps0=instance.eps0)
    zero_ok = omega0.contains(DapPolicy.zero(ep0.H, instance.m, instance.n),
                              tol=1e-9, method="direct")
    lam = math.log(1.0 / (1.0 - instance.cert.gamma))
    H_floor = math.log(2.0 * instance.cert.kappa) / lam
    return PreflightReport(
        eq13_ok=eq13_ok, eq13_slacks=slacks, monotone_ok=mono_ok,
        monotone_violation=mono_bad, strict_feasible=feasible,
        zero_policy_ok=zero_ok,
        floor_met=[ep.floor_met for ep in schedule.episodes],
        floor_required=instance.require_certified_radius,
        eta_bar_ok=all(ep.eta_bar <= instance.constraints.w_max
                       / instance.cert.kappa_B + 1e-12
                       for ep in schedule.episodes),
        H_floor_ok=all(ep.H >= H_floor for ep in schedule.episodes),
        details={"bundle0": bundle0.as_dict(),
                 "witness_norm": None if witness is None
                 else float(np.linalg.norm(witness.to_vec()))})


class Plant:
    """True plant plus its disturbance stream; records w for the log."""

    def __init__(self, model: SystemModel, dist: DisturbanceModel,
                 rng: np.random.Generator, w_source=None):
        self.model = model
        self.dist = dist
        self.rng = rng
        self.w_source = w_source
        self.x = np.zeros(model.n)
        self.t = 0
        self.last_w = np.zeros(model.n)

    def step(self, u: np.ndarray) -> np.ndarray:
        if self.w_source is not None:
            w = np.asarray(self.w_source(self.t, self.rng), dtype=float)
        else:
            w = sample_disturbance(self.dist, self.rng)
        self.x = step_plant(self.model, self.x, u, w)
        self.last_w = w
        self.t += 1
        return self.x


@dataclass
class TrajectoryLog:
    """Per-stage record of the whole run plus per-episode summaries."""

    name: str
    seed: int
    config_digest: str
    x: np.ndarray          # (T+1, n) including the final state
    u: np.ndarray          # (T, m)
    w: np.ndarray          # (T, n) true disturbances (harness-side)
    what: np.ndarray       # (T, n)
    eta: np.ndarray        # (T, m)
    cost: np.ndarray       # (T,)
    episode: np.ndarray    # (T,) int
    phase: np.ndarray      # (T,) int, indexes PHASE_NAMES
    policy_delta: np.ndarray
    slack_x: np.ndarray    # (T, k_x)
    slack_u: np.ndarray    # (T, k_u)
    episode_records: list
    truth_in_all_sets: bool
    infeasible_events: int
    schedule: EpisodeSchedule

    @property
    def T(self) -> int:
        return self.u.shape[0]

    def violations(self, tol: float = VIOLATION_TOL) -> tuple[int, int]:
        state = int(np.sum(self.slack_x.min(axis=1) < -tol))
        action = int(np.sum(self.slack_u.min(axis=1) < -tol))
        return state, action


def simulate(instance: Instance, seed: int,
             schedule: EpisodeSchedule | None = None,
             w_source=None, skip_preflight: bool = False) -> TrajectoryLog:
    """One full run of the adaptive algorithm. Deterministic given seed."""
    if schedule is None:
        schedule = build_schedule(instance)
    if not skip_preflight:
        report = preflight(instance, schedule)
        if not report.ok:
            raise PreflightError(report)
    rng_w = np.random.default_rng(
        np.random.SeedSequence([int(instance.seeds["disturbance"]), int(seed)]))
    rng_eta = np.random.default_rng(
        np.random.SeedSequence([int(instance.seeds["excitation"]), int(seed)]))
    plant = Plant(instance.model, instance.disturbance, rng_w, w_source=w_source)
    controller = SafeAdaptiveController(
        theta_star_dims=(instance.n, instance.m), prior=instance.prior,
        schedule=schedule, inputs=instance.tightening_inputs(),
        constraints=instance.constraints, cert=instance.cert, Q=instance.Q,
        R=instance.R, Sigma_w=instance.Sigma_w, exc=instance.excitation,
        rng_eta=rng_eta, ridge=instance.ridge,
        use_all_history=instance.use_all_history)

    T = schedule.total_T
    n, m = instance.n, instance.m
    cons = instance.constraints
    log_x = np.zeros((T + 1, n))
    log_u = np.zeros((T, m))
    log_w = np.zeros((T, n))
    log_what = np.zeros((T, n))
    log_eta = np.zeros((T, m))
    log_cost = np.zeros(T)
    log_ep = np.zeros(T, dtype=np.int16)
    log_phase = np.zeros(T, dtype=np.int8)
    log_delta = np.zeros(T)
    log_sx = np.zeros((T, cons.k_x))
    log_su = np.zeros((T, cons.k_u))
    Q, R = instance.Q, instance.R

    for t in range(T):
        x_t = controller.state.x
        u, meta = controller.prepare_action()
        x_next = plant.step(u)
        controller.commit(x_next)
        log_x[t] = x_t
        log_u[t] = u
        log_w[t] = plant.last_w
        log_what[t] = controller.state.what_hist[controller.state.pad + t]
        log_eta[t] = meta.eta
        log_cost[t] = x_t @ Q @ x_t + u @ R @ u
        log_ep[t] = meta.episode
        log_phase[t] = meta.phase
        log_delta[t] = meta.policy_delta
        log_sx[t] = cons.d_x - cons.D_x @ x_t
        log_su[t] = cons.d_u - cons.D_u @ u
    log_x[T] = controller.state.x

    truth = instance.model
    event = truth.distance(instance.prior.theta_ini) <= instance.prior.r_ini + 1e-12
    for rec in controller.episode_records:
        center = SystemModel.from_stacked(rec.theta_hat, n)
        event = event and truth.distance(center) <= rec.r_theory * (1 + 1e-12)
    final = controller.uncertainty
    event = event and final.contains(truth)
    infeas = sum(len(rec.infeasible_events) for rec in controller.episode_records)
    return TrajectoryLog(
        name=instance.name, seed=seed, config_digest=config_hash(instance.raw),
        x=log_x, u=log_u, w=log_w, what=log_what, eta=log_eta, cost=log_cost,
        episode=log_ep, phase=log_phase, policy_delta=log_delta,
        slack_x=log_sx, slack_u=log_su,
        episode_records=controller.episode_records,
        truth_in_all_sets=bool(event), infeasible_events=infeas,
        schedule=schedule)


# ---------------------------------------------------------------------------
# benchmark and regret
# ---------------------------------------------------------------------------

def rollout_dap(model: SystemModel, policy: DapPolicy, w: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    """Run the DAP on the true plant with known disturbances (what == w)."""
    T = w.shape[0]
    n, m, H = model.n, model.m, policy.H
    flat = policy.M.transpose(1, 0, 2).reshape(m, H * n)
    x = np.zeros((T + 1, n))
    u = np.zeros((T, m))
    hist = np.zeros((H + T, n))
    for t in range(T):
        u[t] = flat @ hist[H + t - H:H + t][::-1].reshape(-1)
        x[t + 1] = model.A @ x[t] + model.B @ u[t] + w[t]
        hist[H + t] = w[t]
    return x, u


@dataclass
class BenchmarkResult:
    J_star: float
    policy: DapPolicy
    mc_mean: float = math.nan
    mc_stderr: float = math.nan


def benchmark_cost(model: SystemModel, H_bench: int, constraints, cert,
                   Q, R, Sigma_w, mc_steps: int = 0, mc_seed: int = 0,
                   dist: DisturbanceModel | None = None) -> BenchmarkResult:
    """J* = f(M*; theta*) for the optimal time-invariant safe DAP.

    M* solves the known-model program with eps_x = eps_H(H_bench), eps_u = 0.
    Optionally cross-validates with a long-run Monte-Carlo average of the
    realized stage cost (batch-means standard error).
    """
    lam = math.log(1.0 / (1.0 - cert.gamma))
    H_min = math.log(2.0 * cert.kappa) / lam
    if H_bench < H_min:
        raise ValueError(f"H_bench must be >= {H_min:.2f}")
    eps_H = constraints.norm_Dx_inf * cert.kappa * constraints.x_max \
        * (1.0 - cert.gamma) ** H_bench
    omega = build_safe_set(model, eps_H, 0.0, H_bench, constraints, cert)
    P, q, c0 = quadratic_objective(model, Q, R, Sigma_w, H_bench)
    sol = solve_qp(QuadObjective(P_pol=P, q_pol=q, const=c0), omega)
    if sol.status == "infeasible":
        raise RuntimeError("optimal-DAP program infeasible: the instance has "
                           "no strictly safe DAP at this horizon")
    result = BenchmarkResult(J_star=sol.objective, policy=sol.policy)
    if mc_steps > 0:
        if dist is None:
            dist = DisturbanceModel.uniform_box(model.n, constraints.w_max)
        rng = np.random.default_rng(np.random.SeedSequence([mc_seed, 77]))
        w = np.stack([sample_disturbance(dist, rng) for _ in range(mc_steps)])
        x, u = rollout_dap(model, sol.policy, w)
        burn = 2 * H_bench
        costs = np.einsum("ti,ij,tj->t", x[burn:-1], Q, x[burn:-1]) \
            + np.einsum("ti,ij,tj->t", u[burn:], R, u[burn:])
        nb = 50
        size = len(costs) // nb
        batches = costs[:nb * size].reshape(nb, size).mean(axis=1)
        result.mc_mean = float(costs.mean())
        result.mc_stderr = float(batches.std(ddof=1) / math.sqrt(nb))
    return result


@dataclass
class RegretReport:
    total_cost: float
    J_star: float
    regret: float
    per_episode_cost: dict
    state_violations: int
    action_violations: int
    truth_in_all_sets: bool
    T: int
    seed: int = 0
    config_digest: str = ""
    episode_summaries: list = field(default_factory=list)


def compute_regret(log: TrajectoryLog, J_star: float) -> RegretReport:
    """Regret = sum_t l(x_t, u_t) - T * J*."""
    total = float(log.cost.sum())
    per_ep = {}
    for e in np.unique(log.episode):
        per_ep[int(e)] = float(log.cost[log.episode == e].sum())
    sv, av = log.violations()
    summaries = []
    for rec in log.episode_records:
        summaries.append({
            "e": rec.e, "theta_hat": rec.theta_hat.tolist(),
            "r_theory": rec.r_theory, "r_eff": rec.r_eff,
            "t1": rec.t1, "t2": rec.t2,
            "bundle_explore": rec.bundle_explore,
            "bundle_exploit": rec.bundle_exploit,
            "objective_explore": rec.objective_explore,
            "objective_exploit": rec.objective_exploit,
            "floor_met": rec.floor_met, "overrun": rec.overrun,
            "infeasible_events": rec.infeasible_events,
        })
    return RegretReport(total_cost=total, J_star=J_star,
                        regret=total - log.T * J_star, per_episode_cost=per_ep,
                        state_violations=sv, action_violations=av,
                        truth_in_all_sets=log.truth_in_all_sets, T=log.T,
                        seed=log.seed, config_digest=log.config_digest,
                        episode_summaries=summaries)


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float


def fit_scaling(points) -> FitResult:
    """OLS of log(value) on log(scale); rejects nonpositive values."""
    pts = [(float(s), float(v)) for s, v in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(v <= 0 or s <= 0 for s, v in pts):
        raise ValueError("scales and values must be positive")
    xs = np.log([s for s, _ in pts])
    ys = np.log([v for _, v in pts])
    A = np.vstack([xs, np.ones_like(xs)]).T
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    return FitResult(slope=float(coef[0]), intercept=float(coef[1]),
                     residual=float(np.sqrt(np.mean(resid ** 2))))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export(obj, path, fmt: str = "csv"):
    """CSV for trajectory logs, JSON summary for regret reports."""
    if fmt == "csv":
        if not isinstance(obj, TrajectoryLog):
            raise TypeError("csv export expects a TrajectoryLog")
        log = obj
        n, m = log.x.shape[1], log.u.shape[1]
        cols = (["t"] + [f"x_{i}" for i in range(n)]
                + [f"u_{i}" for i in range(m)] + [f"w_{i}" for i in range(n)]
                + [f"what_{i}" for i in range(n)]
                + ["cost", "episode", "phase", "x_violation", "u_violation"])
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for t in range(log.T):
                row = ([str(t)] + [_fmt(v) for v in log.x[t]]
                       + [_fmt(v) for v in log.u[t]]
                       + [_fmt(v) for v in log.w[t]]
                       + [_fmt(v) for v in log.what[t]]
                       + [_fmt(log.cost[t]), str(int(log.episode[t])),
                          PHASE_NAMES[log.phase[t]],
                          str(int(log.slack_x[t].min() < -VIOLATION_TOL)),
                          str(int(log.slack_u[t].min() < -VIOLATION_TOL))])
                f.write(",".join(row) + "\n")
    elif fmt == "json-summary":
        if not isinstance(obj, RegretReport):
            raise TypeError("json-summary export expects a RegretReport")
        payload = {
            "config_digest": obj.config_digest, "seed": obj.seed, "T": obj.T,
            "total_cost": obj.total_cost, "J_star": obj.J_star,
            "regret": obj.regret, "per_episode_cost": obj.per_episode_cost,
            "state_violations": obj.state_violations,
            "action_violations": obj.action_violations,
            "truth_in_all_sets": obj.truth_in_all_sets,
            "episodes": obj.episode_summaries,
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=1, default=_json_default)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    raise TypeError(type(v))


def load_log_csv(path) -> dict:
    """Re-import of an exported CSV (columns as plain float arrays)."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        if name == "phase":
            out[name] = np.array([PHASE_NAMES.index(v) for v in col])
        else:
            out[name] = np.array([float(v) for v in col])
    return out


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

def estimation_study(instance: Instance, T_grid, eta_grid, n_seeds: int = 30,
                     base_seed: int = 0, eta_fixed: float = 0.1,
                     T_fixed: int = 8192) -> dict:
    """Estimation-error scaling of the raw LSE under pure excitation (M = 0).

    Runs n_seeds batched trajectories per grid point and reports median
    spectral errors plus the two log-log fits (vs T at fixed eta_bar, and vs
    eta_bar at fixed T).
    """
    model, dist = instance.model, instance.disturbance
    n, m = instance.n, instance.m

    def batched_errors(T, eta_bar, seed, checkpoints):
        rng = np.random.default_rng(np.random.SeedSequence([seed, T_fixed]))
        S = n_seeds
        d = n + m
        x = np.zeros((S, n))
        G = np.zeros((S, d, d))
        C = np.zeros((S, n, d))
        errs = {}
        cps = set(checkpoints)
        theta = model.stacked()
        for t in range(T):
            eta = eta_bar * rng.uniform(-1.0, 1.0, size=(S, m))
            z = np.concatenate([x, eta], axis=1)
            G += z[:, :, None] * z[:, None, :]
            w = rng.uniform(-dist.w_max, dist.w_max, size=(S, n))
            x = x @ model.A.T + eta @ model.B.T + w
            C += x[:, :, None] * z[:, None, :]
            if (t + 1) in cps:
                e = np.empty(S)
                for s in range(S):
                    th = np.linalg.solve(G[s] + 1e-10 * np.eye(d), C[s].T).T
                    e[s] = np.linalg.norm(th - theta, 2)
                errs[t + 1] = e
        return errs

    T_grid = sorted(T_grid)
    errs_T = batched_errors(max(T_grid), eta_fixed, base_seed + 1, T_grid)
    med_T = [(T, float(np.median(errs_T[T]))) for T in T_grid]
    med_eta = []
    for i, eta in enumerate(sorted(eta_grid)):
        e = batched_errors(T_fixed, eta, base_seed + 2, [T_fixed])
        med_eta.append((eta, float(np.median(e[T_fixed]))))
    return {
        "median_vs_T": med_T,
        "median_vs_eta": med_eta,
        "fit_T": fit_scaling(med_T),
        "fit_eta": fit_scaling(med_eta),
        "eta_fixed": eta_fixed,
        "T_fixed": T_fixed,
        "n_seeds": n_seeds,
    }


def regret_sweep(instance: Instance, horizon_exps, seeds_per_T: int = 20,
                 base_seed: int = 0, episodes: int = 5,
                 H_bench: int | None = None) -> dict:
    """Median regret across doubling horizons, with the log-log fit.

    Every horizon T = 2^k runs `episodes` doubling episodes (T1 = T /
    2^(episodes-1)); J* is computed once at a shared benchmark memory."""
    schedules = {}
    for k in horizon_exps:
        T = 2 ** k
        T1 = T // 2 ** (episodes - 1)
        schedules[k] = build_schedule(instance, T1=T1, num_episodes=episodes)
    if H_bench is None:
        H_bench = 2 * max(s.max_H for s in schedules.values())
    bench = benchmark_cost(instance.model, H_bench, instance.constraints,
                           instance.cert, instance.Q, instance.R,
                           instance.Sigma_w)
    rows = []
    all_reports = {}
    for k in sorted(horizon_exps):
        sched = schedules[k]
        reports = []
        for s in sorted(range(seeds_per_T)):
            log = simulate(instance, seed=base_seed + s, schedule=sched)
            reports.append(compute_regret(log, bench.J_star))
        regrets = [r.regret for r in reports]
        rows.append({"T": 2 ** k, "median_regret": float(np.median(regrets)),
                     "regrets": regrets,
                     "state_violations": sum(r.state_violations for r in reports),
                     "action_violations": sum(r.action_violations for r in reports),
                     "coverage": float(np.mean([r.truth_in_all_sets for r in reports]))})
        all_reports[k] = reports
    pts = [(row["T"], row["median_regret"]) for row in rows]
    fit = fit_scaling(pts) if all(v > 0 for _, v in pts) else None
    return {"rows": rows, "fit": fit, "J_star": bench.J_star,
            "H_bench": H_bench, "reports": all_reports}
