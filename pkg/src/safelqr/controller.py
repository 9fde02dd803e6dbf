"""Episodic safe adaptive controller.

Each episode e runs four phases on a single trajectory (no resets):

  transit-1   SafeTransit from the previous policy into the exploration
              policy M_dag^(e) (robust CE with excitation budget),
  explore     T_D^(e) stages of the approximate DAP with excitation,
  transit-2   SafeTransit into the exploitation policy M^(e) computed by
              robust CE against the refreshed uncertainty set,
  exploit     pure exploitation (no excitation) until the episode boundary.

Policy updates only ever happen through SafeTransit: a two-leg slow
interpolation through an intermediate policy in the intersection of the
outgoing and incoming safe sets, with per-step variation kept within the
active budget and a dwell of at least the incoming memory length.

The controller touches the plant only through {observe x, emit u}; true
disturbances stay on the harness side.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dap import DapPolicy, pad_policy
from .estimation import (EstimationConstants, RegressionDataset, SampleFloorError,
                         UncertaintySet, least_squares, project_uncertainty,
                         schedule_radius)
from .model import ExcitationModel, SystemModel, project_box, sample_excitation
from .qp import (MidPolicyInfeasibleError, RobustCeInfeasibleError,
                 SafePolicyPolytope, build_and_solve_robust_ce, find_mid_policy)
from .tightening import TighteningInputs, check_monotone_schedule


@dataclass(frozen=True)
class EpisodeParams:
    e: int
    t_start: int
    t_end: int
    T_D: int
    H: int
    eta_bar: float
    delta_M: float
    r_theory: float      # +inf when the sample floor is unmet
    floor_met: bool


@dataclass(frozen=True)
class EpisodeSchedule:
    episodes: tuple
    T1: int
    p: float
    r_ini: float
    r_post: float = math.inf     # radius entering the hypothetical episode N

    @property
    def N(self) -> int:
        return len(self.episodes)

    @property
    def total_T(self) -> int:
        return self.episodes[-1].t_end

    @property
    def max_H(self) -> int:
        return max(ep.H for ep in self.episodes)

    def sequences(self):
        eps = self.episodes
        return ([ep.eta_bar for ep in eps], [ep.H for ep in eps],
                [ep.delta_M for ep in eps], [ep.r_theory for ep in eps])

    def capped_radii(self) -> list[float]:
        """Effective radii the robust programs can actually use."""
        out = [self.r_ini]
        for ep in self.episodes[1:]:
            out.append(min(ep.r_theory, 2.0 * self.r_ini))
        return out


def make_schedule(T1: int, N: int, inputs: TighteningInputs,
                  eps_F: tuple[float, float], p: float,
                  est: EstimationConstants, r_ini: float,
                  c_delta: float = 0.25, c_eta: float = 0.25,
                  c_H: float = 1.0,
                  eta_bar_override: float | None = None) -> EpisodeSchedule:
    """Doubling-epoch parameter schedule.

    Episode boundaries double (T^(e+1) = 2 T^(e)); exploration lengths are
    T_D^(e) = ceil((T^(e+1)-T^(e))^(2/3)); memory grows logarithmically in
    the boundary; the excitation level is a constant fraction of the strict
    feasibility margin (normalized by the excitation tightening constants and
    capped at w_max/kappa_B, the level the state bound tolerates); variation
    budgets shrink like (T^(e+1))^(-1/3) so sqrt(H) Delta_M is non-increasing.
    """
    if T1 < 2 or N < 1:
        raise ValueError("need T1 >= 2 and N >= 1")
    eps_F_x, eps_F_u = eps_F
    cert = inputs.cert
    lam = math.log(1.0 / (1.0 - cert.gamma))
    H_floor = max(1, math.ceil(math.log(2.0 * cert.kappa) / lam))
    if eta_bar_override is not None:
        eta_bar = eta_bar_override
    else:
        eta_bar = c_eta * min(eps_F_x / (inputs.c2() * math.sqrt(inputs.m)),
                              eps_F_u / inputs.c3())
    eta_bar = min(eta_bar, inputs.w_max / cert.kappa_B)

    bounds = [0] + [T1 * 2 ** e for e in range(N)]
    episodes = []
    for e in range(N):
        span = bounds[e + 1] - bounds[e]
        T_D = math.ceil(span ** (2.0 / 3.0))
        level = max(bounds[e + 1], math.sqrt(inputs.n) / min(eps_F_x, eps_F_u))
        H = max(math.ceil(c_H * math.log(level) / lam), H_floor)
        delta_M = c_delta * eps_F_x / (inputs.c_v() * math.sqrt(inputs.m * inputs.n * H)
                                       * bounds[e + 1] ** (1.0 / 3.0))
        if e == 0:
            r_theory, floor_met = r_ini, True
        else:
            try:
                r_theory = schedule_radius(e, episodes[e - 1].T_D,
                                           episodes[e - 1].eta_bar, p, est)
                floor_met = True
            except SampleFloorError:
                r_theory, floor_met = math.inf, False
        episodes.append(EpisodeParams(e=e, t_start=bounds[e], t_end=bounds[e + 1],
                                      T_D=T_D, H=H, eta_bar=eta_bar,
                                      delta_M=delta_M, r_theory=r_theory,
                                      floor_met=floor_met))
    try:
        r_post = schedule_radius(N, episodes[-1].T_D, episodes[-1].eta_bar, p, est)
    except SampleFloorError:
        r_post = math.inf
    sched = EpisodeSchedule(episodes=tuple(episodes), T1=T1, p=p, r_ini=r_ini,
                            r_post=r_post)
    etas, Hs, deltas, _ = sched.sequences()
    ok, bad = check_monotone_schedule(etas, Hs, deltas, sched.capped_radii())
    if not ok:
        raise ValueError(f"generated schedule violates monotonicity at episode {bad}")
    return sched


@dataclass
class ControllerState:
    """Mutable per-trajectory state: current x, stage index, active policy,
    the estimate used to reconstruct disturbances, and the what ring."""

    x: np.ndarray
    t: int
    policy: np.ndarray            # (H, m, n) active blocks
    theta_for_what: SystemModel
    w_max: float
    what_hist: np.ndarray         # rows indexed by pad + t
    pad: int
    last_eta: np.ndarray

    def hist_slice(self, H: int) -> np.ndarray:
        rows = self.what_hist[self.pad + self.t - H:self.pad + self.t]
        return rows[::-1].reshape(-1)


def approx_dap_step(state: ControllerState, x_t: np.ndarray, eta_bar: float,
                    exc: ExcitationModel, rng: np.random.Generator) -> np.ndarray:
    """u_t = sum_k M_t[k] what_{t-k} + eta_t (eta drawn only when eta_bar > 0)."""
    H, m, n = state.policy.shape
    flat = state.policy.transpose(1, 0, 2).reshape(m, H * n)
    u = flat @ state.hist_slice(H)
    if eta_bar > 0.0:
        eta = sample_excitation(exc, eta_bar, rng)
        u = u + eta
    else:
        eta = np.zeros(m)
    state.last_eta = eta
    return u


def record_observation(state: ControllerState, x_t: np.ndarray, u_t: np.ndarray,
                       x_next: np.ndarray) -> np.ndarray:
    """what_t = Pi_W(x_{t+1} - A_hat x_t - B_hat u_t); pushes it and advances."""
    th = state.theta_for_what
    what = project_box(x_next - th.A @ x_t - th.B @ u_t, state.w_max)
    state.what_hist[state.pad + state.t] = what
    state.x = np.asarray(x_next, dtype=float)
    state.t += 1
    return what


@dataclass
class TransitPlan:
    """Two-leg interpolation M -> M_mid -> M_tgt with waypoint counts W1, W2."""

    W1: int
    W2: int
    M_src: DapPolicy
    M_mid: DapPolicy
    M_tgt: DapPolicy
    inc1: np.ndarray              # per-step increment in the source memory
    inc2: np.ndarray              # per-step increment in the target memory
    theta_min: SystemModel
    eta_min: float
    theta_tgt: SystemModel
    eta_tgt: float
    step1_budget: float
    step2_budget: float


def plan_transit(M: DapPolicy, omega: SafePolicyPolytope, theta: SystemModel,
                 r_eff: float, eta_bar: float, delta_M: float,
                 M_tgt: DapPolicy, omega_tgt: SafePolicyPolytope,
                 theta_tgt: SystemModel, r_eff_tgt: float, eta_bar_tgt: float,
                 delta_M_tgt: float, H_tgt: int) -> TransitPlan:
    """SafeTransit plan between robustly safe sets.

    W1 = max(ceil(||M - M_mid||_F / min(delta_M, delta_M')), H') so the leg
    both respects the tighter variation budget and dwells long enough for the
    incoming memory; W2 = ceil(||M' - M_mid||_F / delta_M') with the
    zero-distance convention W2 = 0. Step 1 runs under the estimate with the
    smaller effective radius and the smaller excitation level.
    """
    M_mid = find_mid_policy(M, omega, M_tgt, omega_tgt)
    dist1 = M.distance(M_mid)
    budget1 = min(delta_M, delta_M_tgt)
    W1 = max(math.ceil(dist1 / budget1 - 1e-12), H_tgt)
    dist2 = M_tgt.distance(M_mid)
    W2 = 0 if dist2 <= 1e-15 else math.ceil(dist2 / delta_M_tgt - 1e-12)
    H_src = M.H
    mid_src = pad_policy(M_mid, H_src) if M_mid.H < H_src else M_mid
    inc1 = (mid_src.M - M.M) / W1
    mid_tgt = pad_policy(M_mid, H_tgt)
    inc2 = np.zeros_like(M_tgt.M) if W2 == 0 else (M_tgt.M - mid_tgt.M) / W2
    theta_min = theta if r_eff <= r_eff_tgt else theta_tgt
    return TransitPlan(W1=W1, W2=W2, M_src=M, M_mid=M_mid, M_tgt=M_tgt,
                       inc1=inc1, inc2=inc2, theta_min=theta_min,
                       eta_min=min(eta_bar, eta_bar_tgt), theta_tgt=theta_tgt,
                       eta_tgt=eta_bar_tgt, step1_budget=budget1,
                       step2_budget=delta_M_tgt)


PHASE_TRANSIT1 = 0
PHASE_EXPLORE = 1
PHASE_TRANSIT2 = 2
PHASE_EXPLOIT = 3
PHASE_NAMES = ("transit1", "explore", "transit2", "exploit")


@dataclass
class _Segment:
    n_stages: int
    inc: np.ndarray | None
    new_policy: np.ndarray | None     # replaces the active blocks (padding only)
    theta: SystemModel
    eta_bar: float
    phase: int
    collect: bool = False


@dataclass
class EpisodeRecord:
    e: int
    theta_hat: np.ndarray
    r_theory: float
    r_eff: float
    t1: int = -1
    t2: int = -1
    W: tuple = ()
    objective_explore: float = math.nan
    objective_exploit: float = math.nan
    bundle_explore: dict = field(default_factory=dict)
    bundle_exploit: dict = field(default_factory=dict)
    floor_met: bool = True
    overrun: bool = False
    infeasible_events: list = field(default_factory=list)


@dataclass
class StageMeta:
    t: int
    episode: int
    phase: int
    eta: np.ndarray
    policy_delta: float
    policy_changed: bool


class SafeAdaptiveController:
    """Stage-stepped implementation of the episodic algorithm."""

    def __init__(self, theta_star_dims: tuple[int, int],
                 prior: UncertaintySet, schedule: EpisodeSchedule,
                 inputs: TighteningInputs, constraints, cert,
                 Q: np.ndarray, R: np.ndarray, Sigma_w: np.ndarray,
                 exc: ExcitationModel, rng_eta: np.random.Generator,
                 ridge: float = 1e-10, use_all_history: bool = False,
                 qp_tol: float = 1e-8):
        n, m = theta_star_dims
        self.n, self.m = n, m
        self.prior = prior
        self.schedule = schedule
        self.inputs = inputs
        self.constraints = constraints
        self.cert = cert
        self.Q, self.R, self.Sigma_w = Q, R, Sigma_w
        self.exc = exc
        self.rng_eta = rng_eta
        self.ridge = ridge
        self.use_all_history = use_all_history
        self.qp_tol = qp_tol

        pad = schedule.max_H + 1
        T = schedule.total_T
        self.state = ControllerState(
            x=np.zeros(n), t=0,
            policy=np.zeros((schedule.episodes[0].H, m, n)),
            theta_for_what=prior.center, w_max=constraints.w_max,
            what_hist=np.zeros((pad + T + 1, n)), pad=pad,
            last_eta=np.zeros(m))
        self.uncertainty = prior
        self.episode_records: list[EpisodeRecord] = []
        self.datasets: list[RegressionDataset] = []
        self._segments: deque[_Segment] = deque()
        self._seg = None
        self._seg_left = 0
        self._e = -1
        self._phase_of_next = None
        self._prev = None       # (policy, polytope, theta, r_eff, eta, delta)
        self._collect = False
        self._dataset = None
        self._done = False
        self._pending_jump = 0.0

    # -- planning ----------------------------------------------------------

    def _robust_ce(self, uset: UncertaintySet, H, eta_bar, delta_M):
        return build_and_solve_robust_ce(
            uset.center, uset.effective_radius, eta_bar, H, delta_M,
            self.inputs, self.constraints, self.cert, self.Q, self.R,
            self.Sigma_w, tol=self.qp_tol)

    def _begin_episode(self):
        self._e += 1
        ep = self.schedule.episodes[self._e]
        uset = self.uncertainty
        rec = EpisodeRecord(e=ep.e, theta_hat=uset.center.stacked().copy(),
                            r_theory=uset.radius, r_eff=uset.effective_radius,
                            floor_met=ep.floor_met)
        self.episode_records.append(rec)
        prev_policy, prev_omega, prev_theta, prev_reff, prev_eta, prev_delta = self._prev \
            if self._prev is not None else (None,) * 6
        try:
            res = self._robust_ce(uset, ep.H, ep.eta_bar, ep.delta_M)
        except RobustCeInfeasibleError as err:
            rec.infeasible_events.append(("robust_ce_explore", str(err)))
            self._hold_until(ep.t_end)
            return
        rec.objective_explore = res.solution.objective
        rec.bundle_explore = res.bundle.as_dict()
        if self._prev is None:
            # Episode 0 starts from the zero policy inside the initial set.
            prev_policy = DapPolicy.zero(ep.H, self.m, self.n)
            prev_omega, prev_theta = res.polytope, uset.center
            prev_reff, prev_eta, prev_delta = uset.effective_radius, 0.0, ep.delta_M
        try:
            plan = plan_transit(prev_policy, prev_omega, prev_theta, prev_reff,
                                prev_eta, prev_delta, res.policy, res.polytope,
                                uset.center, uset.effective_radius, ep.eta_bar,
                                ep.delta_M, ep.H)
        except MidPolicyInfeasibleError as err:
            rec.infeasible_events.append(("mid_policy_phase1", str(err)))
            self._hold_until(ep.t_end)
            return
        rec.W = (plan.W1, plan.W2)
        self._push_transit(plan, PHASE_TRANSIT1)
        self._dataset = RegressionDataset(n=self.n, m=self.m)
        self._segments.append(_Segment(
            n_stages=ep.T_D, inc=None,
            new_policy=pad_policy(res.policy, ep.H).M.copy(),
            theta=uset.center, eta_bar=ep.eta_bar, phase=PHASE_EXPLORE,
            collect=True))
        self._explore_result = res
        self._phase_of_next = "phase2"

    def _push_transit(self, plan: TransitPlan, phase: int):
        if plan.W1 > 0:
            self._segments.append(_Segment(
                n_stages=plan.W1, inc=plan.inc1, new_policy=None,
                theta=plan.theta_min, eta_bar=plan.eta_min, phase=phase))
        if plan.W2 > 0:
            self._segments.append(_Segment(
                n_stages=plan.W2, inc=plan.inc2,
                new_policy=pad_policy(plan.M_mid, plan.M_tgt.H).M.copy(),
                theta=plan.theta_tgt, eta_bar=plan.eta_tgt, phase=phase))

    def _mid_episode(self):
        ep = self.schedule.episodes[self._e]
        rec = self.episode_records[-1]
        rec.t1 = self.state.t - ep.T_D
        data = self._dataset
        if self.use_all_history and self.datasets:
            for old in self.datasets:
                data = data.merged(old)
        self.datasets.append(self._dataset)
        theta_tilde = least_squares(data, ridge=self.ridge)
        theta_hat = project_uncertainty(theta_tilde, self.prior)
        next_r = self.schedule.episodes[self._e + 1].r_theory \
            if self._e + 1 < self.schedule.N else self.schedule.r_post
        new_uset = UncertaintySet(center=theta_hat, radius=next_r,
                                  theta_ini=self.prior.theta_ini,
                                  r_ini=self.prior.r_ini)
        old_uset = self.uncertainty
        res_dag = self._explore_result
        try:
            res = self._robust_ce(new_uset, ep.H, 0.0, ep.delta_M)
        except RobustCeInfeasibleError as err:
            rec.infeasible_events.append(("robust_ce_exploit", str(err)))
            self.uncertainty = new_uset
            self._hold_until(ep.t_end)
            return
        rec.objective_exploit = res.solution.objective
        rec.bundle_exploit = res.bundle.as_dict()
        try:
            plan = plan_transit(res_dag.policy, res_dag.polytope,
                                old_uset.center, old_uset.effective_radius,
                                ep.eta_bar, ep.delta_M, res.policy,
                                res.polytope, new_uset.center,
                                new_uset.effective_radius, 0.0, ep.delta_M,
                                ep.H)
        except MidPolicyInfeasibleError as err:
            rec.infeasible_events.append(("mid_policy_phase2", str(err)))
            self.uncertainty = new_uset
            self._hold_until(ep.t_end)
            return
        rec.W = rec.W + (plan.W1, plan.W2)
        self.uncertainty = new_uset
        self._push_transit(plan, PHASE_TRANSIT2)
        t2 = self.state.t + plan.W1 + plan.W2
        rec.t2 = t2
        if t2 > ep.t_end:
            rec.overrun = True
        self._segments.append(_Segment(
            n_stages=max(ep.t_end - t2, 0), inc=None,
            new_policy=pad_policy(res.policy, ep.H).M.copy(),
            theta=new_uset.center, eta_bar=0.0, phase=PHASE_EXPLOIT))
        self._prev = (res.policy, res.polytope, new_uset.center,
                      new_uset.effective_radius, 0.0, ep.delta_M)
        self._phase_of_next = "episode"

    def _hold_until(self, t_end: int):
        """Infeasibility fallback: keep the previous policy, no excitation."""
        self._segments.append(_Segment(
            n_stages=max(t_end - self.state.t, 0), inc=None, new_policy=None,
            theta=self.uncertainty.center, eta_bar=0.0, phase=PHASE_EXPLOIT))
        if self._prev is None:
            self._prev = (DapPolicy(self.state.policy.copy()), None,
                          self.uncertainty.center,
                          self.uncertainty.effective_radius, 0.0,
                          self.schedule.episodes[self._e].delta_M)
        else:
            self._prev = (DapPolicy(self.state.policy.copy()),) + self._prev[1:]
        self._phase_of_next = "episode"

    def _next_segment(self):
        while not self._segments:
            if self._phase_of_next == "phase2":
                self._mid_episode()
            elif self._e + 1 < self.schedule.N:
                self._begin_episode()
            else:
                self._done = True
                return
        self._seg = self._segments.popleft()
        self._seg_left = self._seg.n_stages
        if self._seg.new_policy is not None:
            old = self.state.policy
            new = self._seg.new_policy
            H = max(old.shape[0], new.shape[0])
            a = np.zeros((H,) + old.shape[1:]); a[:old.shape[0]] = old
            b = np.zeros((H,) + new.shape[1:]); b[:new.shape[0]] = new
            self._pending_jump += float(np.linalg.norm((a - b).ravel()))
            self.state.policy = new.copy()
        if self._seg_left == 0:
            self._next_segment()

    # -- stage interface ----------------------------------------------------

    @property
    def done(self) -> bool:
        if not self._done and self._seg_left == 0 and not self._segments \
                and self._e + 1 >= self.schedule.N and self._phase_of_next == "episode":
            self._done = True
        return self._done

    def prepare_action(self) -> tuple[np.ndarray, StageMeta]:
        if self._seg is None or self._seg_left == 0:
            self._next_segment()
            if self._done:
                raise RuntimeError("trajectory complete")
        seg = self._seg
        delta = self._pending_jump
        self._pending_jump = 0.0
        if seg.inc is not None:
            self.state.policy = self.state.policy + seg.inc
            delta += float(np.linalg.norm(seg.inc.ravel()))
        self.state.theta_for_what = seg.theta
        u = approx_dap_step(self.state, self.state.x, seg.eta_bar, self.exc,
                            self.rng_eta)
        meta = StageMeta(t=self.state.t, episode=self._e, phase=seg.phase,
                         eta=self.state.last_eta, policy_delta=delta,
                         policy_changed=delta > 0.0)
        self._collect = seg.collect
        self._last_u = u
        return u, meta

    def commit(self, x_next: np.ndarray) -> np.ndarray:
        x_t = self.state.x
        u_t = self._last_u
        what = record_observation(self.state, x_t, u_t, x_next)
        if self._collect:
            self._dataset.add_pair(x_t, u_t, x_next)
        self._seg_left -= 1
        return what

    def active_policy(self) -> DapPolicy:
        return DapPolicy(self.state.policy.copy())


def advance(controller: SafeAdaptiveController, plant) -> tuple[np.ndarray, StageMeta]:
    """One closed-loop stage: emit u, observe x_{t+1}, update the estimate ring."""
    u, meta = controller.prepare_action()
    x_next = plant.step(u)
    controller.commit(x_next)
    return u, meta
