"""Safe policy polytopes and the convex-QP layer.

A safe policy set Omega(theta, eps_x, eps_u) is encoded as a linear
inequality system over the flat policy vector plus one auxiliary variable
per scalar entry appearing inside an l1 term (exact epigraph split:
-t <= expr <= t, with the t's summed in the owning constraint row).

Row layout of every system built here (the solver exploits it):

    [ +Expr  -I ]  <= -const     (upper linking rows, one per auxiliary)
    [ -Expr  -I ]  <= +const     (lower linking rows, same order)
    [   0     S ]  <= bounds     (sum rows; each auxiliary in exactly one)

Because the sum groups are disjoint, the interior-point normal equations
reduce, via a diagonal Woodbury step, to a dense system on the policy
coordinates only; solve time is then insensitive to the auxiliary count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dap import DapPolicy, box_bounds, g_action, g_state, in_box, pad_policy, \
    quadratic_objective, _a_powers
from .model import ConstraintSpec, StabilityCertificate, SystemModel
from .tightening import TighteningBundle, TighteningInputs, compute_bundle


class QpInfeasibleError(RuntimeError):
    """The inequality system admits no policy."""

    def __init__(self, msg, max_violation=None, polytope=None, bundle=None):
        super().__init__(msg)
        self.max_violation = max_violation
        self.polytope = polytope
        self.bundle = bundle


class RobustCeInfeasibleError(QpInfeasibleError):
    """Robust CE program infeasible; carries the tightening bundle."""


class MidPolicyInfeasibleError(QpInfeasibleError):
    """Empty intersection of two safe policy sets."""


@dataclass
class SafeSetStructure:
    """Epigraph bookkeeping: expressions, their constants, and sum groups."""

    E: np.ndarray                 # (n_aux, n_policy) linking expression coefficients
    const: np.ndarray             # (n_aux,)
    group_id: np.ndarray          # (n_aux,) sum row owning each auxiliary
    group_coeff: np.ndarray       # (n_groups,) coefficient of each sum row
    group_bound: np.ndarray       # (n_groups,) right-hand side of each sum row

    @property
    def n_aux(self) -> int:
        return self.E.shape[0]

    @property
    def n_policy(self) -> int:
        return self.E.shape[1]

    @property
    def n_groups(self) -> int:
        return self.group_coeff.shape[0]

    def assemble(self) -> tuple[np.ndarray, np.ndarray]:
        """Materialize the dense (G, h) system in the canonical row layout."""
        na, npol, ng = self.n_aux, self.n_policy, self.n_groups
        S = np.zeros((ng, na))
        S[self.group_id, np.arange(na)] = self.group_coeff[self.group_id]
        G = np.block([
            [self.E, -np.eye(na)],
            [-self.E, -np.eye(na)],
            [np.zeros((ng, npol)), S],
        ])
        h = np.concatenate([-self.const, self.const, self.group_bound])
        return G, h

    def aux_values(self, v: np.ndarray) -> np.ndarray:
        """Exact auxiliaries |Expr v + const| for a policy vector."""
        return np.abs(self.E @ v + self.const)


@dataclass
class SafePolicyPolytope:
    """Omega(theta_hat, eps_x, eps_u) intersected with the M_H box.

    Holds the inequality system G v <= h over [policy; auxiliaries], a
    per-row origin tag, and the parameters it encodes.
    """

    structure: SafeSetStructure
    G: np.ndarray
    h: np.ndarray
    row_origin: list
    theta_hat: SystemModel
    eps_x: float
    eps_u: float
    H: int
    m: int
    n: int
    constraints: ConstraintSpec
    cert: StabilityCertificate
    state_sum_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def n_policy(self) -> int:
        return self.structure.n_policy

    @property
    def n_aux(self) -> int:
        return self.structure.n_aux

    @property
    def n_vars(self) -> int:
        return self.n_policy + self.n_aux

    def _policy_vec(self, policy: DapPolicy) -> np.ndarray | None:
        if policy.H > self.H:
            if np.abs(policy.M[self.H:]).max(initial=0.0) > 1e-9:
                return None
            policy = DapPolicy(policy.M[:self.H])
        elif policy.H < self.H:
            policy = pad_policy(policy, self.H)
        return policy.to_vec()

    def contains(self, policy: DapPolicy, tol: float = 1e-8,
                 method: str = "aux") -> bool:
        """Membership check. 'aux' sets auxiliaries to exact absolute values
        and tests every row; 'direct' evaluates g_state/g_action/in_box."""
        v = self._policy_vec(policy)
        if v is None:
            return False
        if method == "aux":
            t = self.structure.aux_values(v)
            full = np.concatenate([v, t])
            return bool(np.all(self.G @ full <= self.h + tol))
        pol = DapPolicy.from_vec(v, self.H, self.m, self.n)
        gx = g_state(pol, self.theta_hat, self.constraints)
        gu = g_action(pol, self.constraints)
        return bool(np.all(gx <= self.constraints.d_x - self.eps_x + tol)
                    and np.all(gu <= self.constraints.d_u - self.eps_u + tol)
                    and in_box(pol, self.cert, tol=tol))


def build_safe_set(theta_hat: SystemModel, eps_x: float, eps_u: float, H: int,
                   constraints: ConstraintSpec,
                   cert: StabilityCertificate) -> SafePolicyPolytope:
    """Construct the polytope encoding of Omega(theta_hat, eps_x, eps_u)."""
    if eps_x < 0 or eps_u < 0:
        raise ValueError("eps_x, eps_u must be nonnegative")
    n, m = constraints.n, constraints.m
    k_x, k_u = constraints.k_x, constraints.k_u
    npol = H * m * n
    Apow = _a_powers(theta_hat.A, H)
    DxA = np.einsum("in,hnj->hij", constraints.D_x, Apow)      # (H, k_x, n)
    DxAB = np.einsum("hij,jm->him", DxA, theta_hat.B)          # (H, k_x, m)

    n_aux = k_x * 2 * H * n + k_u * H * n + H * m * n
    E = np.zeros((n_aux, npol))
    const = np.zeros(n_aux)
    group_id = np.empty(n_aux, dtype=int)
    n_groups = k_x + k_u + H * m
    group_coeff = np.empty(n_groups)
    group_bound = np.empty(n_groups)
    origin_aux = []

    # State rows: aux (i, k, c) carries (D_{x,i}' Phi_k)_c.
    a = 0
    for i in range(k_x):
        for k in range(1, 2 * H + 1):
            base = a
            if k <= H:
                const[base:base + n] = DxA[k - 1, i]
            for j in range(max(0, k - 1 - H), min(H, k - 1)):
                s = k - j - 2
                cols = j * m * n
                for c in range(n):
                    E[base + c, cols + c:cols + m * n:n] = DxAB[s, i]
            for c in range(n):
                group_id[base + c] = i
                origin_aux.append(("state", i, k, c))
            a += n
    for i in range(k_x):
        group_coeff[i] = constraints.w_max
        group_bound[i] = constraints.d_x[i] - eps_x

    # Action rows: aux (j_row, k, c) carries (D_{u,j}' M[k])_c.
    for j_row in range(k_u):
        for k in range(H):
            base = a
            cols = k * m * n
            for c in range(n):
                E[base + c, cols + c:cols + m * n:n] = constraints.D_u[j_row]
                group_id[base + c] = k_x + j_row
                origin_aux.append(("action", j_row, k + 1, c))
            a += n
    for j_row in range(k_u):
        group_coeff[k_x + j_row] = constraints.w_max
        group_bound[k_x + j_row] = constraints.d_u[j_row] - eps_u

    # M_H box rows: aux (k, row, c) carries M[k][row, c].
    bounds = box_bounds(H, n, cert)
    g = k_x + k_u
    for k in range(H):
        for row in range(m):
            for c in range(n):
                E[a, k * m * n + row * n + c] = 1.0
                group_id[a] = g
                origin_aux.append(("box", k + 1, row, c))
                a += 1
            group_coeff[g] = 1.0
            group_bound[g] = bounds[k]
            g += 1

    structure = SafeSetStructure(E=E, const=const, group_id=group_id,
                                 group_coeff=group_coeff, group_bound=group_bound)
    Gmat, h = structure.assemble()
    row_origin = [("link_upper",) + o for o in origin_aux] \
        + [("link_lower",) + o for o in origin_aux] \
        + [("sum_state", i) for i in range(k_x)] \
        + [("sum_action", j) for j in range(k_u)] \
        + [("sum_box", k + 1, row) for k in range(H) for row in range(m)]
    state_rows = np.arange(2 * n_aux, 2 * n_aux + k_x)
    return SafePolicyPolytope(
        structure=structure, G=Gmat, h=h, row_origin=row_origin,
        theta_hat=theta_hat, eps_x=eps_x, eps_u=eps_u, H=H, m=m, n=n,
        constraints=constraints, cert=cert, state_sum_rows=state_rows)


# ---------------------------------------------------------------------------
# interior-point solver
# ---------------------------------------------------------------------------

@dataclass
class QuadObjective:
    """0.5 v' P_pol v + q_pol' v + const on policy coords, ridge on auxiliaries."""

    P_pol: np.ndarray
    q_pol: np.ndarray
    const: float = 0.0
    aux_ridge: float = 1e-8

    def apply(self, x: np.ndarray, n_policy: int) -> np.ndarray:
        out = np.empty_like(x)
        out[:n_policy] = self.P_pol @ x[:n_policy] + self.q_pol
        out[n_policy:] = self.aux_ridge * x[n_policy:]
        return out

    def value(self, x: np.ndarray, n_policy: int) -> float:
        v = x[:n_policy]
        return float(0.5 * v @ self.P_pol @ v + self.q_pol @ v + self.const
                     + 0.5 * self.aux_ridge * x[n_policy:] @ x[n_policy:])


@dataclass
class QpSolution:
    x: np.ndarray
    policy: DapPolicy | None
    objective: float
    kkt: dict
    iterations: int
    status: str
    lam: np.ndarray | None = None


def _structured_kkt_factory(obj: QuadObjective, st: SafeSetStructure):
    """KKT solver exploiting the canonical row layout (disjoint sum groups)."""
    npol, na, ng = st.n_policy, st.n_aux, st.n_groups
    E = st.E
    gid = st.group_id
    coeff2 = st.group_coeff ** 2

    def factor(W: np.ndarray):
        W = np.clip(W, 0.0, 1e14)
        W1 = W[:na]
        W2 = W[na:2 * na]
        W3 = W[2 * na:]
        D = obj.aux_ridge + W1 + W2                    # diag of aux block
        lam = coeff2 * W3                              # rank-1 weights per group
        Dinv = 1.0 / D
        gsum = np.bincount(gid, weights=Dinv, minlength=ng)
        woodbury = lam / (1.0 + lam * gsum)            # (ng,)

        def K22_solve(b2):
            y = Dinv * b2
            grp = np.bincount(gid, weights=y, minlength=ng)
            return y - Dinv * (woodbury[gid] * grp[gid])

        Wsum = W1 + W2
        EW = E * Wsum[:, None]
        K11 = obj.P_pol + E.T @ EW
        Cw = (W2 - W1)                                 # cross: C = E' diag(W2-W1)
        # Schur complement K11 - C K22^{-1} C'
        CD = E.T * (Cw * Dinv)[None, :]                # npol x na
        term1 = CD @ (E * Cw[:, None])                 # C D^{-1} C'
        U = np.zeros((npol, ng))
        np.add.at(U.T, gid, (E * (Cw * Dinv)[:, None]))
        term2 = (U * woodbury[None, :]) @ U.T
        Ks = K11 - term1 + term2
        try:
            chol = cho_factor(Ks + 1e-13 * np.eye(npol), lower=True)
        except np.linalg.LinAlgError:
            chol = cho_factor(Ks + 1e-8 * np.eye(npol), lower=True)

        def solve(b: np.ndarray) -> np.ndarray:
            b1, b2 = b[:npol], b[npol:]
            rhs1 = b1 - E.T @ (Cw * K22_solve(b2))
            y1 = cho_solve(chol, rhs1)
            y2 = K22_solve(b2 - Cw * (E @ y1))
            return np.concatenate([y1, y2])

        return solve

    return factor


def _dense_kkt_factory(P: np.ndarray, G: np.ndarray):
    nv = P.shape[0]

    def factor(W: np.ndarray):
        W = np.clip(W, 0.0, 1e14)
        K = P + (G.T * W[None, :]) @ G
        jitter = 1e-13 * max(1.0, np.trace(K) / nv)
        for _ in range(4):
            try:
                chol = cho_factor(K + jitter * np.eye(nv), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter *= 1e4
        else:
            raise np.linalg.LinAlgError("KKT factorization failed")
        return lambda b: cho_solve(chol, b)

    return factor


def _max_step(v: np.ndarray, dv: np.ndarray, tau: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, tau * float(np.min(-v[neg] / dv[neg])))


def _ipm(apply_P, q_inf_scale, G, h, kkt_factory, tol, max_iter):
    """Infeasible-start Mehrotra predictor-corrector on min f s.t. Gx <= h."""
    nr, nv = G.shape
    x = np.zeros(nv)
    s = np.maximum(1.0, np.abs(h))
    lam = np.ones(nr)
    h_scale = 1.0 + float(np.max(np.abs(h), initial=0.0))
    best = None
    for it in range(1, max_iter + 1):
        r_d = apply_P(x) + G.T @ lam
        r_p = G @ x + s - h
        mu = float(s @ lam) / nr
        rd_inf = float(np.max(np.abs(r_d)))
        rp_inf = float(np.max(np.abs(r_p)))
        if best is None or rp_inf + mu < best[0]:
            best = (rp_inf + mu, x.copy(), lam.copy(), s.copy(), it)
        if rp_inf <= tol * h_scale and rd_inf <= tol * q_inf_scale and mu <= tol:
            return x, lam, s, it, True
        if not (np.isfinite(mu) and np.isfinite(rd_inf) and np.isfinite(rp_inf)) \
                or mu > 1e16 or float(np.max(lam)) > 1e18:
            break
        try:
            solve = kkt_factory(lam / s)
        except np.linalg.LinAlgError:
            break
        # affine-scaling predictor
        rc = s * lam
        rhs = -r_d + G.T @ (rc / s - (lam / s) * r_p)
        dx = solve(rhs)
        ds = -r_p - G @ dx
        dlam = (-rc - lam * ds) / s
        a_p = _max_step(s, ds, 1.0)
        a_d = _max_step(lam, dlam, 1.0)
        mu_aff = float((s + a_p * ds) @ (lam + a_d * dlam)) / nr
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
        # corrector
        rc = s * lam + ds * dlam - sigma * mu
        rhs = -r_d + G.T @ (rc / s - (lam / s) * r_p)
        dx = solve(rhs)
        ds = -r_p - G @ dx
        dlam = (-rc - lam * ds) / s
        a_p = _max_step(s, ds, 0.995)
        a_d = _max_step(lam, dlam, 0.995)
        alpha = min(a_p, a_d)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(ds))
                and np.all(np.isfinite(dlam))):
            break
        x += alpha * dx
        s += alpha * ds
        lam += alpha * dlam
    _, x, lam, s, it = best
    return x, lam, s, max_iter, False


def kkt_residuals(obj: QuadObjective, G: np.ndarray, h: np.ndarray,
                  x: np.ndarray, lam: np.ndarray, n_policy: int) -> dict:
    """Freshly computed KKT residuals (stationarity, primal, complementarity)."""
    grad = obj.apply(x, n_policy)
    slack = h - G @ x
    return {
        "stationarity": float(np.max(np.abs(grad + G.T @ lam))),
        "primal": float(np.max(np.maximum(-slack, 0.0), initial=0.0)),
        "complementarity": float(np.abs(lam @ slack)),
    }


def _elastic_min_violation(G: np.ndarray, h: np.ndarray
                           ) -> tuple[np.ndarray, float]:
    """Feasibility certificate: minimize sum(xi) s.t. Gx - xi <= h, xi >= 0.

    A plain LP, always feasible; the optimum is zero iff {Gx <= h} is
    nonempty, and the x part is a witness in that case.
    """
    from scipy.optimize import linprog
    nr, nv = G.shape
    A_ub = np.hstack([G, -np.eye(nr)])
    c = np.concatenate([np.zeros(nv), np.ones(nr)])
    bounds = [(None, None)] * nv + [(0, None)] * nr
    res = linprog(c, A_ub=A_ub, b_ub=h, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"elastic feasibility LP failed: {res.message}")
    x = res.x[:nv]
    viol = float(np.max(np.maximum(G @ x - h, 0.0), initial=0.0))
    return x, viol


def solve_qp(objective: QuadObjective, polytope: SafePolicyPolytope,
             tol: float = 1e-8, max_iter: int = 200,
             feas_tol: float = 1e-7) -> QpSolution:
    """Minimize the quadratic over the polytope; statuses per contract.

    status == "optimal" guarantees KKT residuals <= tol (re-verified) and
    membership within tol. Infeasibility is certified by an elastic solve.
    """
    st = polytope.structure
    q_scale = 1.0 + float(np.max(np.abs(objective.q_pol), initial=0.0))
    apply_P = lambda x: objective.apply(x, st.n_policy)
    factory = _structured_kkt_factory(objective, st)
    x, lam, s, iters, converged = _ipm(apply_P, q_scale, polytope.G, polytope.h,
                                       factory, tol, max_iter)
    if not converged:
        _, viol = _elastic_min_violation(polytope.G, polytope.h)
        if viol > feas_tol:
            return QpSolution(x=x, policy=None, objective=np.inf,
                              kkt=kkt_residuals(objective, polytope.G, polytope.h,
                                                x, lam, st.n_policy),
                              iterations=iters, status="infeasible", lam=lam)
        return QpSolution(x=x,
                          policy=DapPolicy.from_vec(x[:st.n_policy], polytope.H,
                                                    polytope.m, polytope.n),
                          objective=objective.value(x, st.n_policy),
                          kkt=kkt_residuals(objective, polytope.G, polytope.h,
                                            x, lam, st.n_policy),
                          iterations=iters, status="max-iterations", lam=lam)
    kkt = kkt_residuals(objective, polytope.G, polytope.h, x, lam, st.n_policy)
    policy = DapPolicy.from_vec(x[:st.n_policy], polytope.H, polytope.m, polytope.n)
    return QpSolution(x=x, policy=policy,
                      objective=objective.value(x, st.n_policy), kkt=kkt,
                      iterations=iters, status="optimal", lam=lam)


def check_feasible(polytope: SafePolicyPolytope, eps0: float = 0.0,
                   tol: float = 1e-8) -> tuple[bool, DapPolicy | None]:
    """Feasibility probe: nearest-to-zero policy with state rows tightened by eps0."""
    if eps0 < 0:
        raise ValueError("eps0 must be nonnegative")
    h = polytope.h.copy()
    h[polytope.state_sum_rows] -= eps0
    st = polytope.structure
    obj = QuadObjective(P_pol=np.eye(st.n_policy), q_pol=np.zeros(st.n_policy))
    factory = _structured_kkt_factory(obj, st)
    apply_P = lambda x: obj.apply(x, st.n_policy)
    x, lam, s, iters, converged = _ipm(apply_P, 1.0, polytope.G, h, factory,
                                       tol, 200)
    if converged:
        return True, DapPolicy.from_vec(x[:st.n_policy], polytope.H,
                                        polytope.m, polytope.n)
    xe, viol = _elastic_min_violation(polytope.G, h)
    if viol > 1e-7:
        return False, None
    return True, DapPolicy.from_vec(xe[:st.n_policy], polytope.H, polytope.m,
                                    polytope.n)


def _restricted_structure(polytope: SafePolicyPolytope, n_policy_new: int
                          ) -> SafeSetStructure:
    """Freeze policy blocks beyond the restricted length at zero."""
    st = polytope.structure
    return SafeSetStructure(E=st.E[:, :n_policy_new], const=st.const,
                            group_id=st.group_id, group_coeff=st.group_coeff,
                            group_bound=st.group_bound)


def _merge_structures(a: SafeSetStructure, b: SafeSetStructure) -> SafeSetStructure:
    assert a.n_policy == b.n_policy
    return SafeSetStructure(
        E=np.vstack([a.E, b.E]),
        const=np.concatenate([a.const, b.const]),
        group_id=np.concatenate([a.group_id, b.group_id + a.n_groups]),
        group_coeff=np.concatenate([a.group_coeff, b.group_coeff]),
        group_bound=np.concatenate([a.group_bound, b.group_bound]))


def find_mid_policy(policy_a: DapPolicy, omega_a: SafePolicyPolytope,
                    policy_b: DapPolicy, omega_b: SafePolicyPolytope,
                    tol: float = 1e-8) -> DapPolicy:
    """Intermediate policy in Omega_a ∩ Omega_b.

    Minimizes ||M - M_a||_F^2 + ||M - M_b||_F^2 over the intersection
    (strictly convex, so unique). Policies are compared after padding to the
    longer memory; the intersection itself lives in the shorter one, since a
    member of the shorter set has zero blocks beyond its memory.
    """
    H_lo = min(omega_a.H, omega_b.H)
    m, n = omega_a.m, omega_a.n
    d = H_lo * m * n
    st = _merge_structures(_restricted_structure(omega_a, d),
                           _restricted_structure(omega_b, d))
    G, h = st.assemble()
    a = pad_policy(policy_a, H_lo).M[:H_lo].reshape(-1) if policy_a.H < H_lo \
        else policy_a.M[:H_lo].reshape(-1)
    b = pad_policy(policy_b, H_lo).M[:H_lo].reshape(-1) if policy_b.H < H_lo \
        else policy_b.M[:H_lo].reshape(-1)
    obj = QuadObjective(P_pol=4.0 * np.eye(d), q_pol=-2.0 * (a + b),
                        const=float(a @ a + b @ b))
    factory = _structured_kkt_factory(obj, st)
    apply_P = lambda x: obj.apply(x, d)
    x, lam, s, iters, converged = _ipm(apply_P, 1.0 + np.max(np.abs(obj.q_pol)),
                                       G, h, factory, tol, 200)
    if not converged:
        xe, viol = _elastic_min_violation(G, h)
        if viol > 1e-7:
            raise MidPolicyInfeasibleError(
                f"Omega ∩ Omega' empty (min violation {viol:.3e}); "
                f"eps_x = {omega_a.eps_x:.4g}/{omega_b.eps_x:.4g}, "
                f"eps_u = {omega_a.eps_u:.4g}/{omega_b.eps_u:.4g}",
                max_violation=viol, polytope=(omega_a, omega_b))
        x = np.concatenate([xe[:d], st.aux_values(xe[:d])])
    mid = DapPolicy.from_vec(x[:d], H_lo, m, n)
    return mid


@dataclass
class RobustCeResult:
    policy: DapPolicy
    polytope: SafePolicyPolytope
    solution: QpSolution
    bundle: TighteningBundle


def build_and_solve_robust_ce(theta_hat: SystemModel, r: float, eta_bar: float,
                              H: int, delta_M: float,
                              inputs: TighteningInputs,
                              constraints: ConstraintSpec,
                              cert: StabilityCertificate,
                              Q: np.ndarray, R: np.ndarray, Sigma_w: np.ndarray,
                              tol: float = 1e-8) -> RobustCeResult:
    """The robust certainty-equivalent program.

    Minimizes f(M; theta_hat) over Omega(theta_hat, eps_x, eps_u) with
    eps_u = eps_eta_u(eta_bar) and
    eps_x = eps_theta(r) + eps_eta_x(eta_bar) + eps_H(H) + eps_v(delta_M, H).
    """
    bundle = compute_bundle(inputs, H, delta_M, r, eta_bar)
    if not np.isfinite(bundle.eps_x):
        raise RobustCeInfeasibleError(
            "tightening is infinite (uncapped model-error radius)", bundle=bundle)
    polytope = build_safe_set(theta_hat, bundle.eps_x, bundle.eps_u, H,
                              constraints, cert)
    P_pol, q_pol, c0 = quadratic_objective(theta_hat, Q, R, Sigma_w, H)
    obj = QuadObjective(P_pol=P_pol, q_pol=q_pol, const=c0)
    sol = solve_qp(obj, polytope, tol=tol)
    if sol.status == "infeasible":
        raise RobustCeInfeasibleError(
            f"robust CE infeasible at eps_x={bundle.eps_x:.4g}, "
            f"eps_u={bundle.eps_u:.4g}, H={H}",
            max_violation=None, polytope=polytope, bundle=bundle)
    return RobustCeResult(policy=sol.policy, polytope=polytope, solution=sol,
                          bundle=bundle)


def dump_qp(path, objective: QuadObjective, polytope: SafePolicyPolytope):
    """Plain numeric text dump of (P, q, G, h) for external cross-checking."""
    st = polytope.structure
    nv = polytope.n_vars
    with open(path, "w") as f:
        f.write(f"# quadratic program: n_vars {nv} n_policy {st.n_policy} "
                f"n_rows {polytope.G.shape[0]}\n")
        f.write("P\n")
        for i in range(st.n_policy):
            f.write(" ".join(f"{v:.17g}" for v in objective.P_pol[i]) + "\n")
        f.write(f"aux_ridge {objective.aux_ridge:.17g}\n")
        f.write("q\n")
        f.write(" ".join(f"{v:.17g}" for v in objective.q_pol) + "\n")
        f.write("G\n")
        for row in polytope.G:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        f.write("h\n")
        f.write(" ".join(f"{v:.17g}" for v in polytope.h) + "\n")
