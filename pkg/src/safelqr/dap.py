"""Disturbance-action policy algebra.

A DAP with memory H plays u_t = sum_{k=1..H} M[k] w_{t-k}. Under a
time-invariant DAP the state splits as x_t = A^H x_{t-H} + xtilde_t with
xtilde_t = sum_{k=1..2H} Phi_k w_{t-k},
Phi_k = A^{k-1} 1(k<=H) + sum_i A^{i-1} B M[k-i] 1(1 <= k-i <= H).

Worst-case constraint values over box-bounded histories reduce to the
weighted l1 sums g_i^x, g_j^u, and the expected stage cost has the trace
closed form implemented by eval_f.

Vectorization order for policies is fixed: block index k first, then row,
then column (C-order ravel of the (H, m, n) array). The qp module shares it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConstraintSpec, DimensionError, StabilityCertificate, SystemModel


@dataclass(frozen=True)
class DapPolicy:
    """Gain blocks M[1..H], stored as an (H, m, n) array (index k-1 = block k)."""

    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.ndim != 3:
            raise DimensionError(f"policy blocks must be (H, m, n), got {M.shape}")
        object.__setattr__(self, "M", M)

    @property
    def H(self) -> int:
        return self.M.shape[0]

    @property
    def m(self) -> int:
        return self.M.shape[1]

    @property
    def n(self) -> int:
        return self.M.shape[2]

    @staticmethod
    def zero(H: int, m: int, n: int) -> "DapPolicy":
        return DapPolicy(np.zeros((H, m, n)))

    @staticmethod
    def from_vec(vec: np.ndarray, H: int, m: int, n: int) -> "DapPolicy":
        return DapPolicy(np.asarray(vec, dtype=float).reshape(H, m, n))

    def to_vec(self) -> np.ndarray:
        """Flat (H*m*n,) vector: k-major, then row, then column."""
        return self.M.reshape(-1).copy()

    def distance(self, other: "DapPolicy") -> float:
        """Frobenius distance, padding the shorter policy with zero blocks."""
        H = max(self.H, other.H)
        a = pad_policy(self, H).M if self.H < H else self.M
        b = pad_policy(other, H).M if other.H < H else other.M
        return float(np.linalg.norm((a - b).reshape(-1)))


@dataclass(frozen=True)
class PhiMap:
    """The 2H state transfer blocks Phi_k, stored as (2H, n, n)."""

    blocks: np.ndarray

    @property
    def H(self) -> int:
        return self.blocks.shape[0] // 2


def _a_powers(A: np.ndarray, count: int) -> np.ndarray:
    """[I, A, ..., A^{count-1}] as a (count, n, n) array."""
    n = A.shape[0]
    out = np.empty((count, n, n))
    out[0] = np.eye(n)
    for i in range(1, count):
        out[i] = out[i - 1] @ A
    return out


def phi_x(policy: DapPolicy, model: SystemModel) -> PhiMap:
    """All 2H blocks of the state transfer map for a time-invariant policy."""
    H, m, n = policy.H, policy.m, policy.n
    if model.n != n or model.m != m:
        raise DimensionError("phi_x: model/policy dimension mismatch")
    Apow = _a_powers(model.A, H)               # A^0 .. A^{H-1}
    G = Apow @ model.B                          # G[i-1] = A^{i-1} B
    blocks = np.zeros((2 * H, n, n))
    for k in range(1, 2 * H + 1):
        acc = blocks[k - 1]
        if k <= H:
            acc += Apow[k - 1]
        lo = max(1, k - H)
        hi = min(H, k - 1)
        for i in range(lo, hi + 1):
            acc += G[i - 1] @ policy.M[k - i - 1]
    return PhiMap(blocks)


def approx_state(policy: DapPolicy, model: SystemModel,
                 w_hist: np.ndarray) -> np.ndarray:
    """xtilde = sum_k Phi_k w_{t-k}; w_hist is newest first, zero-padded if short."""
    H = policy.H
    w = np.asarray(w_hist, dtype=float).reshape(-1, policy.n)
    if w.shape[0] < 2 * H:
        w = np.vstack([w, np.zeros((2 * H - w.shape[0], policy.n))])
    phi = phi_x(policy, model).blocks
    return np.einsum("kij,kj->i", phi, w[:2 * H])


def approx_state_time_varying(policies_by_lag: list[DapPolicy],
                              model: SystemModel,
                              what_hist: np.ndarray,
                              w_hist: np.ndarray,
                              eta_hist: np.ndarray | None = None) -> np.ndarray:
    """Approximate state for a time-varying approximate DAP.

    policies_by_lag[i-1] is the policy M_{t-i} active i steps ago (i = 1..H_t,
    H_t = len(policies_by_lag)); histories are newest first: what_hist[k-1] is
    the disturbance estimate used at lag k, w_hist[i-1] the true disturbance,
    eta_hist[i-1] the excitation. Matches the time-varying decomposition the
    safety analysis runs on; reduces to approx_state when all policies agree
    and what == w with eta == 0.
    """
    Ht = len(policies_by_lag)
    n, m = model.n, model.m
    Apow = _a_powers(model.A, Ht)
    G = Apow @ model.B
    what = np.asarray(what_hist, dtype=float).reshape(-1, n)
    if what.shape[0] < 2 * Ht:
        what = np.vstack([what, np.zeros((2 * Ht - what.shape[0], n))])
    w = np.asarray(w_hist, dtype=float).reshape(-1, n)
    if w.shape[0] < Ht:
        w = np.vstack([w, np.zeros((Ht - w.shape[0], n))])
    out = np.zeros(n)
    for i in range(1, Ht + 1):
        out += Apow[i - 1] @ w[i - 1]
        Mi = policies_by_lag[i - 1]
        for k in range(i + 1, i + Mi.H + 1):
            if k > 2 * Ht:
                break
            out += G[i - 1] @ (Mi.M[k - i - 1] @ what[k - 1])
    if eta_hist is not None:
        eta = np.asarray(eta_hist, dtype=float).reshape(-1, m)
        for i in range(1, min(Ht, eta.shape[0]) + 1):
            out += G[i - 1] @ eta[i - 1]
    return out


def g_state(policy: DapPolicy, model: SystemModel,
            constraints: ConstraintSpec) -> np.ndarray:
    """Worst case of D_{x,i}' xtilde over box histories, per state row i."""
    phi = phi_x(policy, model).blocks          # (2H, n, n)
    rows = np.abs(constraints.D_x @ phi)       # (2H, k_x, n)
    return rows.sum(axis=(0, 2)) * constraints.w_max


def g_action(policy: DapPolicy, constraints: ConstraintSpec) -> np.ndarray:
    """Worst case of D_{u,j}' u_t over box histories (no excitation), per row j."""
    rows = np.abs(constraints.D_u @ policy.M)  # (H, k_u, n)
    return rows.sum(axis=(0, 2)) * constraints.w_max


def _check_cost_inputs(Q: np.ndarray, R: np.ndarray, Sigma_w: np.ndarray):
    for name, mat, strict in (("Q", Q, True), ("R", R, True), ("Sigma_w", Sigma_w, False)):
        mat = np.atleast_2d(mat)
        if not np.allclose(mat, mat.T, atol=1e-10):
            raise ValueError(f"{name} must be symmetric")
        low = np.linalg.eigvalsh(mat).min()
        if strict and low <= 0:
            raise ValueError(f"{name} must be positive definite")
        if not strict and low < -1e-12:
            raise ValueError(f"{name} must be PSD")


def eval_f(policy: DapPolicy, model: SystemModel, Q: np.ndarray, R: np.ndarray,
           Sigma_w: np.ndarray) -> float:
    """Expected stage cost E[l(xtilde, u)] of the stationary policy.

    Closed form under i.i.d. zero-mean disturbances with covariance Sigma_w:
    sum_k tr(Phi_k' Q Phi_k Sigma_w) + sum_k tr(M[k]' R M[k] Sigma_w).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Sigma_w = np.atleast_2d(np.asarray(Sigma_w, dtype=float))
    _check_cost_inputs(Q, R, Sigma_w)
    phi = phi_x(policy, model).blocks
    state_term = np.einsum("kij,il,klr,rj->", phi, Q, phi, Sigma_w)
    act_term = np.einsum("kij,il,klr,rj->", policy.M, R, policy.M, Sigma_w)
    return float(state_term + act_term)


def pad_policy(policy: DapPolicy, H_new: int) -> DapPolicy:
    """Append zero blocks up to memory H_new; g values and f are unchanged."""
    if H_new < policy.H:
        raise ValueError(f"cannot pad H={policy.H} down to {H_new}")
    if H_new == policy.H:
        return policy
    extra = np.zeros((H_new - policy.H, policy.m, policy.n))
    return DapPolicy(np.concatenate([policy.M, extra], axis=0))


def box_bounds(H: int, n: int, cert: StabilityCertificate) -> np.ndarray:
    """Decaying per-block bounds of the admissible set M_H: 2 sqrt(n) kappa^2 (1-gamma)^{k-1}."""
    k = np.arange(H)
    return 2.0 * np.sqrt(n) * cert.kappa ** 2 * (1.0 - cert.gamma) ** k


def in_box(policy: DapPolicy, cert: StabilityCertificate,
           tol: float = 1e-9) -> bool:
    """Membership in M_H: every block's inf operator norm under its decay bound."""
    row_l1 = np.abs(policy.M).sum(axis=2).max(axis=1)  # (H,)
    return bool(np.all(row_l1 <= box_bounds(policy.H, policy.n, cert) + tol))


def quadratic_objective(model: SystemModel, Q: np.ndarray, R: np.ndarray,
                        Sigma_w: np.ndarray, H: int
                        ) -> tuple[np.ndarray, np.ndarray, float]:
    """eval_f as an explicit quadratic over the flat policy vector.

    Returns (P, q, c0) with f(M) = 0.5 v'Pv + q'v + c0 for v = policy.to_vec().
    P is symmetric PSD (strictly PD on policy coordinates when R, Sigma_w are PD).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Sw = np.atleast_2d(np.asarray(Sigma_w, dtype=float))
    n, m = model.n, model.m
    Apow = _a_powers(model.A, 2 * H)
    G = Apow[:H] @ model.B                      # G[s] = A^s B, s = 0..H-1
    # T_d = sum_a (A^{a+d} B)' Q (A^a B), the only objects the Hessian needs.
    T = np.zeros((H, m, m))
    for dlt in range(H):
        for a in range(H - dlt):
            T[dlt] += G[a + dlt].T @ Q @ G[a]
    nv = H * m * n
    P = np.zeros((nv, nv))
    for j in range(H):
        for jp in range(H):
            dlt = jp - j
            S = T[dlt] if dlt >= 0 else T[-dlt].T
            block = 2.0 * np.kron(S, Sw)
            if j == jp:
                block += 2.0 * np.kron(R, Sw)
            P[j * m * n:(j + 1) * m * n, jp * m * n:(jp + 1) * m * n] = block
    q = np.zeros(nv)
    for j in range(H):
        Y = np.zeros((m, n))
        for k in range(j + 2, H + 1):           # C_k = A^{k-1} exists for k <= H
            Y += G[k - j - 2].T @ Q @ Apow[k - 1] @ Sw
        q[j * m * n:(j + 1) * m * n] = 2.0 * Y.reshape(-1)
    c0 = 0.0
    for k in range(1, H + 1):
        c0 += float(np.trace(Apow[k - 1].T @ Q @ Apow[k - 1] @ Sw))
    P = 0.5 * (P + P.T)
    return P, q, c0
