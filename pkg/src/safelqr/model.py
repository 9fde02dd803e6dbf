"""Plant, constraint, and noise models for constrained LQR.

The plant is x_{t+1} = A x_t + B u_t + w_t with polytopic constraints
D_x x <= d_x, D_u u <= d_u and a box-bounded disturbance ||w||_inf <= w_max.
Stability is tracked quantitatively: a matrix A is (kappa, gamma)-stable if
||A^t||_2 <= kappa (1 - gamma)^t for all t >= 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


class DimensionError(ValueError):
    """Raised when operands have inconsistent dimensions."""


class UnboundedPolytopeError(ValueError):
    """Raised when a constraint polytope fails the boundedness requirement."""


@dataclass(frozen=True)
class SystemModel:
    """Linear plant parameters theta = (A, B).

    Used both for the true plant and for estimates; `A` is n x n, `B` is n x m.
    """

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B rows {B.shape[0]} != state dim {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("A, B must be finite-valued")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def stacked(self) -> np.ndarray:
        """The n x (n+m) matrix (A B), the object the Frobenius geometry lives on."""
        return np.hstack([self.A, self.B])

    @staticmethod
    def from_stacked(theta: np.ndarray, n: int) -> "SystemModel":
        theta = np.asarray(theta, dtype=float)
        return SystemModel(A=theta[:, :n], B=theta[:, n:])

    def distance(self, other: "SystemModel") -> float:
        return float(np.linalg.norm(self.stacked() - other.stacked()))


@dataclass(frozen=True)
class StabilityCertificate:
    """(kappa, gamma) decay certificate plus an input-gain bound kappa_B.

    kappa_B upper-bounds ||B||_2 over every model the certificate is applied
    to (the whole initial uncertainty set).
    """

    kappa: float
    gamma: float
    kappa_B: float

    def __post_init__(self):
        if self.kappa < 1.0:
            raise ValueError("kappa must be >= 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if self.kappa_B <= 0.0:
            raise ValueError("kappa_B must be positive")


def verify_kappa_gamma(A: np.ndarray, cert: StabilityCertificate,
                       horizon: int = 200) -> tuple[bool, int | None]:
    """Check ||A^t||_2 <= kappa (1-gamma)^t for t = 0..horizon.

    Returns (ok, first violating power). This is a finite check of an
    infinite property; the horizon truncation is the caller's concern.
    Default horizon 200: (1-gamma)^200 underflows practical tolerances
    for gamma >= 0.05.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = np.eye(A.shape[0])
    decay = 1.0 - cert.gamma
    bound = cert.kappa
    for t in range(horizon + 1):
        if np.linalg.norm(P, 2) > bound * (1.0 + 1e-12) + 1e-300:
            return False, t
        P = P @ A
        bound *= decay
    return True, None


def step_plant(model: SystemModel, x: np.ndarray, u: np.ndarray,
               w: np.ndarray) -> np.ndarray:
    """One step of x_{t+1} = A x + B u + w."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if x.shape[0] != model.n or u.shape[0] != model.m or w.shape[0] != model.n:
        raise DimensionError(
            f"step_plant: got x{x.shape}, u{u.shape}, w{w.shape} for "
            f"n={model.n}, m={model.m}")
    return model.A @ x + model.B @ u + w


def project_box(v: np.ndarray, w_max: float) -> np.ndarray:
    """Coordinatewise clamp onto the box {||v||_inf <= w_max}."""
    if w_max <= 0:
        raise ValueError("w_max must be positive")
    return np.clip(np.asarray(v, dtype=float), -w_max, w_max)


def _coordinate_bounds(D: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Per-coordinate bounds c_i = max |x_i| over {D x <= d} via LPs.

    Raises UnboundedPolytopeError if any direction is unbounded.
    """
    n = D.shape[1]
    c = np.zeros(n)
    for i in range(n):
        for sign in (1.0, -1.0):
            obj = np.zeros(n)
            obj[i] = -sign  # linprog minimizes
            res = linprog(obj, A_ub=D, b_ub=d, bounds=[(None, None)] * n,
                          method="highs")
            if res.status == 3:
                raise UnboundedPolytopeError(
                    f"polytope unbounded along coordinate {i}")
            if res.status != 0:
                raise ValueError(f"coordinate LP failed: {res.message}")
            c[i] = max(c[i], abs(res.x[i]))
    return c


def polytope_norm_bound(D: np.ndarray, d: np.ndarray,
                        max_vertex_combos: int = 20000) -> float:
    """Upper bound on max ||x||_2 over the polytope {D x <= d}.

    Exact via vertex enumeration when the number of row n-subsets is small;
    otherwise the l2 norm of the per-coordinate LP bounds (a valid upper
    bound, which only makes downstream tightening conservative).
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    k, n = D.shape
    coord = _coordinate_bounds(D, d)  # also certifies boundedness
    from math import comb
    if n <= k and comb(k, n) <= max_vertex_combos:
        best = 0.0
        for rows in itertools.combinations(range(k), n):
            sub = D[list(rows)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            v = np.linalg.solve(sub, d[list(rows)])
            if np.all(D @ v <= d + 1e-9):
                best = max(best, float(np.linalg.norm(v)))
        if best > 0.0:
            return best
    return float(np.linalg.norm(coord))


@dataclass(frozen=True)
class ConstraintSpec:
    """State/action polytopes D_x x <= d_x, D_u u <= d_u and the noise box.

    d_x, d_u must be elementwise positive (origin strictly feasible) and both
    polytopes bounded; x_max/u_max are l2 radii (upper bounds), z_max the
    radius of the stacked (x, u) vector.
    """

    D_x: np.ndarray
    d_x: np.ndarray
    D_u: np.ndarray
    d_u: np.ndarray
    w_max: float
    x_max: float = field(init=False)
    u_max: float = field(init=False)
    z_max: float = field(init=False)

    def __post_init__(self):
        for name in ("D_x", "D_u"):
            object.__setattr__(self, name,
                               np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("d_x", "d_u"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if self.D_x.shape[0] != self.d_x.shape[0]:
            raise DimensionError("D_x / d_x row mismatch")
        if self.D_u.shape[0] != self.d_u.shape[0]:
            raise DimensionError("D_u / d_u row mismatch")
        if not (np.all(self.d_x > 0) and np.all(self.d_u > 0)):
            raise ValueError("d_x and d_u must be elementwise positive")
        if self.w_max < 0:
            raise ValueError("w_max must be nonnegative")
        object.__setattr__(self, "x_max", polytope_norm_bound(self.D_x, self.d_x))
        object.__setattr__(self, "u_max", polytope_norm_bound(self.D_u, self.d_u))
        object.__setattr__(self, "z_max",
                           float(np.hypot(self.x_max, self.u_max)))

    @property
    def n(self) -> int:
        return self.D_x.shape[1]

    @property
    def m(self) -> int:
        return self.D_u.shape[1]

    @property
    def k_x(self) -> int:
        return self.D_x.shape[0]

    @property
    def k_u(self) -> int:
        return self.D_u.shape[0]

    @property
    def norm_Dx_inf(self) -> float:
        """Induced inf-norm of D_x (max row l1 sum)."""
        return float(np.abs(self.D_x).sum(axis=1).max())

    @property
    def norm_Du_inf(self) -> float:
        return float(np.abs(self.D_u).sum(axis=1).max())


@dataclass(frozen=True)
class MembershipReport:
    """Per-row slacks d - D v and violation flags for one (x, u) pair."""

    slack_x: np.ndarray
    slack_u: np.ndarray

    @property
    def x_ok(self) -> bool:
        return bool(np.all(self.slack_x >= 0.0))

    @property
    def u_ok(self) -> bool:
        return bool(np.all(self.slack_u >= 0.0))

    @property
    def ok(self) -> bool:
        return self.x_ok and self.u_ok


def check_membership(constraints: ConstraintSpec, x: np.ndarray,
                     u: np.ndarray) -> MembershipReport:
    """Exact slacks of (x, u) against the state/action polytopes."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != constraints.n or u.shape[0] != constraints.m:
        raise DimensionError("check_membership: dimension mismatch")
    return MembershipReport(slack_x=constraints.d_x - constraints.D_x @ x,
                            slack_u=constraints.d_u - constraints.D_u @ u)


def _uniform_box_anticoncentration(dim: int, scale: float) -> tuple[float, float]:
    # (s, p) = (scale/2, 1/4) is exact for coordinate directions in 1-D; for
    # dim >= 2 the diagonal direction only reaches p ~ 0.209, so the default
    # drops to 3/16 (Monte-Carlo validated in the test suite).
    p = 0.25 if dim == 1 else 3.0 / 16.0
    return 0.5 * scale, p


def _clipped_normal_variance(sigma: float, c: float) -> float:
    # Var of N(0, sigma^2) clipped to [-c, c]; symmetric, so mean stays 0.
    from math import erf, exp, pi, sqrt
    a = c / sigma
    phi = exp(-0.5 * a * a) / sqrt(2.0 * pi)
    Phi = 0.5 * (1.0 + erf(a / sqrt(2.0)))
    inner = (2.0 * Phi - 1.0) - 2.0 * a * phi
    tail = 2.0 * (1.0 - Phi)
    return sigma * sigma * inner + c * c * tail


@dataclass(frozen=True)
class DisturbanceModel:
    """i.i.d. zero-mean disturbance supported on the box ||w||_inf <= w_max.

    Carries the designer-known covariance Sigma_w (used by the quadratic
    cost), a sub-Gaussian parameter, and (s_w, p_w) anti-concentration
    constants. All constants are overridable; the defaults are validated
    empirically in the test suite.
    """

    kind: str
    n: int
    w_max: float
    sigma_sub: float
    Sigma_w: np.ndarray
    s_w: float
    p_w: float
    trunc_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform-box", "truncated-gaussian"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        S = np.atleast_2d(np.asarray(self.Sigma_w, dtype=float))
        object.__setattr__(self, "Sigma_w", S)
        if not np.allclose(S, S.T):
            raise ValueError("Sigma_w must be symmetric")
        if np.linalg.eigvalsh(S).min() < -1e-12:
            raise ValueError("Sigma_w must be PSD")

    @staticmethod
    def uniform_box(n: int, w_max: float, s_w: float | None = None,
                    p_w: float | None = None) -> "DisturbanceModel":
        s_def, p_def = _uniform_box_anticoncentration(n, w_max)
        return DisturbanceModel(
            kind="uniform-box", n=n, w_max=w_max, sigma_sub=w_max,
            Sigma_w=(w_max ** 2 / 3.0) * np.eye(n),
            s_w=s_def if s_w is None else s_w,
            p_w=p_def if p_w is None else p_w)

    @staticmethod
    def truncated_gaussian(n: int, w_max: float, sigma: float | None = None,
                           s_w: float | None = None,
                           p_w: float | None = None) -> "DisturbanceModel":
        sigma = 0.5 * w_max if sigma is None else sigma
        var = _clipped_normal_variance(sigma, w_max)
        return DisturbanceModel(
            kind="truncated-gaussian", n=n, w_max=w_max, sigma_sub=w_max,
            Sigma_w=var * np.eye(n),
            s_w=(0.25 * w_max) if s_w is None else s_w,
            p_w=0.25 if p_w is None else p_w,
            trunc_sigma=sigma)


def sample_disturbance(dist: DisturbanceModel, rng: np.random.Generator) -> np.ndarray:
    """Draw one w_t; every sample lies in the box by construction."""
    if dist.w_max == 0.0:
        return np.zeros(dist.n)
    if dist.kind == "uniform-box":
        return rng.uniform(-dist.w_max, dist.w_max, size=dist.n)
    return np.clip(rng.normal(0.0, dist.trunc_sigma, size=dist.n),
                   -dist.w_max, dist.w_max)


@dataclass(frozen=True)
class ExcitationModel:
    """Zero-mean exploration noise with unit inf-norm support.

    Samples are scaled by the excitation level eta_bar at sampling time, so
    ||eta_t||_inf <= eta_bar always.
    """

    kind: str
    m: int
    s_eta: float
    p_eta: float
    trunc_sigma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("uniform-box", "truncated-gaussian"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")

    @staticmethod
    def uniform_box(m: int, s_eta: float | None = None,
                    p_eta: float | None = None) -> "ExcitationModel":
        s_def, p_def = _uniform_box_anticoncentration(m, 1.0)
        return ExcitationModel(kind="uniform-box", m=m,
                               s_eta=s_def if s_eta is None else s_eta,
                               p_eta=p_def if p_eta is None else p_eta)

    @staticmethod
    def truncated_gaussian(m: int, sigma: float = 0.5) -> "ExcitationModel":
        return ExcitationModel(kind="truncated-gaussian", m=m, s_eta=0.25,
                               p_eta=0.25, trunc_sigma=sigma)


def sample_excitation(exc: ExcitationModel, eta_bar: float,
                      rng: np.random.Generator) -> np.ndarray:
    if eta_bar < 0:
        raise ValueError("eta_bar must be nonnegative")
    if eta_bar == 0.0:
        return np.zeros(exc.m)
    if exc.kind == "uniform-box":
        return eta_bar * rng.uniform(-1.0, 1.0, size=exc.m)
    unit = np.clip(rng.normal(0.0, exc.trunc_sigma, size=exc.m), -1.0, 1.0)
    return eta_bar * unit


def estimate_anticoncentration(sampler, dim: int, s: float,
                               rng: np.random.Generator,
                               n_directions: int = 1000,
                               n_samples: int = 20000) -> float:
    """Monte-Carlo lower envelope of P(lambda' X >= s) over unit directions.

    Directions include the coordinate axes and the +/-1/sqrt(dim) diagonals,
    which are the empirical worst cases for box-supported noise.
    """
    dirs = rng.normal(size=(n_directions, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    extra = [np.eye(dim), -np.eye(dim),
             np.ones((1, dim)) / np.sqrt(dim), -np.ones((1, dim)) / np.sqrt(dim)]
    dirs = np.vstack([dirs] + extra)
    X = np.stack([sampler(rng) for _ in range(n_samples)])
    hits = (X @ dirs.T >= s).mean(axis=0)
    return float(hits.min())
