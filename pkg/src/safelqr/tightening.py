"""Constraint-tightening calculus for robust safe policy sets.

Each tightening term budgets one error source in the state-constraint
decomposition of a time-varying approximate DAP:

  eps_H      history truncation            ||D_x|| kappa x_max (1-gamma)^H
  eps_v      policy variation              ||D_x|| w_max kappa kappa_B / gamma^2 * sqrt(mnH) Delta_M
  eps_what   disturbance-estimate error    ||D_x|| z_max kappa / gamma * r
  eps_thetahat  constraint-function shift  5 kappa^4 kappa_B ||D_x|| w_max / gamma^3 * sqrt(mn) r
  eps_theta  model error (sum of the two)
  eps_eta_x  excitation through the state  ||D_x|| kappa kappa_B / gamma * sqrt(m) eta_bar
  eps_eta_u  excitation on the action      ||D_u|| eta_bar
  eps_P      linear-policy-to-DAP gap      ||D_x|| kappa (b_x + sqrt(n) x_max) (1-gamma)^H

The robust program tightens state rows by
eps_x = eps_theta + eps_eta_x + eps_H + eps_v and action rows by eps_eta_u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ConstraintSpec, StabilityCertificate


def almost_sure_state_bound(cert: StabilityCertificate, w_max: float,
                            n: int, m: int) -> float:
    """b_x with ||x_t||_2 <= b_x for all t, all box disturbances.

    Valid for any in-box DAP with H_0 >= log(2 kappa)/log(1/(1-gamma)) and
    excitation level <= w_max / kappa_B.
    """
    k, g, kB = cert.kappa, cert.gamma, cert.kappa_B
    return 4.0 * math.sqrt(n) * k * w_max / g \
        + 4.0 * math.sqrt(m * n) * k ** 3 * kB * w_max / g ** 2


@dataclass(frozen=True)
class TighteningInputs:
    """Problem constants every tightening term is a polynomial of."""

    cert: StabilityCertificate
    norm_Dx_inf: float
    norm_Du_inf: float
    w_max: float
    x_max: float
    u_max: float
    n: int
    m: int
    slack_alpha: float = 1.0  # experimental global scaling; 1.0 is analysis-faithful

    def __post_init__(self):
        if not (0.0 < self.slack_alpha <= 1.0):
            raise ValueError("slack_alpha must lie in (0, 1]")
        for name in ("norm_Dx_inf", "norm_Du_inf", "x_max", "u_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def z_max(self) -> float:
        return math.hypot(self.x_max, self.u_max)

    @staticmethod
    def from_constraints(constraints: ConstraintSpec, cert: StabilityCertificate,
                         slack_alpha: float = 1.0) -> "TighteningInputs":
        return TighteningInputs(
            cert=cert, norm_Dx_inf=constraints.norm_Dx_inf,
            norm_Du_inf=constraints.norm_Du_inf, w_max=constraints.w_max,
            x_max=constraints.x_max, u_max=constraints.u_max,
            n=constraints.n, m=constraints.m, slack_alpha=slack_alpha)

    def c1(self) -> float:
        """Coarse model-error constant: eps_theta(r) <= c1 sqrt(mn) r."""
        k, g, kB = self.cert.kappa, self.cert.gamma, self.cert.kappa_B
        return self.norm_Dx_inf * self.z_max * k / g \
            + 5.0 * k ** 4 * kB * self.norm_Dx_inf * self.w_max / g ** 3

    def c2(self) -> float:
        """eps_eta_x(eta_bar) = c2 sqrt(m) eta_bar."""
        k, g, kB = self.cert.kappa, self.cert.gamma, self.cert.kappa_B
        return self.norm_Dx_inf * k * kB / g

    def c3(self) -> float:
        """eps_eta_u(eta_bar) = c3 eta_bar."""
        return self.norm_Du_inf

    def c_v(self) -> float:
        """eps_v = c_v sqrt(mnH) Delta_M."""
        k, g, kB = self.cert.kappa, self.cert.gamma, self.cert.kappa_B
        return self.norm_Dx_inf * self.w_max * k * kB / g ** 2

    def b_x(self) -> float:
        return almost_sure_state_bound(self.cert, self.w_max, self.n, self.m)


@dataclass(frozen=True)
class TighteningBundle:
    """All tightening terms for one (H, Delta_M, r, eta_bar) working point."""

    eps_H: float
    eps_v: float
    eps_what: float
    eps_thetahat: float
    eps_eta_x: float
    eps_eta_u: float
    eps_P: float
    H: int
    delta_M: float
    r: float
    eta_bar: float

    @property
    def eps_theta(self) -> float:
        return self.eps_what + self.eps_thetahat

    @property
    def eps_x(self) -> float:
        """State-row tightening of the robust CE program."""
        return self.eps_theta + self.eps_eta_x + self.eps_H + self.eps_v

    @property
    def eps_u(self) -> float:
        return self.eps_eta_u

    def as_dict(self) -> dict:
        return {
            "eps_H": self.eps_H, "eps_v": self.eps_v, "eps_what": self.eps_what,
            "eps_thetahat": self.eps_thetahat, "eps_theta": self.eps_theta,
            "eps_eta_x": self.eps_eta_x, "eps_eta_u": self.eps_eta_u,
            "eps_P": self.eps_P, "eps_x": self.eps_x, "eps_u": self.eps_u,
            "H": self.H, "delta_M": self.delta_M, "r": self.r,
            "eta_bar": self.eta_bar,
        }


def compute_bundle(inputs: TighteningInputs, H: int, delta_M: float,
                   r: float, eta_bar: float) -> TighteningBundle:
    """Evaluate every tightening formula at one parameter point.

    `r` may be +inf (no usable model-error certificate), which propagates to
    eps_theta; callers that need a finite program cap r first.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    if delta_M < 0 or r < 0 or eta_bar < 0:
        raise ValueError("delta_M, r, eta_bar must be nonnegative")
    k, g, kB = inputs.cert.kappa, inputs.cert.gamma, inputs.cert.kappa_B
    dx, du = inputs.norm_Dx_inf, inputs.norm_Du_inf
    n, m = inputs.n, inputs.m
    a = inputs.slack_alpha
    decay = (1.0 - g) ** H
    return TighteningBundle(
        eps_H=a * dx * k * inputs.x_max * decay,
        eps_v=a * dx * inputs.w_max * k * kB / g ** 2 * math.sqrt(m * n * H) * delta_M,
        eps_what=a * dx * inputs.z_max * k / g * r,
        eps_thetahat=a * 5.0 * k ** 4 * kB * dx * inputs.w_max / g ** 3
        * math.sqrt(m * n) * r,
        eps_eta_x=a * dx * k * kB / g * math.sqrt(m) * eta_bar,
        eps_eta_u=a * du * eta_bar,
        eps_P=a * dx * k * (inputs.b_x() + math.sqrt(n) * inputs.x_max) * decay,
        H=H, delta_M=delta_M, r=r, eta_bar=eta_bar)


def initial_feasibility_margin(bundle: TighteningBundle, eps0: float,
                               eps_F_x: float, eps_F_u: float
                               ) -> tuple[bool, np.ndarray]:
    """Sufficient condition for strict initial feasibility.

    `bundle` must be the episode-0 bundle (so bundle.eps_theta is the term at
    r_ini). Checks, non-strictly,
        eps_x^(0) + eps0 <= eps_F_x - eps_theta(r_ini) - eps_P
        eps_u^(0)        <= eps_F_u - eps_P
    and returns the two slacks for diagnostics.
    """
    slacks = np.array([
        eps_F_x - bundle.eps_theta - bundle.eps_P - bundle.eps_x - eps0,
        eps_F_u - bundle.eps_P - bundle.eps_u,
    ])
    return bool(np.all(slacks >= 0.0)), slacks


def check_monotone_schedule(eta_bars, Hs, delta_Ms, rs, eps0: float | None = None,
                            c1: float | None = None, m: int | None = None,
                            n: int | None = None,
                            rtol: float = 1e-9) -> tuple[bool, int | None]:
    """Monotone-parameter conditions for recursive feasibility.

    Requires, across episodes e: 1/H^(e), sqrt(H^(e)) Delta_M^(e) and
    eta_bar^(e) non-increasing from e = 0, and r^(e) non-increasing from
    e = 1 (r^(0) = r_ini is the prior radius, not part of the estimated
    sequence). When (eps0, c1, m, n) are supplied, additionally requires
    r^(1) <= eps0 / (c1 sqrt(mn)). Returns (ok, first violating episode).
    """
    eta_bars = np.asarray(eta_bars, dtype=float)
    Hs = np.asarray(Hs, dtype=float)
    delta_Ms = np.asarray(delta_Ms, dtype=float)
    rs = np.asarray(rs, dtype=float)
    N = len(Hs)
    if N < 1:
        raise ValueError("need at least one episode")
    sqrtH_delta = np.sqrt(Hs) * delta_Ms
    for e in range(1, N):
        tol_eta = rtol * max(1.0, abs(eta_bars[e - 1]))
        if eta_bars[e] > eta_bars[e - 1] + tol_eta:
            return False, e
        if Hs[e] < Hs[e - 1]:
            return False, e
        if sqrtH_delta[e] > sqrtH_delta[e - 1] * (1.0 + rtol) + rtol:
            return False, e
        if e >= 2 and rs[e] > rs[e - 1] * (1.0 + rtol):
            return False, e
    if eps0 is not None and N >= 2:
        if c1 is None or m is None or n is None:
            raise ValueError("eps0 check needs c1, m, n")
        if rs[1] > eps0 / (c1 * math.sqrt(m * n)) * (1.0 + rtol):
            return False, 1
    return True, None
