"""Least-squares model estimation and confidence radii.

The regression is x_{t+1} = theta z_t + w_t over z_t = (x_t; u_t). The
estimate is projected onto the prior Frobenius ball, and the confidence
radius comes from the small-ball (BMSB) least-squares bound with explicit
constants; below the bound's sample floor no radius is certified and
callers fall back to the prior set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import SystemModel


class RankDeficientError(np.linalg.LinAlgError):
    """Unregularized least squares on a singular Gram matrix."""


class SampleFloorError(ValueError):
    """Sample count below the floor required by the error bound."""

    def __init__(self, T_data: int, floor: int):
        super().__init__(f"T_data = {T_data} below the sample floor {floor}")
        self.T_data = T_data
        self.floor = floor


@dataclass
class RegressionDataset:
    """Running sufficient statistics sum z z' and sum x_next z'."""

    n: int
    m: int
    gram: np.ndarray = field(default=None)
    cross: np.ndarray = field(default=None)
    count: int = 0

    def __post_init__(self):
        d = self.n + self.m
        if self.gram is None:
            self.gram = np.zeros((d, d))
        if self.cross is None:
            self.cross = np.zeros((self.n, d))

    def add(self, z: np.ndarray, x_next: np.ndarray):
        z = np.asarray(z, dtype=float).reshape(-1)
        x_next = np.asarray(x_next, dtype=float).reshape(-1)
        self.gram += np.outer(z, z)
        self.cross += np.outer(x_next, z)
        self.count += 1

    def add_pair(self, x: np.ndarray, u: np.ndarray, x_next: np.ndarray):
        self.add(np.concatenate([np.asarray(x, dtype=float).reshape(-1),
                                 np.asarray(u, dtype=float).reshape(-1)]), x_next)

    def merged(self, other: "RegressionDataset") -> "RegressionDataset":
        return RegressionDataset(n=self.n, m=self.m,
                                 gram=self.gram + other.gram,
                                 cross=self.cross + other.cross,
                                 count=self.count + other.count)


@dataclass(frozen=True)
class UncertaintySet:
    """B(theta_hat, radius) ∩ Theta_ini in Frobenius norm on (A B).

    radius may be +inf, meaning no data-driven certificate: the set is then
    the prior ball. effective_radius is the sup distance from the center to
    any member, the quantity robust tightening actually needs.
    """

    center: SystemModel
    radius: float
    theta_ini: SystemModel
    r_ini: float

    @property
    def effective_radius(self) -> float:
        return float(min(self.radius, self.r_ini + self.center.distance(self.theta_ini)))

    def contains(self, theta: SystemModel, tol: float = 1e-12) -> bool:
        return (theta.distance(self.center) <= self.radius + tol
                and theta.distance(self.theta_ini) <= self.r_ini + tol)

    @staticmethod
    def prior(theta_ini: SystemModel, r_ini: float) -> "UncertaintySet":
        return UncertaintySet(center=theta_ini, radius=r_ini,
                              theta_ini=theta_ini, r_ini=r_ini)


def least_squares(data: RegressionDataset, ridge: float = 1e-10) -> SystemModel:
    """theta_tilde = (sum x_next z') (sum z z' + ridge I)^{-1}."""
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    d = data.n + data.m
    A = data.gram + ridge * np.eye(d)
    if ridge == 0.0:
        cond = np.linalg.cond(data.gram)
        if not np.isfinite(cond) or cond > 1e14:
            raise RankDeficientError(
                f"Gram matrix rank-deficient (cond {cond:.3g}); pass ridge > 0")
    theta = np.linalg.solve(A.T, data.cross.T).T
    return SystemModel.from_stacked(theta, data.n)


def project_uncertainty(theta_tilde: SystemModel,
                        prior: UncertaintySet) -> SystemModel:
    """Frobenius projection of the point estimate onto the prior ball."""
    diff = theta_tilde.stacked() - prior.theta_ini.stacked()
    nrm = float(np.linalg.norm(diff))
    if nrm <= prior.r_ini:
        return theta_tilde
    scaled = prior.theta_ini.stacked() + diff * (prior.r_ini / nrm)
    return SystemModel.from_stacked(scaled, theta_tilde.n)


def bmsb_constants(s_w: float, p_w: float, s_eta: float, p_eta: float,
                   eta_bar: float, b_u: float) -> tuple[float, float]:
    """Small-ball constants of the stacked regressor z = (x; u).

    s_z = min(s_w/4, (sqrt 3 / 2) s_eta eta_bar, s_w s_eta eta_bar / (4 b_u)),
    p_z = min(p_w, p_eta). b_u is the almost-sure action bound (u_max).
    """
    if min(s_w, p_w, s_eta, p_eta, b_u) <= 0 or eta_bar < 0:
        raise ValueError("all constants must be positive (eta_bar >= 0)")
    s_z = min(s_w / 4.0, (math.sqrt(3.0) / 2.0) * s_eta * eta_bar,
              s_w * s_eta * eta_bar / (4.0 * b_u))
    return s_z, min(p_w, p_eta)


@dataclass(frozen=True)
class RadiusConstants:
    """Everything the explicit error bound needs besides (T, delta)."""

    sigma_sub: float
    b_z: float
    s_z: float
    p_z: float
    n: int
    m: int


def sample_floor(delta: float, consts: RadiusConstants) -> int:
    """Minimum T for the spectral error bound to apply (block length 1)."""
    d = consts.n + consts.m
    val = (10.0 / consts.p_z ** 2) * (
        math.log(1.0 / delta)
        + 2.0 * d * math.log(10.0 / consts.p_z)
        + 2.0 * d * math.log(consts.b_z / consts.s_z))
    return int(math.ceil(val))


def confidence_radius(T_data: int, delta: float,
                      consts: RadiusConstants) -> float:
    """Frobenius-norm confidence radius at level 1 - 3*delta.

    Spectral bound (90 sigma_sub / p_z) sqrt((n + d log(10/p_z)
    + 2d log(b_z/s_z) + log(1/delta)) / (T s_z^2)), lifted to Frobenius by
    the sqrt(n) factor the ball projection needs. Errors below the floor.
    """
    if not (0.0 < delta < 1.0 / 3.0):
        raise ValueError("delta must lie in (0, 1/3)")
    if consts.s_z <= 0:
        raise ValueError("s_z must be positive (needs excitation)")
    floor = sample_floor(delta, consts)
    if T_data < floor:
        raise SampleFloorError(T_data, floor)
    d = consts.n + consts.m
    num = (consts.n + d * math.log(10.0 / consts.p_z)
           + 2.0 * d * math.log(consts.b_z / consts.s_z)
           + math.log(1.0 / delta))
    r2 = (90.0 * consts.sigma_sub / consts.p_z) \
        * math.sqrt(num / (T_data * consts.s_z ** 2))
    return math.sqrt(consts.n) * r2


@dataclass(frozen=True)
class EstimationConstants:
    """Static inputs for the per-episode radius schedule."""

    sigma_sub: float
    b_z: float
    s_w: float
    p_w: float
    s_eta: float
    p_eta: float
    b_u: float
    n: int
    m: int

    def radius_consts(self, eta_bar: float) -> RadiusConstants:
        s_z, p_z = bmsb_constants(self.s_w, self.p_w, self.s_eta, self.p_eta,
                                  eta_bar, self.b_u)
        return RadiusConstants(sigma_sub=self.sigma_sub, b_z=self.b_z,
                               s_z=s_z, p_z=p_z, n=self.n, m=self.m)


def schedule_radius(e: int, T_D_prev: int, eta_bar_prev: float, p: float,
                    est: EstimationConstants) -> float:
    """Episode-e radius r^(e) at per-episode failure level delta = p/(6 e^2).

    The per-episode failure probabilities then sum to at most
    sum_e 3 p/(6 e^2) = p pi^2/12 < p. Raises SampleFloorError when the
    previous exploration phase is too short to certify anything.
    """
    if e < 1:
        raise ValueError("episodes are indexed from 1 for radius updates")
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0, 1)")
    delta = p / (6.0 * e ** 2)
    return confidence_radius(T_D_prev, delta, est.radius_consts(eta_bar_prev))
