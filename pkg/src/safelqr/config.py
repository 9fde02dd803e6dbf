"""Problem-instance configuration: JSON schema, loading, hashing.

A config carries the true plant (harness-side only), constraints, noise
models, the prior model ball, strict-feasibility margins, schedule
parameters, and seeds. Reference instances ship with the package and can be
addressed by name.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .estimation import EstimationConstants, UncertaintySet
from .model import (ConstraintSpec, DisturbanceModel, ExcitationModel,
                    StabilityCertificate, SystemModel)
from .tightening import TighteningInputs, almost_sure_state_bound

_BUILTIN = ("scalar", "twostate")


@dataclass
class Instance:
    """Fully resolved problem instance."""

    name: str
    model: SystemModel
    constraints: ConstraintSpec
    cert: StabilityCertificate
    disturbance: DisturbanceModel
    excitation: ExcitationModel
    Q: np.ndarray
    R: np.ndarray
    prior: UncertaintySet
    eps_F: tuple[float, float]
    eps0: float
    T1: int
    num_episodes: int
    p: float
    c_delta: float = 0.25
    c_eta: float = 0.25
    c_H: float = 1.0
    eta_bar_override: float | None = None
    seeds: dict = field(default_factory=lambda: {"disturbance": 1, "excitation": 2})
    ridge: float = 1e-10
    use_all_history: bool = False
    slack_alpha: float = 1.0
    require_certified_radius: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def Sigma_w(self) -> np.ndarray:
        return self.disturbance.Sigma_w

    def tightening_inputs(self) -> TighteningInputs:
        return TighteningInputs.from_constraints(self.constraints, self.cert,
                                                 slack_alpha=self.slack_alpha)

    def estimation_constants(self) -> EstimationConstants:
        b_x = almost_sure_state_bound(self.cert, self.constraints.w_max,
                                      self.n, self.m)
        b_z = math.hypot(b_x, self.constraints.u_max)
        return EstimationConstants(
            sigma_sub=self.disturbance.sigma_sub, b_z=b_z,
            s_w=self.disturbance.s_w, p_w=self.disturbance.p_w,
            s_eta=self.excitation.s_eta, p_eta=self.excitation.p_eta,
            b_u=self.constraints.u_max, n=self.n, m=self.m)


def _canonical(obj):
    if isinstance(obj, dict):
        return {k: _canonical(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float) and obj == int(obj) and abs(obj) < 1e15:
        return obj
    return obj


def config_hash(cfg: dict) -> str:
    """Stable digest over the canonicalized config; changes iff a field does."""
    blob = json.dumps(_canonical(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def instance_from_config(cfg: dict) -> Instance:
    n = len(cfg["A"])
    model = SystemModel(A=np.array(cfg["A"], dtype=float),
                        B=np.array(cfg["B"], dtype=float))
    constraints = ConstraintSpec(
        D_x=np.array(cfg["D_x"], dtype=float), d_x=np.array(cfg["d_x"], dtype=float),
        D_u=np.array(cfg["D_u"], dtype=float), d_u=np.array(cfg["d_u"], dtype=float),
        w_max=float(cfg["w_max"]))
    cert = StabilityCertificate(kappa=float(cfg["kappa"]),
                                gamma=float(cfg["gamma"]),
                                kappa_B=float(cfg["kappa_B"]))
    dist_cfg = cfg.get("disturbance", {"kind": "uniform-box"})
    kind = dist_cfg.get("kind", "uniform-box")
    overrides = {k: dist_cfg[k] for k in ("s_w", "p_w") if k in dist_cfg}
    if kind == "uniform-box":
        dist = DisturbanceModel.uniform_box(constraints.n, constraints.w_max,
                                            **overrides)
    else:
        dist = DisturbanceModel.truncated_gaussian(
            constraints.n, constraints.w_max,
            sigma=dist_cfg.get("sigma"), **overrides)
    exc_cfg = cfg.get("excitation", {"kind": "uniform-box"})
    if exc_cfg.get("kind", "uniform-box") == "uniform-box":
        exc = ExcitationModel.uniform_box(
            constraints.m, s_eta=exc_cfg.get("s_eta"), p_eta=exc_cfg.get("p_eta"))
    else:
        exc = ExcitationModel.truncated_gaussian(constraints.m,
                                                 sigma=exc_cfg.get("sigma", 0.5))
    ini = cfg["theta_hat_ini"]
    theta_ini = SystemModel(A=np.array(ini["A"], dtype=float),
                            B=np.array(ini["B"], dtype=float))
    prior = UncertaintySet.prior(theta_ini, float(cfg["r_ini"]))
    sched = cfg.get("schedule", {})
    opts = cfg.get("options", {})
    return Instance(
        name=cfg.get("name", "instance"),
        model=model, constraints=constraints, cert=cert, disturbance=dist,
        excitation=exc, Q=np.array(cfg["Q"], dtype=float),
        R=np.array(cfg["R"], dtype=float), prior=prior,
        eps_F=(float(cfg["eps_F"][0]), float(cfg["eps_F"][1])),
        eps0=float(cfg["eps0"]),
        T1=int(sched.get("T1", 1024)),
        num_episodes=int(sched.get("num_episodes", 3)),
        p=float(sched.get("p", 0.1)),
        c_delta=float(sched.get("c_delta", 0.25)),
        c_eta=float(sched.get("c_eta", 0.25)),
        c_H=float(sched.get("c_H", 1.0)),
        eta_bar_override=sched.get("eta_bar"),
        seeds=dict(cfg.get("seeds", {"disturbance": 1, "excitation": 2})),
        ridge=float(opts.get("ridge", 1e-10)),
        use_all_history=bool(opts.get("use_all_history", False)),
        slack_alpha=float(opts.get("slack_alpha", 1.0)),
        require_certified_radius=bool(opts.get("require_certified_radius", False)),
        raw=cfg)


def load_config(path_or_name: str) -> dict:
    """Read a config from a JSON file path or a builtin name."""
    if path_or_name in _BUILTIN:
        text = resources.files("safelqr.configs") \
            .joinpath(f"{path_or_name}.json").read_text()
    else:
        with open(path_or_name) as f:
            text = f.read()
    return json.loads(text)


def load_instance(path_or_name: str) -> Instance:
    return instance_from_config(load_config(path_or_name))
