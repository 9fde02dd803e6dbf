import math

import numpy as np
import pytest

from safelqr.dap import DapPolicy, box_bounds, g_state
from safelqr.model import ConstraintSpec, StabilityCertificate, SystemModel
from safelqr.tightening import (TighteningInputs, almost_sure_state_bound,
                                check_monotone_schedule, compute_bundle,
                                initial_feasibility_margin)


def make_inputs(norm_Dx=1.0, norm_Du=1.0, kappa=1.0, gamma=0.5, kappa_B=1.0,
                w_max=1.0, x_max=1.0, u_max=1.0, n=1, m=1, alpha=1.0):
    cert = StabilityCertificate(kappa=kappa, gamma=gamma, kappa_B=kappa_B)
    return TighteningInputs(cert=cert, norm_Dx_inf=norm_Dx, norm_Du_inf=norm_Du,
                            w_max=w_max, x_max=x_max, u_max=u_max, n=n, m=m,
                            slack_alpha=alpha)


def test_eps_H_example():
    b = compute_bundle(make_inputs(gamma=0.5), H=3, delta_M=0.0, r=0.0, eta_bar=0.0)
    assert b.eps_H == pytest.approx(0.125)


def test_eps_v_example():
    b = compute_bundle(make_inputs(gamma=0.5), H=4, delta_M=0.1, r=0.0, eta_bar=0.0)
    # (1/gamma^2) sqrt(mnH) Delta = 4 * 2 * 0.1
    assert b.eps_v == pytest.approx(0.8)


def test_eps_theta_eta_example():
    inp = make_inputs(gamma=0.5, x_max=math.sqrt(1 - 1e-12))
    # z_max = 1 requires x_max^2 + u_max^2 = 1; use explicit fields instead
    inp = make_inputs(gamma=0.5)
    inp = TighteningInputs(cert=inp.cert, norm_Dx_inf=1.0, norm_Du_inf=1.0,
                           w_max=1.0, x_max=math.sqrt(0.5), u_max=math.sqrt(0.5),
                           n=1, m=1)
    assert inp.z_max == pytest.approx(1.0)
    b = compute_bundle(inp, H=4, delta_M=0.0, r=0.01, eta_bar=0.05)
    assert b.eps_what == pytest.approx(0.02)
    assert b.eps_thetahat == pytest.approx(0.40)
    assert b.eps_theta == pytest.approx(0.42)
    assert b.eps_eta_x == pytest.approx(0.1)
    assert b.eps_eta_u == pytest.approx(0.05)
    assert inp.c1() == pytest.approx(42.0)


def test_bundle_additivity_and_rejections():
    inp = make_inputs()
    b = compute_bundle(inp, H=5, delta_M=0.02, r=0.01, eta_bar=0.03)
    assert b.eps_x == pytest.approx(b.eps_theta + b.eps_eta_x + b.eps_H + b.eps_v,
                                    abs=0)
    assert b.eps_u == b.eps_eta_u
    with pytest.raises(ValueError):
        compute_bundle(inp, H=0, delta_M=0.0, r=0.0, eta_bar=0.0)
    with pytest.raises(ValueError):
        compute_bundle(inp, H=1, delta_M=-0.1, r=0.0, eta_bar=0.0)


def test_bundle_monotonicity_grid():
    inp = make_inputs(gamma=0.4, kappa=1.2, kappa_B=1.1, n=2, m=2)
    Hs = [1, 2, 4, 8]
    deltas = [0.0, 0.05, 0.1]
    rs = [0.0, 0.01, 0.1]
    etas = [0.0, 0.1, 0.5]
    base = compute_bundle(inp, 4, 0.05, 0.01, 0.1)
    for H1, H2 in zip(Hs, Hs[1:]):
        b1 = compute_bundle(inp, H1, 0.05, 0.01, 0.1)
        b2 = compute_bundle(inp, H2, 0.05, 0.01, 0.1)
        assert b2.eps_H <= b1.eps_H and b2.eps_P <= b1.eps_P
    for a, b in zip(deltas, deltas[1:]):
        assert compute_bundle(inp, 4, a, 0.01, 0.1).eps_v \
            <= compute_bundle(inp, 4, b, 0.01, 0.1).eps_v
    for a, b in zip(rs, rs[1:]):
        assert compute_bundle(inp, 4, 0.05, a, 0.1).eps_theta \
            <= compute_bundle(inp, 4, 0.05, b, 0.1).eps_theta
    for a, b in zip(etas, etas[1:]):
        ba = compute_bundle(inp, 4, 0.05, 0.01, a)
        bb = compute_bundle(inp, 4, 0.05, 0.01, b)
        assert ba.eps_eta_x <= bb.eps_eta_x and ba.eps_eta_u <= bb.eps_eta_u
    assert base.eps_x > 0


def test_slack_alpha_scales_everything():
    b1 = compute_bundle(make_inputs(), 3, 0.05, 0.01, 0.1)
    bh = compute_bundle(make_inputs(alpha=0.5), 3, 0.05, 0.01, 0.1)
    for k in ("eps_H", "eps_v", "eps_what", "eps_thetahat", "eps_eta_x",
              "eps_eta_u", "eps_P"):
        assert getattr(bh, k) == pytest.approx(0.5 * getattr(b1, k))


def test_initial_feasibility_margin_examples():
    inp = make_inputs()
    zero = compute_bundle(inp, H=60, delta_M=0.0, r=0.0, eta_bar=0.0)
    # all eps effectively zero at H=60 except numerically negligible tails
    ok, slacks = initial_feasibility_margin(zero, eps0=0.05, eps_F_x=0.1,
                                            eps_F_u=0.1)
    assert ok
    assert slacks[0] == pytest.approx(0.05, abs=1e-9)
    assert slacks[1] == pytest.approx(0.1, abs=1e-9)
    # eps_theta(r_ini) > eps_F_x makes it infeasible regardless of H
    big = compute_bundle(inp, H=60, delta_M=0.0, r=1.0, eta_bar=0.0)
    ok, _ = initial_feasibility_margin(big, eps0=0.0, eps_F_x=0.1, eps_F_u=0.1)
    assert not ok
    # boundary equality counts as feasible (non-strict convention)
    b = compute_bundle(inp, H=60, delta_M=0.0, r=0.0, eta_bar=0.0)
    eps_budget = b.eps_x + b.eps_theta + b.eps_P
    ok, slacks = initial_feasibility_margin(b, eps0=0.1,
                                            eps_F_x=0.1 + eps_budget,
                                            eps_F_u=b.eps_u + b.eps_P)
    assert ok and slacks[0] == pytest.approx(0.0, abs=1e-15)


def test_check_monotone_schedule():
    ok, bad = check_monotone_schedule([0.1] * 4, [5] * 4, [0.1] * 4, [1.0] * 4)
    assert ok and bad is None
    ok, bad = check_monotone_schedule([0.1] * 4, [5, 6, 5, 7],
                                      [0.1, 0.09, 0.09, 0.08], [1.0] * 4)
    assert not ok and bad == 2
    ok, bad = check_monotone_schedule([0.1, 0.2, 0.1], [5] * 3, [0.1] * 3, [1] * 3)
    assert not ok and bad == 1
    # sqrt(H) Delta must be non-increasing
    ok, bad = check_monotone_schedule([0.1] * 3, [4, 9, 9], [0.1, 0.08, 0.08],
                                      [1] * 3)
    assert not ok and bad == 1
    # r compared from episode 1 on; prior radius at index 0 is exempt
    ok, _ = check_monotone_schedule([0.1] * 3, [5] * 3, [0.1] * 3,
                                    [0.01, 5.0, 4.0])
    assert ok
    ok, bad = check_monotone_schedule([0.1] * 3, [5] * 3, [0.1] * 3,
                                      [0.01, 4.0, 5.0])
    assert not ok and bad == 2
    # eps0 clause on r^(1)
    ok, bad = check_monotone_schedule([0.1] * 3, [5] * 3, [0.1] * 3,
                                      [0.01, 0.2, 0.1], eps0=0.1, c1=2.0,
                                      m=1, n=1)
    assert not ok and bad == 1
    ok, _ = check_monotone_schedule([0.1] * 3, [5] * 3, [0.1] * 3,
                                    [0.01, 0.04, 0.03], eps0=0.1, c1=2.0,
                                    m=1, n=1)
    assert ok


def test_eps_thetahat_bounds_g_shift():
    # |g(M; theta*) - g(M; theta_hat)| <= eps_thetahat(r) over the prior ball
    rng = np.random.default_rng(4)
    A = np.array([[0.35, 0.1], [0.0, 0.3]])
    B = np.array([[0.1], [1.0]])
    model = SystemModel(A=A, B=B)
    cert = StabilityCertificate(kappa=1.0, gamma=0.5, kappa_B=1.1)
    cons = ConstraintSpec(D_x=np.vstack([np.eye(2), -np.eye(2)]), d_x=[2] * 4,
                          D_u=[[1.0], [-1.0]], d_u=[1, 1], w_max=0.3)
    inp = TighteningInputs.from_constraints(cons, cert)
    H = 6
    bounds = box_bounds(H, 2, cert)
    for _ in range(40):
        r = rng.uniform(0.005, 0.05)
        d = rng.normal(size=(2, 3))
        d *= r / np.linalg.norm(d)
        pert = SystemModel.from_stacked(model.stacked() + d, 2)
        M = rng.uniform(-1, 1, size=(H, 1, 2))
        M *= 0.4 * (bounds / np.maximum(np.abs(M).sum(axis=2).max(axis=1),
                                        1e-12))[:, None, None]
        pol = DapPolicy(M)
        shift = np.abs(g_state(pol, model, cons) - g_state(pol, pert, cons)).max()
        eps = compute_bundle(inp, H, 0.0, r, 0.0).eps_thetahat
        assert shift <= eps + 1e-12


def test_state_bound_formula():
    cert = StabilityCertificate(kappa=1.0, gamma=0.5, kappa_B=1.0)
    assert almost_sure_state_bound(cert, 0.5, 1, 1) == pytest.approx(
        4 * 0.5 / 0.5 + 4 * 0.5 / 0.25)
