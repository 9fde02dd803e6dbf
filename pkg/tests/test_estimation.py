import math

import numpy as np
import pytest

from safelqr.estimation import (EstimationConstants, RadiusConstants,
                                RankDeficientError, RegressionDataset,
                                SampleFloorError, UncertaintySet,
                                bmsb_constants, confidence_radius,
                                least_squares, project_uncertainty,
                                sample_floor, schedule_radius)
from safelqr.model import SystemModel


def test_least_squares_noiseless_exact():
    data = RegressionDataset(n=1, m=1)
    data.add([1.0, 0.0], [0.5])
    data.add([0.0, 1.0], [1.0])
    theta = least_squares(data, ridge=0.0)
    assert theta.A[0, 0] == pytest.approx(0.5, abs=1e-14)
    assert theta.B[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_least_squares_recovers_truth_without_noise():
    rng = np.random.default_rng(0)
    model = SystemModel(A=[[0.4, 0.1], [0.0, 0.3]], B=[[0.2], [1.0]])
    data = RegressionDataset(n=2, m=1)
    x = np.zeros(2)
    for t in range(60):
        u = rng.normal(size=1)
        z = np.concatenate([x, u])
        x = model.A @ x + model.B @ u   # w = 0
        data.add(z, x)
    theta = least_squares(data, ridge=0.0)
    assert np.abs(theta.stacked() - model.stacked()).max() < 1e-10


def test_least_squares_rank_deficiency():
    data = RegressionDataset(n=1, m=1)
    data.add([1.0, 0.0], [0.5])   # u direction never excited
    with pytest.raises(RankDeficientError):
        least_squares(data, ridge=0.0)
    theta = least_squares(data, ridge=1e-10)  # ridge restores solvability
    assert np.isfinite(theta.stacked()).all()


def test_error_halves_when_T_quadruples():
    rng = np.random.default_rng(1)
    model = SystemModel(A=[[0.5]], B=[[1.0]])
    ratios = []
    for seed in range(50):
        r = np.random.default_rng(seed)
        errs = []
        for T in (2500, 10000):
            data = RegressionDataset(n=1, m=1)
            x = np.zeros(1)
            for t in range(T):
                u = 0.1 * r.uniform(-1, 1, size=1)
                z = np.concatenate([x, u])
                w = r.uniform(-0.3, 0.3, size=1)
                x = model.A @ x + model.B @ u + w
                data.add(z, x)
            theta = least_squares(data)
            errs.append(np.linalg.norm(theta.stacked() - model.stacked(), 2))
        ratios.append(errs[1] / errs[0])
    med = float(np.median(ratios))
    assert 0.35 <= med <= 0.7


def test_project_uncertainty():
    ini = UncertaintySet.prior(SystemModel(A=[[0.0]], B=[[0.0]]), 1.0)
    inside = SystemModel(A=[[0.3]], B=[[0.4]])
    assert project_uncertainty(inside, ini) is inside
    outside = SystemModel(A=[[2.0]], B=[[0.0]])
    proj = project_uncertainty(outside, ini)
    assert proj.A[0, 0] == pytest.approx(1.0)
    # projection never increases the distance to any point of the ball
    rng = np.random.default_rng(3)
    for _ in range(50):
        target = SystemModel(A=[[rng.uniform(-0.7, 0.7)]],
                             B=[[rng.uniform(-0.7, 0.7)]])
        raw = SystemModel(A=[[rng.normal(scale=2)]], B=[[rng.normal(scale=2)]])
        proj = project_uncertainty(raw, ini)
        assert proj.distance(target) <= raw.distance(target) + 1e-12


def test_effective_radius():
    ini = SystemModel(A=[[0.0]], B=[[0.0]])
    u = UncertaintySet(center=SystemModel(A=[[0.3]], B=[[0.4]]), radius=np.inf,
                       theta_ini=ini, r_ini=1.0)
    assert u.effective_radius == pytest.approx(1.5)
    u2 = UncertaintySet(center=SystemModel(A=[[0.3]], B=[[0.4]]), radius=0.2,
                        theta_ini=ini, r_ini=1.0)
    assert u2.effective_radius == pytest.approx(0.2)


def test_bmsb_constants_examples():
    s_z, p_z = bmsb_constants(1.0, 0.25, 0.5, 0.25, 0.1, 1.0)
    assert s_z == pytest.approx(0.0125)
    assert p_z == 0.25
    s_z0, _ = bmsb_constants(1.0, 0.25, 0.5, 0.25, 1e-9, 1.0)
    assert s_z0 < 1e-8
    s1, _ = bmsb_constants(1.0, 0.25, 0.5, 0.25, 0.05, 1.0)
    s2, _ = bmsb_constants(1.0, 0.25, 0.5, 0.25, 0.10, 1.0)
    assert s2 <= 2 * s1 + 1e-15


def _radius_oracle(T, delta, c):
    """Independent re-derivation of the explicit radius (different grouping)."""
    d = c.n + c.m
    logdet = d * 2.0 * (math.log(c.b_z) - math.log(c.s_z))
    inner = c.n + d * (math.log(10.0) - math.log(c.p_z)) + logdet \
        - math.log(delta)
    spectral = 90.0 * c.sigma_sub * math.sqrt(inner) \
        / (c.p_z * c.s_z * math.sqrt(T))
    return math.sqrt(c.n) * spectral


GOLDEN_CONSTS = RadiusConstants(sigma_sub=1.0, b_z=10.0, s_z=0.0125,
                                p_z=0.25, n=1, m=1)


def test_confidence_radius_golden_value():
    got = confidence_radius(10 ** 6, 0.01, GOLDEN_CONSTS)
    oracle = _radius_oracle(10 ** 6, 0.01, GOLDEN_CONSTS)
    assert got == pytest.approx(oracle, abs=1e-12 * oracle)
    # frozen spot value from the oracle
    assert got == pytest.approx(181.51170241473145, rel=1e-12)


def test_confidence_radius_scalings():
    base = confidence_radius(10 ** 6, 0.01, GOLDEN_CONSTS)
    double = confidence_radius(2 * 10 ** 6, 0.01, GOLDEN_CONSTS)
    assert double == pytest.approx(base / math.sqrt(2.0), rel=1e-12)
    tighter = confidence_radius(10 ** 6, 0.001, GOLDEN_CONSTS)
    assert tighter > base


def test_confidence_radius_floor():
    floor = sample_floor(0.01, GOLDEN_CONSTS)
    assert floor > 0
    with pytest.raises(SampleFloorError) as err:
        confidence_radius(floor - 1, 0.01, GOLDEN_CONSTS)
    assert err.value.floor == floor
    assert np.isfinite(confidence_radius(floor, 0.01, GOLDEN_CONSTS))


EST = EstimationConstants(sigma_sub=1.0, b_z=10.0, s_w=1.0, p_w=0.25,
                          s_eta=0.5, p_eta=0.25, b_u=1.0, n=1, m=1)


def test_schedule_radius_matches_confidence_radius_at_e1():
    p = 0.1
    got = schedule_radius(1, 10 ** 6, 0.1, p, EST)
    consts = EST.radius_consts(0.1)
    assert got == pytest.approx(confidence_radius(10 ** 6, p / 6.0, consts))


def test_schedule_radius_nonincreasing_with_doubling_data():
    p = 0.1
    rs = [schedule_radius(e, 10 ** 6 * 2 ** (e - 1), 0.1, p, EST)
          for e in range(1, 8)]
    assert all(b <= a for a, b in zip(rs, rs[1:]))


def test_failure_budget_sums_below_p():
    p = 0.1
    total = sum(3 * p / (6.0 * e ** 2) for e in range(1, 21))
    assert total <= p
