import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_hj import BlowUpError, ConfigError, InputError, ShootingError, builtin, custom
from contact_hj.characteristics import (ContactState, apriori_bounds, energy_drift_residual, flow,
                                        shoot_minimizer, vector_field)


def test_vector_field_examples():
    disc = builtin("discounted", {"lam": 0.5, "amp": 0})
    dx, du, dp = vector_field(disc, ContactState([0.0], 1.0, [2.0]))
    assert (dx[0], du, dp[0]) == pytest.approx((2.0, 1.5, -1.0))
    dx, du, dp = vector_field(disc, ContactState([0.3], 0.8, [0.0]))
    assert (dx[0], du, dp[0]) == pytest.approx((0.0, -0.4, 0.0))
    dx, du, dp = vector_field(builtin("classical", {}), ContactState([0.0], 0.0, [1.0]))
    assert (dx[0], du, dp[0]) == pytest.approx((1.0, 0.5, 0.0))


def test_flow_examples():
    disc = builtin("discounted", {})
    traj = flow(disc, ContactState([0.0], 1.0, [0.0]), 1.0, 1e-3)
    assert traj.u[-1] == pytest.approx(math.exp(-0.5), abs=1e-6)
    traj = flow(builtin("classical", {}), ContactState([0.0], 0.0, [1.0]), 1.0, 1e-2)
    assert traj.x[-1, 0] == pytest.approx(0.0, abs=1e-12) or traj.x[-1, 0] == pytest.approx(1.0, abs=1e-12)
    assert traj.u[-1] == pytest.approx(0.5) and traj.p[-1, 0] == pytest.approx(1.0)
    assert traj.x_lift[-1, 0] == pytest.approx(1.0)


def test_flow_preconditions_and_blowup():
    disc = builtin("discounted", {})
    with pytest.raises(InputError):
        flow(disc, ([0.0], 0.0, [0.0]), 1.0, 2.0)
    with pytest.raises(InputError):
        flow(disc, ([0.0], 0.0, [0.0]), 1.0, 0.25)
    riccati = custom(lambda x, u, p: 0.5 * p[..., 0] ** 2 - 0.5 * u ** 2, lambda x, u, p: p, lam=0.01,
                     H_x=lambda x, u, p: np.zeros_like(p), H_u=lambda x, u, p: -u)
    with pytest.raises(BlowUpError) as exc:
        flow(riccati, ([0.0], 10.0, [0.0]), 1.0, 1e-3)
    assert 0.15 < exc.value.escape_time <= 0.2


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_classical_energy_conserved(p0, u0, x0):
    system = builtin("mechanical", {})
    traj = flow(system, ContactState([x0], u0, [p0]), 1.0, 1e-3)
    e = traj.energy(system)
    assert np.max(np.abs(e - e[0])) <= 1e-8
    assert energy_drift_residual(system, traj) <= 1e-6


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 1))
def test_discounted_energy_decays_by_drift_law(p0, u0, x0):
    system = builtin("discounted", {"amp": 0.5})
    traj = flow(system, ContactState([x0], u0, [p0]), 1.0, 1e-3)
    e = traj.energy(system)
    # dH/ds = -lam*H exactly for H = H0(x, p) + lam*u
    np.testing.assert_allclose(e, e[0] * np.exp(-0.5 * traj.times), atol=1e-8)
    assert energy_drift_residual(system, traj) <= 1e-4


def test_energy_drift_rate_second_order():
    system = builtin("nonmonotone", {"amp": 0.5})
    s0 = ContactState([0.1], 0.3, [1.2])
    r1 = energy_drift_residual(system, flow(system, s0, 1.0, 2e-3))
    r2 = energy_drift_residual(system, flow(system, s0, 1.0, 1e-3))
    assert r2 < r1 / 3


def test_zero_energy_surface_is_invariant():
    system = builtin("discounted", {"amp": 0.0})
    # H = p^2/2 + lam*u = 0 with p = 1, u = -1
    traj = flow(system, ContactState([0.0], -1.0, [1.0]), 1.0, 1e-3)
    assert np.max(np.abs(traj.energy(system))) <= 1e-6


def test_trajectory_csv(tmp_path):
    system = builtin("classical", {})
    traj = flow(system, ContactState([0.0], 0.0, [1.0]), 0.1, 0.05)
    traj.to_csv(tmp_path / "t.csv", system)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "s,x,u,p,H" and len(lines) == 4


def test_apriori_examples():
    b = apriori_bounds(builtin("discounted", {"lam": 0.5, "amp": 0}), -1, 1, 0.5, 1)
    assert (b.k, b.A, b.B) == pytest.approx((1.0, 0.5, 0.0))
    assert b.C == pytest.approx(math.exp(0.5) + (math.exp(0.5) - 1), abs=1e-9)
    c = apriori_bounds(builtin("classical", {}), -1, 1, 0.5, 1)
    assert c.C == pytest.approx(1.5)
    for bb in (b, c):
        assert bb.B <= bb.A and bb.C >= 1 and bb.K >= 0 and bb.Q > 0
    with pytest.raises(ConfigError):
        apriori_bounds(builtin("classical", {}), -1, 1, 1.0, 1.0)


def test_shoot_examples():
    cl = builtin("classical", {})
    res = shoot_minimizer(cl, [0.0], 0.0, [0.2], 1.0)
    assert res.u_end == pytest.approx(0.02, abs=1e-6) and res.p0[0] == pytest.approx(0.2, abs=1e-6)
    traj, u_end = shoot_minimizer(cl, [0.0], 0.0, [0.9], 1.0)
    assert u_end == pytest.approx(0.005, abs=1e-6) and traj.p[0, 0] == pytest.approx(-0.1, abs=1e-6)
    res = shoot_minimizer(builtin("discounted", {}), [0.0], 1.0, [0.0], 1.0)
    assert res.u_end == pytest.approx(math.exp(-0.5), abs=1e-6)


def test_shoot_reports_all_branches_and_short_time():
    res = shoot_minimizer(builtin("classical", {}), [0.0], 0.0, [0.5], 1.0)
    # both arcs to the antipode are minimizers with equal cost
    ends = sorted(b["u_end"] for b in res.branches)
    assert ends[0] == pytest.approx(0.125, abs=1e-6) and ends[1] == pytest.approx(0.125, abs=1e-6)
    with pytest.raises(InputError):
        shoot_minimizer(builtin("classical", {}), [0.0], 0.0, [0.5], 1e-4)


def test_shoot_failure_when_window_too_small():
    cl = builtin("classical", {})
    tiny = dataclasses.replace(apriori_bounds(cl, -1, 1, 0.5, 1), Q=0.01, k=0.0)
    with pytest.raises(ShootingError):
        shoot_minimizer(cl, [0.0], 0.0, [0.4], 1.0, bounds=tiny, max_lift=0)


def test_shoot_2d():
    cl = builtin("classical", {}, dim=2)
    res = shoot_minimizer(cl, [0.0, 0.0], 0.0, [0.2, 0.1], 1.0)
    assert res.u_end == pytest.approx(0.5 * (0.04 + 0.01), abs=1e-6)
