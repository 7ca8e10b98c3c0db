import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_hj import InputError, PeriodicGrid, SchemeError, builtin
from contact_hj.grid import GridFunction, periodic_distance
from contact_hj.oracle import FDConfig, cross_validate, fd_config, fd_evolve


def test_fd_examples(classical, discounted, grid200):
    f = fd_evolve(discounted, grid200.constant(1.0), 1.0)
    assert f.query([0.4]) == pytest.approx(math.exp(-0.5), abs=5e-3)
    assert np.all(fd_evolve(classical, grid200.constant(0.0), 1.0).values == 0.0)
    phi = GridFunction(grid200, periodic_distance(grid200.coords, np.array([0.5])))
    assert fd_evolve(classical, phi, 0.25).query([0.0]) == pytest.approx(0.375, abs=1e-2)


@pytest.mark.parametrize("c", [-1.0, 0.5, 2.0])
def test_fd_constant_solution(discounted, c):
    grid = PeriodicGrid(1, 40)
    f = fd_evolve(discounted, grid.constant(c / 0.5), 1.0, c=c)
    assert np.max(np.abs(f.values - c / 0.5)) <= 1e-10


@given(st.lists(st.floats(-0.3, 0.3), min_size=40, max_size=40), st.floats(0.0, 0.2))
def test_discrete_comparison(vals, bump):
    grid = PeriodicGrid(1, 40)
    system = builtin("nonmonotone", {"amp": 0.5})
    phi = GridFunction(grid, np.array(vals))
    cfg = fd_config(system, phi, 0.2, p_band=50.0)
    psi = GridFunction(grid, phi.values + bump * (1 + np.sin(2 * np.pi * grid.coords[..., 0])))
    a = fd_evolve(system, phi, 0.2, cfg=cfg, probe=False).values
    b = fd_evolve(system, psi, 0.2, cfg=cfg, probe=False).values
    assert np.all(a <= b + 1e-12)


def test_undersized_viscosity_is_detected(mechanical):
    grid = PeriodicGrid(1, 100)
    phi = GridFunction(grid, 0.5 * np.sin(2 * np.pi * grid.coords[..., 0]) + 0.3 * np.sign(
        np.sin(6 * np.pi * grid.coords[..., 0])))
    cfg = FDConfig(grid, theta=0.05, cfl=0.5, local=False)
    with pytest.raises(SchemeError):
        fd_evolve(mechanical, phi, 0.5, cfg=cfg)


def test_config_validation(classical):
    grid = PeriodicGrid(1, 20)
    with pytest.raises(InputError):
        FDConfig(grid, theta=1.0, cfl=0.8)
    with pytest.raises(InputError):
        FDConfig(grid, theta=0.0)
    with pytest.raises(InputError):
        fd_evolve(classical, grid.constant(0.0), -1.0)
    cfg = fd_config(builtin("discounted", {"lam": 2.0}), grid.constant(0.0), 1.0)
    assert cfg.dt * 2.0 <= 0.25 and cfg.dt <= grid.spacing
    assert cfg.as_dict()["theta"] == cfg.theta


def test_cross_validation_shrinks(discounted, classical):
    res = cross_validate(discounted, lambda pts: np.ones(len(pts)), 1.0, levels=((200, 1e-2),))
    assert res.max_gap <= 5e-3
    hl = cross_validate(classical, lambda pts: periodic_distance(pts, np.array([0.5])), 0.25)
    assert hl.gaps[0] <= 2e-2 and hl.gaps[1] <= 1.3e-2 and hl.shrinks


def test_fd_2d_constant(discounted):
    system = builtin("discounted", {}, dim=2)
    grid = PeriodicGrid(2, 20)
    f = fd_evolve(system, grid.constant(1.0), 0.5)
    assert np.max(np.abs(f.values[-1] - math.exp(-0.25))) <= 5e-3
