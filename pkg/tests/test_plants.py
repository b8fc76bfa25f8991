import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adobo.core import DivergenceError, ShapeError
from adobo.plants import (
    PlantSpec,
    SingularConfiguration,
    cartpole_accelerations,
    linearize,
    make_plant,
    rollout,
    step,
    true_linear_model,
)

DUBINS = make_plant("dubins")
CARTPOLE = make_plant("cartpole")


def test_dubins_step():
    x = step(DUBINS, [1.5, 1.0, math.pi / 2], [1.0, 0.0])
    np.testing.assert_allclose(x, [1.5, 1.1, math.pi / 2], atol=1e-15)


def test_lin1d_step():
    np.testing.assert_array_equal(step(make_plant("lin1d"), [1.0], [-0.5]), [0.5])


def test_lin2d_step():
    np.testing.assert_array_equal(step(make_plant("lin2d"), [2.0, 1.0], [0.5]), [3.0, 1.5])


def test_cartpole_equilibrium():
    np.testing.assert_array_equal(step(CARTPOLE, np.zeros(4), [0.0]), np.zeros(4))


def test_rollout_zero_horizon():
    traj = rollout(DUBINS, [1.0, 2.0, 3.0], np.zeros((0, 2)))
    assert traj.horizon == 0
    np.testing.assert_array_equal(traj.states, [[1.0, 2.0, 3.0]])


def test_rollout_lin1d_hold():
    traj = rollout(make_plant("lin1d"), [1.0], np.zeros((10, 1)))
    np.testing.assert_array_equal(traj.states, np.ones((11, 1)))


def test_rollout_dubins_zero_velocity():
    x0 = [1.5, 1.0, math.pi / 2]
    traj = rollout(DUBINS, x0, np.zeros((30, 2)))
    np.testing.assert_array_equal(traj.states, np.tile(x0, (31, 1)))


@settings(max_examples=40)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=20), st.floats(-5, 5), st.floats(-5, 5))
def test_lin2d_rollout_closed_form(us, p, v):
    plant = make_plant("lin2d")
    model = true_linear_model(plant)
    U = np.array(us).reshape(-1, 1)
    traj = rollout(plant, [p, v], U)
    x0 = np.array([p, v])
    for k in range(U.shape[0] + 1):
        expected = np.linalg.matrix_power(model.A, k) @ x0
        for j in range(k):
            expected = expected + np.linalg.matrix_power(model.A, k - 1 - j) @ model.B @ U[j]
        np.testing.assert_allclose(traj.states[k], expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=200)
@given(
    st.floats(-5, 5),
    st.floats(-5, 5),
    st.floats(-1.4, 1.4),
    st.floats(-10, 10),
    st.floats(-50, 50),
)
def test_cartpole_acceleration_residual(pos, vel, psi, psid, F):
    """Substitute the solved accelerations back into both equations of motion."""
    p = CARTPOLE.params
    M, m, l, g = p["M"], p["m"], p["l"], p["g"]
    x = np.array([pos, vel, psi, psid])
    xdd, psidd = cartpole_accelerations(p, x, np.array([F]))
    r1 = (M + m) * xdd - m * l * psidd * math.cos(psi) + m * l * psid**2 * math.sin(psi) - F
    r2 = l * psidd - g * math.sin(psi) - xdd * math.cos(psi)
    assert abs(r1) < 1e-10
    assert abs(r2) < 1e-10


def test_cartpole_singular_guard():
    # (M+m) l - m l cos^2 = 0 needs M = 0 at psi = 0; bypass validation to reach the guard
    params = {"M": 0.0, "m": 1.0, "l": 1.0, "g": 9.81}
    with pytest.raises(SingularConfiguration):
        cartpole_accelerations(params, np.zeros(4), np.zeros(1))


@settings(max_examples=50)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10), st.floats(-3, 3), st.floats(-3, 3))
def test_dubins_heading_and_step_bound(px, py, phi, v, w):
    x1 = step(DUBINS, [px, py, phi], [v, w])
    assert x1[2] == pytest.approx(phi + DUBINS.dt * w)
    assert np.linalg.norm(x1[:2] - [px, py]) <= DUBINS.dt * abs(v) + 1e-12
    x2 = step(DUBINS, [px + 1.0, py - 2.0, phi], [v, w])
    assert x2[2] == x1[2]


def test_step_errors():
    with pytest.raises(ShapeError):
        step(DUBINS, [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        step(DUBINS, [np.nan, 0.0, 0.0], [0.0, 0.0])


def test_rollout_divergence():
    with pytest.raises(DivergenceError):
        rollout(make_plant("lin1d"), [1.0], np.full((5, 1), 1e7))


def test_plant_validation():
    with pytest.raises(ValueError):
        PlantSpec("quadrotor")
    with pytest.raises(ValueError):
        PlantSpec("dubins", dt=0.0)
    with pytest.raises(ValueError):
        make_plant("cartpole", l=-1.0)
    assert CARTPOLE.params["g"] == 9.81


def test_linearize_matches_analytic_dubins_jacobian():
    x, u = np.array([0.3, -0.2, 0.7]), np.array([1.2, 0.4])
    model = linearize(DUBINS, x, u)
    dt = DUBINS.dt
    A = np.eye(3)
    A[0, 2] = -dt * u[0] * math.sin(x[2])
    A[1, 2] = dt * u[0] * math.cos(x[2])
    B = dt * np.array([[math.cos(x[2]), 0.0], [math.sin(x[2]), 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(model.A, A, atol=1e-9)
    np.testing.assert_allclose(model.B, B, atol=1e-9)
