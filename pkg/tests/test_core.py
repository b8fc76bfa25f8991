import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adobo.core import (
    Box,
    CostSpec,
    LinearModel,
    ShapeError,
    SoftBounds,
    Trajectory,
    evaluate_cost,
    pack_model,
    theta_dim,
    unpack_model,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_pack_scalar_identity():
    np.testing.assert_array_equal(pack_model(LinearModel([[1.0]], [[1.0]])), [1.0, 1.0])


def test_pack_zero_model():
    theta = pack_model(LinearModel(np.zeros((2, 2)), np.zeros((2, 1))))
    np.testing.assert_array_equal(theta, np.zeros(6))


def test_pack_is_row_major_a_then_b():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[5.0], [6.0]])
    np.testing.assert_array_equal(pack_model(LinearModel(A, B)), [1, 2, 3, 4, 5, 6])


def test_unpack_dubins_shapes():
    theta = np.arange(15.0)
    m = unpack_model(theta, 3, 2)
    np.testing.assert_array_equal(m.A, theta[:9].reshape(3, 3))
    np.testing.assert_array_equal(m.B, theta[9:].reshape(3, 2))


def test_unpack_wrong_length():
    with pytest.raises(ShapeError, match="theta/shape mismatch"):
        unpack_model(np.zeros(5), 2, 1)


@given(
    st.integers(1, 4).flatmap(
        lambda n: st.integers(1, 3).flatmap(
            lambda m: st.tuples(
                arrays(float, (n, n), elements=finite), arrays(float, (n, m), elements=finite)
            )
        )
    )
)
def test_pack_unpack_round_trip(mats):
    A, B = mats
    model = LinearModel(A, B)
    theta = pack_model(model)
    assert theta.size == theta_dim(*B.shape)
    assert unpack_model(theta, *B.shape) == model


def test_model_shape_checks():
    with pytest.raises(ShapeError):
        LinearModel(np.zeros((2, 3)), np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        LinearModel(np.zeros((2, 2)), np.zeros((3, 1)))


def test_cost_zero_trajectory():
    cost = CostSpec.identity(2, 1)
    traj = Trajectory(np.zeros((4, 2)), np.zeros((3, 1)))
    assert evaluate_cost(traj, cost) == 0.0


def test_cost_one_step_scalar():
    cost = CostSpec.identity(1, 1)
    traj = Trajectory([[1.0], [0.5]], [[-0.5]])
    assert evaluate_cost(traj, cost) == pytest.approx(1.5, abs=1e-15)


def test_cost_hinge_term():
    soft = SoftBounds([0.5], [np.inf], 100.0)
    cost = CostSpec(np.zeros((1, 1)), np.eye(1), np.zeros((1, 1)), soft_bounds=soft)
    traj = Trajectory([[0.3], [0.5]], [[0.0]])
    assert evaluate_cost(traj, cost) == pytest.approx(20.0, abs=1e-12)


def test_cost_uses_references():
    cost = CostSpec.identity(1, 1, x_ref=[2.0], u_ref=[1.0])
    traj = Trajectory([[2.0], [2.0]], [[1.0]])
    assert evaluate_cost(traj, cost) == 0.0


def test_cost_dimension_mismatch():
    with pytest.raises(ShapeError):
        evaluate_cost(Trajectory(np.zeros((3, 2)), np.zeros((2, 1))), CostSpec.identity(3, 1))


@settings(max_examples=60)
@given(
    arrays(float, (6, 2), elements=finite),
    arrays(float, (5, 1), elements=finite),
)
def test_cost_nonnegative_and_vacuous_bounds_free(X, U):
    soft = SoftBounds([-np.inf, -np.inf], [np.inf, np.inf], 50.0)
    plain = CostSpec.identity(2, 1)
    vacuous = CostSpec.identity(2, 1, soft_bounds=soft)
    hinged = CostSpec.identity(2, 1, soft_bounds=SoftBounds([0.0, -1.0], [1.0, np.inf], 3.0))
    traj = Trajectory(X, U)
    assert evaluate_cost(traj, plain) >= 0
    assert evaluate_cost(traj, vacuous) == evaluate_cost(traj, plain)
    assert evaluate_cost(traj, hinged) >= evaluate_cost(traj, plain)


def test_hinge_zero_inside_bounds():
    sb = SoftBounds([-1.0, 0.0], [1.0, np.inf], 10.0)
    states = np.array([[0.0, 0.0], [1.0, 5.0], [-1.0, 0.1]])
    assert sb.violation(states).sum() == 0.0


def test_cost_validation():
    with pytest.raises(ValueError, match="positive definite"):
        CostSpec(np.eye(1), np.zeros((1, 1)), np.eye(1))
    with pytest.raises(ValueError, match="symmetric"):
        CostSpec(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(1), np.eye(2))
    with pytest.raises(ValueError, match="semidefinite"):
        CostSpec(-np.eye(1), np.eye(1), np.eye(1))
    with pytest.raises(ValueError):
        SoftBounds([1.0], [0.0], 1.0)
    with pytest.raises(ValueError):
        SoftBounds([0.0], [1.0], -1.0)


def test_trajectory_length_invariant():
    with pytest.raises(ShapeError):
        Trajectory(np.zeros((3, 1)), np.zeros((3, 1)))


@given(arrays(float, 4, elements=st.floats(0, 1)))
def test_box_unit_round_trip(z):
    box = Box([-2.0, 0.0, 1.0, -5.0], [2.0, 1.0, 3.0, 5.0])
    theta = box.from_unit(z)
    assert box.contains(theta, tol=1e-12)
    np.testing.assert_allclose(box.to_unit(theta), z, atol=1e-12)


def test_box_rejects_bad_bounds():
    with pytest.raises(ValueError):
        Box([0.0], [np.inf])
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
