import math

import numpy as np
import pytest

from sbcpn.experiments.dct import DenseIsometry
from sbcpn.experiments.students_t import StudentsTInstance, StudentsTOracle
from sbcpn.problem import CompositeProblem, QuadraticOracle, composite_value, gradient_check
from sbcpn.regularizers import GroupL2, L1, Zero
from sbcpn.residual import residual, residual_restricted


def one_by_one_students_t():
    inst = StudentsTInstance(DenseIsometry(np.ones((1, 1))), np.zeros(1), 0.25, 1.0, np.zeros(1))
    return StudentsTOracle(inst)


def test_composite_value_examples():
    assert composite_value(CompositeProblem(QuadraticOracle(np.zeros(2)), Zero(2)), np.zeros(2)) == 0.0
    prob = CompositeProblem(QuadraticOracle(np.zeros(2)), L1(2, 1.0))
    assert composite_value(prob, np.array([1.0, -2.0])) == pytest.approx(5.5)
    prob = CompositeProblem(one_by_one_students_t(), Zero(1))
    assert composite_value(prob, np.array([0.5])) == pytest.approx(math.log(2), abs=1e-12)


def test_composite_value_dimension_mismatch():
    prob = CompositeProblem(QuadraticOracle(np.zeros(3)), Zero(3))
    with pytest.raises(ValueError):
        composite_value(prob, np.zeros(2))
    with pytest.raises(ValueError):
        CompositeProblem(QuadraticOracle(np.zeros(3)), Zero(4))


def test_gradient_check_quadratic(rng):
    assert gradient_check(QuadraticOracle(np.zeros(5)), rng.standard_normal(5), 1e-5) <= 1e-8


def test_gradient_check_reports_nonfinite():
    class Broken(QuadraticOracle):
        def value(self, x):
            return float("nan")
    assert gradient_check(Broken(np.zeros(2)), np.zeros(2)) == float("inf")


def test_restricted_operator_symmetry(rng):
    H = rng.standard_normal((6, 6))
    o = QuadraticOracle(np.zeros(6), H + H.T)
    S = np.array([0, 2, 5])
    op = o.restricted_operator(np.zeros(6), S)
    u, v = rng.standard_normal(3), rng.standard_normal(3)
    assert op.matvec(u) @ v == pytest.approx(u @ op.matvec(v), rel=1e-10)


def test_residual_examples():
    a = np.array([1.0, -3.0])
    prob = CompositeProblem(QuadraticOracle(a), Zero(2))
    x = np.array([0.2, 0.7])
    rep = residual(prob, x, prob.smooth.gradient(x))
    np.testing.assert_allclose(rep.g_full, prob.smooth.gradient(x))
    assert residual(prob, a, prob.smooth.gradient(a)).norm == 0.0

    prob = CompositeProblem(QuadraticOracle(np.array([2.0])), L1(1, 1.0))
    x = np.zeros(1)
    assert residual(prob, x, prob.smooth.gradient(x)).g_full == pytest.approx([-1.0])


def test_residual_restricted_examples():
    prob = CompositeProblem(QuadraticOracle(np.array([2.0, 0.0, 0.0])), L1(3, 1.0))
    x = np.zeros(3)
    g = prob.smooth.gradient(x)
    assert residual_restricted(prob, x, g, [0]) == pytest.approx([-1.0])
    np.testing.assert_array_equal(residual_restricted(prob, x, g, np.arange(3)),
                                  residual(prob, x, g).g_full)
    with pytest.raises(ValueError):
        residual_restricted(prob, x, g, [])


def test_residual_restricted_groups(rng):
    reg = GroupL2.contiguous(12, 0.5)
    prob = CompositeProblem(QuadraticOracle(rng.standard_normal(12)), reg)
    x = rng.standard_normal(12)
    g = prob.smooth.gradient(x)
    S = np.arange(5, 12)
    np.testing.assert_allclose(residual_restricted(prob, x, g, S), residual(prob, x, g).g_full[S],
                               atol=1e-15)
    with pytest.raises(ValueError):
        residual_restricted(prob, x, g, np.arange(3, 8))


def test_residual_continuity(rng):
    prob = CompositeProblem(QuadraticOracle(rng.standard_normal(10)), L1(10, 0.3))
    x = rng.standard_normal(10)
    dx = 1e-8 * rng.standard_normal(10) / np.sqrt(10)
    g1 = residual(prob, x, prob.smooth.gradient(x)).g_full
    g2 = residual(prob, x + dx, prob.smooth.gradient(x + dx)).g_full
    assert np.linalg.norm(g1 - g2) <= 1e-7
