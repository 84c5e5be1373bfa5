import numpy as np
import pytest

from cmdo.geometry import PolyhedralSet
from cmdo.model import QuadraticObjective
from cmdo.reference import (
    AioError,
    EnumerationLimitError,
    UnboundedProblemError,
    active_set_oracle,
    kkt_residual,
    projection_oracle,
    solve_aio,
)
from instances import random_polyhedron, random_psd, random_quadratic


def square(target):
    """``(w - target)^2`` in one variable."""
    return QuadraticObjective([[1.0]], [-2.0 * target], target**2)


class TestSolveAio:
    def test_unconstrained(self):
        sol = solve_aio(square(3.0), PolyhedralSet.whole_space(1))
        assert sol.minimizer[0] == pytest.approx(3.0, abs=1e-9)
        assert sol.objective == pytest.approx(0.0, abs=1e-12)

    def test_bound_active(self):
        sol = solve_aio(square(3.0), PolyhedralSet.from_constraints(1, [([1], "<=", 1)]))
        assert sol.minimizer[0] == pytest.approx(1.0, abs=1e-9)
        assert sol.objective == pytest.approx(4.0)
        assert sol.kkt_residual <= 1e-6

    def test_diminishing_steps(self):
        s = PolyhedralSet(2, lower=[0, 0], upper=[1, 1])
        f = QuadraticObjective(np.eye(2), [-4.0, 1.0])
        sol = solve_aio(f, s, stepsize="diminishing", tol=1e-8)
        np.testing.assert_allclose(sol.minimizer, [1, 0], atol=1e-7)

    def test_max_iter(self):
        f = QuadraticObjective(np.diag([1.0, 1e-4]), [0.0, -1.0])
        with pytest.raises(AioError) as err:
            solve_aio(f, PolyhedralSet.whole_space(2), max_iter=5)
        assert err.value.best is not None and err.value.residual > 0

    def test_unbounded(self):
        with pytest.raises(UnboundedProblemError):
            solve_aio(QuadraticObjective(np.zeros((2, 2)), [3.0, -1.0]), PolyhedralSet.whole_space(2))
        # a slow linear drift is reported as running out of iterations
        drift = QuadraticObjective(np.diag([1.0, 0.0]), [0.0, -1.0])
        with pytest.raises(AioError, match="max_iter"):
            solve_aio(drift, PolyhedralSet.whole_space(2), max_iter=1000)

    def test_minimality_spot_check(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            s, anchor = random_polyhedron(rng, 3, 4, box=True)
            f = QuadraticObjective(random_psd(rng, 3, rank=2), rng.normal(size=3))
            sol = solve_aio(f, s)
            assert s.violation(sol.minimizer) <= 1e-8
            assert sol.kkt_residual <= 1e-6
            for _ in range(50):
                w = s.project(anchor + rng.normal(scale=2, size=3))
                assert sol.objective <= f.value(w) + 1e-9


class TestOracle:
    def test_interior_minimizer(self):
        f = QuadraticObjective(np.eye(2), [-2.0, -2.0])
        s = PolyhedralSet.from_constraints(2, [([1, 1], "<=", 10)])
        np.testing.assert_allclose(active_set_oracle(f, s), [1, 1])

    def test_lagrange_example(self):
        f = QuadraticObjective(np.eye(2), [0.0, 0.0])
        s = PolyhedralSet.from_constraints(2, [([1, 1], ">=", 2)])
        np.testing.assert_allclose(active_set_oracle(f, s), [1, 1])

    def test_box_boundary(self):
        np.testing.assert_allclose(active_set_oracle(square(5.0), PolyhedralSet(1, lower=[0], upper=[1])), [1])

    def test_equalities(self):
        f = QuadraticObjective(np.eye(3), np.zeros(3))
        s = PolyhedralSet.from_constraints(3, [([1, 1, 1], "==", 3), ([1, 0, 0], "<=", 0)])
        np.testing.assert_allclose(active_set_oracle(f, s), [0, 1.5, 1.5], atol=1e-12)

    def test_enumeration_limit(self):
        s = PolyhedralSet(11, lower=np.zeros(11), upper=np.ones(11))
        with pytest.raises(EnumerationLimitError):
            active_set_oracle(QuadraticObjective.zero(11), s)

    def test_unbounded(self):
        f = QuadraticObjective(np.zeros((1, 1)), [1.0])
        with pytest.raises(UnboundedProblemError):
            active_set_oracle(f, PolyhedralSet.from_constraints(1, [([1], "<=", 3)]))

    def test_empty_set(self):
        s = PolyhedralSet.from_constraints(1, [([1], "<=", 0), ([1], ">=", 1)], probe=False)
        with pytest.raises(AioError):
            active_set_oracle(square(0.0), s)

    def test_projection_oracle(self):
        s = PolyhedralSet.from_constraints(2, [([1, 1], "==", 1), ([1, 0], "<=", 0)])
        np.testing.assert_allclose(projection_oracle([2.0, 0.0], s), [0, 1], atol=1e-12)

    def test_agrees_with_solver(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            dim = int(rng.integers(1, 5))
            s, _ = random_polyhedron(rng, dim, int(rng.integers(0, 5)), box=rng.random() < 0.3)
            f = random_quadratic(rng, dim)
            np.testing.assert_allclose(solve_aio(f, s).minimizer, active_set_oracle(f, s), atol=1e-6)


def test_kkt_residual_zero_at_optimum():
    s = PolyhedralSet.from_constraints(1, [([1], "<=", 1)])
    assert kkt_residual(square(3.0), s, np.array([1.0]), 0.5) == pytest.approx(0.0, abs=1e-12)
    assert kkt_residual(square(3.0), s, np.array([0.0]), 0.5) > 0.5
