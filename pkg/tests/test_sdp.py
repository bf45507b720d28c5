import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedtraffic.errors import SpectrumError
from mixedtraffic.sdp import (INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, UNBOUNDED, ConicProgram,
                              lyapunov_solve, smat, solve, svec)


def random_lmi(rng, p=4, k=5):
    """``min c^T x`` over ``F0 + sum x_j F_j >= 0`` plus a box ``|x_j| <= 10``; feasible at 0."""
    F = rng.standard_normal((p, k, k))
    F = F + F.transpose(0, 2, 1)
    F0 = np.eye(k) * k
    c = rng.standard_normal(p)
    prog = ConicProgram()
    prog.add_variable("x", (p, 1))
    prog.minimize(lambda v: float(c @ v["x"][:, 0]))
    prog.add_psd(lambda v: F0 + np.tensordot(v["x"][:, 0], F, axes=1), name="lmi")
    prog.add_psd(lambda v: np.diag(np.concatenate([10 - v["x"][:, 0], 10 + v["x"][:, 0]])),
                 name="box")
    return prog, c, F0, F


def tr_dominance(M, with_psd=True):
    k = M.shape[0]
    prog = ConicProgram()
    prog.add_variable("X", k, symmetric=True)
    prog.minimize(lambda v: np.trace(v["X"]))
    prog.add_psd(lambda v: v["X"] - M)
    if with_psd:
        prog.add_psd(lambda v: v["X"])
    return prog


class TestSvec:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_round_trip_and_inner_product(self, k, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((k, k)); A = A + A.T
        B = rng.standard_normal((k, k)); B = B + B.T
        np.testing.assert_allclose(smat(svec(A), k), A, atol=1e-14)
        assert svec(A) @ svec(B) == pytest.approx(np.sum(A * B), rel=1e-12, abs=1e-12)
        assert svec(A).size == k * (k + 1) // 2


class TestExamples:
    def test_scalar(self):
        prog = ConicProgram()
        prog.add_variable("x", 1)
        prog.minimize(lambda v: v["x"][0, 0])
        prog.add_psd(lambda v: v["x"] - 1.0)
        out = solve(prog)
        assert out.status == OPTIMAL
        assert out.values["x"][0, 0] == pytest.approx(1.0, abs=1e-7)

    def test_trace_dominance(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((2, 2)))
        M = Q @ np.diag([-1.0, 2.0]) @ Q.T
        out = solve(tr_dominance(M))
        assert out.ok
        assert out.objective == pytest.approx(2.0, abs=1e-6)
        lam, V = np.linalg.eigh(M)
        np.testing.assert_allclose(out.values["X"], V @ np.diag(np.maximum(lam, 0)) @ V.T, atol=1e-5)

    def test_trace_dominance_without_psd_is_trace(self):
        M = np.diag([-1.0, 2.0])
        out = solve(tr_dominance(M, with_psd=False))
        assert out.ok and out.objective == pytest.approx(np.trace(M), abs=1e-6)

    def test_lyapunov_feasibility(self):
        k, eps = 3, 1e-6
        A0 = -np.eye(k)
        prog = ConicProgram()
        prog.add_variable("X", k, symmetric=True)
        prog.add_psd(lambda v: v["X"] - eps * np.eye(k))
        prog.add_psd(lambda v: -(A0 @ v["X"] + v["X"] @ A0.T) - np.eye(k))
        prog.add_psd(lambda v: 10 * np.eye(k) - v["X"])
        out = solve(prog)
        assert out.ok
        X = out.values["X"]
        assert np.linalg.eigvalsh(X)[0] >= eps - 1e-8
        assert np.linalg.eigvalsh(A0 @ X + X @ A0.T + np.eye(k))[-1] <= 1e-7

    def test_equalities(self):
        prog = ConicProgram()
        prog.add_variable("X", 2, symmetric=True)
        prog.minimize(lambda v: v["X"][0, 1])
        prog.add_equality(lambda v: np.array([v["X"][0, 0] - 1, v["X"][1, 1] - 4]))
        prog.add_psd(lambda v: v["X"])
        out = solve(prog)
        assert out.ok and out.objective == pytest.approx(-2.0, abs=1e-6)


class TestStatuses:
    def test_infeasible(self):
        prog = ConicProgram()
        prog.add_variable("x", 1)
        prog.add_psd(lambda v: v["x"] - 1.0)
        prog.add_psd(lambda v: -v["x"])
        out = solve(prog)
        assert out.status == INFEASIBLE
        assert out.certificate is not None

    def test_infeasible_equalities(self):
        prog = ConicProgram()
        prog.add_variable("x", (2, 1))
        prog.add_equality(lambda v: np.array([v["x"][0, 0] - 1, v["x"][0, 0] - 2]))
        prog.add_psd(lambda v: np.diag(v["x"][:, 0]))
        assert solve(prog).status == INFEASIBLE

    def test_unbounded(self):
        prog = ConicProgram()
        prog.add_variable("x", 1)
        prog.minimize(lambda v: -v["x"][0, 0])
        prog.add_psd(lambda v: v["x"] - 1.0)
        assert solve(prog).status == UNBOUNDED

    def test_iteration_limit(self):
        prog, *_ = random_lmi(np.random.default_rng(1))
        out = solve(prog, max_iters=2)
        assert out.status == NUMERICAL_FAILURE and "best iterate" in out.message

    def test_rejects_nonaffine(self):
        prog = ConicProgram()
        prog.add_variable("x", 1)
        prog.add_psd(lambda v: v["x"] ** 2)
        with pytest.raises(ValueError):
            solve(prog)

    def test_bad_tolerance(self):
        prog, *_ = random_lmi(np.random.default_rng(1))
        with pytest.raises(ValueError):
            solve(prog, feas_tol=0)


class TestProperties:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_weak_duality(self, seed):
        prog, *_ = random_lmi(np.random.default_rng(seed))
        out = solve(prog)
        assert out.ok
        assert out.objective - out.dual_objective >= -1e-7 * (1 + abs(out.objective))
        assert out.max_violation <= 1e-8

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
    def test_scaling_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        prog, c, F0, F = random_lmi(rng)
        a = solve(prog)
        prog2 = ConicProgram()
        prog2.add_variable("x", (c.size, 1))
        prog2.minimize(lambda v: scale * float(c @ v["x"][:, 0]))
        prog2.add_psd(lambda v: F0 + np.tensordot(v["x"][:, 0], F, axes=1))
        prog2.add_psd(lambda v: np.diag(np.concatenate([10 - v["x"][:, 0], 10 + v["x"][:, 0]])))
        b = solve(prog2)
        assert a.status == b.status == OPTIMAL
        gap_tol = 1e-8
        rel = abs(b.objective / scale - a.objective) / (1 + abs(a.objective))
        assert rel <= 10 * gap_tol
        # On a rank-deficient optimal face the iterate is only pinned to about sqrt(gap).
        np.testing.assert_allclose(a.values["x"], b.values["x"], atol=1e-3)

    def test_reproducible(self):
        prog, *_ = random_lmi(np.random.default_rng(7))
        a, b = solve(prog), solve(prog)
        assert a.objective == b.objective and a.iterations == b.iterations
        np.testing.assert_array_equal(a.values["x"], b.values["x"])

    def test_cross_check_against_cvxopt(self):
        cvxopt = pytest.importorskip("cvxopt")
        from cvxopt import matrix, solvers
        for seed in range(5):
            prog, c, F0, F = random_lmi(np.random.default_rng(seed))
            ours = solve(prog)
            p, k = c.size, F0.shape[0]
            G1 = matrix(np.stack([-F[j].ravel(order="F") for j in range(p)], axis=1))
            G2 = np.zeros((4 * p * p, p))
            for j in range(p):
                D = np.zeros((2 * p, 2 * p)); D[j, j] = 1; D[p + j, p + j] = -1
                G2[:, j] = D.ravel(order="F")
            h2 = np.diag(np.full(2 * p, 10.0))
            solvers.options.update(show_progress=False, abstol=1e-9, reltol=1e-9, feastol=1e-9)
            ref = solvers.sdp(matrix(c), Gs=[G1, matrix(G2)], hs=[matrix(F0), matrix(h2)])
            assert ref["status"] == "optimal"
            assert ours.objective == pytest.approx(ref["primal objective"], abs=1e-6)


class TestLyapunov:
    def test_scalar(self):
        assert lyapunov_solve(np.array([[-1.0]]), np.array([[1.0]]))[0, 0] == pytest.approx(0.5)

    def test_diagonal(self):
        P = lyapunov_solve(np.diag([-1.0, -2.0]), np.eye(2))
        np.testing.assert_allclose(P, np.diag([0.5, 0.25]), atol=1e-14)

    def test_random_residual(self, rng):
        for _ in range(5):
            M = rng.standard_normal((10, 10))
            M -= (np.linalg.eigvals(M).real.max() + 0.5) * np.eye(10)
            W = rng.standard_normal((10, 4)); W = W @ W.T
            P = lyapunov_solve(M, W)
            res = np.linalg.norm(M @ P + P @ M.T + W)
            assert res <= 1e-10 * (np.linalg.norm(M) * np.linalg.norm(P) + np.linalg.norm(W))
            np.testing.assert_allclose(P, P.T)

    def test_not_hurwitz(self):
        with pytest.raises(SpectrumError):
            lyapunov_solve(np.diag([-1.0, 0.1]), np.eye(2))
