import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from mixedtraffic.controllability import ring_mode
from mixedtraffic.errors import (ParameterError, StructuredInfeasibleError, TopologyError,
                                 UnboundedNormError)
from mixedtraffic.synthesis import (PerformanceWeights, SynthesisResult, build_performance, build_program,
                                    closed_loop_h2, full_topology, h2_norm, in_pattern,
                                    invariance_matrix, riccati_optimum, ring_topology,
                                    solve_structured_h2, sparsity_invariance_holds,
                                    topology_to_pattern)
from mixedtraffic.traffic import LinearHdvCoeffs, assemble_ring_model

W = PerformanceWeights()


@pytest.fixture(scope="session")
def restricted(homogeneous_model):
    return solve_structured_h2(homogeneous_model, W, topology_to_pattern(ring_topology(20, 5, 5), 20))


@pytest.fixture(scope="session")
def full(homogeneous_model):
    return solve_structured_h2(homogeneous_model, W, topology_to_pattern(full_topology(20), 20))


def invariance_witness(T, S, i, j):
    """Witness that adding the pair (i, j) to ``S`` breaks invariance, or None."""
    N = T.shape[1]
    X = np.eye(N)
    X[i, j] = X[j, i] = 0.5
    for k in range(T.shape[0]):
        Z = T[k].astype(float)[None, :]
        K = linalg.solve(X, Z.T).T
        if np.abs(K[0, ~T[k]]).max(initial=0.0) > 1e-12:
            return X, Z
    return None


class TestWeights:
    def test_default_weights(self):
        Q, R = build_performance(W, 20)
        np.testing.assert_allclose(np.diag(Q)[:4], [9e-4, 2.25e-2, 9e-4, 2.25e-2])
        assert np.count_nonzero(Q - np.diag(np.diag(Q))) == 0
        assert R[0, 0] == 1.0

    def test_identity_case(self):
        Q, R = build_performance(PerformanceWeights(1, 1, 1), 1)
        np.testing.assert_array_equal(Q, np.eye(2))
        assert R[0, 0] == 1.0

    @pytest.mark.parametrize("kw", [dict(gamma_s=0), dict(gamma_v=-1), dict(gamma_u=0)])
    def test_positive(self, kw):
        with pytest.raises(ParameterError):
            PerformanceWeights(**kw)


class TestPatterns:
    def test_toy(self):
        S = invariance_matrix(np.array([[1, 1, 0, 0]]))
        expect = np.zeros((4, 4), bool)
        expect[:2, :2] = expect[2:, 2:] = True
        np.testing.assert_array_equal(S, expect)

    def test_full_is_all_ones(self):
        assert topology_to_pattern(full_topology(6), 6).S_star.all()

    def test_topology_errors(self):
        with pytest.raises(TopologyError):
            topology_to_pattern({2, 3}, 5)
        with pytest.raises(TopologyError):
            topology_to_pattern({1, 9}, 5)

    def test_ring_topology(self):
        assert ring_topology(20, 5, 5) == {1, 16, 17, 18, 19, 20, 2, 3, 4, 5, 6}
        assert ring_topology(4, 5, 5) == {1, 2, 3, 4}

    def test_pattern_invariants(self):
        pat = topology_to_pattern({1, 3, 7}, 8)
        m = pat.mask[0]
        assert np.array_equal(m[0::2], m[1::2])
        np.testing.assert_array_equal(pat.T, pat.mask)
        assert np.array_equal(pat.S_star, pat.S_star.T) and pat.S_star.diagonal().all()
        assert pat.vehicles == [1, 3, 7]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_invariance_random(self, n, seed):
        rng = np.random.default_rng(seed)
        ecf = {1} | {int(i) for i in np.flatnonzero(rng.random(n) < 0.5) + 1}
        assert sparsity_invariance_holds(topology_to_pattern(ecf, n), rng, draws=10)

    @pytest.mark.parametrize("N", range(1, 9))
    def test_maximality_exhaustive(self, N):
        # Adding any single off-pattern pair already admits a violating witness;
        # every S' not contained in S* holds such a pair together with the diagonal.
        for bits in itertools.product([False, True], repeat=N):
            T = np.array([bits])
            S = invariance_matrix(T)
            assert np.array_equal(S, S.T) and S.diagonal().all()
            for i, j in zip(*np.nonzero(~S)):
                assert invariance_witness(T, S, i, j) is not None

    def test_maximality_multi_row(self, rng):
        for _ in range(50):
            N = int(rng.integers(2, 7))
            T = rng.random((int(rng.integers(1, 4)), N)) < 0.5
            S = invariance_matrix(T)
            X = np.eye(N) + 0.1 * rng.standard_normal((N, N)) * S
            X = (X + X.T) / 2 + N * np.eye(N)
            for k in range(T.shape[0]):
                K = linalg.solve(X, T[k].astype(float))
                assert np.abs(K[~T[k]]).max(initial=0.0) <= 1e-12
            for i, j in zip(*np.nonzero(~S)):
                assert invariance_witness(T, S, i, j) is not None


class TestH2Norm:
    def test_scalar(self):
        assert h2_norm([[-1.0]], [[1.0]], [[1.0]]) == pytest.approx(1 / np.sqrt(2))

    def test_unstable(self):
        with pytest.raises(UnboundedNormError):
            h2_norm(np.diag([-1.0, 0.1]), np.eye(2), np.eye(2))

    def test_excited_zero_mode(self):
        with pytest.raises(UnboundedNormError):
            h2_norm(np.diag([-1.0, 0.0]), np.eye(2), np.eye(2))

    def test_deflation_matches_direct_on_complement(self):
        A = np.array([[0.0, 0.0], [1.0, -2.0]])
        H = np.array([[0.0], [1.0]])
        assert h2_norm(A, H, np.array([[0.0, 1.0]])) == pytest.approx(0.5)


class TestSynthesis:
    def test_restricted_topology(self, homogeneous_model, restricted):
        m, r = homogeneous_model, restricted
        blocks = np.any(r.K.reshape(-1, 2) != 0, axis=1)
        assert blocks.sum() == 11
        assert in_pattern(r.K, r.pattern)
        ev = np.sort(np.linalg.eigvals(r.closed_loop(m)).real)
        assert abs(ev[-1]) <= 1e-8 and ev[-2] < -1e-4
        assert np.linalg.eigvalsh(r.X)[0] > 1e-6 * 0.999
        rho = ring_mode(m.n)
        assert np.abs(rho @ r.closed_loop(m)).max() <= 1e-12

    def test_certificate_inequalities(self, homogeneous_model, restricted):
        m, r = homogeneous_model, restricted
        L = m.A @ r.X - m.B @ r.Z
        lmi = L + L.T + m.H @ m.H.T
        assert np.linalg.eigvalsh(lmi)[-1] <= 1e-6
        assert closed_loop_h2(m, r.K, W) ** 2 <= r.certified_cost * (1 + 1e-4)

    def test_full_matches_riccati(self, homogeneous_model, full):
        _, opt = riccati_optimum(homogeneous_model, W)
        assert full.certified_cost == pytest.approx(opt, rel=1e-4)
        assert not full.structured

    def test_monotone(self, full, restricted, homogeneous_model):
        assert restricted.certified_cost >= full.certified_cost * (1 - 1e-8)
        small = solve_structured_h2(homogeneous_model, W,
                                    topology_to_pattern(ring_topology(20, 4, 4), 20))
        assert small.certified_cost >= restricted.certified_cost * (1 - 1e-8)

    def test_cross_check_against_cvxopt(self, homogeneous_model, restricted):
        pytest.importorskip("cvxopt")
        from cvx_oracle import solve_with_cvxopt
        m = homogeneous_model
        status, obj = solve_with_cvxopt(build_program(m, W, restricted.pattern).compile(), 1e-8)
        assert status == "optimal"
        assert restricted.certified_cost == pytest.approx(obj, rel=1e-5)
        # Too small a neighbourhood: both solvers report infeasibility.
        pat = topology_to_pattern(ring_topology(20, 2, 2), 20)
        assert solve_with_cvxopt(build_program(m, W, pat).compile(), 1e-8)[0] == "primal infeasible"
        with pytest.raises(StructuredInfeasibleError):
            solve_structured_h2(m, W, pat)

    def test_round_trip(self, restricted):
        r2 = SynthesisResult.from_dict(restricted.to_dict())
        np.testing.assert_array_equal(r2.K, restricted.K)
        assert r2.pattern.vehicles == restricted.pattern.vehicles

    def test_infeasible_tiny_topology(self):
        c = LinearHdvCoeffs(2.0, 0.3, 0.2)
        m = assemble_ring_model([c] * 4, 10.0, 100.0, hdv_spacings=[20.0] * 4)
        with pytest.raises(StructuredInfeasibleError) as e:
            solve_structured_h2(m, W, topology_to_pattern({1}, 5))
        cert = e.value.certificate
        assert cert["kind"] == "primal-infeasible" and cert["residual"] <= 1e-7
        assert all(np.linalg.eigvalsh(Zb)[0] >= -1e-8 for Zb in cert["Z"])
