import cvxpy as cp
import numpy as np
import pytest
from scipy.optimize import minimize

from memcap.channel_model import ChannelSpec
from memcap.errors import Infeasible, MNotPositive, NotRankOne, SpecError
from memcap.joint_solver import (
    ConstraintSet,
    JointOptions,
    LinkConstraint,
    extract_rank_one,
    feasibility_check,
    inner_waterfill,
    solve_joint,
)
from memcap.spectral import uniform_grid, whiten_grid
from memcap.waterfill import average_power, optimal_psd, solve_tpc

from conftest import random_spec

TIGHT = JointOptions(gap_tol=1e-10)


def setup(spec, N):
    g = uniform_grid(N)
    return whiten_grid(spec, g), g


def cvx_reference(W, grid, constraints):
    """Direct conic solve of the joint problem: a second, unrelated algorithm."""
    N, n, _ = W.shape
    w = grid.weights / (2 * np.pi)
    Rs = [cp.Variable((n, n), hermitian=True) for _ in range(N)]
    obj, cs = 0, []
    for k in range(N):
        L = np.linalg.cholesky(W[k] + 1e-13 * np.eye(n))
        M = np.eye(n) + L.conj().T @ Rs[k] @ L
        # real embedding doubles the log-determinant
        obj += w[k] * cp.log_det(cp.bmat([[cp.real(M), -cp.imag(M)], [cp.imag(M), cp.real(M)]])) / 4
        cs.append(Rs[k] >> 0)
    for A, b, sense in constraints:
        u = sum(w[k] * cp.real(cp.trace(A[k] @ Rs[k])) for k in range(N))
        cs.append(u <= b if sense > 0 else u >= b)
    prob = cp.Problem(cp.Maximize(obj), cs)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


def gram(link, grid):
    return link.gram(grid)


class TestConstraintSet:
    def test_unbounded(self):
        with pytest.raises(SpecError, match="unbounded"):
            ConstraintSet()

    def test_negative(self):
        with pytest.raises(SpecError):
            ConstraintSet(tpc=-1.0)
        with pytest.raises(SpecError):
            ConstraintSet(pac=[1.0, -0.1])

    def test_pac_length(self, mimo_2x2):
        f, g = setup(mimo_2x2, 4)
        with pytest.raises(SpecError):
            solve_joint(ConstraintSet(pac=[1.0]), f, g)


class TestInnerWaterfill:
    @pytest.mark.parametrize("s2,mu", [(1.0, 0.25), (0.5, 0.1), (2.0, 1.0)])
    def test_scalar(self, s2, mu):
        r = inner_waterfill([[1 / s2]], [[mu]])
        assert r[0, 0].real == pytest.approx(max(1 / mu - s2, 0.0), abs=1e-14)

    def test_maps_to_waterfill(self):
        R = inner_waterfill(np.diag([1.0, 1 / 3]), 0.5 * np.eye(2))
        np.testing.assert_allclose(R, np.diag([1.0, 0.0]), atol=1e-14)

    def test_matches_optimal_psd_at_scaled_identity(self, mimo_2x2):
        f, g = setup(mimo_2x2, 16)
        mu = 2.7
        ref = optimal_psd(f, mu)
        for k in range(16):
            np.testing.assert_allclose(inner_waterfill(f.W[k], np.eye(2) / mu), ref[k], atol=1e-12)

    def test_not_positive(self):
        with pytest.raises(MNotPositive):
            inner_waterfill(np.eye(2), np.diag([1.0, 0.0]))
        with pytest.raises(MNotPositive):
            inner_waterfill(np.eye(2), np.diag([1.0, -0.5]))

    def test_random_3x3_against_direct_search(self, rng):
        def obj(R, W, M):
            return np.linalg.slogdet(np.eye(3) + W @ R)[1] - np.trace(M @ R).real

        for _ in range(3):
            B = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            W = B @ B.conj().T
            C = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            M = C @ C.conj().T + 0.5 * np.eye(3)

            def neg(x):
                A = (x[:9] + 1j * x[9:]).reshape(3, 3)
                return -obj(A @ A.conj().T, W, M)

            best = max(-minimize(neg, rng.standard_normal(18), method="BFGS").fun for _ in range(4))
            R = inner_waterfill(W, M)
            assert np.linalg.eigvalsh(R).min() > -1e-12
            assert obj(R, W, M) == pytest.approx(best, abs=1e-4)
            assert obj(R, W, M) >= best - 1e-9


class TestFeasibility:
    def test_no_ehc(self, two_tap):
        f, g = setup(two_tap, 8)
        assert feasibility_check(ConstraintSet(tpc=1.0), f, g).feasible

    def test_zero_floor(self, two_tap):
        f, g = setup(two_tap, 8)
        cons = ConstraintSet(tpc=1.0, ehc=[LinkConstraint(0.0, taps=[(0, [[1.0]])])])
        assert feasibility_check(cons, f, g).feasible

    def test_floor_above_max_harvest(self):
        f, g = setup(ChannelSpec.scalar([1.0]), 8)
        cons = ConstraintSet(tpc=1.0, ehc=[LinkConstraint(2.0, taps=[(0, [[1.0]])])])
        res = feasibility_check(cons, f, g)
        assert not res.feasible and res.witness == "ehc[0]"
        assert res.max_harvest[0] == pytest.approx(1.0)

    def test_general_program(self, mimo_2x2):
        f, g = setup(mimo_2x2, 4)
        link = LinkConstraint(0.3, taps=[(0, [[1.0, 0.5]])])
        cons = ConstraintSet(tpc=1.0, pac=[0.6, 0.6], ehc=[link])
        res = feasibility_check(cons, f, g)
        assert res.feasible
        assert average_power(g, res.point) <= 1.0 + 1e-7
        # pac-limited maximum of |r1 + 0.5 r2|^2-type harvest is (sqrt(.6) + .5 sqrt(.6))^2 = 1.35
        cons_bad = ConstraintSet(tpc=1.0, pac=[0.6, 0.6], ehc=[LinkConstraint(2.0, taps=link.taps)])
        assert not feasibility_check(cons_bad, f, g).feasible


class TestDegeneracy:
    @pytest.mark.parametrize("N", [8, 64])
    def test_tpc_only_matches_closed_form(self, mimo_2x2, two_tap, corr_identity, N):
        for spec in (mimo_2x2, two_tap, corr_identity):
            f, g = setup(spec, N)
            ref = solve_tpc(f, g, 1.0)
            res = solve_joint(ConstraintSet(tpc=1.0), f, g, TIGHT)
            assert res.status == "optimal"
            assert res.capacity_nats == pytest.approx(ref.capacity_nats, rel=1e-6)
            assert res.duality_gap <= 1e-5 * (1 + res.capacity_nats)
            assert np.linalg.norm(res.psd - ref.psd, axis=(1, 2)).max() <= 1e-4
            assert res.water_level == pytest.approx(ref.water_level, rel=1e-4)

    def test_pac_symmetric(self):
        spec = ChannelSpec.memoryless(np.eye(2), 0.5 * np.eye(2))
        f, g = setup(spec, 8)
        ref = solve_tpc(f, g, 2.0).capacity_nats
        res = solve_joint(ConstraintSet(pac=[1.0, 1.0]), f, g, TIGHT)
        assert res.capacity_nats == pytest.approx(ref, rel=1e-8)

    def test_loose_ipc(self, mimo_2x2):
        f, g = setup(mimo_2x2, 32)
        ref = solve_tpc(f, g, 1.0).capacity_nats
        link = LinkConstraint(1e6, taps=[(0, [[1.0, 0.2]]), (1, [[0.3j, 0.1]])])
        res = solve_joint(ConstraintSet(tpc=1.0, ipc=[link]), f, g, TIGHT)
        assert abs(res.capacity_nats - ref) < 1e-8
        assert res.multipliers["ipc"][0] < 1e-8

    def test_zero_budget(self, mimo_2x2):
        f, g = setup(mimo_2x2, 8)
        res = solve_joint(ConstraintSet(tpc=0.0), f, g)
        assert res.capacity_nats == 0.0 and res.status == "optimal"


class TestActiveConstraints:
    def test_ipc_active(self, mimo_2x2):
        f, g = setup(mimo_2x2, 8)
        link = LinkConstraint(0.05, taps=[(0, [[1.0, 0.5]])])
        cons = ConstraintSet(tpc=1.0, ipc=[link])
        res = solve_joint(cons, f, g, TIGHT)
        assert res.status == "optimal"
        ref = cvx_reference(f.W, g, [(np.broadcast_to(np.eye(2), (8, 2, 2)), 1.0, 1), (link.gram(g), 0.05, 1)])
        assert res.capacity_nats == pytest.approx(ref, rel=1e-6)
        assert res.multipliers["ipc"][0] > 1e-3
        assert abs(res.constraint_slacks["ipc"][0]) < 1e-6

    def test_ehc_active(self, mimo_2x2):
        f, g = setup(mimo_2x2, 8)
        link = LinkConstraint(0.9, taps=[(0, [[0.2, 1.0]])])
        cons = ConstraintSet(tpc=1.0, ehc=[link])
        res = solve_joint(cons, f, g, TIGHT)
        assert res.status == "optimal"
        ref = cvx_reference(f.W, g, [(np.broadcast_to(np.eye(2), (8, 2, 2)), 1.0, 1), (link.gram(g), 0.9, -1)])
        assert res.capacity_nats == pytest.approx(ref, rel=1e-6)
        assert res.constraint_slacks["ehc"][0] >= -1e-9
        assert res.multipliers["ehc"][0] > 1e-3

    def test_tpc_and_pac(self, mimo_2x2):
        f, g = setup(mimo_2x2, 8)
        res = solve_joint(ConstraintSet(tpc=1.0, pac=[0.3, 0.9]), f, g, TIGHT)
        E1, E2 = np.diag([1.0, 0]), np.diag([0, 1.0])
        ref = cvx_reference(f.W, g, [(np.broadcast_to(np.eye(2), (8, 2, 2)), 1.0, 1),
                                     (np.broadcast_to(E1, (8, 2, 2)), 0.3, 1),
                                     (np.broadcast_to(E2, (8, 2, 2)), 0.9, 1)])
        assert res.capacity_nats == pytest.approx(ref, rel=1e-6)

    def test_infeasible(self):
        f, g = setup(ChannelSpec.scalar([1.0]), 8)
        cons = ConstraintSet(tpc=1.0, ehc=[LinkConstraint(2.0, taps=[(0, [[1.0]])])])
        res = solve_joint(cons, f, g)
        assert res.status == "infeasible" and res.witness == "ehc[0]" and res.psd is None
        with pytest.raises(Infeasible):
            solve_joint(cons, f, g, strict=True)


class TestDualityProperties:
    @pytest.fixture
    def solved(self, mimo_2x2):
        f, g = setup(mimo_2x2, 8)
        cons = ConstraintSet(tpc=1.0, pac=[0.7, 0.4],
                             ipc=[LinkConstraint(0.08, taps=[(0, [[1.0, 0.5]])])],
                             ehc=[LinkConstraint(0.3, taps=[(0, [[0.2, 1.0]])])])
        return solve_joint(cons, f, g, TIGHT)

    def test_weak_duality(self, solved):
        hist = np.array(solved.history)
        assert np.all(hist[:, 0] >= hist[:, 1] - 1e-12)
        best_dual = np.minimum.accumulate(hist[:, 0])
        gaps = best_dual - hist[:, 1]
        assert np.all(np.diff(gaps) <= 1e-15)

    def test_slacks_and_complementarity(self, solved):
        assert solved.status == "optimal"
        for key in ("tpc", "pac", "ipc", "ehc"):
            y = np.atleast_1d(solved.multipliers[key])
            s = np.atleast_1d(solved.constraint_slacks[key])
            assert np.all(s >= -1e-9)
            assert np.all(y >= 0)
            assert np.all(y * s <= 1e-6 * (1 + solved.capacity_nats))

    def test_psd_valid(self, solved):
        R = solved.psd
        assert np.allclose(R, np.conj(np.swapaxes(R, 1, 2)))
        assert np.linalg.eigvalsh(R).min() >= -1e-12

    def test_serializes(self, solved):
        d = solved.to_dict()
        assert d["status"] == "optimal" and len(d["multipliers"]["pac"]) == 2


class TestMonotonicity:
    def test_budget_ladders(self, mimo_2x2):
        f, g = setup(mimo_2x2, 8)
        ipc = LinkConstraint(0.1, taps=[(0, [[1.0, 0.5]])])
        ehc_taps = [(0, [[0.2, 1.0]])]

        def cap(tpc=1.0, pac=(0.6, 0.6), ipc_lim=0.1, floor=0.2):
            cons = ConstraintSet(tpc=tpc, pac=list(pac), ipc=[LinkConstraint(ipc_lim, taps=ipc.taps)],
                                 ehc=[LinkConstraint(floor, taps=ehc_taps)])
            r = solve_joint(cons, f, g, TIGHT)
            assert r.status == "optimal"
            return r.capacity_nats

        slack = 1e-8
        for ladder in (
            [cap(tpc=p) for p in (0.5, 0.8, 1.2, 2.0)],
            [cap(pac=(p, 0.6)) for p in (0.2, 0.4, 0.8, 1.5)],
            [cap(ipc_lim=q) for q in (0.02, 0.05, 0.1, 1.0)],
            [cap(floor=e) for e in (0.3, 0.2, 0.1, 0.0)],
        ):
            assert np.all(np.diff(ladder) >= -slack), ladder


class TestRankOne:
    def test_miso_equal_gains(self):
        spec = ChannelSpec(2, 1, [(0, [[1.0, 1.0]])], [(0, [[1.0]])])
        f, g = setup(spec, 8)
        res = solve_joint(ConstraintSet(pac=[1.0, 1.0]), f, g, TIGHT)
        assert res.capacity_nats == pytest.approx(0.5 * np.log(5), abs=1e-8)
        for w, resid in extract_rank_one(res):
            assert resid <= 1e-6
            np.testing.assert_allclose(w, [1.0, 1.0], atol=1e-4)

    def test_miso_dead_antenna(self):
        spec = ChannelSpec(2, 1, [(0, [[1.0, 0.0]])], [(0, [[1.0]])])
        f, g = setup(spec, 8)
        res = solve_joint(ConstraintSet(pac=[1.0, 1.0]), f, g, TIGHT)
        assert res.capacity_nats == pytest.approx(0.5 * np.log(2), abs=1e-9)
        for w, _ in extract_rank_one(res):
            np.testing.assert_allclose(np.abs(w), [1.0, 0.0], atol=1e-6)

    def test_miso_frequency_selective_phases(self):
        spec = ChannelSpec(2, 1, [(0, [[1.0, 0.5j]]), (1, [[0.3, -0.8]])], [(0, [[1.0]])])
        f, g = setup(spec, 16)
        res = solve_joint(ConstraintSet(pac=[0.5, 1.0]), f, g, TIGHT)
        beams = extract_rank_one(res)
        assert max(r for _, r in beams) <= 1e-6

    def test_siso(self, two_tap):
        f, g = setup(two_tap, 8)
        res = solve_joint(ConstraintSet(pac=[1.0]), f, g, TIGHT)
        assert all(r == 0.0 for _, r in extract_rank_one(res))

    def test_not_rank_one_raises(self):
        spec = ChannelSpec(2, 1, [(0, [[1.0, 1.0]])], [(0, [[1.0]])])
        f, g = setup(spec, 4)
        res = solve_joint(ConstraintSet(pac=[1.0, 1.0]), f, g, TIGHT)
        res.psd = res.psd + 0.1 * np.eye(2)
        with pytest.raises(NotRankOne):
            extract_rank_one(res)

    def test_needs_optimal(self):
        f, g = setup(ChannelSpec.scalar([1.0]), 8)
        cons = ConstraintSet(tpc=1.0, ehc=[LinkConstraint(2.0, taps=[(0, [[1.0]])])])
        with pytest.raises(ValueError):
            extract_rank_one(solve_joint(cons, f, g))


def test_random_channels_degenerate(rng):
    for _ in range(5):
        spec = random_spec(rng)
        f, g = setup(spec, 16)
        ref = solve_tpc(f, g, 1.3).capacity_nats
        assert solve_joint(ConstraintSet(tpc=1.3), f, g, TIGHT).capacity_nats == pytest.approx(ref, rel=1e-6)
