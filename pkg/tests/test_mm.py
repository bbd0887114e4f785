import numpy as np
import pytest

import oracles
from conftest import make_paper_setup, make_small_setup, random_unit_modulus
from dfrcwave.ci import build_ci_set, ci_margins, initialize_waveform
from dfrcwave.costs import total_objective
from dfrcwave.mm import (
    MmWorkspace,
    diagonal_majorizer,
    majorize_to_linear,
    majorizer_matvec,
    run_mm,
    solve_duals_batched,
    solve_subpulse_dual,
)
from dfrcwave.scenario import Weights, mat_block, vec_block


def exact_workspace(geom, spec, scene, weights, L):
    """Workspace whose first-level diagonal is the exact dense value."""
    ws = MmWorkspace(geom, spec, scene, weights, L)
    terms = oracles.quartic_term_list(
        geom, spec.angle_grid_deg, spec.desired_gain,
        scene.unique_angles_deg(), scene.max_lag, L, weights,
    )
    n = geom.n_tx * L
    ws.set_e_matrix(oracles.exact_psi_row_abs_sums(terms, n))
    return ws, terms


class TestDiagonalMajorizer:
    def test_identity_is_tight(self):
        r = diagonal_majorizer(np.eye(4))
        np.testing.assert_allclose(r, 1.0)

    def test_real_nonnegative_matches_plain_row_sums(self, rng):
        A = rng.random((5, 5))
        Q = (A + A.T) / 2
        np.testing.assert_allclose(diagonal_majorizer(Q), Q.sum(axis=1), atol=1e-14)

    def test_dominates_random_hermitian(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 9))
            Q = oracles.random_hermitian(rng, n)
            R = np.diag(diagonal_majorizer(Q))
            evals = np.linalg.eigvalsh(R - Q)
            assert evals.min() >= -1e-9
            u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            quad = np.real(u.conj() @ (R - Q) @ u)
            assert quad >= -1e-9 * np.linalg.norm(u) ** 2 * np.linalg.norm(Q, 2)

    def test_non_hermitian_rejected(self, rng):
        with pytest.raises(ValueError):
            diagonal_majorizer(rng.random((3, 3)) + 1j * np.eye(3))

    def test_both_diagonals_dominate_and_log_tightness(self, rng, capsys):
        # tightness vs lambda_max * I is seed/structure dependent: logged,
        # not asserted; validity of both majorizers is asserted
        tighter = 0
        trials = 40
        for _ in range(trials):
            Q = oracles.random_hermitian(rng, 6)
            r = diagonal_majorizer(Q)
            lam = np.linalg.eigvalsh(Q)[-1]
            assert np.linalg.eigvalsh(np.diag(r) - Q).min() >= -1e-9
            assert np.linalg.eigvalsh(lam * np.eye(6) - Q).min() >= -1e-9
            tighter += np.trace(np.diag(r)) <= 6 * lam
        print(f"diag(|Q|1) tighter in trace on {tighter}/{trials} unstructured draws")


class TestQuadraticSurrogate:
    def test_matvec_matches_dense(self, rng):
        geom, spec, scene, _, w, X0 = make_small_setup(n_tx=2, L=3, n_grid=4)
        ws, terms = exact_workspace(geom, spec, scene, w, 3)
        x = vec_block(X0)
        Phi = oracles.dense_quadratic_majorizer(terms, x)
        W, _ = ws.lag_blocks(X0)
        for _ in range(5):
            p = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            ref = Phi @ p
            got = ws.quad_matvec(W, X0, p)
            assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-8

    def test_matvec_zero_weights(self, rng):
        geom, spec, scene, _, _, X0 = make_small_setup(n_tx=2, L=3, n_grid=4)
        w0 = Weights(0.0, 0.0, 0.0)
        ws = MmWorkspace(geom, spec, scene, w0, 3)
        ws.set_e_matrix(np.zeros((6, 6)))
        p = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        out = majorizer_matvec(X0, p, geom, spec, scene, w0, workspace=ws)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_pattern_only_path_matches_operator_sum(self, rng):
        # beam-pattern part alone against sum_u (x^H B_u^H x) B_u p
        geom, spec, scene, _, _, X0 = make_small_setup(n_tx=2, L=3, n_grid=5, max_lag=2)
        w = Weights(1.0, 0.0, 0.0)
        ws, terms = exact_workspace(geom, spec, scene, w, 3)
        ws.set_e_matrix(np.zeros((6, 6)))
        x = vec_block(X0)
        Bs = [Op for wt, Op in terms if wt == 1.0][: spec.n_bins]
        Phi1 = sum((x.conj() @ B.conj().T @ x) * B for B in Bs)
        W, _ = ws.lag_blocks(X0)
        p = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        ref = 2.0 * (Phi1 @ p)
        got = ws.quad_matvec(W, X0, p)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-8

    def test_row_sums_exact_against_dense(self, rng):
        geom, spec, scene, _, w, X0 = make_small_setup(n_tx=2, L=3, n_grid=4)
        ws, terms = exact_workspace(geom, spec, scene, w, 3)
        x = vec_block(X0)
        x = x / np.abs(x)
        Xn = mat_block(x, 2)
        Phi = oracles.dense_quadratic_majorizer(terms, x)
        W, _ = ws.lag_blocks(Xn)
        got = ws.row_abs_sums(W, Xn)
        ref = np.abs(Phi).sum(axis=1)
        np.testing.assert_allclose(got, ref, rtol=1e-8)

    def test_structured_diagonal_bound_dominates_exact(self):
        geom, spec, scene, _, w, _ = make_small_setup(n_tx=2, L=3, n_grid=4)
        ws = MmWorkspace(geom, spec, scene, w, 3)
        terms = oracles.quartic_term_list(
            geom, spec.angle_grid_deg, spec.desired_gain,
            scene.unique_angles_deg(), scene.max_lag, 3, w,
        )
        E_exact = oracles.exact_psi_row_abs_sums(terms, 6)
        assert np.all(ws.E >= E_exact - 1e-9)

    def test_gram_lambda_max_matches_dense_psi(self):
        geom, spec, scene, _, w, _ = make_small_setup(n_tx=2, L=3, n_grid=4)
        ws = MmWorkspace(geom, spec, scene, w, 3, majorizer="lambda_max")
        terms = oracles.quartic_term_list(
            geom, spec.angle_grid_deg, spec.desired_gain,
            scene.unique_angles_deg(), scene.max_lag, 3, w,
        )
        Psi = oracles.dense_psi(terms)
        lam_ref = float(np.linalg.eigvalsh(Psi)[-1])
        lam_got = ws._gram_lambda_max()
        assert abs(lam_got - lam_ref) / lam_ref < 1e-9


class TestLinearSurrogate:
    @pytest.mark.parametrize("majorizer", ["proposed", "lambda_max"])
    def test_tangent_at_anchor(self, majorizer):
        geom, spec, scene, _, w, X0 = make_small_setup(n_tx=3, L=4, n_grid=5)
        ws = MmWorkspace(geom, spec, scene, w, 4, majorizer=majorizer)
        lin = majorize_to_linear(X0, geom, spec, scene, w, workspace=ws)
        g0 = total_objective(X0, geom, spec, scene, w).total
        assert abs(lin.surrogate(vec_block(X0)) - g0) <= 1e-6 * abs(g0)

    @pytest.mark.parametrize("majorizer", ["proposed", "lambda_max"])
    def test_dominates_on_random_probes(self, majorizer, rng):
        geom, spec, scene, _, w, X0 = make_small_setup(n_tx=2, L=3, n_grid=4)
        ws = MmWorkspace(geom, spec, scene, w, 3, majorizer=majorizer)
        lin = majorize_to_linear(X0, geom, spec, scene, w, workspace=ws)
        for _ in range(1000):
            Xp = random_unit_modulus(rng, 2, 3)
            g = total_objective(Xp, geom, spec, scene, w).total
            s = lin.surrogate(vec_block(Xp))
            assert g <= s + 1e-7 + 1e-9 * abs(s)


class TestSubpulseDual:
    def test_no_constraints_closed_form(self, rng):
        d = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        x, nu, h, info = solve_subpulse_dual(d, np.zeros((0, 4)), np.zeros(0))
        np.testing.assert_allclose(x, np.exp(1j * np.angle(-d)), atol=1e-12)
        assert nu.size == 0 and info["converged"]

    def test_inactive_constraint_keeps_zero_multiplier(self):
        # constraint already satisfied by the unconstrained minimiser
        d = np.array([1.0 + 0j, 1.0 + 0j])
        hat = np.array([[-1.0 + 0j, -1.0 + 0j]])  # wants Re{-(x0+x1)} >= small
        x, nu, h, info = solve_subpulse_dual(d, hat, np.array([0.5]))
        np.testing.assert_allclose(x, [-1, -1], atol=1e-12)
        assert nu[0] == 0.0
        assert h[0] <= 0

    def test_matches_phase_grid_search(self, rng):
        for seed in range(6):
            r = np.random.default_rng(seed)
            d = r.standard_normal(2) + 1j * r.standard_normal(2)
            hat = (r.standard_normal((2, 2)) + 1j * r.standard_normal((2, 2))) / np.sqrt(2)
            gam = np.array([0.3, 0.3])
            ref_val, ref_x = oracles.phase_grid_min(d, hat, gam, n_grid=96)
            if ref_x is None:
                continue
            x, nu, h, info = solve_subpulse_dual(d, hat, gam)
            if not info["certified"][0]:
                # nonsmooth dual corner: no multiplier satisfies the strong
                # duality recovery conditions; the solver flags the subpulse
                continue
            assert h.max(initial=0.0) <= 1e-4
            got = float(np.real(d.conj() @ x))
            # a certified solve must reach the grid optimum up to resolution
            grid_gap = 2 * np.pi / 96 * (np.abs(d).sum() + nu @ np.abs(hat).sum(axis=1))
            assert got <= ref_val + grid_gap

    def test_kkt_conditions_random(self, rng):
        certified = 0
        for seed in range(10):
            r = np.random.default_rng(100 + seed)
            d = 10 * (r.standard_normal(4) + 1j * r.standard_normal(4))
            hat = r.standard_normal((4, 4)) + 1j * r.standard_normal((4, 4))
            gam = np.full(4, 0.4)
            x, nu, h, info = solve_subpulse_dual(d, hat, gam)
            assert np.all(np.abs(np.abs(x) - 1.0) < 1e-12)  # constant modulus
            assert np.all(nu >= 0)  # dual feasibility
            # stationarity: x must be the closed-form minimiser at nu
            z = nu @ hat - d
            np.testing.assert_allclose(x[z != 0], np.exp(1j * np.angle(z[z != 0])), atol=1e-10)
            if info["certified"][0]:
                certified += 1
                assert h.max(initial=0.0) <= 1e-4  # primal feasibility
                assert np.max(np.abs(nu * h)) <= 1e-3  # complementary slackness
        # dual corners without a strong-duality certificate exist but are
        # the exception even for unstructured instances
        assert certified >= 5

    def test_batched_matches_single(self, rng):
        geom, spec, scene, comms, w, X0 = make_small_setup(n_tx=3, L=5, n_users=2)
        ci = build_ci_set(comms, 1.0, 3)
        D = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
        Xb, nub, hb, _ = solve_duals_batched(D, ci)
        for ell in range(5):
            xs, nus, hs, _ = solve_subpulse_dual(
                D[:, ell], ci.rotated_channels[ell], ci.thresholds
            )
            np.testing.assert_allclose(Xb[:, ell], xs, atol=1e-9)
            np.testing.assert_allclose(nub[ell], nus, atol=1e-6)

    def test_subproblem_order_invariance(self, rng):
        # permuting subpulses permutes the solution: each column solve is independent
        geom, spec, scene, comms, w, _ = make_small_setup(n_tx=3, L=6, n_users=2)
        ci = build_ci_set(comms, 1.0, 3)
        D = rng.standard_normal((3, 6)) + 1j * rng.standard_normal((3, 6))
        perm = np.array([3, 1, 5, 0, 2, 4])
        X1, nu1, _, _ = solve_duals_batched(D, ci)
        ci_p = build_ci_set(comms, 1.0, 3)
        ci_p.rotated_channels = ci.rotated_channels[perm]
        X2, nu2, _, _ = solve_duals_batched(D[:, perm], ci_p)
        np.testing.assert_allclose(X2, X1[:, perm], atol=1e-10)
        np.testing.assert_allclose(nu2, nu1[perm], atol=1e-8)


class TestRunMm:
    def test_zero_objective_radar_free(self, rng):
        geom, spec, scene, _, _, X0 = make_small_setup()
        w0 = Weights(0.0, 0.0, 0.0)
        X, state = run_mm(X0, geom, spec, scene, None, w0, max_iter=5)
        assert state.converged
        assert state.objective_history[-1] == 0.0
        np.testing.assert_allclose(np.abs(X), 1.0, atol=1e-12)

    def test_monotone_descent_small(self):
        geom, spec, scene, comms, w, _ = make_small_setup(n_tx=4, L=8, n_users=1)
        ci = build_ci_set(comms, 1.0, 4)
        X0, rep = initialize_waveform(ci, 4, 8, seed=3)
        X, state = run_mm(X0, geom, spec, scene, ci, w, max_iter=200)
        diffs = np.diff(state.objective_history)
        assert np.all(diffs <= 1e-8)
        assert state.objective_history[-1] < state.objective_history[0]
        np.testing.assert_allclose(np.abs(X), 1.0, atol=1e-12)
        assert state.max_ci_violation <= 1e-4

    def test_paper_scale_descends_and_certifies(self):
        geom, spec, scene, comms, w = make_paper_setup(seed=0)
        ci = build_ci_set(comms, 1.0, 8)
        X0, rep = initialize_waveform(ci, 8, 32, seed=0)
        assert rep.feasible
        X, state = run_mm(X0, geom, spec, scene, ci, w, max_iter=150)
        hist = state.objective_history
        assert np.all(np.diff(hist) <= 1e-8)
        assert hist[-1] < 0.2 * hist[0]
        assert state.max_ci_violation <= 1e-4
        assert state.max_comp_slack <= 1e-3

    def test_lambda_max_variant_descends_slower(self):
        geom, spec, scene, comms, w = make_paper_setup(seed=1)
        ci = build_ci_set(comms, 1.0, 8)
        X0, _ = initialize_waveform(ci, 8, 32, seed=1)
        _, st_fast = run_mm(X0, geom, spec, scene, ci, w, max_iter=60)
        _, st_slow = run_mm(X0, geom, spec, scene, ci, w, max_iter=60, majorizer="lambda_max")
        assert np.all(np.diff(st_slow.objective_history) <= 1e-8)
        # at equal iteration budget the diagonal majorizer is further along
        assert st_fast.objective_history[-1] < st_slow.objective_history[-1]
