import math
import time

import numpy as np
import pytest

from oracles import (block_objective, brute_pair_sum, dense_log_likelihood,
                     kkt_certificate_residual, manual_tree,
                     pgd_max_objective, random_refined,
                     row_softmax_transition)
from vdtree.blocks import (coarsest_partition, fit, fully_refined_partition,
                           lower_bound, log_constant, objective_decomposition,
                           optimize_q, row_sums, sigma_init, sigma_update,
                           validate_model)
from vdtree.dataset import Dataset, make_synthetic
from vdtree.inference import dense_expand
from vdtree.tree import build_tree


def random_model(rng, n=None, d=None, refined=0):
    n = n or int(rng.integers(4, 33))
    d = d or int(rng.integers(1, 5))
    ds = Dataset(rng.standard_normal((n, d)) * float(rng.uniform(0.5, 2.0)))
    tree = build_tree(ds)
    model = coarsest_partition(tree)
    model.set_sigma(sigma_init(ds))
    optimize_q(model)
    if refined:
        random_refined(model, refined, rng)
    return ds, model


class TestCoarsest:
    def test_n2(self):
        t = build_tree(Dataset(np.array([[0.0], [2.0]])))
        m = coarsest_partition(t)
        assert m.block_count == 2
        pairs = {(frozenset(t.node_indices(a).tolist()),
                  frozenset(t.node_indices(b).tolist()))
                 for a, b in zip(m.block_a, m.block_b)}
        assert pairs == {(frozenset({0}), frozenset({1})),
                         (frozenset({1}), frozenset({0}))}

    def test_block_count_formula(self):
        rng = np.random.default_rng(0)
        for n in (2, 3, 6, 17, 64, 256):
            ds = Dataset(rng.standard_normal((n, 2)))
            m = coarsest_partition(build_tree(ds))
            assert m.block_count == 2 * (n - 1)

    def test_six_points_ten_blocks(self):
        ds = Dataset(np.random.default_rng(1).standard_normal((6, 2)))
        assert coarsest_partition(build_tree(ds)).block_count == 10

    def test_exhaustive_cell_cover(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            n = int(rng.integers(2, 50))
            ds = Dataset(rng.standard_normal((n, 3)))
            m = coarsest_partition(build_tree(ds))
            cells = (m.tree.count[m.block_a] * m.tree.count[m.block_b]).sum()
            assert cells == n * n - n
            validate_model(m)

    def test_every_nonroot_marked_once(self):
        ds = Dataset(np.random.default_rng(3).standard_normal((20, 2)))
        m = coarsest_partition(build_tree(ds))
        counts = np.bincount(m.block_a, minlength=m.tree.n_nodes)
        assert (counts[:-1] == 1).all() and counts[-1] == 0


class TestOptimizeQ:
    def test_n2_forced(self):
        t = build_tree(Dataset(np.array([[0.0], [5.0]])))
        m = coarsest_partition(t).set_sigma(3.0)
        optimize_q(m)
        np.testing.assert_allclose(m.block_q, 1.0, rtol=1e-15)

    def test_fully_refined_is_row_softmax(self):
        # softmax oracle: q_01 = e^-0.5 / (e^-0.5 + e^-4.5) = 0.98201379...
        X = np.array([0.0, 1.0, 3.0])[:, None]
        t = build_tree(Dataset(X))
        m = fully_refined_partition(t).set_sigma(1.0)
        optimize_q(m)
        q = dense_expand(m)
        p = row_softmax_transition(X, 1.0)
        np.testing.assert_allclose(q, p, atol=1e-12)
        assert q[0, 1] == pytest.approx(0.9820137900379085, abs=1e-12)

    def test_fully_refined_matches_exact_posteriors(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            n = int(rng.integers(3, 65))
            X = rng.standard_normal((n, int(rng.integers(1, 4))))
            t = build_tree(Dataset(X))
            sigma = sigma_init(X)
            m = fully_refined_partition(t).set_sigma(sigma)
            optimize_q(m)
            np.testing.assert_allclose(dense_expand(m),
                                       row_softmax_transition(X, sigma),
                                       atol=1e-9)

    @pytest.mark.parametrize("refined", [0, 10, 40])
    def test_row_stochastic(self, refined):
        rng = np.random.default_rng(5 + refined)
        for _ in range(5):
            _, m = random_model(rng, refined=refined)
            assert np.abs(row_sums(m) - 1.0).max() < 1e-9
            validate_model(m)

    def test_fully_refined_row_stochastic(self):
        rng = np.random.default_rng(6)
        ds, _ = random_model(rng, n=24)
        m = fully_refined_partition(build_tree(ds)).set_sigma(1.0)
        optimize_q(m)
        assert np.abs(row_sums(m) - 1.0).max() < 1e-9

    def test_beats_projected_gradient(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            _, m = random_model(rng, n=16)
            ours = block_objective(m)
            oracle = pgd_max_objective(m)
            assert ours >= oracle - 1e-6

    def test_kkt_certificate(self):
        # stationarity system is consistent at the returned q
        rng = np.random.default_rng(8)
        for refined in (0, 15):
            _, m = random_model(rng, n=20, refined=refined)
            optimize_q(m)  # local splits preserve feasibility, not optimality
            assert kkt_certificate_residual(m) < 1e-8

    def test_requires_sigma(self):
        ds = Dataset(np.random.default_rng(9).standard_normal((8, 2)))
        m = coarsest_partition(build_tree(ds))
        with pytest.raises(ValueError, match="sigma"):
            optimize_q(m)


class TestLowerBound:
    def test_two_point_value(self):
        # c = -2 log(sqrt(2 pi)); distance term = -4; entropy = 0
        t = build_tree(Dataset(np.array([0.0, 2.0])[:, None]))
        m = coarsest_partition(t).set_sigma(1.0)
        optimize_q(m)
        want = -math.log(2.0 * math.pi) - 4.0
        assert lower_bound(m) == pytest.approx(want, rel=1e-12)
        # cross-check against the dense likelihood: N=2 coarsest is exact
        lp = dense_log_likelihood(np.array([0.0, 2.0])[:, None], 1.0)
        assert lower_bound(m) == pytest.approx(lp, rel=1e-12)

    def test_never_exceeds_dense_likelihood(self):
        rng = np.random.default_rng(10)
        for refined in (0, 0, 20):
            ds, m = random_model(rng, refined=refined)
            lp = dense_log_likelihood(ds.points, m.sigma)
            assert lower_bound(m) <= lp + 1e-9

    def test_fully_refined_attains_likelihood(self):
        rng = np.random.default_rng(11)
        for _ in range(4):
            n = int(rng.integers(3, 40))
            X = rng.standard_normal((n, 2))
            t = build_tree(Dataset(X))
            sigma = sigma_init(X)
            m = fully_refined_partition(t).set_sigma(sigma)
            optimize_q(m)
            lp = dense_log_likelihood(X, sigma)
            assert lower_bound(m) == pytest.approx(lp, rel=1e-10, abs=1e-8)

    def test_zero_probability_blocks_contribute_nothing(self):
        # far-apart clusters underflow q to exactly 0; bound stays finite
        X = np.vstack([np.zeros((4, 1)), np.full((4, 1), 1e6)])
        X += np.arange(8)[:, None] * 1e-3
        t = build_tree(Dataset(X))
        m = coarsest_partition(t).set_sigma(0.5)
        optimize_q(m)
        assert (m.block_q == 0).any()
        assert np.isfinite(lower_bound(m))


class TestDecomposition:
    def test_identity(self):
        rng = np.random.default_rng(12)
        ds, m = random_model(rng, refined=8)
        trace, ent = objective_decomposition(m)
        c = log_constant(m.n, m.tree.dim, m.sigma)
        assert trace + ent + c == pytest.approx(lower_bound(m), rel=1e-9)

    def test_n2_entropy_zero(self):
        t = build_tree(Dataset(np.array([0.0, 1.0])[:, None]))
        m = coarsest_partition(t).set_sigma(1.0)
        optimize_q(m)
        _, ent = objective_decomposition(m)
        assert ent == pytest.approx(0.0, abs=1e-15)

    def test_row_entropy_bound_four_points(self):
        # fully refined rows over 3 alternatives: entropy <= log 3 each
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        t = build_tree(Dataset(X))
        m = fully_refined_partition(t).set_sigma(1.0)
        optimize_q(m)
        q = dense_expand(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(q > 0, q * np.log(q), 0.0).sum(axis=1)
        assert (h <= math.log(3.0) + 1e-12).all()

    def test_matches_dense_recomputation(self):
        rng = np.random.default_rng(13)
        ds, m = random_model(rng, n=16, refined=6)
        q = dense_expand(m)
        # block-average distances expanded entrywise
        dbar = np.zeros((16, 16))
        t = m.tree
        for i in range(m.block_count):
            rows = t.node_indices(m.block_a[i])
            cols = t.node_indices(m.block_b[i])
            avg = m.block_d2[i] / (t.count[m.block_a[i]] * t.count[m.block_b[i]])
            dbar[np.ix_(rows, cols)] = avg
        want_trace = -(q * dbar).sum() / (2 * m.sigma ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            want_ent = -np.where(q > 0, q * np.log(q), 0.0).sum()
        trace, ent = objective_decomposition(m)
        assert trace == pytest.approx(want_trace, rel=1e-9)
        assert ent == pytest.approx(want_ent, rel=1e-9)


class TestSigma:
    def test_init_two_points(self):
        assert sigma_init(np.array([0.0, 2.0])[:, None]) == \
            pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_init_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            sigma_init(np.ones((5, 3)))

    def test_init_identity_vs_brute_force(self):
        rng = np.random.default_rng(14)
        for _ in range(4):
            n = int(rng.integers(2, 65))
            d = int(rng.integers(1, 6))
            X = rng.standard_normal((n, d))
            want = math.sqrt(brute_pair_sum(X) / d) / n
            assert sigma_init(X) == pytest.approx(want, rel=1e-9)

    def test_update_two_points(self):
        t = build_tree(Dataset(np.array([0.0, 2.0])[:, None]))
        m = coarsest_partition(t).set_sigma(1.0)
        optimize_q(m)
        assert sigma_update(m) == pytest.approx(2.0, rel=1e-12)

    def test_update_scale_equivariant(self):
        rng = np.random.default_rng(15)
        X = rng.standard_normal((20, 3))
        for s in (0.5, 3.0):
            t1 = build_tree(Dataset(X))
            m1 = coarsest_partition(t1).set_sigma(1.0)
            optimize_q(m1)
            t2 = build_tree(Dataset(X * s))
            m2 = coarsest_partition(t2).set_sigma(s)
            optimize_q(m2)
            np.testing.assert_allclose(m2.block_q, m1.block_q, atol=1e-12)
            assert sigma_update(m2) == pytest.approx(s * sigma_update(m1),
                                                     rel=1e-12)

    def test_update_maximizes_bound(self):
        rng = np.random.default_rng(16)
        for _ in range(5):
            _, m = random_model(rng, refined=5)
            star = sigma_update(m)

            def ell_at(s, m=m):
                trace = -float(m.block_q @ m.block_d2) / (2 * s * s)
                _, ent = objective_decomposition(m)
                return log_constant(m.n, m.tree.dim, s) + trace + ent

            best = ell_at(star)
            assert best >= ell_at(star * (1 + 1e-3))
            assert best >= ell_at(star * (1 - 1e-3))

    def test_update_degenerate(self):
        X = np.zeros((4, 2))
        t = build_tree(Dataset(X))
        m = coarsest_partition(t).set_sigma(1.0)
        optimize_q(m)
        with pytest.raises(ValueError, match="degenerate"):
            sigma_update(m)


class TestFit:
    def test_two_points_immediate(self):
        t = build_tree(Dataset(np.array([0.0, 2.0])[:, None]))
        m = fit(t)
        # q is forced, sigma closed-form: the bound is constant after the
        # first outer iteration
        assert len(m.fit_history) == 2
        assert m.fit_history[0] == pytest.approx(m.fit_history[1], rel=1e-15)
        assert m.sigma == pytest.approx(2.0, rel=1e-12)

    def test_monotone_bound(self):
        ds = make_synthetic("two_gaussians", 256, 2, seed=17)
        m = fit(build_tree(ds))
        hist = np.array(m.fit_history)
        assert (np.diff(hist) >= -1e-12 * (1 + np.abs(hist[:-1]))).all()

    def test_insensitive_to_sigma0(self):
        rng = np.random.default_rng(18)
        X = rng.standard_normal((128, 3))
        t = build_tree(Dataset(X))
        s0 = sigma_init(X)
        ells = []
        for factor in (0.1, 10.0):
            m = fit(build_tree(Dataset(X)), sigma0=factor * s0, tol=1e-10,
                    max_iters=200)
            ells.append(m.ell)
        assert ells[0] == pytest.approx(ells[1], rel=1e-4)
        del t

    def test_validates_after_fit(self):
        ds = make_synthetic("two_gaussians", 64, 2, seed=19)
        m = fit(build_tree(ds))
        validate_model(m)
        assert np.abs(row_sums(m) - 1.0).max() < 1e-9


class TestRuntimeScaling:
    def test_optimize_q_linear_in_blocks(self):
        # sizes large enough that per-level dispatch overhead is noise
        sizes = [8000, 16000, 32000, 64000, 128000]
        times, nblocks = [], []
        for n in sizes:
            ds = make_synthetic("two_gaussians", n, 4, seed=1)
            m = coarsest_partition(build_tree(ds)).set_sigma(1.0)
            optimize_q(m)  # warm up caches
            reps = []
            for _ in range(5):
                t0 = time.perf_counter()
                optimize_q(m)
                reps.append(time.perf_counter() - t0)
            times.append(float(np.median(reps)))
            nblocks.append(m.block_count)
        slope = np.polyfit(np.log(nblocks), np.log(times), 1)[0]
        assert 0.8 <= slope <= 1.3, f"optimize_q slope {slope:.2f}"


class TestValidation:
    def test_detects_missing_block(self):
        ds = Dataset(np.random.default_rng(20).standard_normal((8, 2)))
        m = coarsest_partition(build_tree(ds))
        m.block_a = m.block_a[:-1]
        m.block_b = m.block_b[:-1]
        m.block_d2 = m.block_d2[:-1]
        with pytest.raises(ValueError, match="invalid partition"):
            validate_model(m)

    def test_detects_bad_row_sums(self):
        rng = np.random.default_rng(21)
        _, m = random_model(rng, n=12)
        m.block_q = m.block_q * 1.5
        with pytest.raises(ValueError):
            validate_model(m)
