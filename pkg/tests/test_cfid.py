"""Frechet metric engine: sample statistics, conditionals, and distances.

The analytic oracle used throughout: for jointly Gaussian data built from
the linear model x = B y + u, xhat = Bhat y + v (independent noises with
diagonal covariances), the conditional distance is

    ||mu_x - mu_xhat||^2 + tr[(B - Bhat) S_yy (B - Bhat)^T]
    + sum_j (sqrt(var_u_j) - sqrt(var_v_j))^2,

computed here without touching the engine's Schur/pinv/sqrtm path.
"""

import math

import numpy as np
import pytest

from postsamp.cfid import (
    EmbeddingSet,
    JointGaussianStats,
    cfid,
    cfid_decompose,
    cfid_decompose_from_stats,
    cfid_from_stats,
    compute_stats,
    conditional_stats,
    fid,
    gaussian_w2_squared,
    read_embeddings,
    sqrtm_psd,
    write_embeddings,
)


def _stats_1d(mu_x, var_x, mu_xhat, var_xhat, cov_xy=0.0, cov_xhaty=0.0, var_y=1.0):
    return JointGaussianStats(
        mu_x=np.array([mu_x]),
        mu_y=np.array([0.0]),
        mu_xhat=np.array([mu_xhat]),
        s_xx=np.array([[var_x]]),
        s_yy=np.array([[var_y]]),
        s_xhatxhat=np.array([[var_xhat]]),
        s_xy=np.array([[cov_xy]]),
        s_xhaty=np.array([[cov_xhaty]]),
    )


def _linear_model_stats(rng, d, d_y):
    """Exact joint stats for x = B y + u, xhat = Bhat y + v, plus the oracle."""
    b = rng.standard_normal((d, d_y))
    bhat = b + 0.3 * rng.standard_normal((d, d_y))
    mu_y = rng.standard_normal(d_y)
    s_yy_root = rng.standard_normal((d_y, d_y)) / math.sqrt(d_y)
    s_yy = s_yy_root @ s_yy_root.T + 0.5 * np.eye(d_y)
    var_u = rng.uniform(0.5, 2.0, size=d)
    var_v = rng.uniform(0.5, 2.0, size=d)
    mu_u = rng.standard_normal(d)
    mu_v = rng.standard_normal(d)

    joint = JointGaussianStats(
        mu_x=b @ mu_y + mu_u,
        mu_y=mu_y,
        mu_xhat=bhat @ mu_y + mu_v,
        s_xx=b @ s_yy @ b.T + np.diag(var_u),
        s_yy=s_yy,
        s_xhatxhat=bhat @ s_yy @ bhat.T + np.diag(var_v),
        s_xy=b @ s_yy,
        s_xhaty=bhat @ s_yy,
    )
    gap = (b @ mu_y + mu_u) - (bhat @ mu_y + mu_v)
    mean_part = float(gap @ gap) + float(np.trace((b - bhat) @ s_yy @ (b - bhat).T))
    cov_part = float(((np.sqrt(var_u) - np.sqrt(var_v)) ** 2).sum())
    return joint, mean_part, cov_part


class TestComputeStats:
    def test_two_row_hand_example(self):
        """Population covariance of {0, 2} is 1 for every block."""
        x = np.array([[0.0], [2.0]])
        with pytest.warns(UserWarning):
            embeddings = EmbeddingSet(x, x.copy(), x.copy(), P=1)
        stats = compute_stats(embeddings)
        assert stats.s_xx[0, 0] == 1.0
        assert stats.s_yy[0, 0] == 1.0
        assert stats.s_xy[0, 0] == 1.0

    def test_identical_rows_give_zero_covariance(self):
        row = np.array([[1.0, 2.0, 3.0]])
        x = np.repeat(row, 10, axis=0)
        stats = compute_stats(EmbeddingSet(x, x[:, :2], x, P=1))
        assert np.all(stats.s_xx == 0.0)
        assert np.all(stats.s_xy == 0.0)
        np.testing.assert_array_equal(stats.mu_x, row[0])

    def test_identical_truth_and_generated_blocks(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((300, 4))
        y = rng.standard_normal((300, 2))
        stats = compute_stats(EmbeddingSet(x, y, x.copy(), P=1))
        np.testing.assert_array_equal(stats.s_xx, stats.s_xhatxhat)
        np.testing.assert_array_equal(stats.s_xy, stats.s_xhaty)

    def test_population_normalization(self):
        """1/rows, no Bessel correction."""
        rng = np.random.default_rng(1)
        x = rng.standard_normal((50, 3))
        stats = compute_stats(EmbeddingSet(x, x[:, :1], x, P=1))
        centered = x - x.mean(axis=0)
        np.testing.assert_allclose(stats.s_xx, centered.T @ centered / 50, atol=1e-15)

    def test_row_count_must_divide_by_p(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            EmbeddingSet(
                rng.standard_normal((10, 2)),
                rng.standard_normal((10, 2)),
                rng.standard_normal((10, 2)),
                P=3,
            )

    def test_non_finite_and_mismatched_inputs_rejected(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((12, 2))
        y = rng.standard_normal((12, 2))
        bad = x.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            EmbeddingSet(bad, y, x, P=1)
        with pytest.raises(ValueError):
            EmbeddingSet(x, y[:6], x, P=1)
        with pytest.raises(ValueError):
            EmbeddingSet(x, y, rng.standard_normal((12, 3)), P=1)


class TestConditionalStats:
    def test_scalar_schur_complement(self):
        stats = _stats_1d(0.0, 2.0, 0.0, 2.0, cov_xy=1.0, cov_xhaty=1.0, var_y=1.0)
        cond = conditional_stats(stats)
        assert cond.s_xx_given_y[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_independent_measurements_leave_marginals(self):
        stats = _stats_1d(1.0, 2.0, -1.0, 3.0)
        cond = conditional_stats(stats)
        assert cond.s_xx_given_y[0, 0] == 2.0
        assert cond.s_xhatxhat_given_y[0, 0] == 3.0
        assert cond.mean_gap_term == 4.0  # ||mu_x - mu_xhat||^2 only

    def test_deterministic_coupling_collapses_conditional(self):
        """x == y exactly: nothing left to explain given the measurement."""
        rng = np.random.default_rng(3)
        x = rng.standard_normal((500, 3))
        stats = compute_stats(EmbeddingSet(x, x.copy(), x.copy(), P=1))
        cond = conditional_stats(stats)
        assert np.abs(cond.s_xx_given_y).max() <= 1e-12

    def test_asymmetric_input_rejected(self):
        stats = _stats_1d(0.0, 1.0, 0.0, 1.0)
        bad = JointGaussianStats(
            mu_x=np.zeros(2),
            mu_y=stats.mu_y,
            mu_xhat=np.zeros(2),
            s_xx=np.array([[1.0, 0.5], [-0.5, 1.0]]),
            s_yy=stats.s_yy,
            s_xhatxhat=np.eye(2),
            s_xy=np.zeros((2, 1)),
            s_xhaty=np.zeros((2, 1)),
        )
        with pytest.raises(ValueError):
            conditional_stats(bad)


class TestSqrtmPsd:
    def test_identity(self):
        np.testing.assert_array_equal(sqrtm_psd(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(
            sqrtm_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14
        )

    def test_reconstruction_on_random_gram_matrices(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            b = rng.standard_normal((8, 8))
            m = b @ b.T
            root = sqrtm_psd(m)
            assert np.linalg.norm(root @ root - m) <= 1e-8 * (1 + np.linalg.norm(m))
            np.testing.assert_allclose(root, root.T, atol=1e-14)

    def test_small_negative_eigenvalues_clamped(self):
        m = np.diag([1.0, -1e-12])
        root = sqrtm_psd(m)
        assert root[1, 1] == 0.0

    def test_indefinite_input_rejected(self):
        with pytest.raises(ValueError):
            sqrtm_psd(np.diag([1.0, -0.5]))


class TestGaussianW2:
    def test_mean_shift(self):
        assert gaussian_w2_squared(
            np.array([0.0]), np.array([[1.0]]), np.array([3.0]), np.array([[1.0]])
        ) == pytest.approx(9.0, abs=1e-12)

    def test_spread_mismatch(self):
        assert gaussian_w2_squared(
            np.array([0.0]), np.array([[1.0]]), np.array([0.0]), np.array([[9.0]])
        ) == pytest.approx(4.0, abs=1e-12)

    def test_commuting_covariances(self):
        a = np.diag([1.0, 4.0])
        b = np.diag([9.0, 16.0])
        expected = (3 - 1) ** 2 + (4 - 2) ** 2
        assert gaussian_w2_squared(np.zeros(2), a, np.zeros(2), b) == pytest.approx(
            expected, abs=1e-12
        )


class TestCfid:
    def test_identical_sets_are_zero(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((400, 5))
        y = rng.standard_normal((400, 3))
        assert cfid(EmbeddingSet(x, y, x.copy(), P=1)) <= 1e-8

    def test_unit_mean_shift_analytic(self):
        """x|y ~ N(0,1), xhat|y ~ N(1,1), independent y: distance 1."""
        stats = _stats_1d(0.0, 1.0, 1.0, 1.0)
        assert cfid_from_stats(stats) == pytest.approx(1.0, abs=1e-10)

    def test_unit_spread_gap_analytic(self):
        """x|y ~ N(0,1), xhat|y ~ N(0,4): distance (2-1)^2 = 1."""
        stats = _stats_1d(0.0, 1.0, 0.0, 4.0)
        assert cfid_from_stats(stats) == pytest.approx(1.0, abs=1e-10)

    def test_linear_model_oracle(self):
        """Engine output equals the independently assembled conditional W2."""
        rng = np.random.default_rng(6)
        for trial in range(5):
            joint, mean_part, cov_part = _linear_model_stats(rng, d=5, d_y=3)
            got_mean, got_cov = cfid_decompose_from_stats(joint)
            assert got_mean == pytest.approx(mean_part, abs=1e-10)
            assert got_cov == pytest.approx(cov_part, abs=1e-10)
            assert cfid_from_stats(joint) == pytest.approx(
                mean_part + cov_part, abs=1e-10
            ), trial

    def test_decomposition_sums_to_total_on_random_sets(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n, d, d_y = 120, 4, 2
            y = rng.standard_normal((n, d_y))
            x = y @ rng.standard_normal((d_y, d)) + rng.standard_normal((n, d))
            xhat = y @ rng.standard_normal((d_y, d)) + rng.standard_normal((n, d))
            embeddings = EmbeddingSet(x, y, xhat, P=1)
            mean_part, cov_part = cfid_decompose(embeddings)
            assert mean_part >= 0.0 and cov_part >= 0.0
            assert mean_part + cov_part == pytest.approx(cfid(embeddings), abs=1e-10)

    def test_mean_shift_only_lands_in_mean_part(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((600, 4))
        y = rng.standard_normal((600, 2))
        mean_part, cov_part = cfid_decompose(EmbeddingSet(x, y, x + 3.0, P=1))
        assert cov_part <= 1e-8
        assert mean_part == pytest.approx(4 * 9.0, rel=1e-12)

    def test_joint_shuffle_invariance(self):
        rng = np.random.default_rng(9)
        n = 600
        y = rng.standard_normal((n, 2))
        x = y @ rng.standard_normal((2, 4)) + rng.standard_normal((n, 4))
        xhat = 0.5 * x + rng.standard_normal((n, 4))
        base = cfid(EmbeddingSet(x, y, xhat, P=1))
        perm = rng.permutation(n)
        shuffled = cfid(EmbeddingSet(x[perm], y[perm], xhat[perm], P=1))
        assert shuffled == pytest.approx(base, abs=1e-12 * max(1.0, base))

    def test_repetition_convention_rank_deficiency_is_absorbed(self):
        """P > 1 repeats y rows; the pinv cutoff must keep results finite."""
        rng = np.random.default_rng(10)
        n_measurements, P, d, d_y = 60, 4, 3, 5
        y_unique = rng.standard_normal((n_measurements, d_y))
        y = np.repeat(y_unique, P, axis=0)
        x = np.repeat(rng.standard_normal((n_measurements, d)), P, axis=0)
        xhat = x + rng.standard_normal((n_measurements * P, d))
        value = cfid(EmbeddingSet(x, y, xhat, P=P))
        assert np.isfinite(value) and value >= 0.0

    def test_small_sample_covariance_bias_direction(self):
        """cov_part estimated from n=100 rows exceeds the n=100000 estimate."""
        d, d_y = 8, 4
        small, large = [], []
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            b = rng.standard_normal((d_y, d))
            for n, sink in ((100, small), (100_000, large)):
                y = rng.standard_normal((n, d_y))
                x = y @ b + rng.standard_normal((n, d))
                xhat = y @ b + rng.standard_normal((n, d))
                _, cov_part = cfid_decompose(EmbeddingSet(x, y, xhat, P=1))
                sink.append(cov_part)
        assert np.mean(small) > np.mean(large)


class TestFid:
    def test_identical(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((300, 4))
        assert fid(x, x.copy()) <= 1e-8

    def test_analytic_1d_cases_via_sampled_stats(self):
        rng = np.random.default_rng(12)
        n = 2_000_000
        base = rng.standard_normal((n, 1))
        assert fid(base, base + 3.0) == pytest.approx(9.0, abs=0.01)
        assert fid(base, base * 3.0) == pytest.approx(4.0, abs=0.01)

    def test_column_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fid(np.zeros((4, 2)), np.zeros((4, 3)))


class TestEmbeddingIO:
    def test_binary_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        matrix = rng.standard_normal((37, 5))
        path = tmp_path / "m.emb"
        write_embeddings(path, matrix)
        assert np.array_equal(read_embeddings(path), matrix)

    def test_binary_layout(self, tmp_path):
        path = tmp_path / "tiny.emb"
        write_embeddings(path, np.array([[1.0, 2.0]]))
        raw = path.read_bytes()
        assert raw[:4] == b"EMB1"
        assert raw[4:8] == (1).to_bytes(4, "little")
        assert raw[8:12] == (2).to_bytes(4, "little")
        assert raw[12] == 1
        assert raw[13:16] == b"\x00\x00\x00"
        assert len(raw) == 16 + 2 * 8

    def test_csv_import(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("col0,col1\n1.5,2.5\n-3.0,4.0\n")
        np.testing.assert_array_equal(
            read_embeddings(path), [[1.5, 2.5], [-3.0, 4.0]]
        )

    def test_csv_requires_canonical_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_embeddings(path)

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "trunc.emb"
        write_embeddings(path, np.ones((4, 4)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            read_embeddings(path)

    def test_unsupported_dtype_tag_rejected(self, tmp_path):
        path = tmp_path / "tag.emb"
        write_embeddings(path, np.ones((1, 1)))
        raw = bytearray(path.read_bytes())
        raw[12] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            read_embeddings(path)
