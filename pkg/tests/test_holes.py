import numpy as np
import pytest
import scipy.sparse as sp

from fdsr.data.holes import (
    LOG_WEIGHT_FLOOR,
    SIGMA_FLOOR,
    SolverError,
    affinity_matrix,
    fill_holes_colorization,
    local_variance,
    pcg,
    sigma_map,
    solve_colorization,
)


def dense_oracle(depth, known, gray):
    """Explicit per-pixel construction of I - W, then a dense least-squares solve."""
    h, w = gray.shape
    n = h * w
    L = np.eye(n)
    for y in range(h):
        for x in range(w):
            win = gray[max(0, y - 1):y + 2, max(0, x - 1):x + 2]
            sigma = max(win.var(), SIGMA_FLOOR)
            nbrs, logs = [], []
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if (dy or dx) and 0 <= yy < h and 0 <= xx < w:
                        nbrs.append(yy * w + xx)
                        logs.append(-((gray[y, x] - gray[yy, xx]) ** 2) / (2 * sigma**2))
            logs = np.array(logs)
            wts = np.exp(np.maximum(logs - logs.max(), LOG_WEIGHT_FLOOR))
            wts /= wts.sum()
            for q, wq in zip(nbrs, wts):
                L[y * w + x, q] -= wq
    k = known.ravel()
    rhs = -L[:, k] @ depth.ravel()[k]
    x, *_ = np.linalg.lstsq(L[:, ~k], rhs, rcond=None)
    out = depth.astype(np.float64).copy().ravel()
    out[~k] = x
    return out.reshape(h, w)


@pytest.fixture
def small_case(rng):
    yy, xx = np.mgrid[0:8, 0:8]
    gray = 0.5 + 0.1 * np.sin(yy / 2.0) * np.cos(xx / 3.0) + 0.02 * rng.standard_normal((8, 8))
    depth = 1.0 + 0.1 * yy + 0.05 * xx + 0.01 * rng.standard_normal((8, 8))
    known = rng.random((8, 8)) > 0.35
    known[0, 0] = True
    return depth, known, gray


class TestAffinity:
    def test_rows_sum_to_one(self, rng):
        W = affinity_matrix(rng.random((5, 7)))
        np.testing.assert_allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0, atol=1e-12)

    def test_neighbour_counts(self):
        W = affinity_matrix(np.zeros((4, 5)))
        nnz = np.diff(W.indptr).reshape(4, 5)
        assert nnz[0, 0] == 3 and nnz[0, 2] == 5 and nnz[2, 2] == 8

    def test_local_variance_window(self, rng):
        g = rng.random((6, 6))
        v = local_variance(g)
        assert v[2, 3] == pytest.approx(g[1:4, 2:5].var())
        assert v[0, 0] == pytest.approx(g[0:2, 0:2].var())
        assert sigma_map(np.ones((3, 3))).min() == SIGMA_FLOOR


class TestSolver:
    def test_matches_dense_oracle(self, small_case):
        depth, known, gray = small_case
        expected = dense_oracle(depth, known, gray)
        got = solve_colorization(depth * known, known, gray)
        np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_observed_pixels_unchanged(self, small_case):
        depth, known, gray = small_case
        got = solve_colorization(depth * known, known, gray)
        np.testing.assert_array_equal(got[known], depth[known])

    def test_pcg_on_spd(self, rng):
        M = rng.standard_normal((30, 30))
        A = sp.csr_matrix(M @ M.T + 30 * np.eye(30))
        b = rng.standard_normal(30)
        x, it, rel = pcg(A, b)
        np.testing.assert_allclose(A @ x, b, atol=1e-8)
        assert rel < 1e-10 and 0 < it <= 300

    def test_pcg_iteration_cap(self, rng):
        M = rng.standard_normal((40, 40))
        A = sp.csr_matrix(M @ M.T + 1e-3 * np.eye(40))
        with pytest.raises(SolverError):
            pcg(A, rng.standard_normal(40), maxiter=2)

    def test_no_observed_pixels(self):
        with pytest.raises(ValueError):
            solve_colorization(np.zeros((3, 3)), np.zeros((3, 3), bool), np.zeros((3, 3)))


class TestFill:
    def test_hole_free_identity(self, rng):
        depth = rng.integers(1, 5000, size=(6, 7)).astype(np.uint16)
        rgb = rng.integers(0, 256, size=(6, 7, 3)).astype(np.uint8)
        out = fill_holes_colorization(depth, rgb)
        assert out.dtype == np.uint16 and np.array_equal(out, depth)

    def test_constant_scene(self, rng):
        depth = np.full((24, 24), 2000, dtype=np.uint16)
        depth[8:15, 5:12] = 0
        depth[rng.random((24, 24)) < 0.05] = 0
        rgb = rng.integers(0, 256, size=(24, 24, 3)).astype(np.uint8)
        out = fill_holes_colorization(depth, rgb)
        assert (out > 0).all()
        assert np.abs(out.astype(int) - 2000).max() <= 1

    @pytest.mark.parametrize("lo,hi,texture", [(50, 200, 0), (50, 200, 4), (100, 140, 4)])
    def test_aligned_edge_scene(self, rng, lo, hi, texture):
        H, W = 32, 32
        truth = np.where(np.arange(W)[None, :] < 16, 1000, 3000) * np.ones((H, 1))
        rgb = np.where((np.arange(W) < 16)[None, :, None], lo, hi) * np.ones((H, 1, 3))
        rgb = np.clip(rgb + rng.integers(-texture, texture + 1, size=(H, W, 1)), 0, 255)
        depth = truth.astype(np.uint16)
        depth[10:22, 10:22] = 0  # straddles the edge
        out = fill_holes_colorization(depth, rgb.astype(np.uint8))
        hole = depth == 0
        ok = np.abs(out.astype(float) - truth)[hole] <= 20
        assert ok.mean() >= 0.95

    def test_observed_pixels_never_modified(self, rng):
        depth = rng.integers(500, 4000, size=(12, 12)).astype(np.uint16)
        depth[rng.random((12, 12)) < 0.3] = 0
        rgb = rng.integers(0, 256, size=(12, 12, 3)).astype(np.uint8)
        out = fill_holes_colorization(depth, rgb)
        known = depth > 0
        assert np.array_equal(out[known], depth[known])
        assert (out > 0).all()

    def test_misaligned_guide(self):
        with pytest.raises(ValueError):
            fill_holes_colorization(np.ones((4, 4), np.uint16), np.zeros((4, 5, 3), np.uint8))
