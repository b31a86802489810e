import numpy as np
import pytest

from writer_retrieval.retrieval import (
    DistanceMatrix,
    MatrixFormatError,
    compute_distance_matrix,
    distance,
    rank_for_query,
    read_matrix,
    write_matrix,
)


def naive_matrix(X, metric):
    """Independent all-pairs oracle: explicit double loop over the formulas."""
    n = len(X)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            a, b = X[i], X[j]
            if metric == "manhattan":
                out[i, j] = np.sum(np.abs(a - b))
            elif metric == "euclidean":
                out[i, j] = np.sqrt(np.sum((a - b) ** 2))
            else:
                s = a + b
                mask = s > 0
                out[i, j] = np.sum((a[mask] - b[mask]) ** 2 / s[mask])
    return out


class TestDistance:
    def test_identical_vectors_zero(self):
        v = np.array([0.3, 1.2, 4.0])
        for m in ("manhattan", "euclidean", "chi_square"):
            assert distance(v, v, m) == 0.0

    def test_manhattan_hand_value(self):
        assert distance([1, 2], [3, 0], "manhattan") == 4.0

    def test_euclidean_hand_value(self):
        assert distance([0, 0], [3, 4], "euclidean") == 5.0

    def test_chi_square_hand_value(self):
        assert distance([1, 0], [0, 1], "chi_square") == 2.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            distance([1, 2], [1, 2, 3], "manhattan")

    def test_chi_square_rejects_negative(self):
        with pytest.raises(ValueError):
            distance([-1, 0], [0, 1], "chi_square")

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            distance([1], [1], "cosine")

    def test_metric_axioms(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            a, b, c = np.abs(rng.standard_normal((3, 8)))
            for m in ("manhattan", "euclidean", "chi_square"):
                assert distance(a, b, m) == pytest.approx(distance(b, a, m))
                assert distance(a, b, m) >= 0
            for m in ("manhattan", "euclidean"):
                assert distance(a, c, m) <= distance(a, b, m) + distance(b, c, m) + 1e-12


class TestComputeDistanceMatrix:
    def test_single_embedding(self):
        mtx = compute_distance_matrix(np.ones((1, 4)))
        assert mtx.values.shape == (1, 1)
        assert mtx.values[0, 0] == 0.0

    @pytest.mark.parametrize("metric", ["manhattan", "euclidean", "chi_square"])
    @pytest.mark.parametrize("tile", [1, 7, 16, 50])
    def test_blocked_equals_naive(self, metric, tile):
        rng = np.random.default_rng(1)
        X = np.abs(rng.standard_normal((50, 12)))
        mtx = compute_distance_matrix(X, metric=metric, tile=tile, workers=2)
        ref = naive_matrix(X, metric)
        scale = max(ref.max(), 1.0)
        assert np.abs(mtx.values - ref).max() / scale < 1e-6

    def test_tile_and_workers_invariance(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((33, 6))
        base = compute_distance_matrix(X, tile=33, workers=1).values
        for tile in (1, 5, 8):
            for workers in (1, 4):
                got = compute_distance_matrix(X, tile=tile, workers=workers).values
                assert np.array_equal(got, base)

    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((20, 5))
        mtx = compute_distance_matrix(X, tile=6)
        assert np.array_equal(mtx.values, mtx.values.T)
        assert (np.diag(mtx.values) == 0).all()

    def test_chi_square_rejects_negative(self):
        with pytest.raises(ValueError):
            compute_distance_matrix(np.array([[-1.0, 2.0]]), metric="chi_square")

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_distance_matrix(np.zeros((0, 4)))

    def test_id_length_checked(self):
        with pytest.raises(ValueError):
            compute_distance_matrix(np.ones((2, 2)), image_ids=["only-one"])


class TestMatrixPersistence:
    def sample(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((7, 4))
        return compute_distance_matrix(X, image_ids=[f"img{i}" for i in range(7)])

    def test_binary_round_trip_bit_exact(self, tmp_path):
        mtx = self.sample()
        path = tmp_path / "dist.bin"
        write_matrix(mtx, path, "binary")
        got = read_matrix(path)
        assert got.image_ids == mtx.image_ids
        assert got.values.tobytes() == mtx.values.tobytes()

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "dist.bin"
        write_matrix(self.sample(), path, "binary")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(MatrixFormatError, match="payload"):
            read_matrix(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "dist.bin"
        path.write_bytes(b"BOGUS!!" + b"\0" * 32)
        with pytest.raises(MatrixFormatError):
            read_matrix(path)

    def test_truncated_id_index(self, tmp_path):
        path = tmp_path / "dist.bin"
        write_matrix(self.sample(), path, "binary")
        path.write_bytes(path.read_bytes()[:15])
        with pytest.raises(MatrixFormatError):
            read_matrix(path)

    def test_csv_round_trip(self, tmp_path):
        mtx = self.sample()
        path = tmp_path / "dist.csv"
        write_matrix(mtx, path, "csv")
        got = read_matrix(path)
        assert got.image_ids == mtx.image_ids
        # 9 significant digits cover float32 exactly
        assert np.allclose(got.values, mtx.values, rtol=1e-6, atol=1e-9)

    def test_csv_header_restores_id_order(self, tmp_path):
        mtx = self.sample()
        path = tmp_path / "dist.csv"
        write_matrix(mtx, path, "csv")
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first == "query_id," + ",".join(mtx.image_ids)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            write_matrix(self.sample(), tmp_path / "x", "parquet")


class TestRankForQuery:
    def test_hand_case(self):
        values = np.array(
            [[0, 3, 1, 2], [3, 0, 9, 9], [1, 9, 0, 9], [2, 9, 9, 0]], dtype=np.float32
        )
        mtx = DistanceMatrix(values, list("abcd"))
        assert rank_for_query(mtx, 0).tolist() == [2, 3, 1]

    def test_all_ties_ascending_index(self):
        values = np.ones((5, 5), dtype=np.float32)
        np.fill_diagonal(values, 0)
        mtx = DistanceMatrix(values, list("abcde"))
        assert rank_for_query(mtx, 2).tolist() == [0, 1, 3, 4]

    def test_two_items(self):
        mtx = DistanceMatrix(np.array([[0, 1], [1, 0]], dtype=np.float32), list("ab"))
        assert rank_for_query(mtx, 1).tolist() == [0]

    def test_permutation_property(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((12, 3))
        mtx = compute_distance_matrix(X)
        for q in range(12):
            order = rank_for_query(mtx, q)
            assert sorted(order.tolist()) == [i for i in range(12) if i != q]

    def test_out_of_range(self):
        mtx = DistanceMatrix(np.zeros((2, 2), dtype=np.float32), list("ab"))
        with pytest.raises(IndexError):
            rank_for_query(mtx, 2)
