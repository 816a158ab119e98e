import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dirtygan import data
from dirtygan.errors import ConfigError, ContractError, DataError


def write_csv(tmp_path, text, name="toy.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


TOY = """a,b,label
0.5,1.0,x
,2.0,y
0.25,3.0,x
"""


class TestLoadCsv:
    def test_empty_cell_becomes_missing(self, tmp_path):
        ds = data.load_csv(write_csv(tmp_path, TOY), "label")
        assert ds.M.sum() == ds.M.size - 1
        assert ds.M[1, 0] == 0 and ds.X[1, 0] == 0.0

    def test_missing_token(self, tmp_path):
        ds = data.load_csv(write_csv(tmp_path, TOY.replace(",2.0,y", "NA,2.0,y")), "label")
        assert ds.M[1, 0] == 0

    def test_missing_label_row(self, tmp_path):
        ds = data.load_csv(write_csv(tmp_path, "a,label\n1.0,x\n2.0,\n3.0,y\n"), "label")
        assert list(ds.m_y) == [1, 0, 1]
        assert ds.n_l == 2
        assert np.array_equal(ds.Y[1], [0, 0])

    def test_unparseable_cell_names_location(self, tmp_path):
        path = write_csv(tmp_path, "a,b,label\n1.0,oops,x\n2.0,3.0,y\n")
        with pytest.raises(DataError, match="row 2.*column 'b'"):
            data.load_csv(path, "label")

    def test_single_class_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            data.load_csv(write_csv(tmp_path, "a,label\n1.0,x\n2.0,x\n"), "label")

    def test_label_order_is_sorted_distinct(self, tmp_path):
        ds = data.load_csv(write_csv(tmp_path, "a,label\n1.0,zed\n2.0,abc\n"), "label")
        assert ds.classes == ("abc", "zed")
        assert np.array_equal(ds.Y, [[0, 1], [1, 0]])

    def test_breast_shape(self, breast_csv):
        ds = data.load_csv(breast_csv, "label")
        assert (ds.n, ds.d) == (569, 30)
        assert ds.n_c == 2 and ds.M.all()

    def test_wine_binarized_imbalance_ratio(self, wine_csv):
        ds = data.load_csv(wine_csv, "label", class_map={"1": "neg", "2": "pos", "3": "pos"})
        assert (ds.n, ds.d) == (178, 13)
        counts = ds.Y.sum(axis=0)
        ratio = counts.max() / counts.min()
        assert abs(ratio - 2.02) < 0.01


class TestMinmaxScale:
    def test_affine_endpoints(self):
        ds = data.from_arrays(np.array([[2.0], [4.0], [6.0]]), [0, 1, 0], ("a", "b"))
        scaled = data.minmax_scale(ds)
        assert np.allclose(scaled.X[:, 0], [0.0, 0.5, 1.0])

    def test_constant_column_maps_to_zero(self):
        ds = data.from_arrays(np.array([[5.0, 1.0], [5.0, 2.0]]), [0, 1], ("a", "b"))
        scaled = data.minmax_scale(ds)
        assert np.array_equal(scaled.X[:, 0], [0.0, 0.0])

    def test_round_trip(self, rng):
        X = 10.0 * rng.standard_normal((20, 4)) + 3.0
        ds = data.minmax_scale(data.from_arrays(X, rng.integers(0, 2, 20), ("a", "b")))
        back = data.unscale_matrix(ds, ds.X)
        assert np.abs(back - X).max() < 1e-12

    def test_scaler_uses_observed_entries_only(self, tmp_path):
        ds = data.load_csv(write_csv(tmp_path, "a,label\n1.0,x\n,y\n3.0,x\n9.0,y\n"), "label")
        scaled = data.minmax_scale(ds)
        # min/max from {1, 3, 9}, the missing cell is ignored and stays 0
        assert np.allclose(scaled.X[:, 0], [0.0, 0.0, 0.25, 1.0])

    def test_all_missing_column_rejected(self, tmp_path):
        ds = data.load_csv(write_csv(tmp_path, "a,b,label\n,1.0,x\n,2.0,y\n"), "label")
        with pytest.raises(DataError, match="'a'"):
            data.minmax_scale(ds)


class TestInjectMcar:
    def test_rate_zero_is_identity(self, breast_csv):
        ds = data.load_csv(breast_csv, "label")
        out = data.inject_mcar(ds, 0.0, seed=7)
        assert np.array_equal(out.M, ds.M)

    def test_missing_count_in_binomial_interval(self, breast_csv):
        ds = data.load_csv(breast_csv, "label")
        out = data.inject_mcar(ds, 0.2, seed=11)
        missing = int(out.M.size - out.M.sum())
        lo, hi = stats.binom.ppf([0.0005, 0.9995], 569 * 30, 0.2)
        assert lo <= missing <= hi

    def test_same_seed_bitwise_identical(self, rng):
        ds = data.from_arrays(rng.random((50, 6)), rng.integers(0, 2, 50), ("a", "b"))
        a = data.inject_mcar(ds, 0.3, seed=42)
        b = data.inject_mcar(ds, 0.3, seed=42)
        assert np.array_equal(a.M, b.M) and np.array_equal(a.X, b.X)

    def test_mask_degradation_is_monotone(self, rng):
        ds = data.from_arrays(rng.random((30, 5)), rng.integers(0, 2, 30), ("a", "b"))
        once = data.inject_mcar(ds, 0.4, seed=1)
        twice = data.inject_mcar(once, 0.4, seed=2)
        assert np.all(twice.M <= once.M)
        assert np.all(once.M <= ds.M)

    def test_missing_cells_zeroed(self, rng):
        ds = data.from_arrays(rng.random((30, 5)) + 1.0, rng.integers(0, 2, 30), ("a", "b"))
        out = data.inject_mcar(ds, 0.5, seed=3)
        assert np.all(out.X[out.M == 0] == 0.0)

    def test_bad_rate(self, rng):
        ds = data.from_arrays(rng.random((5, 2)), [0, 1, 0, 1, 0], ("a", "b"))
        with pytest.raises(ConfigError):
            data.inject_mcar(ds, 1.0, seed=0)


class TestInjectLabelMissingness:
    def test_rate_zero(self, rng):
        ds = data.from_arrays(rng.random((40, 3)), rng.integers(0, 2, 40), ("a", "b"))
        out = data.inject_label_missingness(ds, 0.0, seed=5)
        assert np.array_equal(out.m_y, ds.m_y)

    def test_unlabeled_count_in_binomial_interval(self, rng):
        ds = data.from_arrays(rng.random((1000, 3)), rng.integers(0, 2, 1000), ("a", "b"))
        out = data.inject_label_missingness(ds, 0.2, seed=13)
        unlabeled = int((out.m_y == 0).sum())
        lo, hi = stats.binom.ppf([0.0005, 0.9995], 1000, 0.2)
        assert lo <= unlabeled <= hi

    def test_partition_holds(self, rng):
        ds = data.from_arrays(rng.random((200, 3)), rng.integers(0, 3, 200), ("a", "b", "c"))
        out = data.inject_label_missingness(ds, 0.25, seed=2)
        assert out.n_l + int((out.m_y == 0).sum()) == out.n
        # unlabeled rows lose their one-hot
        assert np.all(out.Y[out.m_y == 0] == 0.0)


class TestKfold:
    def test_even_folds(self):
        folds = data.kfold_split(10, 5, seed=0)
        assert [len(f) for f in folds] == [2, 2, 2, 2, 2]
        assert sorted(np.concatenate(folds).tolist()) == list(range(10))

    def test_near_equal_folds(self):
        folds = data.kfold_split(7, 5, seed=0)
        assert sorted(len(f) for f in folds) == [1, 1, 1, 2, 2]

    def test_determinism(self):
        a = data.kfold_split(31, 4, seed=9)
        b = data.kfold_split(31, 4, seed=9)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa, fb)

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(ConfigError):
            data.kfold_split(3, 5, seed=0)

    @given(n=st.integers(2, 200), k=st.integers(2, 10), seed=st.integers(0, 10))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n, k, seed):
        if k > n:
            return
        folds = data.kfold_split(n, k, seed)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        assert sorted(np.concatenate(folds).tolist()) == list(range(n))


class TestSampleBatch:
    def test_single_row_gather(self, rng):
        ds = data.from_arrays(rng.random((10, 4)), rng.integers(0, 2, 10), ("a", "b"))
        batch = data.sample_batch(ds, [0], np.random.default_rng(0))
        assert np.array_equal(batch.x[0], ds.X[0])
        assert np.array_equal(batch.m[0], ds.M[0])
        assert np.array_equal(batch.y[0], ds.Y[0])

    def test_noise_mean(self, rng):
        ds = data.from_arrays(rng.random((100, 10)), rng.integers(0, 2, 100), ("a", "b"))
        gen = np.random.default_rng(77)
        batch = data.sample_batch(ds, np.arange(100), gen)
        draws = [batch.z]
        for _ in range(9):
            draws.append(data.sample_batch(ds, np.arange(100), gen).z)
        mean = np.concatenate(draws).mean()
        assert 0.49 < mean < 0.51
        assert all(d.min() >= 0 and d.max() < 1 for d in draws)

    def test_same_rng_state_same_noise(self, rng):
        ds = data.from_arrays(rng.random((10, 4)), rng.integers(0, 2, 10), ("a", "b"))
        a = data.sample_batch(ds, [1, 2], np.random.default_rng(5))
        b = data.sample_batch(ds, [1, 2], np.random.default_rng(5))
        assert np.array_equal(a.z, b.z)

    def test_out_of_range_index(self, rng):
        ds = data.from_arrays(rng.random((10, 4)), rng.integers(0, 2, 10), ("a", "b"))
        with pytest.raises(ContractError):
            data.sample_batch(ds, [10], np.random.default_rng(0))


class TestPipelineProperties:
    def run_pipeline(self, path):
        ds = data.load_csv(path, "label")
        ds = data.minmax_scale(ds)
        ds = data.inject_mcar(ds, 0.2, seed=3)
        ds = data.inject_label_missingness(ds, 0.2, seed=4)
        return ds

    def test_masks_stay_boolean_and_values_in_range(self, wine_csv):
        ds = self.run_pipeline(wine_csv)
        assert set(np.unique(ds.M)) <= {0.0, 1.0}
        assert set(np.unique(ds.m_y)) <= {0.0, 1.0}
        obs = ds.X[ds.M > 0]
        assert obs.min() >= 0.0 and obs.max() <= 1.0

    def test_pipeline_is_pure_function_of_inputs(self, wine_csv):
        a = self.run_pipeline(wine_csv)
        b = self.run_pipeline(wine_csv)
        for field in ("X", "Y", "M", "m_y"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_datasets_are_immutable(self, wine_csv):
        ds = self.run_pipeline(wine_csv)
        with pytest.raises(ValueError):
            ds.X[0, 0] = 5.0

    def test_synthetic_two_gaussians(self):
        ds = data.synthetic_two_gaussians(200, 6, seed=0)
        assert (ds.n, ds.d, ds.n_c) == (200, 6, 2)
        assert ds.X.min() >= 0 and ds.X.max() <= 1
        counts = ds.Y.sum(axis=0)
        assert counts.min() > 0 and counts.max() > counts.min()
