"""Dataset generation, masking, splitting, and file round trips."""

import numpy as np
import pytest

from primo.autodiff import ContractError
from primo.data import (
    Dataset,
    SchemaError,
    XorConfig,
    apply_missingness,
    generate_xor,
    load,
    save,
    split,
    xor_label,
)


class TestLabels:
    def test_opposite_signs_are_class_one(self):
        assert xor_label(-1.0, 1.0) == 1

    def test_same_signs_are_class_zero(self):
        assert xor_label(-1.0, -1.0) == 0

    def test_labels_depend_only_on_signs(self):
        ds = generate_xor(XorConfig(n_samples=5000, seed=1))
        expected = (ds.x_o[:, 0] < 0) != (ds.x_m[:, 0] < 0)
        np.testing.assert_array_equal(ds.y, expected.astype(np.int64))

    def test_class_prior_matches_independent_mc_oracle(self):
        """Class-1 mass of generated data vs a 1e6-draw mixture oracle, 0.5%."""
        cfg = XorConfig(seed=7)
        ds = generate_xor(cfg)
        rng = np.random.default_rng(123)
        comp = rng.choice(3, size=1_000_000, p=np.asarray(cfg.weights))
        pts = np.asarray(cfg.centers)[comp] + cfg.sigma * rng.standard_normal(
            (1_000_000, 2)
        )
        oracle = np.mean((pts[:, 0] < 0) != (pts[:, 1] < 0))
        assert abs(ds.y.mean() - oracle) <= 0.005


class TestGeneration:
    def test_same_seed_is_bit_identical(self):
        a = generate_xor(XorConfig(n_samples=3000, seed=9))
        b = generate_xor(XorConfig(n_samples=3000, seed=9))
        assert a.equals(b)

    def test_different_seeds_differ(self):
        a = generate_xor(XorConfig(n_samples=3000, seed=9))
        b = generate_xor(XorConfig(n_samples=3000, seed=10))
        assert not a.equals(b)

    def test_config_validation(self):
        with pytest.raises(ContractError):
            XorConfig(sigma=0.0)
        with pytest.raises(ContractError):
            XorConfig(weights=(0.5, 0.2, 0.2))
        with pytest.raises(ContractError):
            XorConfig(mask_prob=1.5)


class TestMissingness:
    def test_zero_rate_keeps_everything(self):
        ds = generate_xor(XorConfig(n_samples=500, seed=2))
        out = apply_missingness(ds, 0.0, seed=3)
        assert out.m_present.all() and out.equals(ds)

    def test_full_rate_drops_everything(self):
        ds = generate_xor(XorConfig(n_samples=500, seed=2))
        out = apply_missingness(ds, 1.0, seed=3)
        assert not out.m_present.any()
        assert np.isnan(out.x_m).all()

    def test_half_rate_concentration(self):
        ds = generate_xor(XorConfig(n_samples=28_000, seed=2))
        out = apply_missingness(ds, 0.5, seed=3)
        frac_missing = 1.0 - out.m_present.mean()
        assert 0.49 <= frac_missing <= 0.51

    def test_deterministic_per_seed(self):
        ds = generate_xor(XorConfig(n_samples=2000, seed=2))
        a = apply_missingness(ds, 0.5, seed=3)
        b = apply_missingness(ds, 0.5, seed=3)
        np.testing.assert_array_equal(a.m_present, b.m_present)


class TestSplit:
    def test_seven_three(self):
        ds = generate_xor(XorConfig(n_samples=10, seed=4))
        sp = split(ds, (0.7, 0.3), seed=5)
        assert len(sp.train) == 7 and len(sp.test) == 3

    def test_disjoint_union_covers_source(self):
        ds = generate_xor(XorConfig(n_samples=999, seed=4))
        sp = split(ds, (0.7, 0.3), seed=5)
        ids = np.concatenate([sp.train.ids, sp.test.ids])
        assert len(np.unique(ids)) == len(ds)

    def test_three_way_split(self):
        ds = generate_xor(XorConfig(n_samples=100, seed=4))
        sp = split(ds, (0.8, 0.1, 0.1), seed=5)
        assert sp.validation is not None
        assert len(sp.train) + len(sp.validation) + len(sp.test) == 100

    def test_bad_fractions_rejected(self):
        ds = generate_xor(XorConfig(n_samples=10, seed=4))
        with pytest.raises(ContractError):
            split(ds, (0.7, 0.2), seed=5)


class TestFileFormat:
    def test_round_trip_identity(self, tmp_path):
        ds = apply_missingness(generate_xor(XorConfig(n_samples=700, seed=6)), 0.4, 7)
        path = tmp_path / "ds.tsv"
        save(ds, path)
        assert load(path).equals(ds)

    def test_unlabeled_rows_round_trip(self, tmp_path):
        ds = generate_xor(XorConfig(n_samples=10, seed=6))
        y = ds.y.copy()
        y[3] = -1
        ds = Dataset(ds.x_o, ds.x_m, ds.m_present, y, ds.ids, ds.n_classes)
        path = tmp_path / "ds.tsv"
        save(ds, path)
        loaded = load(path)
        assert loaded[3].y is None
        assert loaded.equals(ds)

    def test_wrong_x_m_length_names_record(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            "# primo-dataset v1 x_o_dim=1 x_m_dim=1 n_classes=2\n"
            "0\t1\t0.5\t0.1\n"
            "1\t0\t0.5\t0.1 0.2\n"
        )
        with pytest.raises(SchemaError, match="record 1"):
            load(path)

    def test_label_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            "# primo-dataset v1 x_o_dim=1 x_m_dim=1 n_classes=2\n0\t5\t0.5\t0.1\n"
        )
        with pytest.raises(SchemaError, match="label 5"):
            load(path)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\t1\t0.5\t0.1\n")
        with pytest.raises(SchemaError, match="header"):
            load(path)

    def test_absent_x_m_written_as_na_not_zeros(self, tmp_path):
        ds = apply_missingness(generate_xor(XorConfig(n_samples=50, seed=6)), 1.0, 7)
        path = tmp_path / "ds.tsv"
        save(ds, path)
        body = path.read_text().splitlines()[1:]
        assert all(line.split("\t")[3] == "NA" for line in body)
