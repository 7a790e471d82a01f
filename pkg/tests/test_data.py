import hashlib
import os

import numpy as np
import pytest

from idol.data import (
    DatasetError,
    GeneratorConfig,
    ShiftSpec,
    generate_dataset,
    generate_sample,
    iter_batches,
    load_split,
    split_storm_ids,
)
from idol.diagnostics import jsd
from idol.holland import radius_from_pressure

SMALL_COUNTS = {"train": 24, "valid": 8, "test": 8}


def _dir_digest(path):
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as fh:
            h.update(name.encode())
            h.update(fh.read())
    return h.hexdigest()


class TestGenerateSample:
    def test_deterministic_bitwise(self):
        cfg = GeneratorConfig(seed=7)
        a = generate_sample(cfg, 3, 1, False)
        b = generate_sample(cfg, 3, 1, False)
        assert np.array_equal(a.ir, b.ir)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.cor, b.cor)

    def test_tcf_is_radius_ratio(self):
        cfg = GeneratorConfig(seed=11)
        s = generate_sample(cfg, 0, 0, False)
        v, p, ri, ro = s.labels
        assert s.cor[0] == pytest.approx(1.0 - ri / ro, rel=1e-12)

    def test_value_ranges(self):
        cfg = GeneratorConfig(seed=5)
        for i in range(10):
            s = generate_sample(cfg, i, i % 4, False)
            assert s.ir.min() >= 0.0 and s.ir.max() <= 1.0
            v, p, ri, ro = s.labels
            assert 0 < ri < ro
            assert 880 < p < 1015
            assert v > 0
            assert np.all(s.cor[:3] > 0) and np.all(s.cor[:3] <= 1)

    def test_outer_radius_inverts_through_profile(self):
        cfg = GeneratorConfig(seed=13)
        for i in range(100):
            s = generate_sample(cfg, i, i % 4, False)
            params = s.params
            p_at_ro = params.p_n - 0.1 * params.deficit
            r = radius_from_pressure(params, p_at_ro)
            assert r == pytest.approx(s.labels[3], rel=1e-6)


class TestGenerateDataset:
    def test_manifest_and_disjoint_storms(self, tmp_path):
        cfg = GeneratorConfig(counts=SMALL_COUNTS, seed=1)
        manifest = generate_dataset(cfg, str(tmp_path))
        assert set(manifest["splits"]) == {"train", "valid", "test"}
        train_ids = set(split_storm_ids(str(tmp_path), "train"))
        test_ids = set(split_storm_ids(str(tmp_path), "test"))
        assert not train_ids & test_ids

    def test_byte_identical_rerun(self, tmp_path):
        cfg = GeneratorConfig(counts=SMALL_COUNTS, seed=3)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        generate_dataset(cfg, str(d1))
        generate_dataset(cfg, str(d2))
        assert _dir_digest(d1) == _dir_digest(d2)

    def test_shift_splits_control_which_splits_move(self, tmp_path):
        base = dict(
            counts={"train": 48, "valid": 48, "test": 48},
            seed=4,
            shift=ShiftSpec(kind="label", magnitude=1.0),
        )
        d1, d2 = tmp_path / "a", tmp_path / "b"
        generate_dataset(GeneratorConfig(**base), str(d1))
        generate_dataset(
            GeneratorConfig(**base, shift_splits=("valid", "test")), str(d2)
        )
        # test split bytes are unaffected by shifting valid as well
        for name in ("labels", "ir", "cor"):
            np.testing.assert_array_equal(
                load_split(str(d1), "test")[name],
                load_split(str(d2), "test")[name],
            )
        # label shift pushes central pressure down on shifted splits only
        p_train = load_split(str(d2), "train")["labels"][:, 1].mean()
        p_valid_plain = load_split(str(d1), "valid")["labels"][:, 1].mean()
        p_valid_shift = load_split(str(d2), "valid")["labels"][:, 1].mean()
        assert p_valid_shift < p_valid_plain
        assert p_valid_shift < p_train

    def test_shift_splits_must_name_real_splits(self):
        with pytest.raises(ValueError):
            GeneratorConfig(counts=SMALL_COUNTS, shift_splits=("extra",))

    def test_label_shift_jsd_monotone(self, tmp_path):
        jsds = []
        for mag in (0.0, 0.5, 1.0):
            cfg = GeneratorConfig(
                counts={"train": 96, "valid": 8, "test": 96},
                seed=2,
                shift=ShiftSpec(kind="label", magnitude=mag),
            )
            out = tmp_path / f"m{mag}"
            generate_dataset(cfg, str(out))
            tr = load_split(str(out), "train")["labels"]
            te = load_split(str(out), "test")["labels"]
            # pressure label carries the shift most directly
            jsds.append(jsd(tr[:, 1], te[:, 1]))
        assert jsds[0] < jsds[1] < jsds[2]


class TestLoadDataset:
    @pytest.fixture()
    def dataset(self, tmp_path):
        cfg = GeneratorConfig(counts=SMALL_COUNTS, seed=9)
        generate_dataset(cfg, str(tmp_path))
        return str(tmp_path)

    def test_round_trip(self, dataset):
        cfg = GeneratorConfig(counts=SMALL_COUNTS, seed=9)
        data = load_split(dataset, "train")
        s0 = generate_sample(cfg, 0, 0, False)
        assert np.array_equal(data["ir"][0], s0.ir.astype(np.float32))
        assert np.array_equal(data["labels"][0], s0.labels.astype(np.float32))

    def test_truncated_file_error(self, dataset):
        path = os.path.join(dataset, "train_labels.f32")
        with open(path, "r+b") as fh:
            fh.truncate(os.path.getsize(path) - 4)
        with pytest.raises(DatasetError, match="train_labels.f32"):
            load_split(dataset, "train")

    def test_missing_split(self, dataset):
        with pytest.raises(DatasetError):
            load_split(dataset, "extra")

    def test_batching_and_shuffle(self, dataset):
        batches = list(iter_batches(dataset, "train", 10, shuffle_seed=4))
        assert [b["labels"].shape[0] for b in batches] == [10, 10, 4]
        order_a = np.concatenate(
            [b["meta"][:, 0] for b in iter_batches(dataset, "train", 10, shuffle_seed=4)]
        )
        order_b = np.concatenate(
            [b["meta"][:, 0] for b in iter_batches(dataset, "train", 10, shuffle_seed=4)]
        )
        order_c = np.concatenate(
            [b["meta"][:, 0] for b in iter_batches(dataset, "train", 10, shuffle_seed=5)]
        )
        assert np.array_equal(order_a, order_b)
        assert not np.array_equal(order_a, order_c)
        assert sorted(order_a.tolist()) == sorted(order_c.tolist())


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ShiftSpec(kind="weird")
    with pytest.raises(ValueError):
        ShiftSpec(kind="label", magnitude=-1)
