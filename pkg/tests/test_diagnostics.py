import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import jensenshannon
from scipy.stats import gaussian_kde

from idol.diagnostics import (
    LN2,
    binned_entropy,
    identity_variance,
    jsd,
    kde,
    load_report_schema,
    mutual_information,
    shift_report,
    write_report,
)


class TestJSD:
    def test_identical_sets_near_zero(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=500)
        assert jsd(x, x.copy()) == pytest.approx(0.0, abs=1e-9)

    def test_degenerate_range(self):
        assert jsd([2.0, 2.0, 2.0], [2.0, 2.0]) == 0.0

    def test_disjoint_supports_approach_bound(self):
        rng = np.random.default_rng(1)
        p = rng.normal(0.0, 0.1, size=2000)
        q = rng.normal(100.0, 0.1, size=2000)
        val = jsd(p, q)
        assert LN2 - 1e-3 < val <= LN2 + 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        p = rng.normal(size=300)
        q = rng.normal(1.0, 2.0, size=400)
        assert jsd(p, q) == pytest.approx(jsd(q, p), abs=1e-12)

    def test_matches_scipy_oracle(self):
        rng = np.random.default_rng(3)
        p = rng.normal(size=1000)
        q = rng.normal(0.7, 1.3, size=800)
        lo = min(p.min(), q.min())
        hi = max(p.max(), q.max())
        edges = np.linspace(lo, hi, 65)
        ph = np.histogram(p, bins=edges)[0] + 1e-12
        qh = np.histogram(q, bins=edges)[0] + 1e-12
        expected = jensenshannon(ph / ph.sum(), qh / qh.sum(), base=math.e) ** 2
        assert jsd(p, q) == pytest.approx(expected, rel=1e-9)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            jsd([1.0], [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    shift=st.floats(-5.0, 5.0),
    scale=st.floats(0.1, 5.0),
)
def test_jsd_bounds_property(seed, shift, scale):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=200)
    q = rng.normal(shift, scale, size=200)
    val = jsd(p, q)
    assert 0.0 <= val <= LN2 + 1e-12


class TestKDE:
    def test_matches_scipy_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=400)
        grid = np.linspace(-4, 4, 101)
        ours = kde(x, grid)
        theirs = gaussian_kde(x, bw_method="scott")(grid)
        # scipy uses the unbiased std in its covariance factor, so allow a
        # small relative slack
        np.testing.assert_allclose(ours, theirs, rtol=5e-3, atol=1e-6)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=300)
        grid = np.linspace(-10, 10, 2001)
        mass = np.trapezoid(kde(x, grid), grid)
        assert mass == pytest.approx(1.0, abs=1e-3)

    def test_zero_variance_uses_floor(self):
        grid = np.linspace(0.0, 2.0, 50)
        dens = kde([1.0] * 10, grid)
        assert np.isfinite(dens).all()
        assert dens.max() > 0

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            kde([1.0], [0.0, 1.0])


class TestMutualInformation:
    def test_independent_near_zero(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=20_000)
        y = rng.normal(size=20_000)
        assert mutual_information(x, y) < 0.06

    def test_deterministic_relation_matches_entropy(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=20_000)
        # MI(x, x) equals the entropy of the binned variable when the joint
        # mass sits on the diagonal
        assert mutual_information(x, x) == pytest.approx(
            binned_entropy(x), abs=1e-6
        )

    def test_affine_invariance(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=5000)
        y = x + rng.normal(scale=0.5, size=5000)
        a = mutual_information(x, y)
        b = mutual_information(3.0 * x - 2.0, 0.1 * y + 7.0)
        assert a == pytest.approx(b, abs=1e-9)

    def test_vector_input_reduced(self):
        rng = np.random.default_rng(10)
        t = rng.normal(size=1000)
        # dominant shared direction so the first principal component tracks t
        x = np.outer(t, rng.normal(size=5)) + 0.05 * rng.normal(size=(1000, 5))
        assert mutual_information(x, t) > 0.5

    def test_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = rng.normal(size=64)
            y = rng.normal(size=64)
            assert mutual_information(x, y) >= 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            mutual_information(np.zeros(31), np.zeros(31))
        with pytest.raises(ValueError):
            mutual_information(np.zeros(40), np.zeros(41))


class TestIdentityVariance:
    def test_identical_domains_zero(self):
        tok = np.random.default_rng(0).normal(size=(50, 4))
        out = identity_variance({"a": tok, "b": tok.copy(), "c": tok.copy()})
        assert out["mean"] == pytest.approx(0.0, abs=1e-12)
        assert out["max"] == pytest.approx(0.0, abs=1e-12)

    def test_two_domain_closed_form(self):
        a = np.full((10, 2), 1.0)
        b = np.full((20, 2), 3.0)
        out = identity_variance({"a": a, "b": b})
        # population variance of means {1, 3} is ((1-2)^2 + (3-2)^2)/2 = 1
        np.testing.assert_allclose(out["per_dim"], [1.0, 1.0])
        assert out["mean"] == 1.0 and out["max"] == 1.0

    def test_needs_two_domains(self):
        with pytest.raises(ValueError):
            identity_variance({"a": np.zeros((5, 2))})


def _toy_report():
    rng = np.random.default_rng(12)
    labels_train = rng.normal(size=(128, 4))
    labels_test = rng.normal(0.3, 1.1, size=(64, 4))
    preds_test = labels_test + rng.normal(scale=0.2, size=(64, 4))
    tokens = {
        name: {
            "train": rng.normal(size=(128, 6)),
            "test": rng.normal(size=(64, 6)),
        }
        for name in ("sh", "v", "p", "ri", "ro")
    }
    feats = {
        "train": rng.normal(size=(128, 6)),
        "test": rng.normal(2.0, 1.0, size=(64, 6)),
    }
    return shift_report(labels_train, labels_test, preds_test, tokens, feats)


class TestShiftReport:
    def test_structure_and_schema(self):
        import jsonschema

        report = _toy_report()
        assert set(report["tasks"]) == {"v", "p", "ri", "ro"}
        for entry in report["tasks"].values():
            assert 0.0 <= entry["jsd_train_test"] <= LN2 + 1e-12
            assert len(entry["kde_grid"]) == len(entry["kde_truth"]) == 128
        jsonschema.validate(report, load_report_schema())

    def test_write_report_artifacts(self, tmp_path):
        report = _toy_report()
        write_report(report, str(tmp_path))
        with open(tmp_path / "report.json") as fh:
            loaded = json.load(fh)
        assert loaded["tasks"]["v"]["jsd_train_test"] == pytest.approx(
            report["tasks"]["v"]["jsd_train_test"]
        )
        for task in ("v", "p", "ri", "ro"):
            for which in ("truth", "pred"):
                path = tmp_path / "series" / f"kde_{task}_{which}.csv"
                assert path.exists()
                with open(path, newline="") as fh:
                    rows = list(csv.reader(fh))
                assert rows[0] == ["x", "y"]
                assert len(rows) == 129

    def test_mi_present_for_tasks(self):
        report = _toy_report()
        assert set(report["mi"]) == {"v", "p", "ri", "ro"}
        assert all(v >= 0.0 for v in report["mi"].values())
