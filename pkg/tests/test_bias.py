import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapebias.bias import (
    BiasReport,
    SuperclassMap,
    compute_bias_report,
    map_to_superclasses,
    shape_bias_from_matches,
)


class TestSuperclassPooling:
    def test_identity_map_unchanged(self):
        probs = np.random.default_rng(0).dirichlet(np.ones(6), size=4)
        m = SuperclassMap.identity([f"c{i}" for i in range(6)])
        np.testing.assert_array_equal(map_to_superclasses(probs, m), probs)

    def test_pairwise_grouping(self):
        probs = np.array([[0.1, 0.2, 0.3, 0.4]])
        m = SuperclassMap(fine_to_super=(0, 0, 1, 1), superclass_names=("a", "b"))
        np.testing.assert_allclose(map_to_superclasses(probs, m), [[0.3, 0.7]])

    def test_mass_preserved_at_64bit(self):
        rng = np.random.default_rng(3)
        probs = rng.dirichlet(np.ones(50), size=10)
        m = SuperclassMap(
            fine_to_super=tuple(rng.integers(0, 7, size=50).tolist()),
            superclass_names=tuple(f"s{i}" for i in range(7)),
        )
        pooled = map_to_superclasses(probs, m)
        np.testing.assert_allclose(pooled.sum(axis=1), 1.0, atol=1e-12)

    def test_non_total_map_rejected(self):
        probs = np.zeros((1, 4))
        m = SuperclassMap(fine_to_super=(0, 1), superclass_names=("a", "b"))
        with pytest.raises(ValueError):
            map_to_superclasses(probs, m)

    def test_json_round_trip(self, tmp_path):
        m = SuperclassMap(fine_to_super=(0, 1, 1), superclass_names=("a", "b"))
        m.to_json(tmp_path / "map.json")
        m2 = SuperclassMap.from_json(tmp_path / "map.json")
        assert m == m2


def _records(decisions):
    """decisions: list of (predicted, shape_label, texture_label)."""
    return [
        {"id": f"i{k}", "predicted": p, "shape_label": s, "texture_label": t}
        for k, (p, s, t) in enumerate(decisions)
    ]


class TestBiasReport:
    def test_paper_table_rows_recomputed(self):
        # recomputing bias from the match columns: (11.7, 48.4) -> 19.5%
        assert shape_bias_from_matches(0.117, 0.484) == pytest.approx(0.195, abs=0.001)
        assert shape_bias_from_matches(0.383, 0.233) == pytest.approx(0.622, abs=0.001)

    def test_counts(self):
        recs = _records([(0, 0, 1), (1, 0, 1), (2, 0, 1), (3, 3, 1)])
        report = compute_bias_report(recs)
        assert report.shape_match == pytest.approx(0.5)  # items 0 and 3
        assert report.texture_match == pytest.approx(0.25)
        assert report.shape_bias == pytest.approx(0.5 / 0.75)
        assert report.n_decided == 3

    def test_degenerate_denominator(self):
        recs = _records([(0, 0, 1), (5, 2, 1)])
        report = compute_bias_report(recs)
        assert report.texture_match == 0.0
        assert report.shape_bias == pytest.approx(1.0)

    def test_no_decided_items_bias_absent(self):
        recs = _records([(5, 0, 1), (5, 2, 3)])
        report = compute_bias_report(recs)
        assert report.shape_bias is None

    def test_colliding_labels_excluded_with_warning(self):
        recs = _records([(0, 0, 1), (1, 1, 1)])
        with pytest.warns(UserWarning, match="colliding"):
            report = compute_bias_report(recs)
        assert report.n_items == 1

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_invariants_on_random_tables(self, rows):
        rows = [(p, s, t) for p, s, t in rows if s != t]
        if not rows:
            return
        report = compute_bias_report(_records(rows))
        assert 0.0 <= report.shape_match <= 1.0
        assert 0.0 <= report.texture_match <= 1.0
        assert report.shape_match + report.texture_match <= 1.0 + 1e-12
        if report.shape_bias is not None:
            expected = report.shape_match / (report.shape_match + report.texture_match)
            assert report.shape_bias == pytest.approx(expected)

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=80))
    @settings(max_examples=40, deadline=None)
    def test_per_class_breakdowns_aggregate_back(self, rows):
        rows = [(p, s, t) for p, s, t in rows if s != t]
        if not rows:
            return
        report = compute_bias_report(_records(rows))
        # weighted by class counts, per-class rates reproduce the global rates
        by_shape = {}
        for d in report.decisions:
            by_shape.setdefault(d["shape_label"], []).append(d)
        total = sum(
            report.per_shape_class[cls]["shape_match"] * len(items)
            for cls, items in by_shape.items()
        )
        assert total / report.n_items == pytest.approx(report.shape_match, abs=1e-12)
        by_tex = {}
        for d in report.decisions:
            by_tex.setdefault(d["texture_label"], []).append(d)
        total_t = sum(
            report.per_texture_class[cls]["texture_match"] * len(items)
            for cls, items in by_tex.items()
        )
        assert total_t / report.n_items == pytest.approx(report.texture_match, abs=1e-12)

    def test_serialization(self, tmp_path):
        recs = _records([(0, 0, 1), (1, 0, 1), (4, 2, 3)])
        report = compute_bias_report(recs)
        report.write_json(tmp_path / "r.json")
        report.write_csv(tmp_path / "r.csv")
        import csv as _csv
        import json as _json

        data = _json.loads((tmp_path / "r.json").read_text())
        assert data["shape_match"] == report.shape_match
        with open(tmp_path / "r.csv", newline="") as fh:
            rows = list(_csv.reader(fh))
        assert rows[0] == ["class", "attribute", "metric", "value"]
        assert len(rows) > 3
