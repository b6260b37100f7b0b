import numpy as np
import pytest

from shapebias.stimuli import (
    DatasetError,
    NavonConfig,
    PatchworkConfig,
    generate_navon,
    generate_patchwork,
    make_split,
    read_dataset,
    subsample_fraction,
    write_dataset,
)


@pytest.fixture(scope="module")
def navon_small():
    return generate_navon(NavonConfig(alphabet_size=6, positions=2, seed=3))


class TestClassHoldoutSplit:
    def test_counts_full_navon_formula(self):
        # validation = 3 held-out textures x (A-1) shapes x P positions
        a, p, holdout = 6, 2, 2
        s = generate_navon(NavonConfig(alphabet_size=a, positions=p, seed=1))
        plan = make_split(s, "shape", holdout=holdout, seed=0)
        assert len(plan.val_ids) == holdout * (a - 1) * p
        assert len(plan.train_ids) + len(plan.val_ids) == len(s.items)

    def test_texture_task_symmetric(self, navon_small):
        plan = make_split(navon_small, "texture", holdout=2, seed=0)
        assert len(plan.val_ids) == 2 * 5 * 2

    def test_holdout_property_exact(self, navon_small):
        plan = make_split(navon_small, "shape", holdout=2, seed=4)
        table = navon_small.by_id()
        train_textures = {table[i].texture_label for i in plan.train_ids}
        val_textures = {table[i].texture_label for i in plan.val_ids}
        assert not (train_textures & val_textures)
        assert set(plan.held_out_classes) == val_textures
        # every shape class still trains
        train_shapes = {table[i].shape_label for i in plan.train_ids}
        assert train_shapes == set(range(6))

    def test_infeasible_holdout_rejected(self):
        s = generate_navon(NavonConfig(alphabet_size=3, positions=1, seed=0))
        with pytest.raises(DatasetError):
            make_split(s, "shape", holdout=2, seed=0)

    def test_deterministic(self, navon_small):
        a = make_split(navon_small, "shape", holdout=2, seed=7)
        b = make_split(navon_small, "shape", holdout=2, seed=7)
        assert a.train_ids == b.train_ids and a.val_ids == b.val_ids


class TestExemplarSplit:
    def test_holds_one_of_each(self):
        s = generate_patchwork(PatchworkConfig(exemplars_per_cell=5, seed=2))
        plan = make_split(s, "shape", holdout="exemplar", seed=1)
        table = s.by_id()
        hs, ht = plan.held_out_shape_exemplar, plan.held_out_texture_exemplar
        for i in plan.train_ids:
            item = table[i]
            assert item.provenance["shape_exemplar"] != hs
            assert item.provenance["texture_exemplar"] != ht
        for i in plan.val_ids:
            item = table[i]
            assert (
                item.provenance["shape_exemplar"] == hs
                or item.provenance["texture_exemplar"] == ht
            )
        # no whole class held out
        train_shapes = {table[i].shape_label for i in plan.train_ids}
        train_textures = {table[i].texture_label for i in plan.train_ids}
        assert train_shapes == set(range(16))
        assert train_textures == set(range(16))

    def test_requires_exemplar_provenance(self, navon_small):
        with pytest.raises(DatasetError):
            make_split(navon_small, "shape", holdout="exemplar", seed=0)


class TestSubsample:
    def test_identity_at_full_fraction(self, navon_small):
        plan = make_split(navon_small, "shape", holdout=2, seed=0)
        assert subsample_fraction(navon_small, plan, 1.0, seed=5) is plan

    def test_class_coverage_at_small_fraction(self):
        s = generate_navon(NavonConfig(alphabet_size=10, positions=3, seed=6))
        plan = make_split(s, "shape", holdout=3, seed=0)
        sub = subsample_fraction(s, plan, 0.08, seed=1)
        table = s.by_id()
        shapes = {table[i].shape_label for i in sub.train_ids}
        textures = {table[i].texture_label for i in sub.train_ids}
        full_shapes = {table[i].shape_label for i in plan.train_ids}
        full_textures = {table[i].texture_label for i in plan.train_ids}
        assert shapes == full_shapes and textures == full_textures
        assert len(sub.train_ids) == int(np.ceil(0.08 * len(plan.train_ids)))
        assert sub.val_ids == plan.val_ids

    def test_repeat_same_seed_identical(self, navon_small):
        plan = make_split(navon_small, "shape", holdout=2, seed=0)
        a = subsample_fraction(navon_small, plan, 0.3, seed=9)
        b = subsample_fraction(navon_small, plan, 0.3, seed=9)
        assert a.train_ids == b.train_ids

    def test_too_small_fraction_rejected(self, navon_small):
        plan = make_split(navon_small, "shape", holdout=2, seed=0)
        with pytest.raises(DatasetError):
            subsample_fraction(navon_small, plan, 0.01, seed=0)


class TestDatasetIO:
    def test_round_trip_value_equal(self, tmp_path, navon_small):
        manifest = write_dataset(navon_small, tmp_path / "ds")
        loaded = read_dataset(manifest)
        assert len(loaded.items) == len(navon_small.items)
        assert loaded.shape_classes == navon_small.shape_classes
        for a, b in zip(navon_small.items, loaded.items):
            assert a.id == b.id
            assert a.shape_label == b.shape_label and a.texture_label == b.texture_label
            np.testing.assert_array_equal(a.image, b.image)
            assert a.provenance == b.provenance

    def test_manifest_record_count(self, tmp_path, navon_small):
        manifest = write_dataset(navon_small, tmp_path / "ds")
        lines = [l for l in manifest.read_text().splitlines() if l.strip()]
        assert len(lines) == len(navon_small.items)

    def test_tampered_image_detected(self, tmp_path, navon_small):
        manifest = write_dataset(navon_small, tmp_path / "ds")
        img = next((tmp_path / "ds" / "images").iterdir())
        raw = bytearray(img.read_bytes())
        raw[-20] ^= 0xFF
        img.write_bytes(bytes(raw))
        with pytest.raises(DatasetError, match="checksum"):
            read_dataset(manifest)

    def test_conflict_manifest_rejects_matching_labels(self, tmp_path, navon_small):
        import json

        manifest = write_dataset(navon_small, tmp_path / "ds")
        lines = manifest.read_text().splitlines()
        rec = json.loads(lines[0])
        rec["texture_label"] = rec["shape_label"]
        lines[0] = json.dumps(rec, sort_keys=True)
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match="matching shape/texture"):
            read_dataset(manifest, verify=False)

    def test_external_style_transfer_manifest_loads(self, tmp_path):
        # a GST-style manifest with content/style provenance survives the round trip
        s = generate_patchwork(PatchworkConfig(exemplars_per_cell=2, seed=8))
        manifest = write_dataset(s, tmp_path / "gst")
        loaded = read_dataset(manifest)
        for item in loaded.items:
            assert "content_source" in item.provenance
            assert "style_source" in item.provenance

    def test_missing_file_rejected(self, tmp_path, navon_small):
        manifest = write_dataset(navon_small, tmp_path / "ds")
        next((tmp_path / "ds" / "images").iterdir()).unlink()
        with pytest.raises(DatasetError):
            read_dataset(manifest)

    def test_write_deterministic_bytes(self, tmp_path, navon_small):
        write_dataset(navon_small, tmp_path / "a")
        write_dataset(navon_small, tmp_path / "b")
        for rel in ("manifest.jsonl", "checksums.txt", "dataset.json"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
