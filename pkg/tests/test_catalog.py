import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cytoprobe import catalog
from cytoprobe.catalog import (
    CLASS_NAMES,
    CLASSES,
    IMAGE_SIZE,
    ImageRecord,
    SplitSpec,
    class_weights,
    load_corpus,
    oversample,
    read_ppm,
    render_phantom,
    save_corpus,
    stratified_split,
    write_ppm,
)
from cytoprobe.errors import ValidationError


def make_record(i, cls, provenance="phantom", split=None):
    return ImageRecord(
        id=f"r{i:04d}",
        pixels=np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8),
        provenance=provenance,
        class_label=cls,
        split=split,
    )


class TestTaxonomy:
    def test_seven_classes_with_reference_counts(self):
        assert len(CLASSES) == 7
        counts = {c.name: c.reference_count for c in CLASSES}
        assert counts == {
            "neutrophil": 12556,
            "multinuclear": 310,
            "mast": 1553,
            "macrophage": 24498,
            "lymphocyte": 46397,
            "erythrocyte": 339,
            "eosinophil": 105,
        }

    def test_synthetic_record_requires_label(self):
        rec = make_record(0, None, provenance="cgan")
        with pytest.raises(ValidationError):
            rec.validate()

    def test_pixel_shape_enforced(self):
        rec = make_record(0, "mast")
        rec.pixels = np.zeros((32, 32, 3), dtype=np.uint8)
        with pytest.raises(ValidationError):
            rec.validate()


class TestPhantom:
    def test_same_class_and_seed_byte_identical(self):
        a = render_phantom("lymphocyte", 42)
        b = render_phantom("lymphocyte", 42)
        assert np.array_equal(a.pixels, b.pixels)
        assert a.provenance == "phantom"
        assert a.class_label == "lymphocyte"

    def test_different_seed_differs(self):
        a = render_phantom("lymphocyte", 1)
        b = render_phantom("lymphocyte", 2)
        assert not np.array_equal(a.pixels, b.pixels)

    def test_erythrocyte_has_no_nucleus_blob(self):
        # by construction rule: no dark nucleus pixels at all
        for seed in range(10):
            rec = render_phantom("erythrocyte", seed)
            lum = rec.pixels.astype(float).mean(axis=-1)
            assert (lum < 110.0).sum() == 0

    def test_unknown_class_rejected(self):
        with pytest.raises(ValidationError):
            render_phantom("basophil", 0)

    def test_classifier_oracle_separates_classes(self):
        # independent 10-feature nearest-centroid classifier over pixels
        from oracles import phantom_features

        X, y = [], []
        for ci, name in enumerate(CLASS_NAMES):
            for s in range(100):
                X.append(phantom_features(render_phantom(name, s).pixels))
                y.append(ci)
        X = np.asarray(X)
        y = np.asarray(y)
        train = np.arange(len(y)) % 2 == 0
        mu, sd = X[train].mean(axis=0), X[train].std(axis=0) + 1e-9
        Z = (X - mu) / sd
        centroids = np.stack([Z[train & (y == c)].mean(axis=0) for c in range(7)])
        pred = np.argmin(
            ((Z[~train][:, None, :] - centroids[None]) ** 2).sum(axis=-1), axis=1
        )
        accuracy = float((pred == y[~train]).mean())
        assert accuracy >= 0.95, f"phantom classes not separable: accuracy {accuracy:.3f}"


class TestStratifiedSplit:
    def test_exact_division(self):
        records = [make_record(i, "mast") for i in range(10)]
        stratified_split(records, SplitSpec(seed=1))
        sizes = [sum(r.split == s for r in records) for s in ("train", "val", "test")]
        assert sizes == [8, 1, 1]

    def test_seven_classes_twenty_each(self):
        records = []
        i = 0
        for name in CLASS_NAMES:
            for _ in range(20):
                records.append(make_record(i, name))
                i += 1
        stratified_split(records, SplitSpec(seed=2))
        for name in CLASS_NAMES:
            group = [r for r in records if r.class_label == name]
            sizes = [sum(r.split == s for r in group) for s in ("train", "val", "test")]
            assert sizes == [16, 2, 2]

    def test_105_items_largest_remainder(self):
        records = [make_record(i, "eosinophil") for i in range(105)]
        stratified_split(records, SplitSpec(seed=3))
        sizes = [sum(r.split == s for r in records) for s in ("train", "val", "test")]
        assert sizes[0] == 84
        assert sorted(sizes[1:]) == [10, 11]

    def test_unlabeled_record_rejected(self):
        records = [make_record(0, "mast"), make_record(1, None, provenance="real")]
        with pytest.raises(ValidationError):
            stratified_split(records, SplitSpec())

    def test_bad_fractions_rejected(self):
        with pytest.raises(ValidationError):
            stratified_split([make_record(0, "mast")], SplitSpec(train_fraction=0.7, val_fraction=0.1, test_fraction=0.1))

    @given(st.integers(min_value=1, max_value=200), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=30, deadline=None)
    def test_partition_property(self, n, seed):
        records = [make_record(i, CLASS_NAMES[i % 3]) for i in range(n)]
        stratified_split(records, SplitSpec(seed=seed))
        assert all(r.split in ("train", "val", "test") for r in records)
        for name in set(r.class_label for r in records):
            group = [r for r in records if r.class_label == name]
            m = len(group)
            for frac, s in zip((0.8, 0.1, 0.1), ("train", "val", "test")):
                got = sum(r.split == s for r in group)
                assert abs(got - frac * m) <= 1

    def test_deterministic(self):
        a = [make_record(i, CLASS_NAMES[i % 7]) for i in range(50)]
        b = [make_record(i, CLASS_NAMES[i % 7]) for i in range(50)]
        stratified_split(a, SplitSpec(seed=9))
        stratified_split(b, SplitSpec(seed=9))
        assert [r.split for r in a] == [r.split for r in b]


class TestClassWeights:
    def test_uniform_counts_give_unit_weights(self):
        records = [make_record(i, CLASS_NAMES[i % 7]) for i in range(70)]
        weights = class_weights(records)
        assert all(w == pytest.approx(1.0) for w in weights.values())

    def test_nine_one_example(self):
        records = [make_record(i, "mast") for i in range(9)] + [make_record(9, "lymphocyte")]
        weights = class_weights(records)
        assert weights["mast"] == pytest.approx(10 / 18)
        assert weights["lymphocyte"] == pytest.approx(5.0)

    def test_reference_count_ratio(self):
        weights = catalog.reference_class_weights()
        assert weights["eosinophil"] / weights["lymphocyte"] == pytest.approx(46397 / 105, rel=1e-12)

    def test_weighted_frequencies_uniform(self):
        rng = np.random.default_rng(4)
        records = []
        for i, name in enumerate(CLASS_NAMES):
            for j in range(int(rng.integers(1, 60))):
                records.append(make_record(i * 1000 + j, name))
        weights = class_weights(records)
        products = []
        for name in CLASS_NAMES:
            count = sum(r.class_label == name for r in records)
            products.append(weights[name] * count)
        assert max(products) - min(products) < 1e-9

    def test_empty_input_rejected(self):
        with pytest.raises(ValidationError):
            class_weights([])


class TestOversample:
    def test_balanced_input_is_fixed_point(self):
        records = [make_record(i, CLASS_NAMES[i % 7]) for i in range(14)]
        assert oversample(records, seed=0) == records

    def test_three_one_counts(self):
        records = [make_record(i, "mast") for i in range(3)] + [make_record(3, "lymphocyte")]
        out = oversample(records, seed=1)
        counts = {name: sum(r.class_label == name for r in out) for name in ("mast", "lymphocyte")}
        assert counts == {"mast": 3, "lymphocyte": 3}
        assert all(r in out for r in records)

    def test_duplicate_multiset_reproducible(self):
        records = (
            [make_record(i, "mast") for i in range(5)]
            + [make_record(10 + i, "lymphocyte") for i in range(2)]
            + [make_record(20, "erythrocyte")]
        )
        a = [r.id for r in oversample(records, seed=7)]
        b = [r.id for r in oversample(records, seed=7)]
        c = [r.id for r in oversample(records, seed=8)]
        assert a == b
        assert sorted(a) != sorted(c) or a != c
        assert len(a) == 15  # 5 per class after balancing


class TestPpmIo:
    def test_round_trip(self, tmp_path):
        rec = render_phantom("mast", 5)
        path = tmp_path / "cell.ppm"
        write_ppm(path, rec.pixels)
        back = read_ppm(path)
        assert np.array_equal(back, rec.pixels)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n64 64\n255\n")
        assert len(raw) == len(b"P6\n64 64\n255\n") + 64 * 64 * 3

    def test_corpus_round_trip(self, tmp_path):
        records = [render_phantom(name, s) for name in CLASS_NAMES[:3] for s in range(2)]
        records[0].split = "train"
        save_corpus(records, tmp_path)
        back = load_corpus(tmp_path)
        assert [r.id for r in back] == [r.id for r in records]
        assert back[0].split == "train"
        assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(back, records))

    def test_append_rejects_duplicates(self, tmp_path):
        records = [render_phantom("mast", 1)]
        save_corpus(records, tmp_path)
        with pytest.raises(ValidationError):
            save_corpus(records, tmp_path, append=True)
