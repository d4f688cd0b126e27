import numpy as np
import pytest

from smoothcert import (
    DatasetFormatError,
    LabeledDataset,
    SplitSpec,
    SynthSpec,
    load_dataset,
    make_partition,
    save_dataset,
    stratified_split,
    synth_generate,
)


def random_dataset(n, d, seed=0, layout_id="synth-d{d}"):
    rng = np.random.default_rng(seed)
    return LabeledDataset(
        vectors=rng.normal(size=(n, d)),
        labels=rng.integers(0, 2, n),
        ids=tuple(f"r{i}" for i in range(n)),
        layout_id=layout_id.format(d=d),
    )


class TestContainer:
    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 3)), np.array([0, 2]), ("a", "b"), "x")

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 3)), np.array([0, 1]), ("a",), "x")


class TestRoundTrip:
    def test_csv_roundtrip_printed_precision(self, tmp_path):
        ds = random_dataset(100, 629, seed=5, layout_id="pe-static-629")
        path = tmp_path / "ds.csv"
        save_dataset(ds, path)
        back = load_dataset(path, "pe-static-629")
        assert back.ids == ds.ids
        np.testing.assert_array_equal(back.labels, ds.labels)
        # equality at the printed 9-significant-digit precision
        reprinted = np.vectorize(lambda v: float(f"{v:.9g}"))(ds.vectors)
        np.testing.assert_array_equal(back.vectors, reprinted)
        # a second round trip is byte-stable
        path2 = tmp_path / "ds2.csv"
        save_dataset(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_jsonl_roundtrip(self, tmp_path):
        ds = random_dataset(20, 8, seed=9)
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        back = load_dataset(path, ds.layout_id)
        assert back.ids == ds.ids
        np.testing.assert_array_equal(back.labels, ds.labels)
        reprinted = np.vectorize(lambda v: float(f"{v:.9g}"))(ds.vectors)
        np.testing.assert_array_equal(back.vectors, reprinted)

    def test_empty_dataset_header_only(self, tmp_path):
        ds = LabeledDataset(np.zeros((0, 4)), np.zeros(0, dtype=int), (), "synth-d4")
        path = tmp_path / "empty.csv"
        save_dataset(ds, path)
        assert path.read_text().count("\n") == 1
        back = load_dataset(path, "synth-d4")
        assert back.n == 0

    def test_single_row(self, tmp_path):
        ds = random_dataset(1, 3, seed=1)
        path = tmp_path / "one.csv"
        save_dataset(ds, path)
        assert load_dataset(path, ds.layout_id).n == 1

    def test_file_order_preserved(self, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text("id,label,f0,f1\nfirst,1,1.5,2.5\nsecond,0,-1,0\n")
        ds = load_dataset(path, "custom")
        assert ds.ids == ("first", "second")
        assert list(ds.labels) == [1, 0]
        np.testing.assert_array_equal(ds.vectors[0], [1.5, 2.5])


class TestLoadErrors:
    def test_label_out_of_domain_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,label,f0\na,0,1.0\nb,2,2.0\n")
        with pytest.raises(DatasetFormatError, match="label out of domain at line 3"):
            load_dataset(path, "custom")

    def test_non_numeric_feature_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,label,f0\na,0,oops\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(path, "custom")

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n")
        with pytest.raises(DatasetFormatError, match="header"):
            load_dataset(path, "custom")

    def test_layout_dimension_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,label,f0,f1\na,0,1.0,2.0\n")
        with pytest.raises(DatasetFormatError, match="dimension mismatch"):
            load_dataset(path, "pe-static-629")

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,label,f0,f1\na,0,1.0,2.0\nb,1,3.0\n")
        with pytest.raises(DatasetFormatError, match="line 3"):
            load_dataset(path, "custom")


class TestStratifiedSplit:
    def test_exact_counts_balanced(self):
        ds = two_class_dataset(100, 100)
        train, test = stratified_split(ds, SplitSpec(train_fraction=0.8, seed=0))
        assert train.n == 160 and test.n == 40
        assert int(train.labels.sum()) == 80
        assert int(test.labels.sum()) == 20

    def test_same_seed_same_partition(self):
        ds = two_class_dataset(57, 91)
        a = stratified_split(ds, SplitSpec(seed=123))
        b = stratified_split(ds, SplitSpec(seed=123))
        assert a[0].ids == b[0].ids and a[1].ids == b[1].ids

    def test_different_seed_differs(self):
        ds = two_class_dataset(57, 91)
        a = stratified_split(ds, SplitSpec(seed=1))
        b = stratified_split(ds, SplitSpec(seed=2))
        assert a[0].ids != b[0].ids

    def test_partition_no_loss_no_duplicates(self):
        ds = two_class_dataset(33, 48)
        train, test = stratified_split(ds, SplitSpec(train_fraction=0.7, seed=5))
        assert set(train.ids) | set(test.ids) == set(ds.ids)
        assert not set(train.ids) & set(test.ids)

    def test_priors_preserved_brute_force(self):
        rng = np.random.default_rng(77)
        for _ in range(30):
            n0 = int(rng.integers(10, 200))
            n1 = int(rng.integers(10, 200))
            frac = float(rng.uniform(0.5, 0.9))
            ds = two_class_dataset(n0, n1)
            train, test = stratified_split(ds, SplitSpec(train_fraction=frac,
                                                         seed=int(rng.integers(1 << 31))))
            p = n1 / (n0 + n1)
            p_train = train.labels.mean()
            p_test = test.labels.mean()
            bound = 1 / min(train.n, test.n)
            assert abs(p_train - p) <= bound
            assert abs(p_test - p) <= bound

    def test_tiny_class_rejected(self):
        ds = LabeledDataset(np.zeros((3, 2)), np.array([0, 0, 1]), ("a", "b", "c"), "x")
        with pytest.raises(ValueError, match="fewer than 2"):
            stratified_split(ds, SplitSpec())


def two_class_dataset(n0, n1):
    d = 4
    rng = np.random.default_rng(n0 * 1000 + n1)
    return LabeledDataset(
        vectors=rng.normal(size=(n0 + n1, d)),
        labels=np.array([0] * n0 + [1] * n1),
        ids=tuple(f"s{i}" for i in range(n0 + n1)),
        layout_id="synth-d4",
    )


class TestSynthGenerate:
    def test_deterministic(self):
        part = make_partition(60, 20)
        spec = SynthSpec(n_per_class=50, dim=60, seed=4)
        a = synth_generate(spec, part)
        b = synth_generate(spec, part)
        np.testing.assert_array_equal(a.vectors, b.vectors)
        assert a.ids == b.ids

    def test_exact_class_priors(self):
        part = make_partition(20, 5)
        ds = synth_generate(SynthSpec(n_per_class=37, dim=20, seed=1), part)
        assert int(ds.labels.sum()) == 37
        assert int((ds.labels == 0).sum()) == 37

    def test_zero_signal_classes_identical_distribution(self):
        part = make_partition(50, 10)
        ds = synth_generate(SynthSpec(n_per_class=4000, dim=50,
                                      signal_strength=0.0, seed=2), part)
        benign = ds.vectors[ds.labels == 0]
        malicious = ds.vectors[ds.labels == 1]
        # same zero-mean unit-variance Gaussian for both classes
        se = 1 / np.sqrt(4000)
        assert np.abs(benign.mean(axis=0)).max() < 5 * se
        assert np.abs(malicious.mean(axis=0)).max() < 5 * se

    def test_group_signal_has_unit_norm_direction(self):
        part = make_partition(100, 25)
        strength = 2.5
        ds = synth_generate(SynthSpec(n_per_class=20000, dim=100,
                                      signal_strength=strength, seed=3), part)
        mean = ds.vectors[ds.labels == 1].mean(axis=0)
        for start, end in part.groups:
            assert np.linalg.norm(mean[start:end]) == pytest.approx(strength, rel=0.05)

    def test_single_feature_threshold_separability(self):
        # one feature per group carries the full signal: a depth-1 split
        # on any feature must reach > 0.9 held-out accuracy at strength 5
        part = make_partition(200, 1)
        ds = synth_generate(SynthSpec(n_per_class=1000, dim=200,
                                      signal_strength=5.0, seed=6), part)
        train, test = stratified_split(ds, SplitSpec(seed=0))
        rng = np.random.default_rng(0)
        for f in rng.choice(200, size=5, replace=False):
            acc = best_threshold_accuracy(train.vectors[:, f], train.labels,
                                          test.vectors[:, f], test.labels)
            assert acc > 0.9, f"feature {f} reached only {acc}"

    def test_partition_dim_mismatch(self):
        with pytest.raises(ValueError):
            synth_generate(SynthSpec(n_per_class=5, dim=10, seed=0),
                           make_partition(12, 4))


def best_threshold_accuracy(x_train, y_train, x_test, y_test):
    """Brute-force sweep over all midpoint thresholds and both polarities."""
    order = np.argsort(x_train)
    xs = x_train[order]
    candidates = (xs[1:] + xs[:-1]) / 2
    best = (0.0, 1)
    for t in candidates[:: max(1, len(candidates) // 500)]:
        for polarity in (0, 1):
            pred = np.where(x_train > t, polarity, 1 - polarity)
            acc = (pred == y_train).mean()
            if acc > best[0]:
                best = (acc, (t, polarity))
    t, polarity = best[1]
    pred = np.where(x_test > t, polarity, 1 - polarity)
    return (pred == y_test).mean()
