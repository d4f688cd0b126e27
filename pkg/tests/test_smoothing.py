import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothcert import (
    AblationMask,
    GroupPartition,
    PerturbationConfig,
    apply_ablation,
    derive_stream,
    inject_noise,
    load_partition,
    make_partition,
    sample_mask,
    sample_variant,
    save_partition,
)
from smoothcert.smoothing import round_half_away


class TestRounding:
    @pytest.mark.parametrize("x,expected", [
        (2.5, 3), (3.5, 4), (-2.5, -3), (8.0, 8), (0.49, 0), (0.5, 1), (7.999999, 8),
    ])
    def test_half_away_from_zero(self, x, expected):
        assert round_half_away(x) == expected


class TestMakePartition:
    def test_even_split(self):
        p = make_partition(100, 50)
        assert p.groups == ((0, 50), (50, 100))

    def test_default_layout_grouping(self):
        p = make_partition(629, 50)
        assert p.n_groups == 13
        assert p.groups[-1] == (600, 629)  # remainder group of 29

    def test_degenerate_single_feature(self):
        p = make_partition(1, 50)
        assert p.groups == ((0, 1),)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            make_partition(0, 50)

    def test_partition_invariants_enforced(self):
        with pytest.raises(ValueError):
            GroupPartition(dim=10, groups=((0, 5), (6, 10)))  # gap at 5
        with pytest.raises(ValueError):
            GroupPartition(dim=10, groups=((0, 5), (4, 10)))  # overlap


class TestPartitionFile:
    def test_roundtrip(self, tmp_path):
        p = make_partition(23, 7)
        path = tmp_path / "groups.txt"
        save_partition(p, path)
        back = load_partition(path)
        assert back == p

    def test_non_contiguous_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0 2 3\n1 4 5\n")
        with pytest.raises(ValueError, match="contiguous"):
            load_partition(path)

    def test_gap_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0 1 2\n5 6 7\n")
        with pytest.raises(ValueError):
            load_partition(path)


class TestSampleMask:
    def test_identity_config(self):
        p = make_partition(40, 10)
        cfg = PerturbationConfig(group_keep_fraction=1.0, noise_feature_fraction=0.0)
        mask = sample_mask(p, cfg, derive_stream(0, "t"))
        assert mask.kept_groups == frozenset(range(4))
        assert len(mask.noised_features) == 0

    def test_exact_kept_count(self):
        p = make_partition(500, 50)  # K = 10
        cfg = PerturbationConfig(group_keep_fraction=0.8)
        for i in range(200):
            mask = sample_mask(p, cfg, derive_stream(7, "draw", i))
            assert len(mask.kept_groups) == 8

    def test_minimum_one_group_kept(self):
        p = make_partition(100, 50)
        cfg = PerturbationConfig(group_keep_fraction=0.01)
        mask = sample_mask(p, cfg, derive_stream(1, "x"))
        assert len(mask.kept_groups) == 1

    def test_deterministic_given_stream(self):
        p = make_partition(200, 50)
        cfg = PerturbationConfig()
        a = sample_mask(p, cfg, derive_stream(3, "s", 0))
        b = sample_mask(p, cfg, derive_stream(3, "s", 0))
        assert a.kept_groups == b.kept_groups
        np.testing.assert_array_equal(a.noised_features, b.noised_features)

    @settings(max_examples=200, deadline=None)
    @given(dim=st.integers(2, 400), group_size=st.integers(1, 80),
           keep=st.floats(0.05, 1.0), noise=st.floats(0.0, 1.0),
           seed=st.integers(0, 2**32))
    def test_mask_invariants(self, dim, group_size, keep, noise, seed):
        p = make_partition(dim, group_size)
        cfg = PerturbationConfig(group_keep_fraction=keep, noise_feature_fraction=noise)
        mask = sample_mask(p, cfg, derive_stream(seed, "inv"))
        assert len(mask.kept_groups) == max(1, round_half_away(keep * p.n_groups))
        kept_features = mask.kept_feature_indices()
        assert np.isin(mask.noised_features, kept_features).all()
        assert len(mask.noised_features) == round_half_away(noise * len(kept_features))
        dropped = mask.dropped_feature_indices()
        assert not np.intersect1d(mask.noised_features, dropped).size

    def test_mask_validates_noised_subset(self):
        p = make_partition(4, 2)
        with pytest.raises(ValueError):
            AblationMask(partition=p, kept_groups=frozenset({0}),
                         noised_features=np.array([3]))


class TestApplyAblation:
    def test_identity_mask(self):
        p = make_partition(6, 2)
        x = np.arange(6, dtype=float)
        mask = AblationMask(p, frozenset(range(3)), np.empty(0, dtype=int))
        np.testing.assert_array_equal(apply_ablation(x, mask), x)

    def test_all_groups_dropped(self):
        p = make_partition(6, 2)
        x = np.arange(1, 7, dtype=float)
        mask = AblationMask(p, frozenset(), np.empty(0, dtype=int))
        assert not apply_ablation(x, mask).any()

    def test_direct_definition(self):
        p = GroupPartition(dim=4, groups=((0, 2), (2, 4)))
        mask = AblationMask(p, frozenset({0}), np.empty(0, dtype=int))
        np.testing.assert_array_equal(
            apply_ablation(np.array([1.0, 2.0, 3.0, 4.0]), mask), [1, 2, 0, 0])

    def test_input_not_modified(self):
        p = make_partition(4, 2)
        x = np.ones(4)
        mask = AblationMask(p, frozenset({1}), np.empty(0, dtype=int))
        apply_ablation(x, mask)
        np.testing.assert_array_equal(x, np.ones(4))

    def test_dimension_mismatch(self):
        p = make_partition(4, 2)
        mask = AblationMask(p, frozenset({0}), np.empty(0, dtype=int))
        with pytest.raises(ValueError):
            apply_ablation(np.ones(5), mask)


class TestInjectNoise:
    def test_sigma_zero_unchanged(self):
        p = make_partition(10, 5)
        x = np.ones(10)
        mask = sample_mask(p, PerturbationConfig(noise_feature_fraction=1.0),
                           derive_stream(0, "n"))
        np.testing.assert_array_equal(inject_noise(x, mask, 0.0, derive_stream(0, "n2")), x)

    def test_empty_noised_set_unchanged(self):
        p = make_partition(10, 5)
        x = np.ones(10)
        mask = AblationMask(p, frozenset(range(2)), np.empty(0, dtype=int))
        np.testing.assert_array_equal(inject_noise(x, mask, 2.0, derive_stream(1, "n")), x)

    def test_monte_carlo_moments(self):
        # 1e5 draws on one feature: mean within 4 sigma / sqrt(n), std within 2%
        p = make_partition(1, 1)
        mask = AblationMask(p, frozenset({0}), np.array([0]))
        sigma = 0.7
        x = np.array([3.0])
        draws = np.array([
            inject_noise(x, mask, sigma, derive_stream(9, "mc", i))[0]
            for i in range(100_000)
        ])
        assert abs(draws.mean() - 3.0) < 4 * sigma / np.sqrt(len(draws))
        assert abs(draws.std() - sigma) / sigma < 0.02

    def test_untouched_features_bit_identical(self):
        p = make_partition(20, 5)
        x = np.linspace(-1, 1, 20)
        mask = sample_mask(p, PerturbationConfig(noise_feature_fraction=0.3),
                           derive_stream(5, "u"))
        out = inject_noise(x, mask, 1.0, derive_stream(5, "u2"))
        untouched = np.setdiff1d(np.arange(20), mask.noised_features)
        np.testing.assert_array_equal(out[untouched], x[untouched])


class TestSampleVariant:
    def test_identity_config_returns_input(self):
        p = make_partition(30, 10)
        cfg = PerturbationConfig(group_keep_fraction=1.0, noise_feature_fraction=0.0,
                                 sigma=0.0, master_seed=1)
        x = np.linspace(0, 1, 30)
        np.testing.assert_array_equal(sample_variant(x, p, cfg, "s", 0), x)

    def test_repeated_triple_identical(self):
        p = make_partition(100, 25)
        cfg = PerturbationConfig(master_seed=42)
        x = np.random.default_rng(0).normal(size=100)
        a = sample_variant(x, p, cfg, "sample-1", 3)
        b = sample_variant(x, p, cfg, "sample-1", 3)
        np.testing.assert_array_equal(a, b)

    def test_distinct_indices_differ(self):
        # masks must differ across variants with overwhelming probability
        p = make_partition(200, 50)
        cfg = PerturbationConfig(master_seed=0)
        differing = 0
        for i in range(1000):
            a = sample_mask(p, cfg, derive_stream(cfg.master_seed, "variant", f"s{i}", 0))
            b = sample_mask(p, cfg, derive_stream(cfg.master_seed, "variant", f"s{i}", 1))
            if a.kept_groups != b.kept_groups or not np.array_equal(a.noised_features,
                                                                    b.noised_features):
                differing += 1
        assert differing > 900

    def test_variant_vectors_differ_on_nonzero_input(self):
        p = make_partition(200, 50)
        cfg = PerturbationConfig(master_seed=0)
        x = np.ones(200)
        a = sample_variant(x, p, cfg, "s", 0)
        b = sample_variant(x, p, cfg, "s", 1)
        assert not np.array_equal(a, b)

    def test_input_never_modified(self):
        p = make_partition(50, 10)
        cfg = PerturbationConfig(master_seed=7)
        x = np.ones(50)
        sample_variant(x, p, cfg, "s", 0)
        np.testing.assert_array_equal(x, np.ones(50))

    def test_order_independence(self):
        p = make_partition(60, 20)
        cfg = PerturbationConfig(master_seed=5)
        x = np.random.default_rng(1).normal(size=60)
        forward = [sample_variant(x, p, cfg, "sid", i) for i in range(8)]
        backward = [sample_variant(x, p, cfg, "sid", i) for i in reversed(range(8))]
        for i in range(8):
            np.testing.assert_array_equal(forward[i], backward[7 - i])


class TestDeriveStream:
    def test_distinct_labels_distinct_streams(self):
        a = derive_stream(0, "a").random(4)
        b = derive_stream(0, "b").random(4)
        assert not np.array_equal(a, b)

    def test_same_key_same_stream(self):
        np.testing.assert_array_equal(derive_stream(3, "x", 1).random(8),
                                      derive_stream(3, "x", 1).random(8))

    def test_label_separator_prevents_collisions(self):
        a = derive_stream(0, "ab", "c").random(4)
        b = derive_stream(0, "a", "bc").random(4)
        assert not np.array_equal(a, b)
