"""Fusion algebra: early stacking, feature interleave + L2 + SVM, late scores."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twostream.errors import (ConfigError, DataError, FormatError,
                              NumericError, ShapeError)
from twostream.fusion import (ClassPriors, FusedFeature, SvmHyper, SvmModel,
                              assemble_early_input, check_score_vector,
                              deinterleave_features, deserialize_svm,
                              estimate_priors, interleave_features,
                              l2_normalize, late_fuse, load_svm,
                              majority_vote, save_svm, serialize_svm,
                              svm_objective, svm_predict, train_linear_svm,
                              uniform_priors, write_feature_csv)
from twostream.streams import StreamFeature


def feat(values, source="spatial"):
    return StreamFeature(values=np.asarray(values, np.float32), source=source)


def fused(values, normalized=False):
    return FusedFeature(values=np.asarray(values, np.float64),
                        normalized=normalized)


class TestAssembleEarlyInput:
    def test_channel_count_l10(self):
        out = assemble_early_input(np.zeros((4, 4, 3)), np.zeros((4, 4, 20)))
        assert out.shape == (4, 4, 23)

    def test_channel_count_l1(self):
        out = assemble_early_input(np.zeros((4, 4, 3)), np.zeros((4, 4, 2)))
        assert out.shape == (4, 4, 5)

    def test_channel_order(self):
        frame = np.random.default_rng(0).random((4, 4, 3)).astype(np.float32)
        flow = np.random.default_rng(1).random((4, 4, 6)).astype(np.float32)
        out = assemble_early_input(frame, flow)
        assert np.array_equal(out[:, :, :3], frame)
        # 0-based channel 3 is the u component of the first stacked flow.
        assert np.array_equal(out[:, :, 3], flow[:, :, 0])
        assert np.array_equal(out[:, :, 3:], flow)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            assemble_early_input(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))

    def test_bad_channel_counts(self):
        with pytest.raises(ShapeError):
            assemble_early_input(np.zeros((4, 4, 4)), np.zeros((4, 4, 2)))
        with pytest.raises(ShapeError):
            assemble_early_input(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))


class TestInterleave:
    def test_stated_example(self):
        out = interleave_features(feat([1.0, 2.0]), feat([10.0, 20.0]))
        assert np.array_equal(out.values, [1.0, 10.0, 2.0, 20.0])
        assert not out.normalized

    def test_zero_inputs(self):
        out = interleave_features(feat([0.0, 0.0, 0.0]), feat([0.0, 0.0, 0.0]))
        assert np.array_equal(out.values, np.zeros(6))

    @settings(max_examples=50, deadline=None)
    @given(d=st.integers(min_value=1, max_value=64),
           seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_bijection(self, d, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=d).astype(np.float32)
        b = rng.normal(size=d).astype(np.float32)
        back_a, back_b = deinterleave_features(
            interleave_features(feat(a), feat(b, "temporal")))
        assert np.array_equal(back_a, a.astype(np.float64))
        assert np.array_equal(back_b, b.astype(np.float64))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            interleave_features(feat([1.0, 2.0]), feat([1.0]))

    def test_desk_scale_length(self):
        out = interleave_features(feat(np.ones(128)), feat(np.ones(128)))
        assert len(out) == 256

    def test_deinterleave_rejects_odd_length(self):
        with pytest.raises(ShapeError):
            deinterleave_features(fused([1.0, 2.0, 3.0]))


class TestL2Normalize:
    def test_three_four_five(self):
        out = l2_normalize(fused([3.0, 4.0, 0.0, 0.0]))
        assert out.normalized
        np.testing.assert_allclose(out.values, [0.6, 0.8, 0.0, 0.0], atol=1e-15)

    def test_unit_vector_unchanged(self):
        v = np.zeros(8)
        v[2] = 1.0
        out = l2_normalize(fused(v))
        assert np.array_equal(out.values, v)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31 - 1),
           scale=st.floats(min_value=1e-3, max_value=1e3))
    def test_homogeneity(self, seed, scale):
        v = np.random.default_rng(seed).normal(size=16) + 0.1
        a = l2_normalize(fused(v))
        b = l2_normalize(fused(v * scale))
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_unit_norm(self, seed):
        v = np.random.default_rng(seed).normal(size=32)
        out = l2_normalize(fused(v))
        assert abs(np.linalg.norm(out.values) - 1.0) <= 1e-9

    def test_zero_vector_escape(self):
        out = l2_normalize(fused(np.zeros(10)))
        assert not out.normalized
        assert np.array_equal(out.values, np.zeros(10))

    def test_normalized_flag_is_checked(self):
        with pytest.raises(NumericError):
            FusedFeature(values=np.array([3.0, 4.0]), normalized=True)


class TestPriors:
    def test_balanced_labels_uniform(self):
        priors = estimate_priors([c for c in range(6) for _ in range(10)])
        np.testing.assert_allclose(priors.p, np.full(6, 1 / 6), atol=1e-7)

    def test_three_one_split(self):
        priors = estimate_priors([0, 0, 0, 1])
        np.testing.assert_allclose(priors.p, [0.75, 0.25], atol=1e-6)

    def test_absent_class_gets_positive_prior(self):
        priors = estimate_priors([0, 0, 2, 2], n_classes=3)
        assert priors.p[1] > 0.0
        assert priors.p[1] < 1e-6
        assert abs(priors.p.sum() - 1.0) < 1e-12

    def test_empty_labels(self):
        with pytest.raises(DataError):
            estimate_priors([])

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            estimate_priors([0, 3], n_classes=2)

    def test_uniform_priors_helper(self):
        assert len(uniform_priors(6)) == 6
        np.testing.assert_allclose(uniform_priors(4).p, 0.25)

    @pytest.mark.parametrize("p", [
        [0.5, 0.5, 0.1], [0.5, -0.1, 0.6], [0.5, 0.0, 0.5], [1.0, np.nan],
    ])
    def test_invalid_priors(self, p):
        with pytest.raises((NumericError, ShapeError)):
            ClassPriors(p=np.asarray(p))


class TestLateFuse:
    def test_uniform_stream_cancels(self):
        s = np.array([0.5, 0.2, 0.1, 0.1, 0.05, 0.05])
        out = late_fuse(s, np.full(6, 1 / 6), uniform_priors(6))
        np.testing.assert_allclose(out, s, atol=1e-12)

    def test_two_class_uniform_priors_case(self):
        out = late_fuse([0.7, 0.3], [0.6, 0.4], uniform_priors(2))
        np.testing.assert_allclose(out, [0.42 / 0.54, 0.12 / 0.54], atol=1e-9)
        np.testing.assert_allclose(out, [7 / 9, 2 / 9], atol=1e-9)

    def test_two_class_skewed_priors_case(self):
        out = late_fuse([0.7, 0.3], [0.6, 0.4],
                        ClassPriors(p=np.array([0.9, 0.1])))
        np.testing.assert_allclose(out, [0.28, 0.72], atol=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.random(6)
        a /= a.sum()
        b = rng.random(6)
        b /= b.sum()
        p = rng.random(6) + 0.1
        priors = ClassPriors(p=p / p.sum())
        assert np.array_equal(late_fuse(a, b, priors), late_fuse(b, a, priors))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31 - 1),
           n=st.integers(min_value=2, max_value=12))
    def test_output_sums_to_one(self, seed, n):
        rng = np.random.default_rng(seed)
        a = rng.random(n) + 1e-6
        a /= a.sum()
        b = rng.random(n) + 1e-6
        b /= b.sum()
        p = rng.random(n) + 0.05
        out = late_fuse(a, b, ClassPriors(p=p / p.sum()))
        assert abs(out.sum() - 1.0) <= 1e-9
        assert np.all(out >= 0.0)

    def test_prior_monotonicity(self):
        s_st = np.array([0.5, 0.3, 0.2])
        s_tp = np.array([0.4, 0.4, 0.2])
        high = late_fuse(s_st, s_tp, ClassPriors(p=np.array([0.4, 0.3, 0.3])))
        low = late_fuse(s_st, s_tp, ClassPriors(p=np.array([0.2, 0.4, 0.4])))
        assert low[0] > high[0]

    def test_all_zero_products_degenerate(self):
        with pytest.raises(NumericError, match="degenerate"):
            late_fuse([1.0, 0.0], [0.0, 1.0], uniform_priors(2))

    def test_invalid_scores_rejected(self):
        with pytest.raises(NumericError):
            late_fuse([0.7, 0.4], [0.5, 0.5], uniform_priors(2))
        with pytest.raises(NumericError):
            late_fuse([1.2, -0.2], [0.5, 0.5], uniform_priors(2))
        with pytest.raises(ShapeError):
            late_fuse([0.5, 0.5], [0.3, 0.3, 0.4], uniform_priors(2))

    def test_check_score_vector_passthrough(self):
        s = check_score_vector([0.25, 0.75])
        assert s.dtype == np.float64


def cloud_features(rng, center, count):
    pts = rng.normal(scale=0.15, size=(count, 2)) + center
    return [l2_normalize(fused(np.append(p, 1.0))) for p in pts]


class TestSvmTraining:
    def test_separable_clouds_perfect(self):
        rng = np.random.default_rng(0)
        feats = cloud_features(rng, (2.0, 0.0), 20) + cloud_features(rng, (-2.0, 0.5), 20)
        labels = [0] * 20 + [1] * 20
        model = train_linear_svm(feats, labels)
        correct = sum(svm_predict(model, f)[0] == y for f, y in zip(feats, labels))
        assert correct == 40

    def test_duplicate_invariance(self):
        rng = np.random.default_rng(1)
        feats = cloud_features(rng, (1.5, 1.0), 12) + cloud_features(rng, (-1.0, -1.0), 12)
        labels = [0] * 12 + [1] * 12
        once = train_linear_svm(feats, labels)
        twice = train_linear_svm(feats + feats, labels + labels)
        np.testing.assert_allclose(once.weights, twice.weights, atol=1e-10)
        np.testing.assert_allclose(once.biases, twice.biases, atol=1e-10)

    def test_single_class_rejected(self):
        rng = np.random.default_rng(2)
        feats = cloud_features(rng, (1.0, 1.0), 8)
        with pytest.raises(DataError, match="2 distinct classes"):
            train_linear_svm(feats, [3] * 8)

    def test_unnormalized_feature_rejected(self):
        good = l2_normalize(fused([1.0, 2.0, 2.0]))
        bad = fused([1.0, 2.0, 2.0])
        with pytest.raises(ConfigError, match="normalized"):
            train_linear_svm([good, bad], [0, 1])

    def test_empty_features(self):
        with pytest.raises(DataError):
            train_linear_svm([], [])

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        feats = cloud_features(rng, (1.0, 0.0), 10) + cloud_features(rng, (-1.0, 0.0), 10)
        labels = [0] * 10 + [1] * 10
        a = train_linear_svm(feats, labels)
        b = train_linear_svm(feats, labels)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)

    def test_objective_running_average_non_increasing(self):
        rng = np.random.default_rng(5)
        feats = (cloud_features(rng, (1.5, 0.5), 15)
                 + cloud_features(rng, (-0.5, -1.5), 15)
                 + cloud_features(rng, (-1.5, 1.5), 15))
        labels = [0] * 15 + [1] * 15 + [2] * 15
        values = [svm_objective(train_linear_svm(feats, labels,
                                                 SvmHyper(epochs=t)),
                                feats, labels)
                  for t in range(1, 26)]
        running = np.cumsum(values) / np.arange(1, len(values) + 1)
        assert np.all(np.diff(running) <= 1e-9)

    def test_three_class_labels_infer_n(self):
        rng = np.random.default_rng(6)
        feats = (cloud_features(rng, (2.0, 0.0), 6)
                 + cloud_features(rng, (0.0, 2.0), 6)
                 + cloud_features(rng, (-2.0, -2.0), 6))
        model = train_linear_svm(feats, [0] * 6 + [1] * 6 + [2] * 6)
        assert model.n_classes == 3
        assert model.feature_len == 3

    def test_bad_hyper(self):
        with pytest.raises(ConfigError):
            SvmHyper(c=0.0)
        with pytest.raises(ConfigError):
            SvmHyper(epochs=0)


class TestSvmPredict:
    def one_hot_model(self, n=4):
        return SvmModel(weights=np.eye(n, dtype=np.float32),
                        biases=np.zeros(n, dtype=np.float32),
                        hyper=SvmHyper())

    def test_one_hot_rows_pick_aligned_class(self):
        model = self.one_hot_model()
        for j in range(4):
            v = np.zeros(4)
            v[j] = 1.0
            chosen, margins = svm_predict(model, fused(v, normalized=True))
            assert chosen == j
            assert margins.shape == (4,)
            assert margins[j] == 1.0

    def test_zero_input_ties_to_class_zero(self):
        chosen, margins = svm_predict(self.one_hot_model(), fused(np.zeros(4)))
        assert chosen == 0
        assert np.array_equal(margins, np.zeros(4))

    def test_margin_order_matches_classes(self):
        model = SvmModel(weights=np.zeros((3, 2), dtype=np.float32),
                         biases=np.array([0.1, 0.5, 0.3], dtype=np.float32),
                         hyper=SvmHyper())
        chosen, margins = svm_predict(model, fused([0.0, 0.0]))
        assert chosen == 1
        np.testing.assert_allclose(margins, [0.1, 0.5, 0.3], atol=1e-7)

    def test_scaling_model_keeps_argmax(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(5, 8)).astype(np.float32)
        b = rng.normal(size=5).astype(np.float32)
        v = fused(rng.normal(size=8))
        base = svm_predict(SvmModel(weights=w, biases=b, hyper=SvmHyper()), v)[0]
        scaled = svm_predict(SvmModel(weights=3.5 * w, biases=3.5 * b,
                                      hyper=SvmHyper()), v)[0]
        assert base == scaled

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            svm_predict(self.one_hot_model(), fused([1.0, 2.0]))


class TestMajorityVote:
    def test_plain_majority(self):
        assert majority_vote([2, 1, 2, 2, 0]) == 2

    def test_tie_goes_to_lowest(self):
        assert majority_vote([3, 1, 3, 1]) == 1

    def test_single_vote(self):
        assert majority_vote([4]) == 4

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            majority_vote([])


class TestSvmFileFormat:
    def trained(self):
        rng = np.random.default_rng(8)
        feats = cloud_features(rng, (1.0, 0.0), 8) + cloud_features(rng, (-1.0, 0.0), 8)
        return train_linear_svm(feats, [0] * 8 + [1] * 8)

    def test_round_trip_bit_exact(self, tmp_path):
        model = self.trained()
        path = tmp_path / "model.svm"
        save_svm(model, path)
        loaded = load_svm(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert np.array_equal(loaded.biases, model.biases)
        assert serialize_svm(loaded) == path.read_bytes()

    def test_prediction_survives_round_trip(self, tmp_path):
        model = self.trained()
        path = tmp_path / "model.svm"
        save_svm(model, path)
        loaded = load_svm(path)
        v = fused(np.array([0.3, -0.2, 1.0]))
        assert svm_predict(model, v)[0] == svm_predict(loaded, v)[0]

    def test_bad_magic(self):
        data = serialize_svm(self.trained())
        with pytest.raises(FormatError, match="at byte 0"):
            deserialize_svm(b"XSVM" + data[4:])

    def test_bad_version(self):
        data = bytearray(serialize_svm(self.trained()))
        data[4] = 99
        with pytest.raises(FormatError, match="version"):
            deserialize_svm(bytes(data))

    def test_bad_dims(self):
        data = bytearray(serialize_svm(self.trained()))
        data[8:12] = (1).to_bytes(4, "little")  # n_classes = 1
        with pytest.raises(FormatError, match="bad dims"):
            deserialize_svm(bytes(data))

    def test_truncated(self):
        data = serialize_svm(self.trained())
        with pytest.raises(FormatError, match="at byte"):
            deserialize_svm(data[:-3])

    def test_trailing_garbage(self):
        data = serialize_svm(self.trained())
        with pytest.raises(FormatError):
            deserialize_svm(data + b"\x00")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_svm(tmp_path / "absent.svm")


class TestFeatureCsv:
    def test_round_trip_values(self, tmp_path):
        rng = np.random.default_rng(9)
        feats = [fused(rng.normal(size=4)) for _ in range(3)]
        path = tmp_path / "features.csv"
        write_feature_csv(feats, [5, 0, 2], path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 3
        first = lines[0].split(",")
        assert first[0] == "5"
        parsed = np.array([float(x) for x in first[1:]])
        assert np.array_equal(parsed, feats[0].values)

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(ShapeError):
            write_feature_csv([fused([1.0])], [1, 2], tmp_path / "f.csv")
