import math
from dataclasses import replace

import numpy as np
import pytest

from ngpkit.errors import ValidationError
from ngpkit.harness import (HarnessModel, TrainConfig, WorldSpec,
                            build_train_config, entity_loss, evaluate,
                            generate_dataset, load_model, load_samples,
                            mean_recall_at_k, parse_config_file,
                            predicate_recalls, rank_predictions, save_dataset,
                            save_model, supervised_loss, train,
                            zero_shot_recall_at_k)
from ngpkit.logic import Fact, PredictionVector
from ngpkit.losses import LossWeights
from ngpkit.ngp import SelectionConfig, ngp_step
from ngpkit.theory import build_complement_of_facts

SMALL_WORLD = WorldSpec(n_subjects=5, n_predicates=5, n_objects=5,
                        feature_dim=12, n_permitted=20, train_samples=60,
                        val_samples=20, test_samples=30, seed=3)


class TestGenerateDataset:
    def test_deterministic_under_seed(self):
        a = generate_dataset(SMALL_WORLD)
        b = generate_dataset(SMALL_WORLD)
        assert a.permitted == b.permitted
        for sa, sb in zip(a.samples, b.samples):
            assert sa.slots == sb.slots
            assert np.array_equal(sa.features, sb.features)

    def test_full_retention_keeps_every_label(self):
        ds = generate_dataset(replace(SMALL_WORLD, retention=1.0))
        assert all(s.ground_facts() for s in ds.split("train"))

    def test_half_retention_blanks_exact_count(self):
        world = replace(SMALL_WORLD, retention=0.5, train_samples=1000)
        ds = generate_dataset(world)
        blank = sum(1 for s in ds.split("train") if not s.ground_facts())
        assert blank == 500

    def test_blanked_samples_keep_entity_labels(self):
        world = replace(SMALL_WORLD, retention=0.5)
        ds = generate_dataset(world)
        for s in ds.split("train"):
            if not s.ground_facts():
                assert all(e is not None for e in s.entities)

    def test_zero_shot_pool_reaches_test_split(self):
        world = replace(SMALL_WORLD, zero_shot_fraction=0.2)
        ds = generate_dataset(world)
        train_facts = ds.train_fact_set()
        test_facts = set()
        for s in ds.split("test"):
            test_facts |= s.fact_set()
        assert test_facts - train_facts

    def test_pool_facts_never_labeled_in_training(self):
        world = replace(SMALL_WORLD, retention=0.5)
        ds = generate_dataset(world)
        assert not (ds.train_fact_set() & ds.zero_shot_pool)

    def test_ground_facts_are_permitted(self):
        ds = generate_dataset(SMALL_WORLD)
        permitted = set(ds.permitted)
        for s in ds.samples:
            assert s.fact_set() <= permitted

    def test_world_validation(self):
        with pytest.raises(ValidationError):
            WorldSpec(n_permitted=0)
        with pytest.raises(ValidationError):
            WorldSpec(retention=1.5)
        with pytest.raises(ValidationError):
            WorldSpec(n_slots=0)


class TestForward:
    def test_zero_parameters_give_uniform(self):
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        w = model.forward(ds.samples[0].features)
        for arr, size in zip(w.slots[0], (5, 5, 5)):
            assert np.allclose(arr, 1.0 / size)

    def test_softmax_sums_to_one(self):
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        rng = np.random.default_rng(0)
        model.set_parameter_vector(
            rng.normal(0, 1, model.parameter_vector().size))
        for s in ds.samples[:20]:
            w = model.forward(s.features)
            for arr in w.slots[0]:
                assert abs(arr.sum() - 1.0) < 1e-9

    def test_logit_shift_invariance(self):
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        rng = np.random.default_rng(1)
        model.set_parameter_vector(
            rng.normal(0, 1, model.parameter_vector().size))
        before = model.forward(ds.samples[0].features).slots[0][1].copy()
        model.biases[0][1] += 3.17  # constant shift of one domain's logits
        after = model.forward(ds.samples[0].features).slots[0][1]
        assert np.allclose(before, after, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        with pytest.raises(ValidationError):
            model.forward(np.zeros(3))


class TestSupervisedLoss:
    def test_perfect_prediction_is_zero(self):
        w = PredictionVector([(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                               np.array([1.0, 0.0]))])
        assert supervised_loss([(0, Fact(0, 0, 0))], w) == pytest.approx(
            0.0, abs=1e-9)

    def test_uniform_prediction_value(self):
        w = PredictionVector([(np.full(4, 0.25), np.full(4, 0.25),
                               np.full(4, 0.25))])
        assert supervised_loss([(0, Fact(1, 2, 3))], w) == pytest.approx(
            3 * math.log(4))

    def test_empty_ground_truth_is_zero(self):
        w = PredictionVector([(np.full(4, 0.25), np.full(4, 0.25),
                               np.full(4, 0.25))])
        assert supervised_loss([], w) == 0.0

    def test_entity_loss_covers_subject_and_object_only(self):
        w = PredictionVector([(np.full(4, 0.25), np.array([1.0, 0, 0, 0]),
                               np.full(4, 0.25))])
        assert entity_loss([(0, (1, 2))], w) == pytest.approx(2 * math.log(4))


class TestBackward:
    def test_zero_learning_rate_keeps_parameters(self):
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        before = model.parameter_vector()
        sample = ds.split("train")[0]
        w = model.forward(sample.features)
        model.backward_and_update(model.supervised_gradient(sample, w), 0.0)
        assert np.array_equal(model.parameter_vector(), before)

    def test_softmax_cross_entropy_identity(self):
        # logit gradient at the true class is w - 1, elsewhere w
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        rng = np.random.default_rng(2)
        model.set_parameter_vector(
            rng.normal(0, 0.5, model.parameter_vector().size))
        sample = ds.split("train")[0]
        fact = sample.slots[0]
        w = model.forward(sample.features)
        gw, gb = model.parameter_gradients(
            model.supervised_gradient(sample, w))
        expected = w.slots[0][0].copy()
        expected[fact.s] -= 1.0
        assert np.allclose(gb[0][0], expected, atol=1e-12)

    def test_end_to_end_gradient_matches_finite_differences(self):
        from ngpkit.checks import suite_end_to_end_gradients
        result = suite_end_to_end_gradients(cases=5, seed=11)
        assert result.failures == 0

    def test_non_finite_gradient_aborts(self):
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        sample = ds.split("train")[0]
        model.forward(sample.features)
        with pytest.raises(ValidationError):
            model.backward_and_update({(0, ("s", 0)): math.inf}, 0.1)


class TestMetrics:
    def _ranked(self, facts):
        return [[Fact(*f) for f in ranked] for ranked in facts]

    def test_all_recovered_is_one(self):
        predictions = self._ranked([[(0, 0, 0)], [(1, 1, 1)]])
        truth = [[Fact(0, 0, 0)], [Fact(1, 1, 1)]]
        assert mean_recall_at_k(predictions, truth, 1) == 1.0

    def test_one_predicate_recovered_one_missed(self):
        # four samples over two predicates: predicate 0 always recovered,
        # predicate 1 never -> mean of (1.0, 0.0)
        predictions = self._ranked([
            [(0, 0, 0)], [(1, 0, 1)], [(2, 0, 2)], [(3, 0, 3)]])
        truth = [[Fact(0, 0, 0)], [Fact(1, 0, 1)],
                 [Fact(2, 1, 2)], [Fact(3, 1, 3)]]
        assert mean_recall_at_k(predictions, truth, 1) == pytest.approx(0.5)
        recalls = predicate_recalls(predictions, truth, 1)
        assert recalls == {0: 1.0, 1: 0.0}

    def test_k_too_small_gives_zero(self):
        predictions = self._ranked([[(0, 0, 0), (1, 1, 1)]])
        truth = [[Fact(1, 1, 1)]]
        assert mean_recall_at_k(predictions, truth, 1) == 0.0

    def test_zero_shot_empty_pool_flag(self):
        predictions = self._ranked([[(0, 0, 0)]])
        truth = [[Fact(0, 0, 0)]]
        value, empty = zero_shot_recall_at_k(predictions, truth,
                                             {Fact(0, 0, 0)}, 1)
        assert value == 0.0 and empty is True

    def test_zero_shot_all_recovered(self):
        predictions = self._ranked([[(0, 0, 0)], [(1, 1, 1)]])
        truth = [[Fact(0, 0, 0)], [Fact(1, 1, 1)]]
        value, empty = zero_shot_recall_at_k(predictions, truth, set(), 1)
        assert value == 1.0 and empty is False

    def test_zero_shot_half_recovered(self):
        # four zero-shot facts, two inside top-k
        predictions = self._ranked([
            [(0, 0, 0)], [(1, 1, 1)], [(9, 9, 9)], [(8, 8, 8)]])
        truth = [[Fact(0, 0, 0)], [Fact(1, 1, 1)],
                 [Fact(2, 2, 2)], [Fact(3, 3, 3)]]
        value, empty = zero_shot_recall_at_k(predictions, truth, set(), 1)
        assert value == pytest.approx(0.5) and empty is False

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        model.set_parameter_vector(
            rng.normal(0, 0.5, model.parameter_vector().size))
        samples = ds.split("test")
        predictions = rank_predictions(model, samples, 10)
        truth = [list(s.fact_set()) for s in samples]
        base = mean_recall_at_k(predictions, truth, 10)
        order = rng.permutation(len(samples))
        shuffled_p = [predictions[int(i)] for i in order]
        shuffled_t = [truth[int(i)] for i in order]
        assert mean_recall_at_k(shuffled_p, shuffled_t, 10) == base

    def test_monotone_rescaling_invariance(self):
        rng = np.random.default_rng(4)
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        model.set_parameter_vector(
            rng.normal(0, 0.5, model.parameter_vector().size))
        samples = ds.split("test")[:10]
        truth = [list(s.fact_set()) for s in samples]
        base_rank = rank_predictions(model, samples, 10)
        base = mean_recall_at_k(base_rank, truth, 10)
        from ngpkit.ngp import topk_facts
        squared = []
        for s in samples:
            w = model.forward(s.features)
            w2 = PredictionVector([tuple(a ** 2 for a in slot)
                                   for slot in w.slots])
            squared.append(topk_facts(w2, None, 10))
        assert mean_recall_at_k(squared, truth, 10) == base


class TestTrain:
    def test_deterministic(self):
        config = TrainConfig(world=SMALL_WORLD, regularizer="ngp-sl",
                             epochs=2, seed=7)
        a = train(config)
        b = train(config)
        assert np.array_equal(a.model.parameter_vector(),
                              b.model.parameter_vector())
        assert a.rows == b.rows

    def test_beta2_zero_bit_identical_to_plain_loop(self):
        world = replace(SMALL_WORLD, retention=1.0)
        config = TrainConfig(world=world, regularizer="none", epochs=2,
                             seed=5)
        result = train(config)

        ds = generate_dataset(world)
        model = HarnessModel(ds.vocab, world.total_feature_dim,
                             world.n_slots)
        rng = np.random.default_rng([config.seed, 0x7A])
        samples = ds.split("train")
        for _ in range(config.epochs):
            for j in rng.permutation(len(samples)):
                s = samples[int(j)]
                w = model.forward(s.features)
                model.backward_and_update(
                    model.supervised_gradient(s, w), config.lr)
        assert np.array_equal(result.model.parameter_vector(),
                              model.parameter_vector())

    def test_baseline_skips_blank_samples_and_ngp_consumes_all(self):
        world = replace(SMALL_WORLD, retention=0.5, train_samples=100)
        base = train(TrainConfig(world=world, regularizer="none", epochs=1))
        ngp = train(TrainConfig(world=world, regularizer="ngp-sl", epochs=1))
        assert base.rows[0]["steps"] == 50
        assert ngp.rows[0]["steps"] == 100

    def test_ngp_step_beta2_zero_matches_supervised_step(self):
        ds = generate_dataset(SMALL_WORLD)
        store = build_complement_of_facts(ds.vocab, ds.permitted)
        sample = ds.split("train")[0]
        cfg = SelectionConfig(rho=3)

        a = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        ngp_step(sample, store, a, cfg, LossWeights(1.0, 0.0), 0.1)

        b = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        w = b.forward(sample.features)
        b.backward_and_update(b.supervised_gradient(sample, w), 0.1)
        assert np.array_equal(a.parameter_vector(), b.parameter_vector())

    def test_ngp_step_weak_supervision_uses_only_logic(self):
        ds = generate_dataset(replace(SMALL_WORLD, retention=0.0))
        store = build_complement_of_facts(ds.vocab, ds.permitted)
        sample = ds.split("train")[0]
        assert not sample.ground_facts()
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        diag = ngp_step(sample, store, model, SelectionConfig(rho=3),
                        LossWeights(1.0, 1.0), 0.1)
        assert diag.ln == 0.0
        assert diag.selected

    def test_ngp_step_no_violations_is_pure_supervised(self):
        ds = generate_dataset(SMALL_WORLD)
        empty_store = build_complement_of_facts(
            ds.vocab, [Fact(s, p, o) for s in range(5) for p in range(5)
                       for o in range(5)])
        sample = ds.split("train")[0]
        cfg = SelectionConfig(rho=3)
        a = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        diag = ngp_step(sample, empty_store, a, cfg, LossWeights(1.0, 1.0),
                        0.1)
        assert diag.ls == 0.0 and diag.selected == []
        b = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        w = b.forward(sample.features)
        b.backward_and_update(b.supervised_gradient(sample, w), 0.1)
        assert np.array_equal(a.parameter_vector(), b.parameter_vector())

    def test_log_rows_schema(self):
        config = TrainConfig(world=SMALL_WORLD, regularizer="ngp-dl2",
                             epochs=1, eval_ks=(5,))
        rows = train(config).rows
        assert list(rows[0].keys()) == ["epoch", "steps", "ln_mean",
                                        "ls_mean", "val_mr_at_5",
                                        "val_zsr_at_5"]


class TestSerializationAndConfig:
    def test_dataset_round_trip(self, tmp_path):
        ds = generate_dataset(replace(SMALL_WORLD, retention=0.5))
        path = tmp_path / "data.tsv"
        save_dataset(ds, path)
        loaded = load_samples(path, ds.vocab)
        assert len(loaded) == len(ds.samples)
        for a, b in zip(ds.samples, loaded):
            assert a.sample_id == b.sample_id
            assert a.split == b.split
            assert a.slots == b.slots
            assert np.array_equal(a.features, b.features)

    def test_model_round_trip_bytes_and_values(self, tmp_path):
        ds = generate_dataset(SMALL_WORLD)
        model = HarnessModel(ds.vocab, SMALL_WORLD.total_feature_dim)
        rng = np.random.default_rng(6)
        model.set_parameter_vector(
            rng.normal(0, 1, model.parameter_vector().size))
        p1 = tmp_path / "m1.npz"
        p2 = tmp_path / "m2.npz"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = load_model(p1)
        assert np.array_equal(loaded.parameter_vector(),
                              model.parameter_vector())
        assert loaded.vocab == model.vocab

    def test_config_file_parse_and_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text(
            "# comment\n"
            "world.n_subjects=5\nworld.n_predicates=5\nworld.n_objects=5\n"
            "world.train_samples=40\nworld.val_samples=10\n"
            "world.test_samples=10\nworld.n_permitted=15\n"
            "selection.rho=2\nloss.beta1=1.0\nloss.beta2=1.0\n"
            "train.lr=0.1\ntrain.epochs=3\ntrain.regularizer=ngp-sl\n"
            "train.eval_ks=5,10\n")
        config = build_train_config(parse_config_file(path))
        assert config.world.n_subjects == 5
        assert config.selection.rho == 2
        assert config.lr == 0.1
        assert config.epochs == 3
        assert config.regularizer == "ngp-sl"
        assert config.eval_ks == (5, 10)

    def test_unknown_config_key_rejected(self):
        with pytest.raises(ValidationError):
            build_train_config({"world.flux_capacitors": "3"})


class TestEvaluate:
    def test_reports_requested_ks(self):
        config = TrainConfig(world=SMALL_WORLD, epochs=1)
        result = train(config)
        metrics = evaluate(result.model, result.dataset, "test", (5, 10))
        assert set(metrics) == {"mr_at_5", "zsr_at_5", "mr_at_10",
                                "zsr_at_10", "zs_pool_empty",
                                "mr_predicates_scored"}
        assert 0.0 <= metrics["mr_at_5"] <= 1.0
        assert metrics["mr_predicates_scored"] >= 1
