"""Unified classifier: distributions, partial loss, gradients, training."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unitype.encoder import EncoderParams, HashedMeanEncoder
from unitype.errors import DivergedLoss, EmptyCandidateSet, NonFiniteInput
from unitype.hashing import derive_seed
from unitype.ingestion import split_dataset, pool_train
from unitype.oracle import LabelId
from unitype.predictor import TrainingConfig, TypePredictor, UnifiedModel
from unitype.synthbench import PseudoDataset, SynthSpec, TrueTree, generate
from unitype.taxonomy import ROOT_ID, LabelMapping, UnifiedHierarchy, build_uhls

from conftest import SMALL_ENCODER
from test_encoder import TINY, instance, random_instance


def chain_hierarchy() -> UnifiedHierarchy:
    h = UnifiedHierarchy()
    h.add_node("x:a", LabelId("x", "a"), ROOT_ID)
    h.add_node("x:b", LabelId("x", "b"), "x:a")
    return h


def flat_hierarchy(n: int) -> UnifiedHierarchy:
    h = UnifiedHierarchy()
    for i in range(n):
        h.add_node(f"x:n{i}", LabelId("x", f"n{i}"), ROOT_ID)
    return h


def random_hierarchy(rng: np.random.Generator, n: int) -> UnifiedHierarchy:
    h = UnifiedHierarchy()
    ids = [f"t:n{i:02d}" for i in range(n)]
    h.add_node(ids[0], LabelId.parse(ids[0]), ROOT_ID)
    for i in range(1, n):
        parent = ids[int(rng.integers(i))]
        h.add_node(ids[i], LabelId.parse(ids[i]), parent)
    return h


def zero_predictor(hierarchy, beta=0.4, dim=4) -> TypePredictor:
    n = len(hierarchy.non_root_ids())
    return TypePredictor(hierarchy, beta, np.zeros((dim, n)), np.zeros(n))


class TestLabelDistribution:
    def test_zero_weights_give_uniform(self):
        predictor = zero_predictor(flat_hierarchy(5))
        p = predictor.label_distribution(np.ones(4))
        np.testing.assert_allclose(p, np.full(5, 0.2), atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        h = flat_hierarchy(6)
        W = rng.normal(size=(4, 6))
        predictor = TypePredictor(h, 0.0, W, np.zeros(6))
        shifted = TypePredictor(h, 0.0, W, np.full(6, 17.5))
        R = rng.normal(size=4)
        np.testing.assert_allclose(
            predictor.label_distribution(R), shifted.label_distribution(R), atol=1e-12
        )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_simplex_properties(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        predictor = TypePredictor(
            flat_hierarchy(n), 0.4, rng.normal(scale=3.0, size=(4, n)), rng.normal(size=n)
        )
        p = predictor.label_distribution(rng.normal(size=4))
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-9

    def test_matches_direct_high_precision_evaluation(self):
        # 4-label fixture against an independent mpmath-style computation
        import math

        logits = [0.3, -1.2, 2.0, 0.5]
        exps = [math.exp(x - 2.0) for x in logits]
        expected = [e / sum(exps) for e in exps]
        predictor = TypePredictor(
            flat_hierarchy(4), 0.0, np.eye(4), np.zeros(4)
        )
        p = predictor.label_distribution(np.array(logits))
        np.testing.assert_allclose(p, expected, rtol=1e-12)

    def test_non_finite_input(self):
        predictor = zero_predictor(flat_hierarchy(3))
        with pytest.raises(NonFiniteInput):
            predictor.label_distribution(np.array([1.0, np.nan, 0.0, 0.0]))


class TestAdjustedDistribution:
    def test_beta_zero_is_identity_bitwise(self):
        predictor = zero_predictor(chain_hierarchy(), beta=0.0)
        p = np.array([0.6, 0.4])
        adjusted = predictor.adjusted_distribution(p)
        assert adjusted[0] == 0.6 and adjusted[1] == 0.4

    def test_chain_worked_example(self):
        # nodes sorted: x:a (index 0), x:b (index 1); ancestors(x:b) = {x:a}
        predictor = zero_predictor(chain_hierarchy(), beta=0.5)
        adjusted = predictor.adjusted_distribution(np.array([0.6, 0.4]))
        np.testing.assert_allclose(adjusted, [6 / 13, 7 / 13], atol=1e-12)

    def test_depth_one_tree_unchanged_for_any_beta(self):
        predictor = zero_predictor(flat_hierarchy(4), beta=2.5)
        p = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(predictor.adjusted_distribution(p), p, atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_mass_property_vs_ancestor_walk(self, seed):
        # brute-force oracle: walk each node's parent chain and add beta
        # times every non-root ancestor's probability
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 21))
        beta = float(rng.uniform(0.1, 1.5))
        h = random_hierarchy(rng, n)
        predictor = zero_predictor(h, beta=beta)
        p = rng.dirichlet(np.ones(n))
        order = predictor.node_ids
        raw = np.empty(n)
        for i, node in enumerate(order):
            boost = 0.0
            cur = h.parent(node)
            while cur is not None and cur != ROOT_ID:
                boost += p[order.index(cur)]
                cur = h.parent(cur)
            raw[i] = p[i] + beta * boost
            if h.children(node):
                descendants = h.subtree(node)
                for d in descendants:
                    j = order.index(d)
                    assert raw[i] >= p[i]  # ancestors only ever add mass
        np.testing.assert_allclose(
            predictor.adjusted_distribution(p), raw / raw.sum(), atol=1e-12
        )


class TestPartialLoss:
    def test_singleton_reduces_to_nll(self):
        predictor = zero_predictor(flat_hierarchy(3))
        p_hat = np.array([0.2, 0.5, 0.3])
        loss, chosen = predictor.partial_loss(p_hat, ["x:n1"])
        assert chosen == "x:n1"
        assert loss == pytest.approx(-np.log(0.5), abs=1e-15)

    def test_argmax_within_candidates(self):
        predictor = zero_predictor(flat_hierarchy(3))
        p_hat = np.array([0.2, 0.5, 0.3])
        loss, chosen = predictor.partial_loss(p_hat, ["x:n0", "x:n2"])
        assert chosen == "x:n2"
        assert loss == pytest.approx(-np.log(0.3), abs=1e-15)

    def test_full_candidate_set_is_global_argmax(self):
        predictor = zero_predictor(flat_hierarchy(3))
        p_hat = np.array([0.2, 0.5, 0.3])
        _, chosen = predictor.partial_loss(p_hat, list(predictor.node_ids))
        assert chosen == "x:n1"

    def test_tie_breaks_canonically(self):
        predictor = zero_predictor(flat_hierarchy(4))
        p_hat = np.array([0.25, 0.25, 0.25, 0.25])
        _, chosen = predictor.partial_loss(p_hat, ["x:n2", "x:n1"])
        assert chosen == "x:n1"

    def test_empty_candidates(self):
        predictor = zero_predictor(flat_hierarchy(2))
        with pytest.raises(EmptyCandidateSet):
            predictor.partial_loss(np.array([0.5, 0.5]), [])


def fixed_selection_loss(encoder, predictor, inst, selected_index) -> float:
    R = encoder.encode(inst)
    p = predictor.label_distribution(R)
    p_hat = predictor.adjusted_distribution(p)
    return float(-np.log(p_hat[selected_index]))


class TestLossBackward:
    def test_beta_zero_singleton_is_cross_entropy_gradient(self):
        rng = np.random.default_rng(5)
        n = 6
        predictor = TypePredictor(
            flat_hierarchy(n), 0.0, rng.normal(size=(4, n)), rng.normal(size=n)
        )
        R = rng.normal(size=(1, 4))
        k = 3
        _, _, db, _, selected = predictor.loss_backward(
            R, [np.array([k], dtype=np.intp)]
        )
        assert selected[0] == k
        p = predictor.label_distribution(R[0])
        onehot = np.zeros(n)
        onehot[k] = 1.0
        np.testing.assert_allclose(db, p - onehot, atol=1e-12)

    def test_zero_gradient_when_probability_is_one(self):
        predictor = zero_predictor(flat_hierarchy(1), beta=0.7, dim=3)
        loss, dW, db, dR, _ = predictor.loss_backward(
            np.ones((1, 3)), [np.array([0], dtype=np.intp)]
        )
        assert loss == 0.0
        assert not dW.any() and not db.any() and not dR.any()

    @pytest.mark.parametrize("seed", range(5))
    def test_full_loss_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        hierarchy = random_hierarchy(rng, int(rng.integers(3, 8)))
        n = len(hierarchy.non_root_ids())
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        predictor = TypePredictor(
            hierarchy,
            float(rng.uniform(0.0, 1.0)),
            rng.normal(scale=0.5, size=(TINY.dimension, n)),
            rng.normal(scale=0.1, size=n),
        )
        inst = random_instance(rng)
        size = int(rng.integers(1, n + 1))
        candidates = rng.choice(n, size=size, replace=False)
        rows = [np.sort(candidates).astype(np.intp)]

        R = encoder.encode(inst)[None, :]
        loss, dW, db, dR, selected = predictor.loss_backward(R, rows)
        k = int(selected[0])
        assert k in rows[0]
        assert loss == pytest.approx(fixed_selection_loss(encoder, predictor, inst, k))

        h = 1e-5
        for idx in np.ndindex(predictor.W.shape):
            original = predictor.W[idx]
            predictor.W[idx] = original + h
            up = fixed_selection_loss(encoder, predictor, inst, k)
            predictor.W[idx] = original - h
            down = fixed_selection_loss(encoder, predictor, inst, k)
            predictor.W[idx] = original
            np.testing.assert_allclose(dW[idx], (up - down) / (2 * h), rtol=1e-4, atol=1e-7)
        for j in range(n):
            original = predictor.b[j]
            predictor.b[j] = original + h
            up = fixed_selection_loss(encoder, predictor, inst, k)
            predictor.b[j] = original - h
            down = fixed_selection_loss(encoder, predictor, inst, k)
            predictor.b[j] = original
            np.testing.assert_allclose(db[j], (up - down) / (2 * h), rtol=1e-4, atol=1e-7)
        # chain into the encoder: dR drives exact table gradients
        table_grads = encoder.backward([inst], dR)
        for table_name, grads in (
            ("left", table_grads.left), ("right", table_grads.right),
            ("chars", table_grads.chars),
        ):
            table = getattr(encoder.params, table_name)
            for row, grad in grads.items():
                for col in range(table.shape[1]):
                    original = table[row, col]
                    table[row, col] = original + h
                    up = fixed_selection_loss(encoder, predictor, inst, k)
                    table[row, col] = original - h
                    down = fixed_selection_loss(encoder, predictor, inst, k)
                    table[row, col] = original
                    np.testing.assert_allclose(
                        grad[col], (up - down) / (2 * h), rtol=1e-4, atol=1e-7
                    )


def separable_two_dataset_bundle(tmp_path, instances_per_label=30, noise=0.0, seed=3):
    tree = TrueTree.from_dict({
        "all": None, "p": "all", "q": "all",
        "p1": "p", "p2": "p", "q1": "q", "q2": "q",
    })
    spec = SynthSpec(
        tree=tree,
        datasets=(
            PseudoDataset("broad", ("p", "q"), instances_per_label),
            PseudoDataset("narrow", ("p1", "p2", "q1", "q2"), instances_per_label),
        ),
        noise=noise,
        seed=seed,
    )
    return generate(spec, tmp_path), spec


def trained_fixture_model(tmp_path, epochs=50, seed=3):
    bundle, spec = separable_two_dataset_bundle(tmp_path)
    build = build_uhls(spec.build_order(), bundle.oracle())
    config = TrainingConfig(
        learning_rate=0.5, batch_size=8, epochs=epochs, seed=seed, patience=10
    )
    model = UnifiedModel.initialize(build.hierarchy, build.mapping, SMALL_ENCODER, config)
    splits = [
        split_dataset(bundle.instances[ds.name], derive_seed(seed, f"split:{ds.name}"))
        for ds in spec.datasets
    ]
    pooled = pool_train(splits)
    val = [i for s in splits for i in s.validation]
    log = model.train(pooled, val, config)
    return model, log, bundle, splits


class TestTraining:
    def test_single_step_decreases_loss(self, tmp_path):
        bundle, spec = separable_two_dataset_bundle(tmp_path, instances_per_label=2)
        build = build_uhls(spec.build_order(), bundle.oracle())
        config = TrainingConfig(learning_rate=0.1, epochs=1, batch_size=1, seed=0)
        model = UnifiedModel.initialize(build.hierarchy, build.mapping, SMALL_ENCODER, config)
        inst = bundle.instances["narrow"][0]

        def loss_now():
            R = model.encoder.encode(inst)[None, :]
            loss, *_ = model.predictor.loss_backward(R, [model.candidates_for(inst)])
            return loss

        before = loss_now()
        model.train([inst], [inst], config)
        assert loss_now() < before

    def test_fixed_seed_reruns_are_bitwise_identical(self, tmp_path):
        logs = []
        for _ in range(2):
            _, log, _, _ = trained_fixture_model(tmp_path / "run", epochs=5)
            logs.append("\n".join(log.to_lines()))
        assert logs[0] == logs[1]

    def test_separable_fixture_reaches_high_validation_f1(self, tmp_path):
        _, log, _, _ = trained_fixture_model(tmp_path)
        assert log.best_metric >= 0.95
        # the log's running best is monotone
        best = float("-inf")
        for record in log.records:
            if record.checkpointed:
                assert record.val_metric > best
                best = record.val_metric

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self, tmp_path):
        bundle, spec = separable_two_dataset_bundle(tmp_path, instances_per_label=2)
        build = build_uhls(spec.build_order(), bundle.oracle())
        config = TrainingConfig(learning_rate=1e280, epochs=4, batch_size=2, seed=0)
        model = UnifiedModel.initialize(build.hierarchy, build.mapping, SMALL_ENCODER, config)
        pooled = bundle.instances["narrow"][:2]
        with pytest.raises(DivergedLoss):
            model.train(pooled, pooled, config)


class TestPredict:
    def test_chain_fixture_prefers_descendant(self):
        # with zero weights p is uniform; the child soaks up ancestor mass
        predictor = zero_predictor(chain_hierarchy(), beta=0.5, dim=TINY.dimension)
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        model = UnifiedModel(encoder, predictor, LabelMapping({
            LabelId("x", "a"): ["x:a"], LabelId("x", "b"): ["x:b"],
        }))
        node, confidence = model.predict(instance(["only", "m"], 1, 2))
        assert node == "x:b"
        assert confidence == pytest.approx(0.75 / 1.25)

    def test_uniform_scores_pick_canonical_first(self):
        predictor = zero_predictor(flat_hierarchy(4), beta=0.0, dim=TINY.dimension)
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        mapping = LabelMapping({LabelId("x", f"n{i}"): [f"x:n{i}"] for i in range(4)})
        model = UnifiedModel(encoder, predictor, mapping)
        node, _ = model.predict(instance(["only", "m"], 1, 2))
        assert node == "x:n0"

    def test_multi_label_gold_uses_candidate_union(self, tmp_path):
        bundle, spec = separable_two_dataset_bundle(tmp_path, instances_per_label=2)
        build = build_uhls(spec.build_order(), bundle.oracle())
        config = TrainingConfig(epochs=1, seed=0)
        model = UnifiedModel.initialize(build.hierarchy, build.mapping, SMALL_ENCODER, config)
        inst = bundle.instances["broad"][0]
        multi = type(inst)(
            tokens=inst.tokens, start=inst.start, end=inst.end,
            gold=("p", "q"), dataset="broad", instance_id="multi-1",
        )
        rows = model.candidates_for(multi)
        p_rows = model.candidates_for(inst)
        assert set(rows) > set(p_rows)
        node, _ = model.predict(multi)  # still exactly one node
        assert node in model.predictor.node_ids


class TestCheckpoint:
    def test_round_trip_predictions_bitwise(self, tmp_path):
        model, _, bundle, splits = trained_fixture_model(tmp_path, epochs=3)
        path = tmp_path / "model.ckpt"
        model.save(path)
        again = UnifiedModel.load(path)
        batch = splits[0].test[:10] or splits[0].train[:10]
        for inst in batch:
            a = model.adjusted_scores(inst)
            b = again.adjusted_scores(inst)
            np.testing.assert_array_equal(a, b)
            assert model.predict(inst) == again.predict(inst)

    def test_save_is_deterministic(self, tmp_path):
        model, _, _, _ = trained_fixture_model(tmp_path, epochs=2)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        model.save(p1)
        model.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = UnifiedModel.load(p1)
        loaded.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
