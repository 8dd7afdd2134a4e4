"""Hashed mean-embedding encoder: forward layout and exact gradients."""

import numpy as np
import pytest

from unitype.encoder import EncoderConfig, EncoderParams, HashedMeanEncoder
from unitype.hashing import hash_index
from unitype.ingestion import MentionInstance

TINY = EncoderConfig(
    left_dim=3, right_dim=3, char_dim=3, token_hash_bits=4, char_hash_bits=3, seed=11
)


def instance(tokens, start, end, dataset="d", iid="i-0"):
    return MentionInstance(
        tokens=tuple(tokens), start=start, end=end, gold=("x",),
        dataset=dataset, instance_id=iid,
    )


def random_instance(rng, vocab=("red", "blue", "sun", "moon", "tree", "rock")):
    n = int(rng.integers(2, 7))
    tokens = [vocab[int(rng.integers(len(vocab)))] for _ in range(n)]
    start = int(rng.integers(0, n - 1))
    end = int(rng.integers(start + 1, n + 1))
    return instance(tokens, start, end, iid=f"r-{rng.integers(1 << 30)}")


class TestForward:
    def test_hand_computed_means(self):
        params = EncoderParams.initialize(TINY)
        encoder = HashedMeanEncoder(params)
        inst = instance(["hello", "world", "mention"], 2, 3)
        size = 1 << TINY.token_hash_bits
        r_hello = params.left[hash_index("hello", TINY.seed, size, "left")]
        r_world = params.left[hash_index("world", TINY.seed, size, "left")]
        R = encoder.encode(inst)
        np.testing.assert_allclose(R[:3], (r_hello + r_world) / 2.0, rtol=0, atol=0)
        # right context empty -> zero sub-vector
        np.testing.assert_array_equal(R[3:6], np.zeros(3))
        char_size = 1 << TINY.char_hash_bits
        char_rows = [
            params.chars[hash_index(c, TINY.seed, char_size, "char")] for c in "mention"
        ]
        np.testing.assert_allclose(R[6:], np.mean(char_rows, axis=0))

    def test_explicit_table_values(self):
        # pin the rows two tokens hash to and verify the mean by hand
        params = EncoderParams.initialize(TINY)
        size = 1 << TINY.token_hash_bits
        row_a = hash_index("aaa", TINY.seed, size, "left")
        row_b = hash_index("bbb", TINY.seed, size, "left")
        assert row_a != row_b  # fixture relies on no collision here
        params.left[row_a] = [1.0, 2.0, 3.0]
        params.left[row_b] = [5.0, 6.0, 7.0]
        R = HashedMeanEncoder(params).encode(instance(["aaa", "bbb", "m"], 2, 3))
        np.testing.assert_array_equal(R[:3], [3.0, 4.0, 5.0])

    def test_deterministic(self):
        inst = instance(["a", "b", "c", "d"], 1, 3)
        e1 = HashedMeanEncoder(EncoderParams.initialize(TINY))
        e2 = HashedMeanEncoder(EncoderParams.initialize(TINY))
        np.testing.assert_array_equal(e1.encode(inst), e2.encode(inst))

    def test_empty_left_context(self):
        R = HashedMeanEncoder(EncoderParams.initialize(TINY)).encode(
            instance(["m", "after"], 0, 1)
        )
        np.testing.assert_array_equal(R[:3], np.zeros(3))

    def test_mention_perturbation_only_touches_char_block(self):
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        a = encoder.encode(instance(["left", "m1", "right"], 1, 2))
        b = encoder.encode(instance(["left", "m2", "right"], 1, 2))
        np.testing.assert_array_equal(a[:6], b[:6])
        assert not np.array_equal(a[6:], b[6:])

    def test_max_context_truncation(self):
        config = EncoderConfig(
            left_dim=3, right_dim=3, char_dim=3, token_hash_bits=4,
            char_hash_bits=3, seed=11, max_context=1,
        )
        params = EncoderParams.initialize(config)
        encoder = HashedMeanEncoder(params)
        R = encoder.encode(instance(["far", "near", "m"], 2, 3))
        size = 1 << config.token_hash_bits
        np.testing.assert_array_equal(
            R[:3], params.left[hash_index("near", config.seed, size, "left")]
        )

    def test_batch_matches_single(self):
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        rng = np.random.default_rng(0)
        batch = [random_instance(rng) for _ in range(5)]
        stacked = encoder.encode_batch(batch)
        for row, inst in zip(stacked, batch):
            np.testing.assert_array_equal(row, encoder.encode(inst))


def fd_table_gradient(encoder, inst, direction, table_name, rows, h=1e-5):
    """Central finite differences of direction . encode(inst) w.r.t. table rows."""
    table = getattr(encoder.params, table_name)
    grads = {}
    for row in rows:
        grads[row] = np.zeros(table.shape[1])
        for col in range(table.shape[1]):
            original = table[row, col]
            table[row, col] = original + h
            up = float(direction @ encoder.encode(inst))
            table[row, col] = original - h
            down = float(direction @ encoder.encode(inst))
            table[row, col] = original
            grads[row][col] = (up - down) / (2 * h)
    return grads


class TestBackward:
    def test_zero_upstream_zero_gradient(self):
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        inst = instance(["a", "m", "b"], 1, 2)
        grads = encoder.backward([inst], np.zeros((1, TINY.dimension)))
        assert all(
            not value.any()
            for table in (grads.left, grads.right, grads.chars)
            for value in table.values()
        )

    def test_single_token_field_gets_whole_gradient(self):
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        inst = instance(["only", "m"], 1, 2)
        upstream = np.zeros((1, TINY.dimension))
        upstream[0, :3] = [1.0, -2.0, 0.5]
        grads = encoder.backward([inst], upstream)
        row = hash_index("only", TINY.seed, 1 << TINY.token_hash_bits, "left")
        assert set(grads.left) == {row}
        np.testing.assert_array_equal(grads.left[row], [1.0, -2.0, 0.5])

    def test_repeated_token_accumulates(self):
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        inst = instance(["dup", "dup", "m"], 2, 3)
        upstream = np.zeros((1, TINY.dimension))
        upstream[0, :3] = [2.0, 2.0, 2.0]
        grads = encoder.backward([inst], upstream)
        row = hash_index("dup", TINY.seed, 1 << TINY.token_hash_bits, "left")
        # two contributions of (upstream / 2) each
        np.testing.assert_array_equal(grads.left[row], [2.0, 2.0, 2.0])

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        inst = random_instance(rng)
        direction = rng.normal(size=TINY.dimension)
        analytic = encoder.backward([inst], direction[None, :])
        checked = 0
        for table_name, grads in (
            ("left", analytic.left), ("right", analytic.right), ("chars", analytic.chars),
        ):
            fd = fd_table_gradient(encoder, inst, direction, table_name, list(grads))
            for row, grad in grads.items():
                np.testing.assert_allclose(grad, fd[row], rtol=1e-4, atol=1e-7)
                checked += 1
        assert checked > 0

    def test_apply_gradients_moves_only_touched_rows(self):
        encoder = HashedMeanEncoder(EncoderParams.initialize(TINY))
        before = encoder.params.left.copy()
        inst = instance(["tok", "m"], 1, 2)
        upstream = np.ones((1, TINY.dimension))
        encoder.apply_gradients(encoder.backward([inst], upstream), learning_rate=0.5)
        row = hash_index("tok", TINY.seed, 1 << TINY.token_hash_bits, "left")
        changed = np.where((encoder.params.left != before).any(axis=1))[0]
        np.testing.assert_array_equal(changed, [row])
