"""Forward pass, gradients, training, presets, and the model bundle format."""
import math

import numpy as np
import pytest

import acttopo as at
from acttopo.errors import ConfigurationError, ConsistencyError, NumericError, UsageError

from conftest import (
    assert_grads_close,
    finite_difference_input_grad,
    finite_difference_weight_grads,
    random_small_network,
)


def identity_dense_weights():
    return at.NetworkWeights(((np.eye(2), np.zeros(2)),))


class TestForward:
    def test_identity_dense(self, tiny_dense_spec):
        rec = at.forward(tiny_dense_spec, identity_dense_weights(), np.array([3.0, -1.0]))
        assert np.array_equal(rec.logits, [3.0, -1.0])
        assert rec.predicted_class == 0

    def test_relu_clamps_negatives(self):
        spec = at.NetworkSpec(layers=(at.Dense(2, 2, "relu"),), input_shape=(2,))
        rec = at.forward(spec, identity_dense_weights(), np.array([-5.0, 2.0]))
        assert np.array_equal(rec.post[0], [0.0, 2.0])

    def test_hand_convolution(self):
        # 2x2 kernel of ones over a 3x3 image of ones: every output is the sum of 4 ones
        spec = at.NetworkSpec(layers=(at.Conv2d(1, 1, 2, 2, activation="identity"),),
                              input_shape=(1, 3, 3))
        w = at.NetworkWeights(((np.ones((1, 1, 2, 2)), np.zeros(1)),))
        rec = at.forward(spec, w, np.ones((1, 3, 3)))
        assert rec.pre[0].shape == (1, 2, 2)
        assert np.array_equal(rec.pre[0], np.full((1, 2, 2), 4.0))

    def test_prediction_tie_breaks_low(self, tiny_dense_spec):
        rec = at.forward(tiny_dense_spec, identity_dense_weights(), np.array([2.0, 2.0]))
        assert rec.predicted_class == 0

    def test_deterministic_bits(self):
        spec = at.preset("ccff-relu")
        w = at.init_weights(spec, seed=1)
        x = np.random.default_rng(0).uniform(size=(1, 28, 28))
        a = at.forward(spec, w, x)
        b = at.forward(spec, w, x)
        assert all(np.array_equal(pa, pb) for pa, pb in zip(a.post, b.post))
        assert np.array_equal(a.logits, b.logits)

    def test_shape_mismatch_names_layer(self):
        with pytest.raises(ConfigurationError, match="layer 0"):
            at.NetworkSpec(layers=(at.Dense(3, 2),), input_shape=(2,))

    def test_maxpool_records_argmax(self):
        spec = at.NetworkSpec(layers=(at.MaxPool2d(2, 2),), input_shape=(1, 2, 2))
        x = np.array([[[0.1, 0.9], [0.4, 0.2]]])
        rec = at.forward(spec, at.NetworkWeights((None,)), x)
        assert rec.pre[0].reshape(-1)[0] == 0.9
        assert rec.pool_argmax[0][0] == 1  # flat index of the max pixel


class TestLossAndGradients:
    def test_uniform_softmax_loss(self):
        spec = at.NetworkSpec(layers=(at.Dense(1, 2, "identity"),), input_shape=(1,))
        w = at.NetworkWeights(((np.zeros((2, 1)), np.zeros(2)),))
        loss, _, _ = at.loss_and_gradients(spec, w, np.array([0.7]), 0)
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_label_out_of_range(self, tiny_dense_spec):
        with pytest.raises(UsageError):
            at.loss_and_gradients(tiny_dense_spec, identity_dense_weights(), np.ones(2), 5)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_weight_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        spec, weights, x, label = random_small_network(rng)
        _, grads, _ = at.loss_and_gradients(spec, weights, x, label)
        fd = finite_difference_weight_grads(spec, weights, x, label)
        for g, f in zip(grads.params, fd.params):
            if g is None:
                continue
            assert_grads_close(g[0], f[0])
            assert_grads_close(g[1], f[1])

    @pytest.mark.parametrize("seed", [4, 5])
    def test_input_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        spec, weights, x, label = random_small_network(rng)
        _, _, ig = at.loss_and_gradients(spec, weights, x, label)
        fd = finite_difference_input_grad(spec, weights, x, label)
        assert_grads_close(ig, fd)

    def test_maxpool_gradient_routes_only_argmax(self):
        spec = at.NetworkSpec(
            layers=(at.MaxPool2d(2, 2), at.Flatten(), at.Dense(1, 2, "identity")),
            input_shape=(1, 2, 2))
        w = at.NetworkWeights((None, None, (np.array([[1.0], [-1.0]]), np.zeros(2))))
        x = np.array([[[0.1, 0.9], [0.4, 0.2]]])
        _, _, ig = at.loss_and_gradients(spec, w, x, 0)
        flat = ig.reshape(-1)
        assert flat[1] != 0.0
        assert np.all(flat[[0, 2, 3]] == 0.0)


class TestSgdTrain:
    def test_separable_blobs_reach_full_accuracy(self):
        ds = at.synthetic_blobs(num_classes=2, per_class=20, dim=2, separation=8.0, seed=0)
        spec = at.NetworkSpec(layers=(at.Dense(2, 2, "identity"),), input_shape=(2,))
        w = at.sgd_train(spec, at.init_weights(spec, 0), ds, epochs=20, lr=0.5, batch=4, seed=1)
        assert at.accuracy(spec, w, ds) == 1.0

    def test_zero_learning_rate_is_identity(self):
        ds = at.synthetic_blobs(2, 5, 3, 4.0, seed=2)
        spec = at.NetworkSpec(layers=(at.Dense(3, 2, "sigmoid"),), input_shape=(3,))
        w0 = at.init_weights(spec, 3)
        w1 = at.sgd_train(spec, w0, ds, epochs=2, lr=0.0, batch=2, seed=4)
        for p0, p1 in zip(w0.params, w1.params):
            assert p0[0].tobytes() == p1[0].tobytes()
            assert p0[1].tobytes() == p1[1].tobytes()

    def test_same_seed_same_weights(self):
        ds = at.synthetic_blobs(2, 10, 3, 4.0, seed=2)
        spec = at.NetworkSpec(layers=(at.Dense(3, 2, "relu"),), input_shape=(3,))
        w0 = at.init_weights(spec, 3)
        wa = at.sgd_train(spec, w0, ds, epochs=3, lr=0.1, batch=4, seed=9)
        wb = at.sgd_train(spec, w0, ds, epochs=3, lr=0.1, batch=4, seed=9)
        assert all(np.array_equal(a[0], b[0]) for a, b in zip(wa.params, wb.params))

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_divergence_reports_epoch(self):
        ds = at.synthetic_blobs(2, 4, 2, 4.0, seed=0)
        spec = at.NetworkSpec(layers=(at.Dense(2, 2, "identity"),), input_shape=(2,))
        w = at.NetworkWeights(((np.full((2, 2), np.inf), np.zeros(2)),))
        with pytest.raises(NumericError, match="epoch 0"):
            at.sgd_train(spec, w, ds, epochs=1, lr=0.1, batch=2, seed=0)

    def test_empty_dataset_rejected(self):
        spec = at.NetworkSpec(layers=(at.Dense(2, 2),), input_shape=(2,))
        empty = at.LabeledDataset(images=[], labels=[])
        with pytest.raises(UsageError):
            at.sgd_train(spec, at.init_weights(spec, 0), empty, epochs=1, lr=0.1)


class TestPreset:
    def test_ccff_relu_flatten_dimension(self):
        spec = at.preset("ccff-relu")
        from acttopo.nn import layer_shapes
        shapes = layer_shapes(spec)
        assert shapes[-3] == (1452,)  # 3 * 22 * 22 after the Flatten
        assert shapes[-2] == (256,)
        assert shapes[-1] == (10,)

    def test_sigmoid_variant_differs_only_in_activation(self):
        a, b = at.preset("ccff-relu"), at.preset("ccff-sigmoid")
        assert len(a.layers) == len(b.layers)
        for la, lb in zip(a.layers, b.layers):
            da, db = la.__dict__.copy(), lb.__dict__.copy()
            da.pop("activation", None), db.pop("activation", None)
            assert da == db
        acts = {getattr(l, "activation", None) for l in b.layers} - {None}
        assert acts == {"sigmoid"}

    def test_unknown_preset_rejected(self):
        with pytest.raises(UsageError):
            at.preset("alexnet")


class TestBundle:
    def test_round_trip(self, tmp_path):
        spec = at.NetworkSpec(
            layers=(at.Conv2d(1, 2, 3, 3), at.MaxPool2d(2, 2), at.Flatten(),
                    at.Dense(2, 2, "sigmoid")),
            input_shape=(1, 5, 5))
        w = at.init_weights(spec, seed=11)
        at.save_bundle(tmp_path / "m", spec, w, {"seed": 11})
        spec2, w2, meta = at.load_bundle(tmp_path / "m")
        assert spec2 == spec
        assert meta == {"seed": 11}
        for a, b in zip(w.params, w2.params):
            if a is None:
                assert b is None
            else:
                assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_byte_count_validated(self, tmp_path):
        spec = at.NetworkSpec(layers=(at.Dense(2, 2),), input_shape=(2,))
        at.save_bundle(tmp_path / "m", spec, at.init_weights(spec, 0))
        p = tmp_path / "m" / "params.bin"
        p.write_bytes(p.read_bytes() + b"\x00" * 8)
        with pytest.raises(ConsistencyError):
            at.load_bundle(tmp_path / "m")

    def test_weights_are_little_endian_f8(self, tmp_path):
        spec = at.NetworkSpec(layers=(at.Dense(1, 1, "identity"),), input_shape=(1,))
        w = at.NetworkWeights(((np.array([[2.5]]), np.array([0.0])),))
        at.save_bundle(tmp_path / "m", spec, w)
        raw = (tmp_path / "m" / "params.bin").read_bytes()
        assert np.frombuffer(raw, dtype="<f8")[0] == 2.5
