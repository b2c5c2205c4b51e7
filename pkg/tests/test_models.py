"""Architectures, split forwards, training and checkpoints"""

import numpy as np
import pytest

from src.autodiff import Tensor, cross_entropy, grad_check
from src.core.container import decode_container, encode_container, write_container
from src.core.exceptions import BadMagicError, ConfigError, LabelRangeError, ShapeError, StructureError
from src.harness.dataset import Dataset
from src.nn import (
    ARCHITECTURES,
    BLOCK_NAMES,
    Checkpoint,
    build_model,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    train,
)
from src.nn.layers import Dense, GlobalPool, Rescale
from src.nn.models import LayerGraph
from src.spectral import topk_truncate

LAYER_NAMES = ["input_norm", "block1", "block2", "block3", "block4", "pool", "fc"]

SHAPES = {
    "convnet_a": {"block1": (16, 16, 16), "block2": (32, 16, 16), "block3": (32, 8, 8), "block4": (64, 8, 8)},
    "convnet_b": {"block1": (24, 16, 16), "block2": (32, 16, 16), "block3": (48, 8, 8), "block4": (48, 4, 4)},
    "convnet_c": {"block1": (16, 16, 16), "block2": (24, 16, 16), "block3": (48, 8, 8), "block4": (64, 4, 4)},
}


@pytest.fixture(scope="module")
def images():
    return np.random.default_rng(5).uniform(0, 255, size=(50, 3, 32, 32)).astype(np.float32)


# =============================================================================
# Architectures
# =============================================================================

class TestBuildModel:
    def test_same_seed_gives_identical_weights(self):
        first = build_model("convnet_a", 10, seed=7).parameters()
        second = build_model("convnet_a", 10, seed=7).parameters()
        assert list(first) == list(second)
        for name in first:
            np.testing.assert_array_equal(first[name].data, second[name].data)

    def test_logits_shape(self):
        model = build_model("convnet_b")
        assert model.forward_full(np.zeros((1, 3, 32, 32), dtype=np.float32)).shape == (1, 10)

    def test_architectures_are_distinct(self, images):
        a = build_model("convnet_a").forward_full(images[:2]).data
        b = build_model("convnet_b").forward_full(images[:2]).data
        assert not np.allclose(a, b)

    @pytest.mark.parametrize("arch_id", sorted(ARCHITECTURES))
    def test_layer_table(self, arch_id):
        model = build_model(arch_id)
        assert model.layer_names == LAYER_NAMES
        for block, shape in SHAPES[arch_id].items():
            assert model.layer_output_shape(block) == shape
        assert model.layer_output_shape("pool") == (SHAPES[arch_id]["block4"][0],)
        assert model.layer_output_shape("fc") == (10,)

    def test_unknown_architecture(self):
        with pytest.raises(ConfigError, match="convnet_z"):
            build_model("convnet_z")

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            build_model("convnet_a", num_classes=1)

    def test_duplicate_layer_names_are_rejected(self):
        with pytest.raises(ConfigError):
            LayerGraph("dup", [Rescale("x"), GlobalPool("x")], (1, 2, 2), 2)


# =============================================================================
# Forward passes
# =============================================================================

class TestForward:
    def test_zero_image_gives_finite_logits(self):
        logits = build_model("convnet_c").forward_full(np.zeros((1, 3, 32, 32), dtype=np.float32)).data
        assert np.all(np.isfinite(logits))

    def test_identical_images_give_identical_rows(self, images):
        logits = build_model("convnet_a").forward_full(np.stack([images[0], images[0]])).data
        np.testing.assert_array_equal(logits[0], logits[1])

    @pytest.mark.parametrize("arch_id", sorted(ARCHITECTURES))
    def test_split_forward_identity_at_every_layer(self, arch_id, images):
        model = build_model(arch_id, seed=1)
        full = model.forward_full(images).data
        for layer in model.layer_names:
            feature = model.forward_to_layer(images, layer)
            np.testing.assert_allclose(model.forward_from_layer(feature, layer).data, full, atol=1e-6)

    def test_last_layer_output_is_forward_full(self, images):
        model = build_model("convnet_b")
        np.testing.assert_array_equal(model.forward_to_layer(images[:3], "fc").data, model.forward_full(images[:3]).data)

    @pytest.mark.parametrize("block", BLOCK_NAMES)
    def test_blocks_emit_nonnegative_features(self, block, images):
        assert model_feature(block, images[:4]).min() >= 0.0

    def test_zero_feature_gives_finite_logits(self):
        model = build_model("convnet_a")
        logits = model.forward_from_layer(np.zeros((2, 32, 8, 8), dtype=np.float32), "block3").data
        assert np.all(np.isfinite(logits))

    def test_full_rank_truncation_is_identity(self, images):
        model = build_model("convnet_a")
        feature = model.forward_to_layer(images[:4], "block3")
        c, h, w = model.layer_output_shape("block3")
        truncated = topk_truncate(feature, min(c, h * w))
        np.testing.assert_allclose(
            model.forward_from_layer(truncated, "block3").data, model.forward_full(images[:4]).data, atol=1e-5
        )

    def test_wrong_input_shape(self):
        with pytest.raises(ShapeError):
            build_model("convnet_a").forward_full(np.zeros((1, 3, 16, 16), dtype=np.float32))

    def test_feature_shape_mismatch(self):
        with pytest.raises(ShapeError, match="block2"):
            build_model("convnet_a").forward_from_layer(np.zeros((1, 32, 8, 8), dtype=np.float32), "block2")

    def test_unknown_layer_lists_valid_names(self):
        with pytest.raises(ConfigError, match="block1, block2"):
            build_model("convnet_a").forward_to_layer(np.zeros((1, 3, 32, 32), dtype=np.float32), "conv9")

    def test_predict_matches_argmax_in_chunks(self, images):
        model = build_model("convnet_c")
        expected = model.forward_full(images).data.argmax(axis=1)
        np.testing.assert_array_equal(model.predict(images, batch_size=7), expected)

    def test_astype_copies_parameters(self):
        model = build_model("convnet_a")
        wide = model.astype(np.float64)
        assert wide.dtype == np.float64 and model.dtype == np.float32
        np.testing.assert_array_equal(wide.parameters()["fc.weight"].data, model.parameters()["fc.weight"].data)

    def test_convnet_gradient_64bit(self, images):
        model = build_model("convnet_a", seed=2).astype(np.float64)
        labels = np.array([3])

        def loss(t):
            return cross_entropy(model.forward_full(t * 255.0), labels)

        report = grad_check(loss, images[:1].astype(np.float64) / 255.0, tol=1e-4, atol=1e-5)
        assert report.passed, report


def model_feature(block, images):
    return build_model("convnet_a", seed=3).forward_to_layer(images, block).data


# =============================================================================
# Training
# =============================================================================

def two_class_set(n=200, seed=0):
    """Red-on-dark vs blue-on-dark 3×4×4 images: separable by channel means"""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = rng.integers(0, 60, size=(n, 3, 4, 4))
    images[labels == 0, 0] += 180
    images[labels == 1, 2] += 180
    return Dataset(images.astype(np.uint8), labels, num_classes=2)


def linear_classifier(seed=0):
    rng = np.random.default_rng(seed)
    weight = Tensor((rng.standard_normal((3, 2)) * 0.1).astype(np.float32))
    return LayerGraph(
        "linear", [Rescale("input_norm"), GlobalPool("pool"), Dense("fc", weight, Tensor(np.zeros(2, np.float32)))],
        (3, 4, 4), 2,
    )


class TestTraining:
    def test_separable_set_is_learned(self):
        result = train(linear_classifier(), two_class_set(), epochs=20, lr=0.5, seed=0)
        assert len(result.metrics.epochs) == 20
        assert result.metrics.final_train_acc >= 0.95

    def test_zero_epochs_returns_initialisation(self):
        model = linear_classifier()
        initial = {k: v.data.copy() for k, v in model.parameters().items()}
        result = train(model, two_class_set(), epochs=0, lr=0.5, seed=0)
        assert result.metrics.epochs == []
        for name, weights in initial.items():
            np.testing.assert_array_equal(result.checkpoint.weights[name], weights)

    def test_same_seed_gives_identical_weights_and_metrics(self):
        first = train(linear_classifier(), two_class_set(), epochs=3, lr=0.5, seed=4)
        second = train(linear_classifier(), two_class_set(), epochs=3, lr=0.5, seed=4)
        assert first.metrics == second.metrics
        for name in first.checkpoint.weights:
            np.testing.assert_array_equal(first.checkpoint.weights[name], second.checkpoint.weights[name])

    def test_test_accuracy_is_recorded(self):
        result = train(linear_classifier(), two_class_set(), epochs=2, lr=0.5, seed=0,
                       test_set=two_class_set(40, seed=1))
        assert all(e.test_acc is not None for e in result.metrics.epochs)

    def test_parameters_are_frozen_afterwards(self):
        model = linear_classifier()
        train(model, two_class_set(), epochs=1, lr=0.5, seed=0)
        assert not any(t.requires_grad for t in model.parameters().values())

    def test_label_range_must_fit_the_model(self):
        labels = np.arange(20) % 10
        dataset = Dataset(np.zeros((20, 3, 4, 4), dtype=np.uint8), labels)
        with pytest.raises(LabelRangeError):
            train(linear_classifier(), dataset, epochs=1, lr=0.1, seed=0)


# =============================================================================
# Checkpoints
# =============================================================================

class TestCheckpoint:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = build_model("convnet_b", seed=3)
        model.metadata["model_id"] = "convnet_b"
        first = save_checkpoint(model, tmp_path / "a.ckpt")
        second = save_checkpoint(load_checkpoint(first), tmp_path / "b.ckpt")
        assert first.read_bytes() == second.read_bytes()

    def test_weights_round_trip_bit_exact(self, tmp_path, images):
        model = build_model("convnet_c", seed=9)
        loaded = load_checkpoint(save_checkpoint(model, tmp_path / "c.ckpt"))
        for name, tensor in model.parameters().items():
            np.testing.assert_array_equal(loaded.parameters()[name].data, tensor.data)
        np.testing.assert_array_equal(loaded.forward_full(images[:2]).data, model.forward_full(images[:2]).data)

    def test_metadata_survives(self, tmp_path):
        model = build_model("convnet_a")
        model.metadata.update({"model_id": "src_a", "final_accuracy": 0.93})
        checkpoint = read_checkpoint(save_checkpoint(model, tmp_path / "m.ckpt"))
        assert checkpoint.arch_id == "convnet_a"
        assert checkpoint.metadata["final_accuracy"] == 0.93
        assert load_checkpoint(tmp_path / "m.ckpt").model_id == "src_a"

    def test_corrupted_magic(self, tmp_path):
        path = save_checkpoint(build_model("convnet_a"), tmp_path / "bad.ckpt")
        data = bytearray(path.read_bytes())
        data[0:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError, match="bad magic"):
            load_checkpoint(path)

    def test_missing_layer_is_named(self, tmp_path):
        blobs = Checkpoint.from_model(build_model("convnet_a")).to_blobs()
        del blobs["fc.bias"]
        path = write_container(tmp_path / "short.ckpt", blobs)
        with pytest.raises(StructureError, match="fc.bias"):
            load_checkpoint(path)

    def test_unexpected_layer_is_named(self, tmp_path):
        checkpoint = Checkpoint.from_model(build_model("convnet_a"))
        checkpoint.weights["fc2.weight"] = np.zeros((2, 2), dtype=np.float32)
        path = save_checkpoint(checkpoint, tmp_path / "long.ckpt")
        with pytest.raises(StructureError, match="fc2.weight"):
            load_checkpoint(path)

    def test_layer_shape_mismatch(self):
        checkpoint = Checkpoint.from_model(build_model("convnet_a"))
        checkpoint.weights["block2.weight"] = np.zeros((1, 1, 3, 3), dtype=np.float32)
        with pytest.raises(StructureError, match="block2.weight"):
            checkpoint.to_model()

    def test_missing_metadata_blob(self, tmp_path):
        blobs = Checkpoint.from_model(build_model("convnet_a")).to_blobs()
        del blobs["__meta__"]
        with pytest.raises(StructureError, match="__meta__"):
            read_checkpoint(write_container(tmp_path / "anon.ckpt", blobs))

    def test_blob_order_follows_layers(self):
        blobs = decode_container(encode_container(Checkpoint.from_model(build_model("convnet_c")).to_blobs()))
        names = [name for name in blobs if name != "__meta__"]
        assert names[:2] == ["block1.weight", "block1.bias"]
        assert names[-2:] == ["fc.weight", "fc.bias"]
