"""Shared fixtures: seeded generators, tiny graphs and a throwaway run config"""

import numpy as np
import pytest

from src.autodiff import Tensor
from src.config import load_run_config
from src.nn.layers import ConvBlock, Dense, GlobalPool, PoolSpec, Rescale
from src.nn.models import LayerGraph


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_tiny_cnn(dtype=np.float32, seed: int = 0, num_classes: int = 10) -> LayerGraph:
    """3×8×8 CNN with the standard layer names; block3 emits 6×4×4"""
    rng = np.random.default_rng(seed)

    def param(*shape, scale=1.0):
        return Tensor((rng.standard_normal(shape) * scale).astype(dtype))

    layers = [
        Rescale("input_norm"),
        ConvBlock("block1", param(4, 3, 3, 3, scale=0.5), param(4, scale=0.1), pad=1),
        ConvBlock("block2", param(6, 4, 3, 3, scale=0.4), param(6, scale=0.1), pad=1, pool=PoolSpec("max", 2)),
        ConvBlock("block3", param(6, 6, 3, 3, scale=0.4), param(6, scale=0.1), pad=1),
        GlobalPool("pool"),
        Dense("fc", param(6, num_classes, scale=0.8), param(num_classes, scale=0.1)),
    ]
    return LayerGraph("tiny", layers, (3, 8, 8), num_classes)


def make_linear_model(weight, bias=None, input_spec=(1, 1, 1)) -> LayerGraph:
    """Global average pool followed by a dense layer, in pixel units"""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.zeros(weight.shape[1]) if bias is None else np.asarray(bias, dtype=np.float64)
    layers = [GlobalPool("pool"), Dense("fc", Tensor(weight), Tensor(bias))]
    return LayerGraph("linear", layers, input_spec, weight.shape[1])


@pytest.fixture
def tiny_cnn():
    return make_tiny_cnn()


@pytest.fixture
def tiny_cnn64():
    return make_tiny_cnn(np.float64)


@pytest.fixture
def tiny_images(rng):
    return rng.integers(0, 256, size=(20, 3, 8, 8)).astype(np.float64)


def small_run_config(root, **overrides):
    """Small, fast run config writing under root"""
    values = {
        "data_dir": str(root / "data"),
        "output_dir": str(root / "run"),
        "n_train": 60,
        "n_test": 20,
        "n_images": 6,
        "models": "convnet_a,convnet_c",
        "epochs": 1,
        "steps": 2,
        "attacks": "i-fgsm",
        "beta_grid": "0.5,1",
        "topk_grid": "1,2",
        "layer_grid": "block2,block3",
        "cka_layers": "block1,fc",
        "cam_images": 2,
        "attack_batch_size": 4,
        "threads": 1,
    }
    values.update(overrides)
    return load_run_config(overrides=values)


@pytest.fixture
def run_config(tmp_path):
    return small_run_config(tmp_path)
