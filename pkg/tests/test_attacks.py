"""Attack engine, transform plugins, SVD logit fusion and presets"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.attacks import (
    AdversarialBatch,
    attack_loss,
    fuse,
    fused_logits,
    gaussian_kernel,
    image_rngs,
    loss_gradient,
    preset,
    preset_names,
    project_clip,
    run_attack,
    step_momentum,
    transform_di,
    transform_si,
    transform_ti,
    variance_tuning,
)
from src.autodiff import Tensor, backward, cross_entropy, grad_check
from src.core.container import decode_container, encode_container
from src.core.exceptions import ConfigError, ShapeError
from src.core.models import (
    AttackConfig,
    AttackMethod,
    DITransform,
    SITransform,
    SvdHook,
    TITransform,
)
from tests.conftest import make_linear_model


class ZeroUniform:
    """Random stream stand-in whose neighbourhood samples are all zero"""

    def uniform(self, low, high, size=None):
        return np.zeros(size)


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


# =============================================================================
# Step primitives
# =============================================================================

class TestProjectClip:
    def test_ball_then_pixel_range(self):
        clean = np.array([250.0, 5.0, 100.0]).reshape(1, 1, 1, 3)
        adv = np.array([300.0, -5.0, 120.0]).reshape(1, 1, 1, 3)
        np.testing.assert_array_equal(project_clip(adv, clean, 16.0).ravel(), [255.0, 0.0, 116.0])

    def test_inside_the_ball_is_untouched(self):
        clean = np.full((1, 1, 2, 2), 100.0)
        adv = clean + np.array([[3.0, -3.0], [15.9, -16.0]])
        np.testing.assert_array_equal(project_clip(adv, clean, 16.0), adv)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            project_clip(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)), 1.0)


class TestStepMomentum:
    def test_normalises_per_image(self):
        g = np.array([[1.0, -3.0], [2.0, 2.0]]).reshape(2, 1, 1, 2)
        out = step_momentum(np.zeros_like(g), g, 1.0)
        np.testing.assert_allclose(out.reshape(2, 2), [[0.25, -0.75], [0.5, 0.5]])

    def test_decays_previous_buffer(self):
        g = np.array([1.0, -3.0]).reshape(1, 1, 1, 2)
        prev = np.array([0.5, 0.5]).reshape(1, 1, 1, 2)
        np.testing.assert_allclose(step_momentum(prev, g, 0.5).ravel(), [0.5, -0.5])

    def test_zero_gradient_passes_through(self):
        prev = np.ones((1, 1, 2, 2))
        np.testing.assert_array_equal(step_momentum(prev, np.zeros_like(prev), 1.0), prev)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            step_momentum(np.zeros((1, 2)), np.zeros((1, 3)), 1.0)


# =============================================================================
# Transforms
# =============================================================================

class TestDI:
    def test_probability_zero_is_identity(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 32, 32)))
        assert transform_di(x, 0.0, image_rngs(0, [0, 1])) is x

    def test_resizes_and_pads(self):
        x = Tensor(np.ones((2, 3, 32, 32)), requires_grad=True)
        out = transform_di(x, 1.0, image_rngs(0, [0, 1]))
        assert out.shape == x.shape
        for image in out.data:
            lit = image[0] > 0
            rows, cols = np.flatnonzero(lit.any(axis=1)), np.flatnonzero(lit.any(axis=0))
            side_h, side_w = len(rows), len(cols)
            assert 29 <= side_h <= 32 and 29 <= side_w <= 32
            assert lit.sum() == side_h * side_w
            assert np.all(np.diff(rows) == 1) and np.all(np.diff(cols) == 1)
        backward(out.sum())
        assert x.grad.sum() == pytest.approx(out.data.sum())

    def test_same_streams_same_output(self, rng):
        x = rng.standard_normal((3, 1, 32, 32))
        first = transform_di(Tensor(x), 1.0, image_rngs(5, [0, 1, 2])).data
        again = transform_di(Tensor(x), 1.0, image_rngs(5, [0, 1, 2])).data
        np.testing.assert_array_equal(first, again)

    def test_argument_checks(self):
        x = Tensor(np.zeros((2, 1, 8, 8)))
        with pytest.raises(ConfigError):
            transform_di(x, 1.5, image_rngs(0, [0, 1]))
        with pytest.raises(ShapeError):
            transform_di(x, 0.5, image_rngs(0, [0]))


class TestTI:
    def test_kernel(self):
        kernel = gaussian_kernel(7)
        assert kernel.shape == (7, 7)
        assert kernel.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(kernel, kernel.T)
        assert kernel.argmax() == 24

    @pytest.mark.parametrize("length", [0, 4])
    def test_kernel_length_must_be_positive_odd(self, length):
        with pytest.raises(ConfigError):
            gaussian_kernel(length)

    def test_length_one_is_identity(self, rng):
        grad = rng.standard_normal((1, 1, 4, 4))
        assert transform_ti(grad, 1) is grad

    def test_impulse_response_is_the_kernel(self):
        grad = np.zeros((1, 2, 15, 15), dtype=np.float32)
        grad[0, 1, 7, 7] = 1.0
        out = transform_ti(grad, 7)
        assert out.dtype == np.float32
        np.testing.assert_allclose(out[0, 1, 4:11, 4:11], gaussian_kernel(7), atol=1e-7)
        assert np.all(out[0, 0] == 0)
        assert out.sum() == pytest.approx(1.0, abs=1e-6)


class TestSI:
    def test_scale_copies(self):
        x = Tensor(np.full((1, 1, 1, 1), 8.0))
        assert [c.item() for c in transform_si(x, 3)] == [8.0, 4.0, 2.0]

    def test_needs_one_copy(self):
        with pytest.raises(ConfigError):
            transform_si(Tensor(np.zeros((1, 1, 1, 1))), 0)

    def test_gradient_averages_scaled_copies(self):
        weight = np.array([[0.02, -0.01]])
        model = make_linear_model(weight, input_spec=(1, 2, 2))
        x = np.array([[[[10.0, 20.0], [30.0, 40.0]]]])
        config = AttackConfig(method=AttackMethod.IFGSM, transforms=[SITransform(m=3)])
        grad = loss_gradient(model, x, np.array([1]), config, image_rngs(0, [0]))

        expected = 0.0
        for scale in (1.0, 0.5, 0.25):
            probs = softmax(scale * x.mean() * weight[0])
            probs[1] -= 1.0
            expected += scale * (probs @ weight[0]) / 4.0
        np.testing.assert_allclose(grad, np.full_like(x, expected / 3.0), rtol=1e-10)


class TestVT:
    def test_needs_one_neighbour(self):
        with pytest.raises(ConfigError):
            variance_tuning(np.sign, np.zeros((1, 1, 2, 2)), 1.0, 1.5, 0, [ZeroUniform()])

    def test_zero_offsets_give_zero_variance(self, rng):
        x = rng.standard_normal((2, 1, 3, 3))
        v = variance_tuning(lambda p: p ** 3, x, 16.0, 1.5, 4, [ZeroUniform(), ZeroUniform()])
        np.testing.assert_allclose(v, np.zeros_like(x), atol=1e-12)

    def test_sharp_gradients_vary_more_than_smooth_ones(self):
        x = np.ones((1, 1, 8, 8))
        sharp = variance_tuning(np.sign, x, 1.0, 1.5, 50, image_rngs(0, [0]))
        smooth = variance_tuning(lambda p: np.clip(p / 2, -1, 1), x, 1.0, 1.5, 50, image_rngs(0, [0]))
        assert np.abs(sharp).mean() > 0.25
        assert np.abs(smooth).mean() < 0.1

    def test_reuses_the_base_gradient(self):
        calls = []

        def grad_fn(p):
            calls.append(p)
            return np.zeros_like(p)

        variance_tuning(grad_fn, np.zeros((1, 1, 2, 2)), 1.0, 1.0, 3, image_rngs(0, [0]), base_grad=np.zeros((1, 1, 2, 2)))
        assert len(calls) == 3


# =============================================================================
# Logit fusion
# =============================================================================

class TestFusion:
    def test_fuse(self):
        out = fuse(Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0])), 0.25)
        np.testing.assert_allclose(out.data, [2.5, 3.5])

    def test_beta_one_keeps_the_original_logits(self, tiny_cnn, tiny_images):
        hook = SvdHook(layer_name="block3", k=1, beta_fusion=1.0)
        np.testing.assert_array_equal(
            fused_logits(tiny_cnn, Tensor(tiny_images.astype(np.float32)), hook).data,
            tiny_cnn.forward_full(tiny_images.astype(np.float32)).data,
        )

    def test_full_rank_keeps_the_original_logits(self, tiny_cnn64, tiny_images):
        hook = SvdHook(layer_name="block3", k=6, beta_fusion=0.3)
        np.testing.assert_allclose(
            fused_logits(tiny_cnn64, Tensor(tiny_images), hook).data,
            tiny_cnn64.forward_full(tiny_images).data,
            rtol=1e-12, atol=1e-12,
        )

    def test_beta_zero_uses_the_truncated_branch(self, tiny_cnn64, tiny_images):
        from src.spectral import topk_truncate

        hook = SvdHook(layer_name="block2", k=2, beta_fusion=0.0)
        feature = tiny_cnn64.forward_to_layer(tiny_images, "block2")
        expected = tiny_cnn64.forward_from_layer(topk_truncate(feature, 2), "block2").data
        np.testing.assert_allclose(fused_logits(tiny_cnn64, Tensor(tiny_images), hook).data, expected, rtol=1e-12, atol=1e-12)

    def test_plain_loss_is_cross_entropy(self, tiny_cnn64, tiny_images):
        labels = np.arange(20) % 10
        expected = cross_entropy(tiny_cnn64.forward_full(tiny_images), labels).item()
        assert attack_loss(tiny_cnn64, Tensor(tiny_images), labels).item() == pytest.approx(expected)

    def test_fused_loss_gradient(self, tiny_cnn64, tiny_images):
        hook = SvdHook(layer_name="block3", k=1, beta_fusion=0.5)
        labels = np.arange(4)
        report = grad_check(lambda x: attack_loss(tiny_cnn64, x, labels, hook), tiny_images[:4],
                            eps=1e-3, tol=1e-3, atol=1e-6, n_coords=30)
        assert report.passed, report

    def test_unknown_layer(self, tiny_cnn, tiny_images):
        with pytest.raises(ConfigError):
            fused_logits(tiny_cnn, Tensor(tiny_images), SvdHook(layer_name="block9"))


# =============================================================================
# Attack loop
# =============================================================================

class TestRunAttack:
    def test_single_step_ifgsm(self, tiny_cnn64, tiny_images):
        labels = np.arange(4)
        config = AttackConfig(method=AttackMethod.IFGSM, steps=1)
        assert config.alpha == 16.0
        grad = loss_gradient(tiny_cnn64, tiny_images[:4], labels, config, image_rngs(0, range(4)))
        expected = project_clip(tiny_images[:4] + 16.0 * np.sign(grad), tiny_images[:4], 16.0)
        batch = run_attack(tiny_cnn64, tiny_images[:4], labels, config)
        np.testing.assert_array_equal(batch.adv, expected)

    def test_default_step_size(self):
        assert preset("mi-fgsm").alpha == pytest.approx(1.6)
        assert AttackConfig(epsilon=8.0, steps=4).alpha == 2.0

    @pytest.mark.parametrize("name", preset_names())
    def test_every_preset_stays_in_budget(self, name):
        from tests.conftest import make_tiny_cnn

        model = make_tiny_cnn(seed=1)
        images = np.random.default_rng(1).integers(0, 256, size=(100, 3, 8, 8)).astype(np.float32)
        labels = np.arange(100) % 10
        config = preset(name, svd_hook=SvdHook(layer_name="block3", k=1))
        batch = run_attack(model, images, labels, config)
        assert batch.n_failed == 0
        assert batch.check_budget(config.epsilon)
        assert batch.linf_per_image.max() <= 16.0 + 1e-4
        assert batch.adv.min() >= 0.0 and batch.adv.max() <= 255.0
        assert np.any(batch.adv != batch.clean)

    @pytest.mark.parametrize("method", list(AttackMethod))
    def test_linear_trajectory(self, method):
        model = make_linear_model([[0.01, 0.0]])
        config = AttackConfig(method=method, epsilon=16.0, steps=8, alpha=3.0)
        trajectory = []
        run_attack(model, np.full((1, 1, 1, 1), 128.0), np.array([0]), config,
                   on_step=lambda step, x: trajectory.append((step, float(x.item()))))
        assert trajectory == [(t, max(128.0 - 3.0 * t, 112.0)) for t in range(1, 9)]

    @pytest.mark.parametrize("hook", [
        SvdHook(layer_name="block3", k=1, beta_fusion=1.0),
        SvdHook(layer_name="block3", k=6, beta_fusion=0.5),
    ], ids=["beta-one", "full-rank"])
    def test_degenerate_fusion_matches_plain_attack(self, tiny_cnn, tiny_images, hook):
        labels = np.arange(20) % 10
        plain_steps, fused_steps = [], []
        plain = run_attack(tiny_cnn, tiny_images, labels, preset("mi-fgsm"),
                           on_step=lambda s, x: plain_steps.append(x))
        fused = run_attack(tiny_cnn, tiny_images, labels, preset("mi-fgsm", svd_hook=hook),
                           on_step=lambda s, x: fused_steps.append(x))
        assert len(plain_steps) == len(fused_steps) == 10
        for a, b in zip(plain_steps, fused_steps):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(plain.adv, fused.adv)

    def test_seeded_runs_repeat(self, tiny_cnn, tiny_images):
        labels = np.arange(20) % 10
        config = preset("vt-mi-fgsm", steps=3, seed=4, transforms=[{"kind": "vt", "n": 2}])
        first = run_attack(tiny_cnn, tiny_images, labels, config)
        again = run_attack(tiny_cnn, tiny_images, labels, config)
        np.testing.assert_array_equal(first.adv, again.adv)
        other = run_attack(tiny_cnn, tiny_images, labels, config.model_copy(update={"seed": 5}))
        assert not np.array_equal(first.adv, other.adv)

    def test_non_finite_gradient_stops_only_that_image(self):
        model = make_linear_model([[0.01, -0.01]], input_spec=(1, 2, 2))
        images = np.full((3, 1, 2, 2), 128.0)
        images[1, 0, 0, 0] = np.nan
        batch = run_attack(model, images, np.array([0, 0, 1]), AttackConfig(method=AttackMethod.MIFGSM, steps=3))
        assert batch.errors[1] == "non-finite gradient at step 1"
        assert batch.errors[0] is None and batch.errors[2] is None
        assert batch.n_failed == 1
        np.testing.assert_array_equal(batch.adv[1], images[1])
        assert np.all(np.isfinite(batch.adv[[0, 2]]))
        assert np.all(batch.adv[[0, 2]] != 128.0)

    def test_shape_checks(self, tiny_cnn, tiny_images):
        with pytest.raises(ShapeError):
            run_attack(tiny_cnn, tiny_images, np.zeros(3, dtype=int), preset("i-fgsm"))
        with pytest.raises(ShapeError):
            run_attack(tiny_cnn, tiny_images[0], np.zeros(3, dtype=int), preset("i-fgsm"))


# =============================================================================
# Presets and config validation
# =============================================================================

class TestPresets:
    def test_catalogue(self):
        assert preset_names() == [
            "i-fgsm", "mi-fgsm", "ni-fgsm", "di-fgsm", "ti-fgsm",
            "ti-dim", "si-ni-fgsm", "vt-mi-fgsm", "vt-ti-dim",
        ]

    def test_composites(self):
        config = preset("vt-ti-dim")
        assert config.method == AttackMethod.MIFGSM
        assert [t.kind for t in config.transforms] == ["di", "ti", "vt"]
        assert config.transform("ti").kernel_len == 7
        assert config.transform("si") is None
        si = preset("si-ni-fgsm")
        assert si.method == AttackMethod.NIFGSM and si.transform("si").m == 5

    def test_overrides_and_hook(self):
        config = preset("ti-dim", svd_hook=SvdHook(k=2), steps=5, name="svd-ti-dim")
        assert config.steps == 5 and config.name == "svd-ti-dim"
        assert config.svd_hook.k == 2 and config.svd_hook.layer_name == "block3"

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown attack preset"):
            preset("pgd")

    def test_invalid_recipes(self):
        with pytest.raises(ValidationError):
            AttackConfig(transforms=[DITransform(), DITransform()])
        with pytest.raises(ValidationError):
            TITransform(kernel_len=6)
        with pytest.raises(ValidationError):
            AttackConfig(epsilon=0.0)
        with pytest.raises(ValidationError):
            SvdHook(beta_fusion=1.5)


# =============================================================================
# Adversarial batch
# =============================================================================

class TestAdversarialBatch:
    def test_blob_round_trip(self, tiny_images):
        batch = AdversarialBatch(
            clean=tiny_images[:3],
            adv=tiny_images[:3] + 4.0,
            labels=[1, 2, 3],
            source_model_id="convnet_a",
            attack_name="mi-fgsm",
            sample_ids=[7, 8, 9],
            errors=[None, "non-finite gradient at step 2", None],
            config=preset("mi-fgsm").model_dump(mode="json"),
        )
        np.testing.assert_allclose(batch.linf_per_image, [4.0, 4.0, 4.0])
        restored = AdversarialBatch.from_blobs(decode_container(encode_container(batch.to_blobs())))
        np.testing.assert_array_equal(restored.adv, batch.adv.astype(np.float32))
        np.testing.assert_array_equal(restored.sample_ids, [7, 8, 9])
        assert restored.errors == batch.errors
        assert restored.source_model_id == "convnet_a" and restored.attack_name == "mi-fgsm"
        assert restored.config["method"] == "mifgsm"
        assert restored.n_failed == 1

    def test_budget_check(self, tiny_images):
        batch = AdversarialBatch(tiny_images[:2], np.clip(tiny_images[:2] + 20.0, 0, 255), [0, 1], "m")
        assert batch.check_budget(20.0)
        assert not batch.check_budget(16.0)

    def test_shape_mismatch(self, tiny_images):
        with pytest.raises(ShapeError):
            AdversarialBatch(tiny_images[:2], tiny_images[:3], [0, 1], "m")

    def test_subset_keeps_the_leading_images(self, tiny_images):
        batch = AdversarialBatch(
            clean=tiny_images[:3],
            adv=tiny_images[:3] + 2.0,
            labels=[4, 5, 6],
            source_model_id="convnet_b",
            attack_name="i-fgsm",
            errors=[None, "non-finite gradient at step 1", None],
            config={"name": "i-fgsm"},
        )
        head = batch.subset(2)
        assert len(head) == 2
        np.testing.assert_array_equal(head.adv, batch.adv[:2])
        np.testing.assert_array_equal(head.labels, [4, 5])
        np.testing.assert_array_equal(head.sample_ids, [0, 1])
        assert head.errors == [None, "non-finite gradient at step 1"]
        assert head.source_model_id == "convnet_b" and head.config == {"name": "i-fgsm"}
