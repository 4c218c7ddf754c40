import numpy as np

from uscl.exceptions import ConfigError, ShapeError
from uscl.nets import (
    ArchConfig,
    ModelParams,
    ParamSet,
    encode,
    init_params,
    project,
    standardize_images,
    weigh,
    weigh_pairs,
)
from uscl.rng import Rng
from uscl.tensor import Tape, backward, reduce_sum

from .test_base import USCLTestCase, random_weight_net, tiny_arch, tiny_params


class ArchConfigTests(USCLTestCase):
    def test_defaults(self) -> None:
        """Three conv layers, D = 64, d = 32, hidden width 100."""
        arch = ArchConfig()
        self.assertEqual(arch.conv_channels, (8, 16, 32))
        self.assertEqual((arch.repr_dim, arch.proj_dim, arch.cmw_hidden), (64, 32, 100))
        self.assertEqual(arch.min_image_size, 16)

    def test_dict_round_trip(self) -> None:
        """from_dict inverts to_dict."""
        arch = tiny_arch(conv_channels=(3, 5))
        self.assertEqual(ArchConfig.from_dict(arch.to_dict()), arch)

    def test_invalid(self) -> None:
        """Empty or non-positive layers and even kernels are rejected."""
        for bad in [{"conv_channels": ()}, {"repr_dim": 0}, {"kernel_size": 4}]:
            with self.subTest(**bad):
                with self.assertRaises(ConfigError):
                    ArchConfig(**bad)  # type: ignore[arg-type]

    def test_from_dict_missing_key(self) -> None:
        """A missing key is a configuration error."""
        with self.assertRaises(ConfigError):
            ArchConfig.from_dict({"conv_channels": [2]})


class InitTests(USCLTestCase):
    def test_parameter_names_and_shapes(self) -> None:
        """Θ_m holds the encoder and projection, Θ_c the weighting net."""
        theta_m, theta_c = init_params(tiny_arch(conv_channels=(2, 3)), Rng(0))
        self.assertEqual(theta_m["encoder.conv0.weight"].shape, (2, 1, 3, 3))
        self.assertEqual(theta_m["encoder.conv1.weight"].shape, (3, 2, 3, 3))
        self.assertEqual(theta_m["encoder.fc.weight"].shape, (4, 3))
        self.assertEqual(theta_m["projection.fc1.weight"].shape, (3, 4))
        self.assertEqual(theta_c["cmw.fc0.weight"].shape, (5, 8))
        self.assertEqual(theta_m.n_conv, 2)
        self.assertEqual(theta_m.repr_dim, 4)
        self.assertEqual(theta_c.repr_dim, 4)
        self.assertTrue(all(not n.startswith("cmw.") for n in theta_m))

    def test_biases_and_output_layer_start_at_zero(self) -> None:
        """Biases and the final weighting layer are zero."""
        theta_m, theta_c = tiny_params()
        self.assertArrayEqual(theta_m["encoder.conv0.bias"].numpy(), np.zeros(2))
        self.assertArrayEqual(theta_c["cmw.fc1.weight"].numpy(), np.zeros((1, 5)))

    def test_deterministic(self) -> None:
        """Same seed, same parameters."""
        a, _ = tiny_params(seed=4)
        b, _ = tiny_params(seed=4)
        self.assertTrue(a.equals(b))

    def test_model_init_independent_of_weight_net_width(self) -> None:
        """Changing the weighting-net width leaves Θ_m unchanged."""
        a, _ = tiny_params(seed=1, cmw_hidden=5)
        b, _ = tiny_params(seed=1, cmw_hidden=50)
        self.assertTrue(a.equals(b))


class ForwardTests(USCLTestCase):
    def test_encode_and_project_shapes(self) -> None:
        """H is (B, D) and Z is (B, d)."""
        theta_m, _ = tiny_params()
        h = encode(theta_m, Rng(0).generator.random((6, 1, 8, 8)))
        self.assertEqual(h.shape, (6, 4))
        self.assertEqual(project(theta_m, h).shape, (6, 3))

    def test_images_too_small(self) -> None:
        """Images below the conv/pool minimum are a shape error."""
        theta_m, _ = init_params(tiny_arch(conv_channels=(2, 2, 2)), Rng(0))
        with self.assertRaises(ShapeError):
            encode(theta_m, np.zeros((2, 1, 8, 8)))

    def test_zero_output_layer_gives_half(self) -> None:
        """A freshly initialized weighting net scores every pair 0.5."""
        _, theta_c = tiny_params()
        h = Rng(1).normal((10, 4))
        self.assertArrayEqual(weigh_pairs(theta_c, h).numpy(), np.full(5, 0.5))

    def test_weight_is_symmetric_and_in_range(self) -> None:
        """W(h1, h2) == W(h2, h1) bit for bit, always strictly inside (0, 1)."""
        _, theta_c = tiny_params()
        theta_c = random_weight_net(theta_c, seed=2)
        rng = Rng(3)
        for _ in range(1000):
            h1, h2 = rng.normal((4,)), rng.normal((4,))
            w12 = weigh(theta_c, h1, h2).item()
            w21 = weigh(theta_c, h2, h1).item()
            self.assertEqual(w12, w21)
            self.assertGreater(w12, 0.0)
            self.assertLess(w12, 1.0)

    def test_weigh_matches_batched(self) -> None:
        """The single-pair and batched weighting agree."""
        _, theta_c = tiny_params()
        theta_c = random_weight_net(theta_c, seed=4)
        h = Rng(5).normal((6, 4))
        batched = weigh_pairs(theta_c, h).numpy()
        single = [weigh(theta_c, h[2 * i], h[2 * i + 1]).item() for i in range(3)]
        np.testing.assert_allclose(batched, single, rtol=0, atol=1e-12)

    def test_weigh_wrong_dimension(self) -> None:
        """Representations must match the weighting net's D."""
        _, theta_c = tiny_params()
        with self.assertRaises(ShapeError):
            weigh_pairs(theta_c, np.zeros((2, 5)))

    def test_gradients_reach_every_model_parameter(self) -> None:
        """A loss on Z back-propagates into every Θ_m tensor."""
        theta_m, _ = tiny_params()
        tape = Tape()
        live = theta_m.on(tape)
        z = project(live, encode(live, Rng(6).generator.random((4, 1, 8, 8))))
        grads = theta_m.grads_from(backward(tape, reduce_sum(z * z)))
        for name, g in grads.items():
            with self.subTest(param=name):
                self.assertGreater(float(np.abs(g.numpy()).sum()), 0.0)


class ParamSetTests(USCLTestCase):
    def test_arithmetic(self) -> None:
        """axpy, scale and dot act on every tensor."""
        a = ParamSet({"x": [1.0, 2.0], "y": [[3.0]]})
        b = ParamSet({"x": [1.0, 1.0], "y": [[2.0]]})
        self.assertArrayEqual(a.axpy(2.0, b)["x"].numpy(), [3.0, 4.0])
        self.assertArrayEqual(a.scale(0.5)["y"].numpy(), [[1.5]])
        self.assertEqual(a.dot(b), 9.0)
        self.assertEqual(a.num_values, 3)

    def test_layout_mismatch(self) -> None:
        """Combining sets with different names is an error."""
        with self.assertRaises(ShapeError):
            ParamSet({"x": [1.0]}).dot(ParamSet({"y": [1.0]}))

    def test_subclass_preserved(self) -> None:
        """Operations return the same ParamSet subclass."""
        theta_m, _ = tiny_params()
        self.assertIsInstance(theta_m.scale(2.0), ModelParams)
        self.assertIsInstance(theta_m.on(Tape()), ModelParams)


class InitStatisticsTests(USCLTestCase):
    def test_he_std_of_conv_layer(self) -> None:
        """A 3x3x8 -> 16 conv layer has empirical std within 10% of sqrt(2 / fan_in)."""
        theta_m, _ = init_params(tiny_arch(conv_channels=(8, 16)), Rng(11))
        w = theta_m["encoder.conv1.weight"].numpy()
        self.assertEqual(w.shape, (16, 8, 3, 3))
        expected = np.sqrt(2.0 / (8 * 3 * 3))
        self.assertLess(abs(w.std() - expected) / expected, 0.1)


class EncoderPropertyTests(USCLTestCase):
    def test_rows_are_independent(self) -> None:
        """Permuting the image rows permutes H and Z the same way."""
        theta_m, _ = tiny_params(seed=3, conv_channels=(2, 3))
        images = Rng(12).generator.random((7, 1, 8, 8))
        perm = np.array([3, 0, 6, 1, 5, 2, 4])
        h = encode(theta_m, images).numpy()
        h_perm = encode(theta_m, images[perm]).numpy()
        np.testing.assert_allclose(h_perm, h[perm], rtol=0, atol=1e-12)
        np.testing.assert_allclose(
            project(theta_m, h_perm).numpy(), project(theta_m, h).numpy()[perm], rtol=0, atol=1e-12
        )

    def test_zero_params_give_zero_outputs(self) -> None:
        """All-zero Θ_m maps every image to H = 0 and Z = 0."""
        theta_m, _ = tiny_params()
        zero = theta_m.zeros_like()
        h = encode(zero, Rng(13).generator.random((4, 1, 8, 8)))
        self.assertArrayEqual(h.numpy(), np.zeros((4, 4)))
        self.assertArrayEqual(project(zero, h).numpy(), np.zeros((4, 3)))

    def test_brightness_and_contrast_do_not_change_h(self) -> None:
        """Each image is standardized first, so a * x + b encodes like x."""
        theta_m, _ = tiny_params(seed=5)
        images = Rng(14).generator.random((3, 1, 8, 8))
        shifted = 0.4 * images + 0.3
        np.testing.assert_allclose(
            encode(theta_m, shifted).numpy(), encode(theta_m, images).numpy(), rtol=1e-9, atol=1e-12
        )

    def test_standardized_images(self) -> None:
        """Standardized images have zero mean and unit std; constant ones become zero."""
        images = Rng(15).generator.random((2, 1, 6, 6))
        images[1] = 0.7
        x = standardize_images(images).numpy()
        self.assertAlmostEqual(float(x[0].mean()), 0.0, places=12)
        self.assertAlmostEqual(float(x[0].std()), 1.0, places=12)
        self.assertArrayEqual(x[1], np.zeros((1, 6, 6)))

    def test_projection_with_negative_hidden_layer_still_varies(self) -> None:
        """With every hidden unit negative, Z still depends on H and gradients still flow."""
        theta_m, _ = tiny_params(seed=5)
        tensors = {n: t.numpy() for n, t in theta_m.items()}
        tensors["projection.fc0.bias"] = np.full(4, -100.0)
        dead = ModelParams(tensors)
        images = Rng(16).generator.random((4, 1, 8, 8))
        tape = Tape()
        live = dead.on(tape)
        z = project(live, encode(live, images))
        unit = z.numpy() / np.linalg.norm(z.numpy(), axis=1, keepdims=True)
        self.assertGreater(float(np.ptp(unit, axis=0).max()), 0.0)
        grads = dead.grads_from(backward(tape, reduce_sum(z * z)))
        self.assertGreater(float(np.abs(grads["projection.fc0.weight"].numpy()).sum()), 0.0)
        self.assertGreater(float(np.abs(grads["encoder.conv0.weight"].numpy()).sum()), 0.0)
