import tempfile
from pathlib import Path

from django.test import override_settings

from uscl.config import CONFIG_KEYS, RunConfig, build_run_config, parse_values
from uscl.exceptions import ConfigError
from uscl.pairgen import PairStrategy
from uscl.services.training import TrainMode

from .test_base import USCLTestCase


class RunConfigTests(USCLTestCase):
    def test_defaults(self) -> None:
        """Defaults follow the reference training setup."""
        cfg = RunConfig()
        self.assertEqual(cfg.strategy, "s3")
        self.assertEqual(cfg.mode, "meta")
        self.assertEqual((cfg.beta_alpha, cfg.beta_beta), (2.0, 2.0))
        self.assertEqual((cfg.alpha1, cfg.alpha2), (0.1, 6e-5))
        self.assertEqual((cfg.tau, cfg.batch_size, cfg.cmw_hidden), (0.5, 32, 100))
        self.assertEqual(cfg.samples_per_second, 3.0)
        self.assertTrue(cfg.is_synthetic)

    def test_sub_configs(self) -> None:
        """Flat keys feed the typed sub-configs."""
        cfg = RunConfig(strategy="s1", mode="plain", conv_channels=(4, 8), seed=9)
        self.assertEqual(cfg.pair_config().strategy, PairStrategy.S1)
        self.assertEqual(cfg.optim_config().mode, TrainMode.PLAIN)
        self.assertEqual(cfg.arch_config().conv_channels, (4, 8))
        self.assertEqual(cfg.synth_config().seed, 9)

    def test_invalid_values(self) -> None:
        """Out-of-range values fail at construction."""
        for bad in [
            {"epochs": 0},
            {"split_ratio": 1.0},
            {"seed": -1},
            {"strategy": "s4"},
            {"mode": "fast"},
            {"tau": 0.0},
            {"repr_dim": 0},
        ]:
            with self.subTest(**bad):
                with self.assertRaises(ConfigError):
                    RunConfig(**bad)  # type: ignore[arg-type]

    def test_dict_round_trip(self) -> None:
        """to_dict is text; from_dict parses it back."""
        cfg = RunConfig(conv_channels=(3, 5), blur_enabled=True, alpha2=1e-3)
        raw = cfg.to_dict()
        self.assertEqual(raw["conv_channels"], "3,5")
        self.assertEqual(raw["blur_enabled"], "true")
        self.assertEqual(RunConfig.from_dict(raw), cfg)

    def test_every_field_is_a_key(self) -> None:
        """One config key per field."""
        self.assertEqual(list(CONFIG_KEYS), list(RunConfig().to_dict()))


class ParseValuesTests(USCLTestCase):
    def test_typed(self) -> None:
        """Text is parsed with the key's type."""
        typed = parse_values({"epochs": "3", "tau": "0.2", "allow_fallback": "no", "strategy": "s2"})
        self.assertEqual(typed, {"epochs": 3, "tau": 0.2, "allow_fallback": False, "strategy": "s2"})

    def test_unknown_key(self) -> None:
        """Unknown keys are named."""
        with self.assertRaisesMessage(ConfigError, "'learning_rate'"):
            parse_values({"learning_rate": "0.1"})

    def test_bad_value(self) -> None:
        """Unparseable values are named."""
        with self.assertRaisesMessage(ConfigError, "'epochs'"):
            parse_values({"epochs": "many"})

    def test_missing_value(self) -> None:
        """A bare key has no value."""
        with self.assertRaises(ConfigError):
            parse_values({"epochs": None})


class BuildRunConfigTests(USCLTestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def write(self, text: str) -> Path:
        path = self.dir / "run.cfg"
        path.write_text(text, encoding="utf-8")
        return path

    def test_file_with_comments(self) -> None:
        """key = value lines, # comments and blank lines."""
        path = self.write("# tiny run\nepochs = 2\n\nstrategy = s1  # pairs\nconv_channels = 4,8\n")
        cfg = build_run_config(path)
        self.assertEqual(cfg.epochs, 2)
        self.assertEqual(cfg.strategy, "s1")
        self.assertEqual(cfg.conv_channels, (4, 8))

    def test_flag_beats_file(self) -> None:
        """Flags override the file; unset flags are ignored."""
        path = self.write("epochs = 2\nseed = 3\n")
        cfg = build_run_config(path, {"epochs": "7", "seed": None})
        self.assertEqual(cfg.epochs, 7)
        self.assertEqual(cfg.seed, 3)

    def test_unknown_key_in_file(self) -> None:
        """The file is checked against the key registry."""
        with self.assertRaises(ConfigError):
            build_run_config(self.write("epochz = 2\n"))

    def test_missing_file(self) -> None:
        """The missing path is named."""
        missing = self.dir / "absent.cfg"
        with self.assertRaisesMessage(ConfigError, str(missing)):
            build_run_config(missing)

    @override_settings(DEFAULT_OUTPUT_DIR="/srv/muscl-runs")
    def test_output_dir_precedence(self) -> None:
        """Environment default < file < flag."""
        self.assertEqual(build_run_config().output_dir, "/srv/muscl-runs")
        path = self.write("output_dir = from-file\n")
        self.assertEqual(build_run_config(path).output_dir, "from-file")
        self.assertEqual(build_run_config(path, {"output_dir": "from-flag"}).output_dir, "from-flag")

    @override_settings(DEFAULT_OUTPUT_DIR="/srv/muscl-runs")
    def test_base_config(self) -> None:
        """A base config replaces the defaults and keeps its own values."""
        base = RunConfig(epochs=9, repr_dim=8, output_dir="elsewhere")
        cfg = build_run_config(None, {"probe_epochs": "3"}, base=base)
        self.assertEqual((cfg.epochs, cfg.repr_dim, cfg.probe_epochs), (9, 8, 3))
        self.assertEqual(cfg.output_dir, "elsewhere")
