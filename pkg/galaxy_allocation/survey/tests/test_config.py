"""Test module for run configuration loading."""
import tempfile
from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase

from galaxy_allocation.services.config import (
    AllocationConfig,
    build_config,
    config_keys,
    load_config,
    parse_overrides,
)
from galaxy_allocation.services.exceptions import ConfigError

DESK_CONFIG = Path(settings.BASE_DIR) / 'configs' / 'desk.env'


class LoadConfigTests(SimpleTestCase):
    """Defaults, files and overrides."""

    def setUp(self):
        """Create a scratch directory per test."""
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'run.env'

    def test_defaults(self):
        cfg = load_config()
        self.assertEqual(cfg, AllocationConfig())
        self.assertEqual(cfg.train.budget, 10000.0)
        self.assertEqual(cfg.evaluation.phi, 0.3)

    def test_precedence(self):
        """Overrides beat the file, which beats the supplied defaults."""
        self.path.write_text('TRAIN_BUDGET=500\nTRAIN_STEPS=20\nTRAIN_SEED=3\n')
        cfg = load_config(self.path, {'TRAIN_STEPS': '7'}, defaults={'TRAIN_SEED': '1', 'GA_POPULATION': '6'})
        self.assertEqual(cfg.train.budget, 500.0)
        self.assertEqual(cfg.train.steps, 7)
        self.assertEqual(cfg.seed, 3)
        self.assertEqual(cfg.ga.population, 6)

    def test_value_types(self):
        cfg = build_config({
            'NOISE_SIGMA_PRIOR': '0, 0, 0.2, 0.3',
            'TRAIN_EARLY_STOP': 'yes',
            'TRAIN_FIXED_TAU': 'none',
            'EVAL_PHI': 'prior',
            'EVAL_METHODS': 'gnn,none',
            'MODEL_APPEND_ALLOCATION': 'false',
            'OPT_KIND': 'sgd',
        })
        self.assertEqual(cfg.noise.sigma_prior, (0.0, 0.0, 0.2, 0.3))
        self.assertTrue(cfg.train.early_stop)
        self.assertIsNone(cfg.train.fixed_tau)
        self.assertEqual(cfg.evaluation.phi, 'prior')
        self.assertEqual(cfg.evaluation.methods, ('gnn', 'none'))
        self.assertFalse(cfg.model.append_allocation)
        self.assertEqual(cfg.optimizer.kind, 'sgd')

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            build_config({'TRAIN_BUDGT': '5'})
        self.assertIn('TRAIN_BUDGT', str(ctx.exception))

    def test_bad_values(self):
        with self.assertRaises(ConfigError):
            build_config({'TRAIN_STEPS': 'many'})
        with self.assertRaises(ConfigError):
            build_config({'TRAIN_EARLY_STOP': 'perhaps'})
        with self.assertRaises(ConfigError):
            build_config({'SIM_PHI_LOW': '0.6'})
        with self.assertRaises(ConfigError):
            build_config({'TRAIN_BUDGET': '-1'})

    def test_zero_log_every(self):
        with self.assertRaises(ConfigError) as ctx:
            build_config({'TRAIN_LOG_EVERY': '0'})
        self.assertIn('log_every', str(ctx.exception))

    def test_zero_early_stop_window(self):
        with self.assertRaises(ConfigError) as ctx:
            build_config({'TRAIN_EARLY_STOP': 'true', 'TRAIN_EARLY_STOP_WINDOW': '0'})
        self.assertIn('early_stop_window', str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.path)

    def test_overrides(self):
        self.assertEqual(parse_overrides(['train_budget=5', 'EVAL_PHI=prior']),
                         {'TRAIN_BUDGET': '5', 'EVAL_PHI': 'prior'})
        with self.assertRaises(ConfigError):
            parse_overrides(['TRAIN_BUDGET'])

    def test_every_section_has_keys(self):
        prefixes = {key.split('_')[0] for key in config_keys()}
        self.assertEqual(prefixes, {'SIM', 'NOISE', 'MODEL', 'OPT', 'TRAIN', 'GA', 'EVAL'})

    def test_desk_config(self):
        cfg = load_config(DESK_CONFIG)
        self.assertEqual(cfg.train.budget, 1000.0)
        self.assertEqual(cfg.simulator.mean_count, 200.0)


class SerialisationTests(SimpleTestCase):

    def test_dict_form_rebuilds_config(self):
        cfg = build_config({'NOISE_SIGMA_POST': '0,0,0.002,0.1', 'EVAL_PHI': 'prior', 'TRAIN_SEED': '9'})
        self.assertEqual(AllocationConfig.from_dict(cfg.as_dict()), cfg)

    def test_digest_tracks_content(self):
        cfg = AllocationConfig()
        self.assertEqual(cfg.digest(), AllocationConfig().digest())
        self.assertNotEqual(cfg.digest(), cfg.with_seed(1).digest())
        self.assertEqual(len(cfg.digest()), 64)

    def test_invalid_section(self):
        with self.assertRaises(ConfigError):
            AllocationConfig.from_dict({'train': {'budget': 1.0, 'bogus': 2}})
