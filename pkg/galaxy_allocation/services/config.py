"""Run configuration: one bundle of every tunable setting.

Configuration files use dotenv syntax with upper-case, section-prefixed keys,
e.g. ``TRAIN_BUDGET=1000`` or ``NOISE_SIGMA_PRIOR=0,0,0.1,0.25``. Values are
applied over the dataclass defaults, and explicit overrides win over the
file.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from dotenv import dotenv_values

from .autodiff import OptimizerConfig
from .baselines import GaConfig
from .evaluate import EvalConfig
from .exceptions import ConfigError, InvalidParametersError
from .networks import GnnHyperparams
from .simulator import NoiseModel, SimulatorConfig
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = {
    'simulator': ('SIM_', SimulatorConfig),
    'noise': ('NOISE_', NoiseModel),
    'model': ('MODEL_', GnnHyperparams),
    'optimizer': ('OPT_', OptimizerConfig),
    'train': ('TRAIN_', TrainConfig),
    'ga': ('GA_', GaConfig),
    'evaluation': ('EVAL_', EvalConfig),
}
TRUE = {'1', 'true', 'yes', 'on'}
FALSE = {'0', 'false', 'no', 'off'}


@dataclass(frozen=True)
class AllocationConfig:
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    model: GnnHyperparams = field(default_factory=GnnHyperparams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    @property
    def seed(self):
        return self.train.seed

    def with_seed(self, seed):
        return replace(self, train=replace(self.train, seed=int(seed)))

    def as_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, data):
        """Rebuild a config from ``as_dict`` output (e.g. checkpoint metadata)."""
        sections = {}
        for name, (_, section) in SECTIONS.items():
            values = {key: tuple(value) if isinstance(value, list) else value
                      for key, value in data.get(name, {}).items()}
            try:
                sections[name] = section(**values)
            except (TypeError, InvalidParametersError) as exc:
                raise ConfigError(f'invalid {name} section: {exc}') from exc
        return cls(**sections)

    def digest(self):
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode()).hexdigest()


def config_keys():
    """Every accepted key mapped to its ``(section, field)``."""
    keys = {}
    for name, (prefix, section) in SECTIONS.items():
        for item in fields(section):
            keys[prefix + item.name.upper()] = (name, item)
    return keys


def _parse(key, raw, item):
    annotation = str(item.type)
    text = str(raw).strip()
    default = item.default
    if text.lower() in ('', 'none') and 'None' in annotation:
        return None
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in TRUE | FALSE:
                raise ValueError(f'expected a boolean, got {text!r}')
            return lowered in TRUE
        if isinstance(default, int):
            return int(text)
        if isinstance(default, tuple):
            items = [part.strip() for part in text.split(',') if part.strip()]
            if all(isinstance(value, (int, float)) for value in default):
                return tuple(float(part) for part in items)
            return tuple(items)
        if isinstance(default, float) or default is None:
            if 'str' in annotation:
                try:
                    return float(text)
                except ValueError:
                    return text
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f'{key}: {exc}') from exc


def read_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'config file {path} does not exist')
    try:
        return dict(dotenv_values(path))
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f'cannot read config file {path}: {exc}') from exc


def parse_overrides(pairs):
    """Turn ``['KEY=VALUE', ...]`` into a dict."""
    overrides = {}
    for pair in pairs or ():
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f'override {pair!r} is not KEY=VALUE')
        overrides[key.strip().upper()] = value
    return overrides


def build_config(values):
    """Apply raw key/value strings over the defaults."""
    keys = config_keys()
    unknown = sorted(set(values) - set(keys))
    if unknown:
        raise ConfigError(f'unknown configuration keys: {", ".join(unknown)}')
    sections = {name: {} for name in SECTIONS}
    for key, raw in values.items():
        name, item = keys[key]
        sections[name][item.name] = _parse(key, raw, item)
    built = {}
    for name, (_, section) in SECTIONS.items():
        try:
            built[name] = section(**sections[name])
        except InvalidParametersError as exc:
            raise ConfigError(f'invalid {name} settings: {exc}') from exc
    return AllocationConfig(**built)


def load_config(path=None, overrides=None, defaults=None):
    """Load a configuration with precedence defaults < file < overrides.

    Args:
        path: optional dotenv-style file.
        overrides: ``KEY -> value`` pairs from the command line.
        defaults: ``KEY -> value`` pairs applied below the file, e.g. the
            project-wide seed.

    Raises:
        ConfigError: unreadable file, unknown key or invalid value.
    """
    values = dict(defaults or {})
    if path:
        values.update(read_config_file(path))
        logger.info('Loaded configuration from %s', path)
    values.update(overrides or {})
    return build_config(values)
