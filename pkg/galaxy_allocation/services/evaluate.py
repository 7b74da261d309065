"""Held-out comparison of allocation methods under the step noise model.

Every method allocates on the same fields, sees the same posterior noise
draws and is scored by the same trained inference network. The score is the
precision ``1 / var(phi_hat - phi)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .baselines import (
    BASELINE1, BASELINE2, ORDERS, Baseline1Params, Baseline2Params, policy_allocate,
    policy_params, uniform_allocate,
)
from .exceptions import ConfigError, InvalidParametersError
from .networks import allocate, predict_phi
from .rng import substream
from .simulator import apply_posterior_noise_step, apply_prior_noise, sample_phi, simulate_field

logger = logging.getLogger(__name__)

GNN = 'gnn'
NONE = 'none'
UNIFORM = 'uniform'
METHODS = (GNN, BASELINE1, BASELINE2, NONE, UNIFORM)
PRIOR = 'prior'


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol; ``phi`` is a constant value or ``"prior"``."""

    n_fields: int = 50
    phi: float | str = 0.3
    methods: tuple = (GNN, BASELINE1, BASELINE2, NONE)
    histogram_bins: int = 10
    grid_bins: int = 8
    baseline1_l_min: float = 100.0
    baseline1_order: str = 'descending'
    baseline2_genome: tuple = (2.0, 2.0, 2.0, 0.0)
    ga_fitness_fields: int = 20
    overview_field: int = 0

    def __post_init__(self):
        if self.n_fields < 2 or self.ga_fitness_fields < 2:
            raise ConfigError('precision needs at least 2 fields')
        if self.histogram_bins < 1 or self.grid_bins < 2:
            raise ConfigError('histogram_bins >= 1 and grid_bins >= 2 required')
        if self.phi != PRIOR and not isinstance(self.phi, (int, float)):
            raise ConfigError(f'phi must be a number or {PRIOR!r}, got {self.phi!r}')
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f'unknown methods {sorted(unknown)}; choose from {METHODS}')
        if self.baseline1_order not in ORDERS:
            raise ConfigError(f'baseline1_order must be one of {ORDERS}')
        if not 0 <= self.overview_field < self.n_fields:
            raise ConfigError('overview_field must index an evaluation field')

    def baseline_params(self):
        return {
            BASELINE1: Baseline1Params(self.baseline1_l_min),
            BASELINE2: Baseline2Params.from_genome(self.baseline2_genome),
        }


class EvalField(NamedTuple):
    field: object
    prior_state: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class FieldRecord:
    index: int
    phi: float
    phi_hat: float
    sum_r: float

    @property
    def residual(self):
        return self.phi_hat - self.phi


@dataclass
class MethodResult:
    """Scores of one method; ``allocations`` keeps one array per field."""

    method: str
    precision: float
    std: float
    bias: float
    records: list = field(default_factory=list)
    allocations: list = field(default_factory=list)

    @property
    def n_fields(self):
        return len(self.records)


@dataclass
class EvalReport:
    seed: int
    fields: list
    results: dict

    def ranking(self):
        """Methods by decreasing precision; ties keep the configured order."""
        order = list(self.results)
        return sorted(self.results.values(), key=lambda r: (-r.precision, order.index(r.method)))


def precision_metric(residuals):
    """Population variance of the residuals turned into ``(precision, std)``.

    A zero variance yields ``precision = inf``.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 1 or residuals.size < 2:
        raise InvalidParametersError('precision needs at least 2 residuals')
    variance = float(np.var(residuals))
    precision = np.inf if variance == 0.0 else 1.0 / variance
    return precision, float(np.sqrt(variance))


def draw_fields(cfg, seed, count, label='eval'):
    """Simulate the shared fields with their prior states and posterior draws."""
    protocol = cfg.evaluation.phi
    fields = []
    for index in range(count):
        if protocol == PRIOR:
            phi = sample_phi(substream(seed, f'{label}-phi', index), cfg.simulator)
        else:
            phi = float(protocol)
        sample = simulate_field(phi, cfg.simulator, substream(seed, f'{label}-field', index),
                                seed=seed, index=index)
        prior_state = apply_prior_noise(sample, cfg.noise, substream(seed, f'{label}-prior', index))
        z = substream(seed, f'{label}-post', index).standard_normal(sample.features.shape)
        fields.append(EvalField(sample, prior_state, z))
    return fields


def method_allocations(method, example, index, store, hyper, cfg, baselines, seed, label='eval'):
    budget = cfg.train.budget
    n = len(example.field)
    if method == GNN:
        return allocate(store, hyper, example.prior_state)
    if method == NONE:
        return np.zeros(n)
    if method == UNIFORM:
        return uniform_allocate(n, budget, cfg.noise)
    rng = substream(seed, f'{label}-{method}', index)
    return policy_allocate(method, example.prior_state, baselines[method], budget, cfg.noise,
                           rng, cfg.evaluation.baseline1_order)


def score_method(method, fields, store, hyper, cfg, baselines, seed, label='eval'):
    """Allocate, observe under the step model and estimate phi on every field."""
    records, allocations = [], []
    for index, example in enumerate(fields):
        granted = method_allocations(method, example, index, store, hyper, cfg, baselines,
                                     seed, label)
        posterior = apply_posterior_noise_step(example.field, granted, cfg.noise, example.z)
        phi_hat = predict_phi(store, hyper, posterior, granted)
        records.append(FieldRecord(index, example.field.phi, phi_hat, float(granted.sum())))
        allocations.append(granted)
    residuals = [record.residual for record in records]
    precision, std = precision_metric(residuals)
    return MethodResult(method, precision, std, float(np.mean(residuals)), records, allocations)


def run_evaluation(store, hyper, cfg, seed=0, baselines=None, methods=None):
    """Score every configured method on the same held-out fields.

    Args:
        store: trained parameters of both networks.
        hyper: their hyperparameters.
        cfg: full run configuration.
        seed: root seed of the evaluation fields and noise.
        baselines: policy parameters by name, defaulting to the configured ones.
        methods: method names, defaulting to ``cfg.evaluation.methods``.

    Returns:
        ``EvalReport`` with one ``MethodResult`` per method in the given order.
    """
    baselines = {**cfg.evaluation.baseline_params(), **(baselines or {})}
    methods = tuple(methods or cfg.evaluation.methods)
    fields = draw_fields(cfg, seed, cfg.evaluation.n_fields)
    results = {}
    for method in methods:
        result = score_method(method, fields, store, hyper, cfg, baselines, seed)
        logger.info('%s: precision %.4g std %.4g bias %.4g', method, result.precision,
                    result.std, result.bias)
        results[method] = result
    return EvalReport(seed, fields, results)


class PolicyFitness:
    """GA fitness of a baseline genome: precision on a fixed set of fields.

    The fields depend only on ``seed``, so every genome is scored on the same
    data and the fitness is a deterministic function of the genome.
    """

    label = 'ga-fitness'

    def __init__(self, policy, store, hyper, cfg, seed=0):
        if policy not in (BASELINE1, BASELINE2):
            raise ConfigError(f'unknown policy {policy!r}')
        self.policy = policy
        self.store = store
        self.hyper = hyper
        self.cfg = cfg
        self.seed = seed
        self.fields = draw_fields(cfg, seed, cfg.evaluation.ga_fitness_fields, self.label)

    def __call__(self, genome):
        try:
            params = policy_params(self.policy, genome)
        except InvalidParametersError:
            return -np.inf
        result = score_method(self.policy, self.fields, self.store, self.hyper, self.cfg,
                              {self.policy: params}, self.seed, self.label)
        return result.precision
