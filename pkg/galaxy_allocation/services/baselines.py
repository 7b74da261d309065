"""Classical allocation policies and the genetic algorithm that tunes them.

Both policies hand each selected galaxy its greedy grant: the grid time that
maximises the inverse distance variance per minute under the step model.
Baseline 1 selects by a luminosity threshold; Baseline 2 draws candidate
``(d, log m)`` pairs from coupled Beta laws and matches them to real galaxies.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, InvalidParametersError
from .simulator import DISTANCE, LOG_MASS, NoiseModel, observable, posterior_sigma_step

logger = logging.getLogger(__name__)

DISTANCE_FLOOR = 1e-3
BASELINE1 = 'baseline1'
BASELINE2 = 'baseline2'
ORDERS = ('descending', 'random')


def luminosity(log_m, d, noise=None, unit=1.0):
    """``l = unit * m / d^2`` with ``m`` in linear units and ``d`` floored."""
    noise = noise or NoiseModel()
    mass = np.exp(noise.mass_scale * np.asarray(log_m, dtype=np.float64))
    distance = np.maximum(np.asarray(d, dtype=np.float64), DISTANCE_FLOOR)
    return unit * mass / distance ** 2


def allocation_grid(noise, resolution=1.0):
    """Candidate times ``floor, floor + resolution, ..., cap`` in minutes."""
    if resolution <= 0:
        raise ConfigError('grid resolution must be positive')
    return np.arange(noise.r_floor, noise.r_cap + resolution / 2, resolution)


def greedy_allocations(d, log_m, noise, grid=None):
    """Vectorised ``greedy_allocation`` over arrays of galaxies."""
    grid = allocation_grid(noise) if grid is None else np.asarray(grid, dtype=np.float64)
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    log_m = np.atleast_1d(np.asarray(log_m, dtype=np.float64))
    variance = posterior_sigma_step(grid[None, :], d[:, None], log_m[:, None], noise)[..., DISTANCE]
    with np.errstate(divide='ignore'):
        gain = 1.0 / variance / grid[None, :]
    # argmax returns the first maximum, i.e. the smallest time
    return grid[np.argmax(gain, axis=1)]


def greedy_allocation(galaxy_d, galaxy_log_m, noise, grid=None):
    """Grant maximising the inverse distance variance per unit time."""
    return float(greedy_allocations([galaxy_d], [galaxy_log_m], noise, grid)[0])


@dataclass(frozen=True)
class Baseline1Params:
    l_min: float

    def __post_init__(self):
        if not self.l_min >= 0:
            raise InvalidParametersError(f'l_min must be >= 0, got {self.l_min}')

    @classmethod
    def from_genome(cls, genome):
        return cls(float(10.0 ** genome[0]))


@dataclass(frozen=True)
class Baseline2Params:
    """Shapes of ``d ~ Beta(a, b)`` and ``log m | d ~ Beta(g + dl*d, g + dl*(1 - d))``."""

    alpha: float
    beta: float
    gamma: float
    delta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidParametersError('alpha and beta must be positive')
        # gamma + delta * x is linear in x, so checking both ends covers [0, 1]
        if not (self.gamma > 0 and self.gamma + self.delta > 0):
            raise InvalidParametersError(
                f'gamma + delta * x must stay positive on [0, 1] '
                f'(gamma={self.gamma}, delta={self.delta})')

    @classmethod
    def from_genome(cls, genome):
        return cls(*(float(gene) for gene in genome))


GENE_BOUNDS = {
    BASELINE1: ((0.0, 5.0),),
    BASELINE2: ((0.1, 10.0), (0.1, 10.0), (0.1, 10.0), (-5.0, 10.0)),
}
GENE_NAMES = {
    BASELINE1: ('log10_l_min',),
    BASELINE2: ('alpha', 'beta', 'gamma', 'delta'),
}


def policy_params(policy, genome):
    if policy == BASELINE1:
        return Baseline1Params.from_genome(genome)
    if policy == BASELINE2:
        return Baseline2Params.from_genome(genome)
    raise ConfigError(f'unknown policy {policy!r}')


def baseline1_allocate(features, params, budget, noise, order='descending', rng=None):
    """Fund above-threshold galaxies with their greedy grant until the budget runs out.

    Args:
        features: ``(N, 4)`` prior-state features.
        params: luminosity threshold.
        budget: total minutes ``H``.
        noise: noise model used for thresholds and grants.
        order: ``descending`` luminosity or ``random``.
        rng: generator, required for ``random`` order.

    Returns:
        Array of minutes with ``sum <= budget``.
    """
    if budget <= 0:
        raise ConfigError('budget must be positive')
    if order not in ORDERS:
        raise ConfigError(f'order must be one of {ORDERS}, got {order!r}')
    d, log_m = features[:, DISTANCE], features[:, LOG_MASS]
    light = luminosity(log_m, d, noise)
    selected = np.flatnonzero((light > params.l_min) & observable(d, log_m, noise))
    if order == 'descending':
        selected = selected[np.argsort(-light[selected], kind='stable')]
    else:
        if rng is None:
            raise ConfigError('random order needs a generator')
        selected = rng.permutation(selected)

    grants = greedy_allocations(d[selected], log_m[selected], noise)
    allocations = np.zeros(len(features))
    total = 0.0
    for galaxy, grant in zip(selected, grants):
        if total + grant > budget:
            break
        allocations[galaxy] = grant
        total += grant
    return allocations


def baseline2_allocate(features, params, budget, noise, rng):
    """Match Beta-template candidates to real galaxies and fund them greedily.

    Candidates are drawn one at a time and matched to the nearest unmatched
    galaxy in ``(d, log m)``. Galaxies that can never be observed are matched
    but receive nothing. Stops once a grant would exceed the budget or every
    galaxy is matched.
    """
    if budget <= 0:
        raise ConfigError('budget must be positive')
    d, log_m = features[:, DISTANCE], features[:, LOG_MASS]
    points = features[:, [DISTANCE, LOG_MASS]]
    can_observe = observable(d, log_m, noise)
    grants = greedy_allocations(d, log_m, noise)
    unmatched = np.ones(len(features), dtype=bool)
    allocations = np.zeros(len(features))
    total = 0.0
    while unmatched.any():
        d_cand = rng.beta(params.alpha, params.beta)
        m_cand = rng.beta(params.gamma + params.delta * d_cand,
                          params.gamma + params.delta * (1.0 - d_cand))
        dist2 = np.sum((points - (d_cand, m_cand)) ** 2, axis=1)
        dist2[~unmatched] = np.inf
        galaxy = int(np.argmin(dist2))
        unmatched[galaxy] = False
        if not can_observe[galaxy]:
            continue
        if total + grants[galaxy] > budget:
            break
        allocations[galaxy] = grants[galaxy]
        total += grants[galaxy]
    return allocations


def uniform_allocate(n, budget, noise):
    return np.full(n, min(budget / n, noise.r_cap))


def policy_allocate(policy, features, params, budget, noise, rng, order='descending'):
    if policy == BASELINE1:
        return baseline1_allocate(features, params, budget, noise, order, rng)
    if policy == BASELINE2:
        return baseline2_allocate(features, params, budget, noise, rng)
    raise ConfigError(f'unknown policy {policy!r}')


# Genetic algorithm


@dataclass(frozen=True)
class GaConfig:
    """Real-valued GA settings; ``mutation_scale`` is a fraction of each gene range."""

    population: int = 20
    generations: int = 20
    mutation_rate: float = 0.1
    mutation_scale: float = 0.1
    crossover_rate: float = 0.9
    tournament_size: int = 2
    elitism: int = 1

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError('population must be >= 2')
        if self.generations < 1:
            raise ConfigError('generations must be >= 1')
        if not (0.0 <= self.mutation_rate <= 1.0 and 0.0 <= self.crossover_rate <= 1.0):
            raise ConfigError('rates must lie in [0, 1]')
        if not 0 <= self.elitism < self.population:
            raise ConfigError('elitism must be smaller than the population')
        if self.tournament_size < 1 or self.mutation_scale < 0:
            raise ConfigError('tournament_size >= 1 and mutation_scale >= 0 required')


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_genome: tuple


@dataclass
class GaResult:
    best_genome: tuple
    best_fitness: float
    history: list = field(default_factory=list)


def _scores(fitness, population, map_fn):
    values = np.array([float(value) for value in map_fn(fitness, [tuple(row) for row in population])])
    values[~np.isfinite(values)] = -np.inf
    return values


def _tournament(scores, size, rng):
    entrants = rng.integers(0, len(scores), size=size)
    return entrants[int(np.argmax(scores[entrants]))]


def _crossover(first, second, rng):
    if len(first) < 2:
        return first.copy()
    point = int(rng.integers(1, len(first)))
    return np.concatenate([first[:point], second[point:]])


def ga_optimize(fitness, cfg, bounds, rng, map_fn=map, on_generation=None):
    """Maximise ``fitness`` over the box ``bounds``.

    Args:
        fitness: callable taking a genome tuple; non-finite values count as -inf.
        cfg: GA settings.
        bounds: ``[(low, high), ...]`` per gene.
        rng: generator driving every random choice.
        map_fn: evaluates a list of genomes; ``map`` by default, a Celery
            fan-out in background runs.
        on_generation: optional callback receiving each ``GenerationRecord``.

    Returns:
        ``GaResult`` with the best genome ever seen and one record per generation.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or not np.all(np.isfinite(bounds)):
        raise ConfigError('bounds must be finite (low, high) pairs')
    low, high = bounds[:, 0], bounds[:, 1]
    if np.any(low >= high):
        raise ConfigError('every gene needs low < high')
    sigma = cfg.mutation_scale * (high - low)

    population = rng.uniform(low, high, size=(cfg.population, len(bounds)))
    best_genome, best_fitness = None, -np.inf
    history = []
    for generation in range(cfg.generations):
        scores = _scores(fitness, population, map_fn)
        leader = int(np.argmax(scores))
        if best_genome is None or scores[leader] > best_fitness:
            best_genome, best_fitness = tuple(float(g) for g in population[leader]), float(scores[leader])
        finite = scores[np.isfinite(scores)]
        record = GenerationRecord(generation, best_fitness,
                                  float(finite.mean()) if finite.size else float('nan'),
                                  best_genome)
        history.append(record)
        logger.info('generation %d best %.6g mean %.6g', generation, record.best_fitness,
                    record.mean_fitness)
        if on_generation is not None:
            on_generation(record)
        if generation == cfg.generations - 1:
            break

        elite = np.argsort(-scores, kind='stable')[:cfg.elitism]
        children = [population[i].copy() for i in elite]
        while len(children) < cfg.population:
            first = population[_tournament(scores, cfg.tournament_size, rng)]
            second = population[_tournament(scores, cfg.tournament_size, rng)]
            if rng.random() < cfg.crossover_rate:
                child = _crossover(first, second, rng)
            else:
                child = first.copy()
            mutate = rng.random(len(child)) < cfg.mutation_rate
            child = child + mutate * rng.normal(0.0, 1.0, len(child)) * sigma
            children.append(np.clip(child, low, high))
        population = np.array(children)

    return GaResult(best_genome, best_fitness, history)


def write_ga_history(path, history, gene_names):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(['generation', 'best_fitness', 'mean_fitness', *gene_names])
        for record in history:
            writer.writerow([record.generation, repr(record.best_fitness),
                             repr(record.mean_fitness), *(repr(g) for g in record.best_genome)])
    return path
