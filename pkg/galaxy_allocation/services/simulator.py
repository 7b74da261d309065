"""Synthetic galaxy fields and the measurement-noise model.

A field is a clustered point process in the unit cube of standardized
``(x1, x2, d)`` coordinates: a Poisson number of cluster centres spawn Poisson
offspring with Gaussian scatter, topped up by an unclustered background. The
hidden parameter phi raises the clustered fraction and tightens the clusters.
Log-masses are drawn independently from a Beta law.

Noise follows a step model (observed iff the allocation reaches the galaxy's
threshold) and a logistic surrogate of it that is differentiable in the
allocation.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from . import autodiff as ad
from .exceptions import InvalidParametersError, ShapeError

logger = logging.getLogger(__name__)


class Galaxy(NamedTuple):
    """Standardized features of one galaxy."""

    x1: float
    x2: float
    d: float
    log_m: float


FEATURES = Galaxy._fields
POSITION_COLUMNS = [0, 1]
DISTANCE, LOG_MASS = 2, 3


@dataclass(frozen=True)
class SimulatorConfig:
    """Point-process settings; cluster coefficients are linear in phi~."""

    phi_low: float = 0.1
    phi_high: float = 0.5
    field_radius_deg: float = 7.5
    mean_count: float = 2000.0
    mean_cluster_size: float = 20.0
    clustered_base: float = 0.3
    clustered_slope: float = 0.5
    spread_base: float = 0.05
    spread_slope: float = 0.5
    spread_scale: float = 0.1
    mass_alpha: float = 2.0
    mass_beta: float = 5.0

    def __post_init__(self):
        if self.mean_count <= 0 or self.mean_cluster_size <= 0:
            raise InvalidParametersError('galaxy and cluster counts must be positive')
        if not 0.0 < self.phi_low < self.phi_high < 1.0:
            raise InvalidParametersError(
                f'phi bounds must satisfy 0 < low < high < 1, got {self.phi_low}, {self.phi_high}')

    def phi_tilde(self, phi):
        return (phi - self.phi_low) / (self.phi_high - self.phi_low)

    def clustered_fraction(self, phi):
        return float(np.clip(self.clustered_base + self.clustered_slope * self.phi_tilde(phi), 0.0, 1.0))

    def cluster_spread(self, phi):
        """Dispersion coefficient sigma_c(phi), before ``spread_scale``."""
        return self.spread_base + self.spread_slope * (1.0 - self.phi_tilde(phi))


@dataclass
class FieldSample:
    """One simulated field: true phi and an ``(N, 4)`` feature array."""

    phi: float
    features: np.ndarray
    seed: int | None = None
    index: int = 0
    labels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != len(FEATURES):
            raise ShapeError(f'field features must be (N, 4), got {self.features.shape}')

    def __len__(self):
        return self.features.shape[0]

    @property
    def positions(self):
        return self.features[:, POSITION_COLUMNS]

    @property
    def distance(self):
        return self.features[:, DISTANCE]

    @property
    def log_mass(self):
        return self.features[:, LOG_MASS]

    @property
    def galaxies(self):
        return [Galaxy(*row) for row in self.features.tolist()]


def sample_phi(rng, cfg=None):
    """Draw phi from the uniform prior."""
    cfg = cfg or SimulatorConfig()
    return float(rng.uniform(cfg.phi_low, cfg.phi_high))


def _reflect(values):
    """Fold values back into [0, 1] by mirror reflection at the edges."""
    folded = np.mod(np.abs(values), 2.0)
    return np.where(folded > 1.0, 2.0 - folded, folded)


def simulate_field(phi, cfg, rng, seed=None, index=0):
    """Generate one field whose clustering is set by ``phi``."""
    if not cfg.phi_low <= phi <= cfg.phi_high:
        raise InvalidParametersError(f'phi={phi} outside prior [{cfg.phi_low}, {cfg.phi_high}]')
    fraction = cfg.clustered_fraction(phi)
    sigma = cfg.cluster_spread(phi) * cfg.spread_scale

    while True:
        n_centers = rng.poisson(fraction * cfg.mean_count / cfg.mean_cluster_size)
        centers = rng.uniform(size=(n_centers, 3))
        sizes = rng.poisson(cfg.mean_cluster_size, size=n_centers)
        offspring = np.repeat(centers, sizes, axis=0)
        offspring = _reflect(offspring + rng.normal(0.0, sigma, size=offspring.shape))
        background = rng.uniform(size=(rng.poisson((1.0 - fraction) * cfg.mean_count), 3))
        xyz = np.vstack([offspring, background])
        if len(xyz):
            break
    xyz = xyz[rng.permutation(len(xyz))]
    log_m = rng.beta(cfg.mass_alpha, cfg.mass_beta, size=len(xyz))
    return FieldSample(float(phi), np.column_stack([xyz, log_m]), seed=seed, index=index,
                       labels=('phi', 'field'))


def neighbor_count_statistic(positions, radius=0.02):
    """Mean number of other galaxies within ``radius`` in the sky plane."""
    positions = np.asarray(positions, dtype=np.float64)
    counts = cKDTree(positions).query_ball_point(positions, radius, return_length=True)
    return float(np.mean(counts) - 1.0)


def mean_nearest_neighbor_distance(positions):
    positions = np.asarray(positions, dtype=np.float64)
    distances, _ = cKDTree(positions).query(positions, k=2)
    return float(distances[:, 1].mean())


# Noise


@dataclass(frozen=True)
class NoiseModel:
    """Prior/posterior variances and the observing-time threshold.

    ``r0`` is the threshold of a galaxy at ``d_ref`` with log-mass
    ``log_m_ref``; ``log_m_ref`` is the median of the default Beta(2, 5) mass
    law, ``d_ref`` the median distance, so the median galaxy needs ~r0.
    """

    sigma_prior: tuple = (0.0, 0.0, 0.1, 0.25)
    sigma_post: tuple = (0.0, 0.0, 0.001, 0.1)
    r0: float = 10.0
    d_ref: float = 0.5
    log_m_ref: float = 0.26445
    mass_scale: float = float(np.log(100.0))
    r_floor: float = 1.0
    r_cap: float = 60.0
    width: float = 2.0

    def __post_init__(self):
        prior = np.asarray(self.sigma_prior, dtype=np.float64)
        post = np.asarray(self.sigma_post, dtype=np.float64)
        if prior.shape != (4,) or post.shape != (4,):
            raise InvalidParametersError('variances need one entry per feature')
        if np.any(prior < 0) or np.any(post < 0):
            raise InvalidParametersError('variances must be non-negative')
        if not 1.0 <= self.r_floor <= self.r_cap:
            raise InvalidParametersError('need 1 <= r_floor <= r_cap')
        if self.width <= 0 or self.r0 <= 0 or self.d_ref <= 0:
            raise InvalidParametersError('width, r0 and d_ref must be positive')

    @property
    def prior(self):
        return np.asarray(self.sigma_prior, dtype=np.float64)

    @property
    def post(self):
        return np.asarray(self.sigma_post, dtype=np.float64)

    @property
    def m_ref(self):
        return float(np.exp(self.mass_scale * self.log_m_ref))

    @property
    def noisy_columns(self):
        """Feature columns with non-zero variance in either state."""
        return [i for i in range(len(FEATURES)) if self.prior[i] > 0 or self.post[i] > 0]


def linear_mass(log_m, noise):
    return np.exp(noise.mass_scale * np.asarray(log_m, dtype=np.float64))


def r_min_unclamped(d, log_m, noise):
    d = np.asarray(d, dtype=np.float64)
    return noise.r0 * (d / noise.d_ref) ** 2 / (linear_mass(log_m, noise) / noise.m_ref)


def r_min(d, log_m, noise):
    """Minimum useful observing time in minutes, clamped to [floor, cap]."""
    return np.clip(r_min_unclamped(d, log_m, noise), noise.r_floor, noise.r_cap)


def observing_threshold(d, log_m, noise):
    """Time at which the posterior branch starts.

    Equals ``r_min`` for observable galaxies; above the cap it keeps the
    unclamped value so those galaxies are never observed.
    """
    return np.maximum(r_min_unclamped(d, log_m, noise), noise.r_floor)


def observable(d, log_m, noise):
    return r_min_unclamped(d, log_m, noise) <= noise.r_cap


def posterior_sigma_step(r, d, log_m, noise):
    """Variances under the step model; the threshold itself counts as observed."""
    observed = np.asarray(r, dtype=np.float64) >= observing_threshold(d, log_m, noise)
    return np.where(observed[..., None], noise.post, noise.prior)


def posterior_sigma_smooth(r, d, log_m, noise):
    """Logistic interpolation between prior and posterior variances."""
    r = np.asarray(r, dtype=np.float64)
    weight = expit((observing_threshold(d, log_m, noise) - r) / noise.width)
    return noise.post + (noise.prior - noise.post) * weight[..., None]


def posterior_sigma_smooth_tensor(r, d, log_m, noise, columns=None):
    """Tape version of ``posterior_sigma_smooth`` restricted to ``columns``.

    ``r`` is a Tensor of shape ``(N,)``; returns a Tensor ``(N, len(columns))``.
    """
    columns = noise.noisy_columns if columns is None else columns
    threshold = observing_threshold(d, log_m, noise)
    weight = ad.sigmoid((threshold - r) / noise.width)
    weight = ad.reshape(weight, (-1, 1))
    spread = (noise.prior - noise.post)[columns]
    return noise.post[columns] + weight * spread


def apply_prior_noise(field_sample, noise, rng):
    """Return ``v' = v + eps`` with ``eps ~ N(0, Sigma_prior)`` per galaxy."""
    z = rng.standard_normal(field_sample.features.shape)
    return field_sample.features + np.sqrt(noise.prior) * z


def apply_posterior_noise(field_sample, allocations, noise, rng, tape, z=None):
    """Reparameterised posterior state under the smooth model.

    ``v'' = v + sqrt(Sigma(r)) * z`` with ``z`` drawn independently of ``r``
    (or supplied), so the result is differentiable in the allocations.
    """
    features = field_sample.features
    if z is None:
        z = rng.standard_normal(features.shape)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != features.shape:
        raise ShapeError(f'noise draws {z.shape} do not match features {features.shape}')
    if not isinstance(allocations, ad.Tensor):
        allocations = tape.constant(allocations)
    columns = noise.noisy_columns
    variance = posterior_sigma_smooth_tensor(
        allocations, field_sample.distance, field_sample.log_mass, noise, columns)
    scatter = ad.sqrt(variance) * z[:, columns]
    selection = np.zeros((len(columns), len(FEATURES)))
    selection[np.arange(len(columns)), columns] = 1.0
    return ad.matmul(scatter, selection) + features


def apply_posterior_noise_step(field_sample, allocations, noise, z):
    """Posterior state under the step model, as a plain array."""
    variance = posterior_sigma_step(allocations, field_sample.distance,
                                    field_sample.log_mass, noise)
    return field_sample.features + np.sqrt(variance) * np.asarray(z, dtype=np.float64)


# Dumps


def write_field(field_sample, directory, metadata):
    """Write ``field_XXXX.csv`` and its ``.meta.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = f'field_{field_sample.index:04d}'
    csv_path = directory / f'{stem}.csv'
    with open(csv_path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(FEATURES)
        writer.writerows(field_sample.features.tolist())
    meta_path = directory / f'{stem}.meta.json'
    meta_path.write_text(json.dumps(metadata, indent=2, sort_keys=True) + '\n')
    return csv_path, meta_path
