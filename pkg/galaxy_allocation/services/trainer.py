"""Joint unsupervised training of the allocation and inference networks.

Each step draws a fresh phi and field, perturbs it with prior noise, lets
GNN1 allocate time, applies the smooth posterior model, lets GNN2 estimate
phi and updates both networks from one gradient of

    L = (phi_hat - phi)^2 + tau * (sum(r) - H)^2 + alpha * sum(|r|).

``tau`` grows by ``0.1 / H^2`` after every step whose total allocation misses
the budget by more than ``eta``.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, backward, optimizer_step
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import CheckpointError, ConfigError, NonFiniteLossError
from .networks import GNN1, GnnHyperparams, check_compatible, gnn1_forward, gnn2_forward, init_parameters
from .rng import substream
from .simulator import apply_posterior_noise, apply_prior_noise, sample_phi, simulate_field

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'allocation-gnn'
LOG_NAME = 'train_log.jsonl'


@dataclass(frozen=True)
class TrainConfig:
    """Budget, penalty schedule and loop settings."""

    budget: float = 10000.0
    eta_ratio: float = 1e-3
    alpha: float = 0.0
    tau_step_scale: float = 0.1
    fixed_tau: float | None = None
    steps: int = 5000
    batch_size: int = 1
    warmup_steps: int = 0
    early_stop: bool = False
    early_stop_window: int = 500
    early_stop_tolerance: float = 1e-4
    checkpoint_every: int = 500
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.budget <= 0:
            raise ConfigError('budget H must be positive')
        if self.eta_ratio <= 0 or self.tau_step_scale <= 0:
            raise ConfigError('eta and delta tau must be positive')
        if self.alpha < 0 or (self.fixed_tau is not None and self.fixed_tau < 0):
            raise ConfigError('alpha and tau must be non-negative')
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError('steps >= 0, batch_size >= 1 and checkpoint_every >= 1 required')
        if self.log_every < 1 or self.early_stop_window < 1:
            raise ConfigError('log_every and early_stop_window must be at least 1')

    @property
    def eta(self):
        return self.eta_ratio * self.budget

    @property
    def delta_tau(self):
        return self.tau_step_scale / self.budget ** 2

    @property
    def initial_tau(self):
        return 0.0 if self.fixed_tau is None else float(self.fixed_tau)


@dataclass(frozen=True)
class TrainRecord:
    """Per-step log line; ``loss == loss_phi + tau*loss_budget + alpha*loss_l1``."""

    step: int
    loss: float
    loss_phi: float
    loss_budget: float
    loss_l1: float
    sum_r: float
    tau: float
    phi: float
    phi_hat: float

    def to_json(self):
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class TrainState:
    params: ad.ParameterStore
    tau: float
    step: int


class TrainingExample(NamedTuple):
    """One simulated field with its prior state and posterior noise draws."""

    field: object
    prior_state: np.ndarray
    z: np.ndarray


class LossTerms(NamedTuple):
    total: ad.Tensor
    phi_term: ad.Tensor
    budget_term: ad.Tensor
    l1_term: ad.Tensor


def combined_loss(phi_hat, phi, allocations, budget, tau, alpha, tape=None):
    """Build the combined loss on the tape.

    Returns:
        ``LossTerms`` whose ``total`` is the scalar loss and whose other
        members are the raw, unweighted terms.
    """
    if tau < 0 or alpha < 0:
        raise ConfigError('tau and alpha must be non-negative')
    phi_term = ad.square(phi_hat - phi)
    budget_term = ad.square(ad.sum_(allocations) - budget)
    l1_term = ad.sum_(ad.abs_(allocations))
    total = phi_term + budget_term * tau + l1_term * alpha
    return LossTerms(total, phi_term, budget_term, l1_term)


def tau_update(tau, sum_r, budget, eta, delta_tau):
    """Raise the penalty weight when the allocation misses the budget."""
    if abs(sum_r - budget) > eta:
        return tau + delta_tau
    return tau


def draw_example(cfg, step, slot=0):
    """Simulate the field used by ``slot`` of training step ``step``."""
    seed = cfg.train.seed
    index = step * cfg.train.batch_size + slot
    phi = sample_phi(substream(seed, 'train-phi', index), cfg.simulator)
    field = simulate_field(phi, cfg.simulator, substream(seed, 'train-field', index),
                           seed=seed, index=index)
    prior_state = apply_prior_noise(field, cfg.noise, substream(seed, 'train-prior', index))
    z = substream(seed, 'train-posterior', index).standard_normal(field.features.shape)
    return TrainingExample(field, prior_state, z)


def forward_example(params, example, cfg, tape):
    """Allocation -> posterior noise -> estimate for one example."""
    allocations = gnn1_forward(example.prior_state, cfg.model, params, tape)
    posterior = apply_posterior_noise(example.field, allocations, cfg.noise, None, tape, z=example.z)
    phi_hat = gnn2_forward(posterior, cfg.model, params, tape, allocations)
    return allocations, phi_hat


def objective(params, examples, cfg, tau, tape):
    """Batch-averaged loss terms plus the per-example outputs."""
    phi_terms, budget_terms, l1_terms, outputs = [], [], [], []
    for example in examples:
        allocations, phi_hat = forward_example(params, example, cfg, tape)
        terms = combined_loss(phi_hat, example.field.phi, allocations,
                              cfg.train.budget, tau, cfg.train.alpha, tape)
        phi_terms.append(terms.phi_term)
        budget_terms.append(terms.budget_term)
        l1_terms.append(terms.l1_term)
        outputs.append((allocations, phi_hat))
    count = float(len(examples))
    phi_term = _mean(phi_terms, count)
    budget_term = _mean(budget_terms, count)
    l1_term = _mean(l1_terms, count)
    total = phi_term + budget_term * tau + l1_term * cfg.train.alpha
    return LossTerms(total, phi_term, budget_term, l1_term), outputs


def _mean(values, count):
    if len(values) == 1:
        return values[0]
    acc = values[0]
    for value in values[1:]:
        acc = acc + value
    return acc / count


def initial_state(cfg):
    return TrainState(init_parameters(cfg.model, cfg.train.seed), cfg.train.initial_tau, 0)


def train_step(state, cfg):
    """Run one step of the training loop.

    Returns:
        ``(new_state, TrainRecord)``.

    Raises:
        NonFiniteLossError: the loss or a gradient is NaN/inf; the exception
            carries the record of the failed step.
    """
    examples = [draw_example(cfg, state.step, slot) for slot in range(cfg.train.batch_size)]
    tape = Tape()
    params = tape.watch(state.params)
    terms, outputs = objective(params, examples, cfg, state.tau, tape)
    sum_r = float(np.mean([allocations.data.sum() for allocations, _ in outputs]))
    record = TrainRecord(
        step=state.step,
        loss=terms.total.item(),
        loss_phi=terms.phi_term.item(),
        loss_budget=terms.budget_term.item(),
        loss_l1=terms.l1_term.item(),
        sum_r=sum_r,
        tau=state.tau,
        phi=examples[0].field.phi,
        phi_hat=outputs[0][1].item(),
    )
    if not terms.total.is_finite():
        raise NonFiniteLossError(f'non-finite loss at step {state.step}', record)

    grads = backward(terms.total, tape)
    if any(not np.all(np.isfinite(grad)) for grad in grads.values()):
        raise NonFiniteLossError(f'non-finite gradient at step {state.step}', record)
    if state.step < cfg.train.warmup_steps:
        grads = {name: (np.zeros_like(grad) if name.startswith(GNN1 + '.') else grad)
                 for name, grad in grads.items()}
    params = optimizer_step(state.params, grads, cfg.optimizer)

    tau = state.tau
    if cfg.train.fixed_tau is None:
        tau = tau_update(tau, sum_r, cfg.train.budget, cfg.train.eta, cfg.train.delta_tau)
    return TrainState(params, tau, state.step + 1), record


def checkpoint_metadata(state, cfg):
    return {
        'kind': CHECKPOINT_KIND,
        'hyperparams': cfg.model.as_dict(),
        'tau': state.tau,
        'step': state.step,
        'config': cfg.as_dict(),
    }


def save_state(path, state, cfg):
    return save_checkpoint(path, state.params, checkpoint_metadata(state, cfg))


def load_model(path, hyper=None):
    """Load networks from a checkpoint; returns ``(store, hyperparams, metadata)``."""
    store, metadata = load_checkpoint(path)
    if metadata.get('kind') != CHECKPOINT_KIND:
        raise CheckpointError(f'{path} is not an allocation network checkpoint')
    stored = GnnHyperparams(**metadata['hyperparams'])
    if hyper is not None and hyper != stored:
        raise CheckpointError(f'{path}: hyperparameters {stored} differ from configured {hyper}')
    check_compatible(store, stored)
    return store, stored, metadata


def load_state(path, cfg):
    store, _, metadata = load_model(path, cfg.model)
    return TrainState(store, float(metadata['tau']), int(metadata['step']))


def checkpoint_path(directory, step):
    return Path(directory) / f'step_{step:06d}.agnn'


@dataclass
class TrainResult:
    state: TrainState
    checkpoint: Path
    log_path: Path
    last_record: TrainRecord | None
    stopped_early: bool = False


def _converged(losses, window, tolerance):
    if len(losses) < 2 * window:
        return False
    values = list(losses)
    previous = float(np.mean(values[:window]))
    current = float(np.mean(values[window:]))
    if previous == 0:
        return True
    return (previous - current) / abs(previous) < tolerance


def train(cfg, out_dir, resume=None, on_record=None):
    """Run the configured number of steps, logging and checkpointing.

    Args:
        cfg: full run configuration.
        out_dir: directory receiving ``train_log.jsonl`` and ``checkpoints/``.
        resume: optional checkpoint to continue from; the log is appended.
        on_record: optional callback invoked with every ``TrainRecord``.

    Returns:
        ``TrainResult`` describing the final state and checkpoint.
    """
    out_dir = Path(out_dir)
    checkpoint_dir = out_dir / 'checkpoints'
    log_path = out_dir / LOG_NAME
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        state = load_state(resume, cfg)
        mode = 'a'
        logger.info('Resuming from %s at step %d', resume, state.step)
    else:
        state = initial_state(cfg)
        mode = 'w'
        logger.info('Training from scratch: %d parameters, budget %.1f minutes',
                    state.params.total_size(), cfg.train.budget)
        if not cfg.model.in_searched_range:
            logger.warning('Network shape %s lies outside the searched architecture ranges',
                           cfg.model.as_dict())

    last_saved = None
    if state.step == 0:
        last_saved = save_state(checkpoint_path(checkpoint_dir, 0), state, cfg)

    window = cfg.train.early_stop_window
    losses = deque(maxlen=2 * window)
    record = None
    stopped_early = False
    with open(log_path, mode) as log:
        while state.step < cfg.train.steps:
            try:
                state, record = train_step(state, cfg)
            except NonFiniteLossError as exc:
                log.write(exc.record.to_json() + '\n')
                logger.error('%s; aborting', exc)
                raise
            log.write(record.to_json() + '\n')
            if on_record is not None:
                on_record(record)
            if record.step % cfg.train.log_every == 0:
                logger.info('step %d loss %.6g phi-loss %.4g sum_r %.1f tau %.3g',
                            record.step, record.loss, record.loss_phi, record.sum_r, record.tau)
            if state.step % cfg.train.checkpoint_every == 0:
                last_saved = save_state(checkpoint_path(checkpoint_dir, state.step), state, cfg)
            losses.append(record.loss)
            if cfg.train.early_stop and _converged(losses, window, cfg.train.early_stop_tolerance):
                logger.info('Loss plateaued at step %d; stopping early', state.step)
                stopped_early = True
                break

    final_path = checkpoint_path(checkpoint_dir, state.step)
    if last_saved != final_path:
        last_saved = save_state(final_path, state, cfg)
    return TrainResult(state, last_saved, log_path, record, stopped_early)
