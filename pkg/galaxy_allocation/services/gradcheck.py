"""Finite-difference verification of the reverse-mode gradients.

Cases cover the tape primitives, MLPs, graph-network blocks, the smooth
posterior noise model and the full training loss on a 10-galaxy field. Each
case compares the tape gradient with central differences on a handful of
coordinates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import MlpSpec, Tape, backward, finite_difference_grad, kaiming_init, mlp_forward, relative_error
from .config import AllocationConfig
from .graph import GnBlockParams, GraphState, build_knn_graph, gn_block
from .networks import GnnHyperparams, init_parameters
from .rng import substream
from .simulator import FieldSample, NoiseModel, apply_posterior_noise, apply_prior_noise, observing_threshold
from .trainer import TrainConfig, TrainingExample, objective

logger = logging.getLogger(__name__)

TOLERANCE = 1e-5
STEP = 1e-5
CHECKED_COORDINATES = 8
GROUP_SIZES = {
    'primitives': 40,
    'mlp': 20,
    'gn_block': 20,
    'posterior': 10,
    'end_to_end': 10,
}


@dataclass
class GradientCase:
    """Scalar function of one array ``x``; ``fn(tape, tensor) -> scalar Tensor``."""

    group: str
    name: str
    fn: Callable
    x: np.ndarray
    indices: list | None = None


@dataclass(frozen=True)
class CaseResult:
    group: str
    name: str
    error: float


@dataclass
class GradcheckReport:
    results: list = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_error(self):
        return max((r.error for r in self.results), default=0.0)

    @property
    def passed(self):
        return bool(self.results) and self.max_error <= self.tolerance

    def by_group(self):
        """``{group: (case count, max error)}`` in suite order."""
        groups = {}
        for result in self.results:
            count, worst = groups.get(result.group, (0, 0.0))
            groups[result.group] = (count + 1, max(worst, result.error))
        return groups


def analytic_gradient(case):
    tape = Tape()
    x = tape.parameter('x', case.x)
    return backward(case.fn(tape, x), tape)['x']


def _evaluate(case, x):
    """Value of the case at ``x`` and the branch pattern taken on the way."""
    tape = Tape()
    value = case.fn(tape, tape.constant(x)).item()
    return value, tape.branches


def _same_branches(first, second):
    return len(first) == len(second) and all(np.array_equal(a, b) for a, b in zip(first, second))


def _smooth_coordinates(case, candidates, h, limit=None):
    """Keep coordinates whose +-h steps take the same relu/abs branches as ``x``.

    A step that crosses a kink compares one-sided slopes and says nothing
    about the rule, so those coordinates are skipped.
    """
    _, pattern = _evaluate(case, case.x)
    x = np.array(case.x, dtype=np.float64)
    flat = x.reshape(-1)
    kept = []
    for i in candidates:
        if limit is not None and len(kept) == limit:
            break
        original = flat[i]
        flat[i] = original + h
        _, upper = _evaluate(case, x)
        flat[i] = original - h
        _, lower = _evaluate(case, x)
        flat[i] = original
        if _same_branches(pattern, upper) and _same_branches(pattern, lower):
            kept.append(int(i))
    return kept


def check_case(case, h=STEP):
    analytic = analytic_gradient(case)
    if case.indices is None:
        candidates = np.argsort(-np.abs(analytic.reshape(-1)), kind='stable')
        indices = _smooth_coordinates(case, candidates, h, CHECKED_COORDINATES)
    else:
        indices = _smooth_coordinates(case, case.indices, h)
    if not indices:
        logger.debug('%s/%s: every step crosses a kink', case.group, case.name)
        return 0.0
    indices = sorted(indices)
    numeric = finite_difference_grad(lambda v: _evaluate(case, v)[0], case.x, h=h, indices=indices)
    return relative_error(analytic.reshape(-1)[indices], numeric.reshape(-1)[indices])


def _project(output, weights):
    """Reduce ``output`` to a scalar with fixed weights."""
    return ad.sum_(output * weights)


def _away_from_zero(rng, shape, margin=0.2):
    values = rng.normal(size=shape)
    return np.sign(values) * (margin + np.abs(values))


# Case builders


def _primitive_builders():
    def binary(op, positive_rhs=False, broadcast=False):
        def build(rng):
            shape = (3, 4)
            other_shape = (4,) if broadcast else shape
            other = rng.uniform(0.5, 2.0, other_shape) if positive_rhs else rng.normal(size=other_shape)
            weights = rng.normal(size=shape)
            x = rng.normal(size=shape)
            return x, lambda tape, t: _project(op(t, tape.constant(other)), weights)
        return build

    def reflected(op):
        def build(rng):
            shape = (4,)
            x = rng.uniform(0.5, 2.0, shape)
            other = rng.normal(size=(3, 4))
            weights = rng.normal(size=(3, 4))
            return x, lambda tape, t: _project(op(tape.constant(other), t), weights)
        return build

    def unary(op, domain='normal'):
        def build(rng):
            shape = (5, 3)
            if domain == 'positive':
                x = rng.uniform(0.3, 2.0, shape)
            elif domain == 'nonzero':
                x = _away_from_zero(rng, shape)
            else:
                x = rng.normal(size=shape)
            weights = rng.normal(size=shape)
            return x, lambda tape, t: _project(op(t), weights)
        return build

    def matmul_left(rng):
        other = rng.normal(size=(4, 2))
        weights = rng.normal(size=(3, 2))
        return rng.normal(size=(3, 4)), lambda tape, t: _project(ad.matmul(t, tape.constant(other)), weights)

    def matmul_right(rng):
        other = rng.normal(size=(3, 4))
        weights = rng.normal(size=(3, 2))
        return rng.normal(size=(4, 2)), lambda tape, t: _project(ad.matmul(tape.constant(other), t), weights)

    def reduction(op, axis):
        def build(rng):
            out_shape = {None: (), 0: (4,), 1: (3,)}[axis]
            weights = rng.normal(size=out_shape)
            return rng.normal(size=(3, 4)), lambda tape, t: _project(op(t, axis), weights)
        return build

    def reshape(rng):
        weights = rng.normal(size=(2, 6))
        return rng.normal(size=(3, 4)), lambda tape, t: _project(ad.reshape(t, (2, 6)), weights)

    def concat(rng):
        other = rng.normal(size=(3, 2))
        weights = rng.normal(size=(3, 6))
        return rng.normal(size=(3, 4)), lambda tape, t: _project(
            ad.concat([tape.constant(other), t], axis=1), weights)

    def take_columns(rng):
        weights = rng.normal(size=(3, 3))
        return rng.normal(size=(3, 4)), lambda tape, t: _project(ad.take_columns(t, [3, 1, 3]), weights)

    def gather_rows(rng):
        index = [0, 2, 2, 1, 0]
        weights = rng.normal(size=(5, 3))
        return rng.normal(size=(3, 3)), lambda tape, t: _project(ad.gather_rows(t, index), weights)

    def segment_sum(rng):
        ids = [0, 2, 2, 0, 1, 2]
        weights = rng.normal(size=(4, 2))
        return rng.normal(size=(6, 2)), lambda tape, t: _project(ad.segment_sum(t, ids, 4), weights)

    def broadcast_rows(rng):
        weights = rng.normal(size=(5, 3))
        return rng.normal(size=(3,)), lambda tape, t: _project(ad.broadcast_rows(t, 5), weights)

    def power(rng):
        weights = rng.normal(size=(5, 3))
        return rng.uniform(0.3, 2.0, (5, 3)), lambda tape, t: _project(ad.power(t, 2.5), weights)

    return [
        ('add', binary(ad.add)), ('add_broadcast', binary(ad.add, broadcast=True)),
        ('sub', binary(ad.sub)), ('mul', binary(ad.mul)),
        ('mul_broadcast', binary(ad.mul, broadcast=True)),
        ('div', binary(ad.div, positive_rhs=True)), ('rdiv', reflected(ad.div)),
        ('neg', unary(ad.neg)), ('power', power), ('square', unary(ad.square)),
        ('matmul_left', matmul_left), ('matmul_right', matmul_right),
        ('relu', unary(ad.relu, 'nonzero')), ('sigmoid', unary(ad.sigmoid)),
        ('exp', unary(ad.exp)), ('log', unary(ad.log, 'positive')),
        ('sqrt', unary(ad.sqrt, 'positive')), ('abs', unary(ad.abs_, 'nonzero')),
        ('sum', reduction(ad.sum_, None)), ('sum_rows', reduction(ad.sum_, 0)),
        ('mean_cols', reduction(ad.mean, 1)), ('reshape', reshape), ('concat', concat),
        ('take_columns', take_columns), ('gather_rows', gather_rows),
        ('segment_sum', segment_sum), ('broadcast_rows', broadcast_rows),
    ]


def primitive_cases(rng, count):
    builders = _primitive_builders()
    cases = []
    for i in range(count):
        name, build = builders[i % len(builders)]
        x, fn = build(rng)
        cases.append(GradientCase('primitives', f'{name}[{i}]', fn, x))
    return cases


def _with_replaced(params, tape, name, tensor):
    values = {key: tape.constant(value) for key, value in params.items() if key != name}
    values[name] = tensor
    return values


def mlp_cases(rng, count):
    cases = []
    for i in range(count):
        spec = MlpSpec(int(rng.integers(2, 6)), int(rng.integers(1, 4)),
                       int(rng.integers(1, 4)), int(rng.integers(4, 9)))
        params = kaiming_init(spec, rng, 'mlp')
        inputs = rng.normal(size=(6, spec.input_dim))
        weights = rng.normal(size=(6, spec.output_dim))
        names = sorted(params)
        target = 'input' if i % 3 == 0 else names[i % len(names)]

        def fn(tape, t, target=target, params=params, spec=spec, inputs=inputs, weights=weights):
            if target == 'input':
                values = {key: tape.constant(value) for key, value in params.items()}
                return _project(mlp_forward(t, values, spec, 'mlp', tape), weights)
            values = _with_replaced(params, tape, target, t)
            return _project(mlp_forward(tape.constant(inputs), values, spec, 'mlp', tape), weights)

        x = inputs if target == 'input' else params[target]
        cases.append(GradientCase('mlp', f'{target}[{i}]', fn, x))
    return cases


def gn_block_cases(rng, count):
    cases = []
    targets = ('nodes', 'edges', 'globals', 'weights')
    for i in range(count):
        n = int(rng.integers(6, 11))
        topology = build_knn_graph(rng.uniform(size=(n, 2)), 3)
        block = GnBlockParams('gn', 4, 3, 2, hidden_layers=1, hidden_width=6)
        params = {}
        for prefix, spec in block.mlps().items():
            params.update(kaiming_init(spec, rng, prefix))
        state = {
            'nodes': rng.normal(size=(n, block.n_v)),
            'edges': rng.normal(size=(topology.num_edges, block.n_e)),
            'globals': rng.normal(size=(block.n_u,)),
        }
        w_nodes = rng.normal(size=(n, block.n_v))
        w_edges = rng.normal(size=(topology.num_edges, block.n_e))
        w_globals = rng.normal(size=(block.n_u,))
        target = targets[i % len(targets)]
        weight_name = sorted(params)[i % len(params)]

        def fn(tape, t, target=target, weight_name=weight_name, state=state, params=params,
               topology=topology, block=block, w=(w_nodes, w_edges, w_globals)):
            parts = {key: (t if key == target else tape.constant(value)) for key, value in state.items()}
            if target == 'weights':
                values = _with_replaced(params, tape, weight_name, t)
            else:
                values = {key: tape.constant(value) for key, value in params.items()}
            out = gn_block(GraphState(parts['nodes'], parts['edges'], parts['globals']),
                           topology, block, values, tape)
            return _project(out.nodes, w[0]) + _project(out.edges, w[1]) + _project(out.globals, w[2])

        x = params[weight_name] if target == 'weights' else state[target]
        label = weight_name if target == 'weights' else target
        cases.append(GradientCase('gn_block', f'{label}[{i}]', fn, x))
    return cases


def _random_field(rng, n=10):
    features = rng.uniform(0.05, 0.95, size=(n, 4))
    return FieldSample(float(rng.uniform(0.1, 0.5)), features)


def posterior_cases(rng, count):
    noise = NoiseModel()
    cases = []
    for i in range(count):
        sample = _random_field(rng)
        threshold = np.minimum(observing_threshold(sample.distance, sample.log_mass, noise), 55.0)
        r = np.clip(threshold + noise.width * rng.normal(size=len(sample)), 0.5, 60.0)
        z = rng.normal(size=sample.features.shape)
        weights = rng.normal(size=sample.features.shape)

        def fn(tape, t, sample=sample, z=z, weights=weights):
            return _project(apply_posterior_noise(sample, t, noise, None, tape, z=z), weights)

        cases.append(GradientCase('posterior', f'allocations[{i}]', fn, r))
    return cases


GRADCHECK_MODEL = GnnHyperparams(n_v=6, n_e=6, n_u=6, k=3, hidden_layers=2, hidden_width=8)


def end_to_end_cases(rng, count, seed):
    """Gradients of the combined loss with respect to network parameters.

    Each field's target phi sits one unit below the untrained estimate, so the
    loss stays of order one and the differences keep their precision.
    """
    cfg = AllocationConfig(model=GRADCHECK_MODEL,
                           train=TrainConfig(budget=300.0, alpha=0.01, seed=seed))
    store = init_parameters(GRADCHECK_MODEL, seed)
    names = store.names
    tau = 1e-4
    cases = []
    for i in range(count):
        sample = _random_field(rng)
        example = TrainingExample(sample, apply_prior_noise(sample, cfg.noise, rng),
                                  rng.normal(size=sample.features.shape))
        tape = Tape()
        _, outputs = objective({key: tape.constant(value) for key, value in store.params.items()},
                               [example], cfg, tau, tape)
        target_phi = outputs[0][1].item() - 1.0
        example = example._replace(field=replace(sample, phi=target_phi))
        target = names[int(rng.integers(len(names)))] if i % 2 else names[i % len(names)]

        def fn(tape, t, target=target, example=example):
            values = _with_replaced(store.params, tape, target, t)
            terms, _ = objective(values, [example], cfg, tau, tape)
            return terms.total

        cases.append(GradientCase('end_to_end', f'{target}[{i}]', fn, np.array(store[target])))
    return cases


def build_cases(seed, sizes=None):
    sizes = {**GROUP_SIZES, **(sizes or {})}
    return (
        primitive_cases(substream(seed, 'gradcheck-primitives'), sizes['primitives'])
        + mlp_cases(substream(seed, 'gradcheck-mlp'), sizes['mlp'])
        + gn_block_cases(substream(seed, 'gradcheck-gn'), sizes['gn_block'])
        + posterior_cases(substream(seed, 'gradcheck-posterior'), sizes['posterior'])
        + end_to_end_cases(substream(seed, 'gradcheck-e2e'), sizes['end_to_end'], seed)
    )


def run_gradcheck(seed=0, tolerance=TOLERANCE, sizes=None):
    """Run every case and collect the relative errors."""
    report = GradcheckReport(tolerance=tolerance)
    for case in build_cases(seed, sizes):
        error = check_case(case)
        report.results.append(CaseResult(case.group, case.name, error))
        if error > tolerance:
            logger.warning('gradient mismatch in %s/%s: %.3g', case.group, case.name, error)
    logger.info('gradcheck: %d cases, max relative error %.3g', len(report.results),
                report.max_error)
    return report
