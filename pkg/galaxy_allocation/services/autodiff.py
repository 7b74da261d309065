"""Reverse-mode automatic differentiation.

Dense float64 arrays are wrapped in ``Tensor`` values. Every primitive applied
to a tracked tensor appends an entry to its ``Tape``; ``backward`` walks the
tape in reverse and returns one gradient per watched parameter. The module also
holds the MLP building blocks, Kaiming initialisation, the parameter store and
the two optimizers used by the trainer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, NamedTuple

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError, NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64


class Tensor:
    """Array value, optionally tracked by a tape.

    ``node`` is the tape position of the value; constants have no node and
    receive no gradient.
    """

    __array_ufunc__ = None

    def __init__(self, data, tape=None, node=None, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.node = node
        self.name = name

    def __repr__(self):
        label = f' {self.name!r}' if self.name else ''
        return f'<Tensor{label} shape={self.shape} tracked={self.requires_grad}>'

    @property
    def requires_grad(self):
        return self.node is not None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        """Return the value of a one-element tensor as a float."""
        if self.data.size != 1:
            raise ShapeError(f'item() needs one element, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class TapeEntry(NamedTuple):
    """One recorded primitive: output node, operand nodes and backward rule."""

    op: str
    output: int
    inputs: tuple
    backward: Callable


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Entries are appended as values are produced, so every operand of entry
    ``i`` is a leaf or the output of an earlier entry.
    """

    def __init__(self):
        self.entries = []
        self.parameters = {}
        # sign masks of relu and abs inputs, in recording order
        self.branches = []
        self._next_node = 0

    def __len__(self):
        return len(self.entries)

    def _allocate(self):
        node = self._next_node
        self._next_node += 1
        return node

    def constant(self, data):
        """Wrap ``data`` as an untracked value on this tape."""
        return Tensor(np.array(data, dtype=DTYPE), tape=self)

    def parameter(self, name, data):
        """Register a named leaf whose gradient ``backward`` will report."""
        if name in self.parameters:
            raise TapeError(f'parameter {name!r} already watched')
        tensor = Tensor(np.array(data, dtype=DTYPE), tape=self,
                        node=self._allocate(), name=name)
        self.parameters[name] = tensor
        return tensor

    def watch(self, store, prefix=None):
        """Register every parameter of ``store`` (optionally one prefix)."""
        params = store.params if isinstance(store, ParameterStore) else store
        return {
            name: self.parameter(name, value)
            for name, value in params.items()
            if prefix is None or name.startswith(prefix)
        }

    def record(self, op, data, inputs, backward_rule):
        """Append a primitive whose output is ``data``.

        Values computed only from constants are returned untracked.
        """
        nodes = []
        for value in inputs:
            if isinstance(value, Tensor) and value.tape is self:
                nodes.append(value.node)
            else:
                nodes.append(None)
        if all(node is None for node in nodes):
            return Tensor(data, tape=self)
        output = Tensor(data, tape=self, node=self._allocate())
        self.entries.append(TapeEntry(op, output.node, tuple(nodes), backward_rule))
        return output

    def gradients(self, output):
        """Propagate d(output)/d(node) for every node reached."""
        grads = {output.node: np.ones_like(output.data)}
        for entry in reversed(self.entries):
            upstream = grads.pop(entry.output, None)
            if upstream is None:
                continue
            for node, contribution in zip(entry.inputs, entry.backward(upstream)):
                if node is None or contribution is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + contribution
                else:
                    grads[node] = contribution
        return grads

    def is_topologically_ordered(self):
        """Check that every operand was produced before its consumer."""
        for entry in self.entries:
            for node in entry.inputs:
                if node is not None and node >= entry.output:
                    return False
        return True


def backward(loss, tape):
    """Return ``{parameter name: gradient array}`` for a scalar loss.

    Parameters that did not influence the loss get explicit zero gradients.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise TapeError('loss was not recorded on this tape')
    if loss.size != 1:
        raise ShapeError(f'loss must be scalar, got shape {loss.shape}')
    node_grads = tape.gradients(loss) if loss.requires_grad else {}
    gradients = {}
    for name, tensor in tape.parameters.items():
        grad = node_grads.get(tensor.node)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        gradients[name] = np.array(grad, dtype=DTYPE).reshape(tensor.shape)
    return gradients


# Primitives


def _tape_of(values):
    tapes = {id(v.tape): v.tape for v in values
             if isinstance(v, Tensor) and v.tape is not None}
    if len(tapes) > 1:
        raise TapeError('operands belong to different tapes')
    return next(iter(tapes.values()), None)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(op, data, inputs, rule):
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(data)
    return tape.record(op, data, inputs, rule)


def _note_branch(a, mask):
    if a.tape is not None:
        a.tape.branches.append(mask)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(op, a, b, compute):
    a, b = _wrap(a), _wrap(b)
    try:
        return a, b, compute(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f'{op}: incompatible shapes {a.shape} and {b.shape}') from exc


def add(a, b):
    a, b, data = _binary('add', a, b, np.add)
    return _record('add', data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b, data = _binary('sub', a, b, np.subtract)
    return _record('sub', data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b, data = _binary('mul', a, b, np.multiply)
    return _record('mul', data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b, data = _binary('div', a, b, np.divide)
    return _record('div', data, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = _wrap(a)
    return _record('neg', -a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    a = _wrap(a)
    exponent = float(exponent)
    return _record('pow', a.data ** exponent, (a,), lambda g: (
        g * exponent * a.data ** (exponent - 1.0),))


def square(a):
    a = _wrap(a)
    return _record('square', a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f'matmul: cannot multiply {a.shape} by {b.shape}')
    return _record('matmul', a.data @ b.data, (a, b), lambda g: (
        g @ b.data.T, a.data.T @ g))


def relu(a):
    a = _wrap(a)
    mask = a.data > 0
    _note_branch(a, mask)
    return _record('relu', np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = _wrap(a)
    s = expit(a.data)
    return _record('sigmoid', s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a):
    a = _wrap(a)
    e = np.exp(a.data)
    return _record('exp', e, (a,), lambda g: (g * e,))


def log(a):
    a = _wrap(a)
    return _record('log', np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _wrap(a)
    root = np.sqrt(a.data)
    return _record('sqrt', root, (a,), lambda g: (0.5 * g / root,))


def abs_(a):
    a = _wrap(a)
    _note_branch(a, a.data >= 0)
    return _record('abs', np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sum_(a, axis=None):
    a = _wrap(a)
    data = a.data.sum(axis=axis)

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record('sum', data, (a,), rule)


def mean(a, axis=None):
    a = _wrap(a)
    count = a.size if axis is None else a.shape[axis]
    return div(sum_(a, axis), float(max(count, 1)))


def reshape(a, shape):
    a = _wrap(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f'cannot reshape {a.shape} to {shape}') from exc
    return _record('reshape', data, (a,), lambda g: (g.reshape(a.shape),))


def concat(values, axis=-1):
    """Concatenate tensors along ``axis``."""
    values = [_wrap(v) for v in values]
    try:
        data = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        shapes = [v.shape for v in values]
        raise ShapeError(f'concat: incompatible shapes {shapes}') from exc
    splits = np.cumsum([v.shape[axis] for v in values])[:-1]
    return _record('concat', data, tuple(values), lambda g: tuple(
        np.split(g, splits, axis=axis)))


def take_columns(a, columns):
    """Select columns ``a[:, columns]`` of a matrix."""
    a = _wrap(a)
    columns = list(columns)

    def rule(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, (slice(None), columns), g)
        return (grad,)

    return _record('take_columns', a.data[:, columns], (a,), rule)


def gather_rows(a, index):
    """Select rows ``a[index]``; the gradient scatters back with addition."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.intp)

    def rule(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _record('gather', a.data[index], (a,), rule)


def segment_sum(a, segment_ids, num_segments):
    """Sum rows of ``a`` into ``num_segments`` buckets (empty bucket -> 0)."""
    a = _wrap(a)
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if a.shape[0] != segment_ids.shape[0]:
        raise ShapeError(f'segment_sum: {a.shape[0]} rows, {segment_ids.shape[0]} ids')
    data = np.zeros((num_segments,) + a.shape[1:], dtype=DTYPE)
    np.add.at(data, segment_ids, a.data)
    return _record('segment_sum', data, (a,), lambda g: (g[segment_ids],))


def broadcast_rows(a, rows):
    """Repeat a vector of shape ``(d,)`` into ``(rows, d)``."""
    a = _wrap(a)
    if a.ndim != 1:
        raise ShapeError(f'broadcast_rows expects a vector, got {a.shape}')
    data = np.broadcast_to(a.data, (rows, a.shape[0])).copy()
    return _record('broadcast_rows', data, (a,), lambda g: (g.sum(axis=0),))


# MLPs


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected network with rectifier hidden layers."""

    input_dim: int
    output_dim: int
    hidden_layers: int = 2
    hidden_width: int = 128
    activation: str = 'relu'

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError(f'MLP dims must be >= 1, got {self.input_dim}->{self.output_dim}')
        if self.hidden_layers < 0 or (self.hidden_layers and self.hidden_width < 1):
            raise ConfigError('MLP hidden layers must be >= 0 with width >= 1')
        if self.activation != 'relu':
            raise ConfigError(f'unsupported activation {self.activation!r}')

    @property
    def layer_dims(self):
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    @property
    def in_searched_range(self):
        """Whether the shape lies inside the searched architecture ranges."""
        return 2 <= self.hidden_layers <= 5 and 10 <= self.hidden_width <= 1000

    def parameter_shapes(self, prefix):
        dims = self.layer_dims
        shapes = {}
        for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes[f'{prefix}.w{layer}'] = (fan_in, fan_out)
            shapes[f'{prefix}.b{layer}'] = (fan_out,)
        return shapes


def kaiming_init(spec, rng, prefix):
    """Draw weights from N(0, 2/fan_in); biases start at zero."""
    arrays = {}
    for name, shape in spec.parameter_shapes(prefix).items():
        if len(shape) == 2:
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        else:
            arrays[name] = np.zeros(shape, dtype=DTYPE)
    return arrays


def mlp_forward(x, params, spec, prefix, tape=None):
    """Apply the MLP named ``prefix`` to the rows of ``x``.

    Args:
        x: Tensor or array of shape ``(N, input_dim)``.
        params: mapping of parameter name to Tensor (as returned by
            ``Tape.watch``) or to plain arrays.
        spec: the network shape.
        prefix: parameter name prefix, e.g. ``'gnn1.block0.edge'``.
        tape: tape used to wrap plain array inputs.

    Returns:
        Tensor of shape ``(N, output_dim)``.
    """
    if not isinstance(x, Tensor):
        x = tape.constant(x) if tape is not None else Tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f'{prefix}: expected (N, {spec.input_dim}) input, got {x.shape}')
    layers = len(spec.layer_dims) - 1
    h = x
    for layer in range(layers):
        try:
            weight = params[f'{prefix}.w{layer}']
            bias = params[f'{prefix}.b{layer}']
        except KeyError as exc:
            raise ShapeError(f'missing parameter {exc.args[0]}') from exc
        h = add(matmul(h, weight), bias)
        if layer < layers - 1:
            h = relu(h)
    return h


# Parameters and optimizers


def _frozen(arrays):
    frozen = {}
    for name, value in arrays.items():
        array = np.array(value, dtype=DTYPE)
        array.setflags(write=False)
        frozen[name] = array
    return frozen


@dataclass(frozen=True)
class ParameterStore:
    """Named trainable arrays plus optimizer state.

    Instances are immutable; updates return a new store, so a snapshot can be
    shared read-only between threads.
    """

    params: Mapping[str, np.ndarray]
    step: int = 0
    first_moment: Mapping[str, np.ndarray] | None = None
    second_moment: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, 'params', _frozen(self.params))
        for attr in ('first_moment', 'second_moment'):
            moments = getattr(self, attr)
            if moments is not None:
                object.__setattr__(self, attr, _frozen(moments))

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    @property
    def names(self):
        return list(self.params)

    def subset(self, prefix):
        return {name: value for name, value in self.params.items()
                if name.startswith(prefix)}

    def merged(self, arrays):
        """Return a store with ``arrays`` added; names must be new."""
        clash = set(arrays) & set(self.params)
        if clash:
            raise ShapeError(f'duplicate parameter names: {sorted(clash)}')
        return replace(self, params={**self.params, **arrays})

    def total_size(self):
        return int(sum(value.size for value in self.params.values()))


@dataclass(frozen=True)
class OptimizerConfig:
    """Update rule settings: ``sgd`` (plain gradient) or ``adam``."""

    kind: str = 'adam'
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ('sgd', 'adam'):
            raise ConfigError(f'unknown optimizer kind {self.kind!r}')
        if self.learning_rate < 0:
            raise ConfigError('learning rate must be non-negative')
        for beta in (self.beta1, self.beta2):
            if not 0.0 < beta < 1.0:
                raise ConfigError(f'moment decay {beta} outside (0, 1)')
        if self.epsilon <= 0:
            raise ConfigError('epsilon must be positive')


def optimizer_step(store, grads, cfg):
    """Apply one update and return the new store.

    Parameters absent from ``grads`` are treated as having zero gradient.
    """
    unknown = set(grads) - set(store.params)
    if unknown:
        raise ShapeError(f'gradients for unknown parameters: {sorted(unknown)}')
    full = {}
    for name, value in store.params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != value.shape:
            raise ShapeError(f'{name}: gradient shape {grad.shape} != parameter {value.shape}')
        full[name] = grad

    lr = cfg.learning_rate
    if cfg.kind == 'sgd':
        params = {name: value - lr * full[name] for name, value in store.params.items()}
        return replace(store, params=params, step=store.step + 1)

    t = store.step + 1
    first = store.first_moment or {}
    second = store.second_moment or {}
    params, new_first, new_second = {}, {}, {}
    for name, value in store.params.items():
        g = full[name]
        m = cfg.beta1 * first.get(name, np.zeros_like(value)) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * second.get(name, np.zeros_like(value)) + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        params[name] = value - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        new_first[name] = m
        new_second[name] = v
    return replace(store, params=params, step=t,
                   first_moment=new_first, second_moment=new_second)


# Verification


def finite_difference_grad(f, x, h=1e-5, indices=None):
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``indices`` restricts the estimate to some flat coordinates; the others
    are left at zero.
    """
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    coords = range(x.size) if indices is None else indices
    for i in coords:
        original = flat[i]
        flat[i] = original + h
        upper = float(f(x))
        flat[i] = original - h
        lower = float(f(x))
        flat[i] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteError(f'non-finite function value at coordinate {i}')
        grad.reshape(-1)[i] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=DTYPE)
    numeric = np.asarray(numeric, dtype=DTYPE)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)
