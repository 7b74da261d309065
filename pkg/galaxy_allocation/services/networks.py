"""Allocation network (GNN1) and inference network (GNN2).

Both networks share one layout: a node encoder on ``(d, log m)``, an edge
encoder on the relative sky position of the two endpoints, three
graph-network blocks and a decoder. GNN1 decodes every node into an observing
time; GNN2 decodes the global vector into an estimate of phi. Their
parameters live under the disjoint prefixes ``gnn1.`` and ``gnn2.``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MlpSpec, ParameterStore, Tape, kaiming_init, mlp_forward
from .exceptions import CheckpointError, ConfigError, ShapeError
from .graph import BLOCK_COUNT, GnBlockParams, GraphState, GraphTopology, build_knn_graph, message_passing
from .rng import substream

logger = logging.getLogger(__name__)

GNN1 = 'gnn1'
GNN2 = 'gnn2'
NODE_COLUMNS = [2, 3]
POSITION_COLUMNS = [0, 1]


@dataclass(frozen=True)
class GnnHyperparams:
    """Latent sizes, MLP shape, neighbour count and allocation range."""

    n_v: int = 64
    n_e: int = 64
    n_u: int = 64
    k: int = 8
    hidden_layers: int = 2
    hidden_width: int = 128
    r_low: float = 0.0
    r_high: float = 60.0
    append_allocation: bool = False

    def __post_init__(self):
        if min(self.n_v, self.n_e, self.n_u, self.k) < 1:
            raise ConfigError('latent sizes and k must be >= 1')
        if not 0.0 <= self.r_low < self.r_high:
            raise ConfigError(f'allocation range must satisfy 0 <= low < high, got '
                              f'({self.r_low}, {self.r_high})')

    @property
    def in_searched_range(self):
        return (all(10 <= size <= 1000 for size in (self.n_v, self.n_e, self.n_u))
                and 2 <= self.hidden_layers <= 5 and 10 <= self.hidden_width <= 1000)

    def mlp(self, input_dim, output_dim):
        return MlpSpec(input_dim, output_dim, self.hidden_layers, self.hidden_width)

    def blocks(self, network):
        return [
            GnBlockParams(f'{network}.block{i}', self.n_v, self.n_e, self.n_u,
                          self.hidden_layers, self.hidden_width)
            for i in range(BLOCK_COUNT)
        ]

    def network_mlps(self, network):
        """Every MLP of ``network`` keyed by its parameter prefix."""
        node_inputs = len(NODE_COLUMNS)
        if network == GNN2 and self.append_allocation:
            node_inputs += 1
        mlps = {
            f'{network}.node_enc': self.mlp(node_inputs, self.n_v),
            f'{network}.edge_enc': self.mlp(len(POSITION_COLUMNS), self.n_e),
        }
        for block in self.blocks(network):
            mlps.update(block.mlps())
        if network == GNN1:
            mlps[f'{network}.node_dec'] = self.mlp(self.n_v, 1)
        else:
            mlps[f'{network}.global_dec'] = self.mlp(self.n_u, 1)
        return mlps

    def parameter_shapes(self):
        shapes = {}
        for network in (GNN1, GNN2):
            for prefix, spec in self.network_mlps(network).items():
                shapes.update(spec.parameter_shapes(prefix))
        return shapes

    def as_dict(self):
        return asdict(self)


def init_parameters(hyper, seed):
    """Kaiming-initialise both networks from independent substreams."""
    arrays = {}
    for index, network in enumerate((GNN1, GNN2)):
        rng = substream(seed, 'init', index)
        for prefix, spec in hyper.network_mlps(network).items():
            arrays.update(kaiming_init(spec, rng, prefix))
    return ParameterStore(arrays)


def check_compatible(store, hyper):
    """Raise ``CheckpointError`` unless ``store`` has exactly the expected shapes."""
    expected = hyper.parameter_shapes()
    actual = {name: tuple(value.shape) for name, value in store.params.items()}
    if expected != actual:
        missing = sorted(set(expected) - set(actual))
        extra = sorted(set(actual) - set(expected))
        reshaped = sorted(name for name in set(expected) & set(actual)
                          if expected[name] != actual[name])
        raise CheckpointError(
            f'checkpoint does not match model hyperparameters '
            f'(missing={missing[:3]}, unexpected={extra[:3]}, reshaped={reshaped[:3]})')


def constant_parameters(store, tape):
    """Parameters as untracked values, for inference without gradients."""
    return {name: tape.constant(value) for name, value in store.params.items()}


def knn_topology(positions, k):
    if len(positions) < 2:
        empty = np.zeros(0, dtype=np.intp)
        return GraphTopology(len(positions), empty, empty)
    return build_knn_graph(positions, k)


def _encode(features, positions, hyper, params, network, tape, extra=None):
    if features.shape[0] == 0:
        raise ShapeError(f'{network}: field is empty')
    topology = knn_topology(positions, hyper.k)
    node_inputs = ad.take_columns(features, NODE_COLUMNS)
    if extra is not None:
        node_inputs = ad.concat([node_inputs, ad.reshape(extra, (-1, 1))], axis=1)
    relative = positions[topology.senders] - positions[topology.receivers]
    nodes = mlp_forward(node_inputs, params, hyper.mlp(node_inputs.shape[1], hyper.n_v),
                        f'{network}.node_enc', tape)
    edges = mlp_forward(relative.reshape(-1, 2), params,
                        hyper.mlp(len(POSITION_COLUMNS), hyper.n_e),
                        f'{network}.edge_enc', tape)
    globals_ = tape.constant(np.zeros(hyper.n_u))
    return GraphState(nodes, edges, globals_), topology


def _as_tensor(features, tape):
    if isinstance(features, ad.Tensor):
        return features
    return tape.constant(features)


def gnn1_forward(features, hyper, params, tape):
    """Allocate observing time to every galaxy of a prior-state field.

    Args:
        features: ``(N, 4)`` noisy prior features ``v'``.
        hyper: network hyperparameters.
        params: parameter tensors by name.
        tape: tape recording the computation.

    Returns:
        Tensor of shape ``(N,)`` with minutes in ``(r_low, r_high)``.
    """
    features = _as_tensor(features, tape)
    positions = features.data[:, POSITION_COLUMNS]
    state, topology = _encode(features, positions, hyper, params, GNN1, tape)
    state = message_passing(state, topology, hyper.blocks(GNN1), params, tape)
    raw = mlp_forward(state.nodes, params, hyper.mlp(hyper.n_v, 1), f'{GNN1}.node_dec', tape)
    squashed = ad.sigmoid(ad.reshape(raw, (-1,)))
    return hyper.r_low + (hyper.r_high - hyper.r_low) * squashed


def gnn2_forward(features, hyper, params, tape, allocations=None):
    """Estimate phi from a posterior-state field; returns a scalar Tensor.

    ``allocations`` is appended as a node feature only when
    ``hyper.append_allocation`` is set.
    """
    features = _as_tensor(features, tape)
    positions = features.data[:, POSITION_COLUMNS]
    extra = None
    if hyper.append_allocation:
        if allocations is None:
            raise ShapeError('gnn2 expects allocations when append_allocation is set')
        extra = allocations if isinstance(allocations, ad.Tensor) else tape.constant(allocations)
    state, topology = _encode(features, positions, hyper, params, GNN2, tape, extra)
    state = message_passing(state, topology, hyper.blocks(GNN2), params, tape)
    raw = mlp_forward(ad.reshape(state.globals, (1, -1)), params, hyper.mlp(hyper.n_u, 1),
                      f'{GNN2}.global_dec', tape)
    return ad.reshape(raw, ())


def allocate(store, hyper, prior_features):
    """Run GNN1 without recording gradients; returns an array of minutes."""
    tape = Tape()
    return gnn1_forward(prior_features, hyper, constant_parameters(store, tape), tape).numpy()


def predict_phi(store, hyper, posterior_features, allocations=None):
    """Run GNN2 without recording gradients; returns a float."""
    tape = Tape()
    params = constant_parameters(store, tape)
    return gnn2_forward(posterior_features, hyper, params, tape, allocations).item()
