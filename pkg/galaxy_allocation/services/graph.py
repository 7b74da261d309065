"""kNN topology over galaxy positions and the graph-network block.

Edges point from a neighbour to the node that lists it, so each node
aggregates exactly ``k`` incoming messages. All aggregations are sums.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MlpSpec, mlp_forward
from .exceptions import ShapeError

logger = logging.getLogger(__name__)

BLOCK_COUNT = 3


@dataclass(frozen=True)
class GraphTopology:
    """Directed edge list ``senders[j] -> receivers[j]``."""

    num_nodes: int
    senders: np.ndarray
    receivers: np.ndarray

    def __post_init__(self):
        senders = np.asarray(self.senders, dtype=np.intp)
        receivers = np.asarray(self.receivers, dtype=np.intp)
        if senders.shape != receivers.shape or senders.ndim != 1:
            raise ShapeError('senders and receivers must be parallel 1-D arrays')
        if senders.size and (max(senders.max(), receivers.max()) >= self.num_nodes
                             or min(senders.min(), receivers.min()) < 0):
            raise ShapeError('edge index out of range')
        if np.any(senders == receivers):
            raise ShapeError('self-edges are not allowed')
        object.__setattr__(self, 'senders', senders)
        object.__setattr__(self, 'receivers', receivers)

    @property
    def num_edges(self):
        return int(self.senders.size)

    def neighbor_sets(self):
        """Return ``{receiver: set of senders}``."""
        sets = {i: set() for i in range(self.num_nodes)}
        for sender, receiver in zip(self.senders, self.receivers):
            sets[int(receiver)].add(int(sender))
        return sets

    def relabel(self, permutation):
        """Topology after moving old node ``permutation[i]`` to position ``i``."""
        inverse = np.empty_like(permutation)
        inverse[permutation] = np.arange(len(permutation))
        return GraphTopology(self.num_nodes, inverse[self.senders], inverse[self.receivers])


def build_knn_graph(positions, k):
    """Connect every node to its ``k`` nearest neighbours in the plane.

    Exhaustive O(N^2) scan; equal distances resolve to the lower index.
    ``k`` is clamped to ``N - 1``.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ShapeError(f'positions must be (N, 2), got {positions.shape}')
    n = positions.shape[0]
    if n < 2:
        raise ShapeError(f'a kNN graph needs at least 2 nodes, got {n}')
    if k < 1:
        raise ShapeError(f'k must be >= 1, got {k}')
    k = min(int(k), n - 1)

    delta = positions[:, None, :] - positions[None, :, :]
    dist2 = np.einsum('ijk,ijk->ij', delta, delta)
    np.fill_diagonal(dist2, np.inf)
    # stable sort keeps lower indices first among equal distances
    neighbors = np.argsort(dist2, axis=1, kind='stable')[:, :k]

    receivers = np.repeat(np.arange(n), k)
    senders = neighbors.reshape(-1)
    return GraphTopology(n, senders, receivers)


@dataclass
class GraphState:
    """Node, edge and global features of one graph."""

    nodes: ad.Tensor
    edges: ad.Tensor
    globals: ad.Tensor

    def check(self, topology):
        if self.nodes.shape[0] != topology.num_nodes:
            raise ShapeError(f'{self.nodes.shape[0]} node rows for {topology.num_nodes} nodes')
        if self.edges.shape[0] != topology.num_edges:
            raise ShapeError(f'{self.edges.shape[0]} edge rows for {topology.num_edges} edges')
        if self.globals.ndim != 1:
            raise ShapeError(f'global features must be a vector, got {self.globals.shape}')


@dataclass(frozen=True)
class GnBlockParams:
    """MLP shapes and parameter prefix of one graph-network block."""

    prefix: str
    n_v: int
    n_e: int
    n_u: int
    hidden_layers: int = 2
    hidden_width: int = 128

    def _mlp(self, input_dim, output_dim):
        return MlpSpec(input_dim, output_dim, self.hidden_layers, self.hidden_width)

    @property
    def edge_mlp(self):
        return self._mlp(2 * self.n_v + self.n_e + self.n_u, self.n_e)

    @property
    def node_mlp(self):
        return self._mlp(self.n_v + self.n_e + self.n_u, self.n_v)

    @property
    def global_mlp(self):
        return self._mlp(self.n_v + self.n_e + self.n_u, self.n_u)

    def mlps(self):
        return {
            f'{self.prefix}.edge': self.edge_mlp,
            f'{self.prefix}.node': self.node_mlp,
            f'{self.prefix}.global': self.global_mlp,
        }


def gn_block(state, topology, block, params, tape):
    """Run one edge -> node -> global update.

    Args:
        state: current features.
        topology: graph edges.
        block: shapes and parameter prefix of this block.
        params: parameter tensors by name (from ``Tape.watch``).
        tape: tape recording the computation.

    Returns:
        The updated ``GraphState``.
    """
    state.check(topology)
    n, e = topology.num_nodes, topology.num_edges
    nodes, edges, globals_ = state.nodes, state.edges, state.globals
    if nodes.shape[1] != block.n_v or edges.shape[1] != block.n_e or globals_.shape[0] != block.n_u:
        raise ShapeError(
            f'{block.prefix}: features ({nodes.shape[1]}, {edges.shape[1]}, {globals_.shape[0]}) '
            f'do not match block sizes ({block.n_v}, {block.n_e}, {block.n_u})')

    edge_inputs = ad.concat([
        ad.gather_rows(nodes, topology.receivers),
        ad.gather_rows(nodes, topology.senders),
        edges,
        ad.broadcast_rows(globals_, e),
    ], axis=1)
    new_edges = mlp_forward(edge_inputs, params, block.edge_mlp, f'{block.prefix}.edge', tape)

    incoming = ad.segment_sum(new_edges, topology.receivers, n)
    node_inputs = ad.concat([nodes, incoming, ad.broadcast_rows(globals_, n)], axis=1)
    new_nodes = mlp_forward(node_inputs, params, block.node_mlp, f'{block.prefix}.node', tape)

    global_inputs = ad.concat([
        ad.sum_(new_nodes, axis=0),
        ad.sum_(new_edges, axis=0),
        globals_,
    ], axis=0)
    new_globals = mlp_forward(ad.reshape(global_inputs, (1, -1)), params,
                              block.global_mlp, f'{block.prefix}.global', tape)
    return GraphState(new_nodes, new_edges, ad.reshape(new_globals, (block.n_u,)))


def message_passing(state, topology, blocks, params, tape):
    """Apply the three blocks in order; no weights are shared between them."""
    if len(blocks) != BLOCK_COUNT:
        raise ShapeError(f'expected {BLOCK_COUNT} blocks, got {len(blocks)}')
    if len({block.prefix for block in blocks}) != len(blocks):
        raise ShapeError('message-passing blocks must have distinct parameters')
    for block in blocks:
        state = gn_block(state, topology, block, params, tape)
    return state
