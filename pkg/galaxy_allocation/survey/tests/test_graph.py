"""Test module for kNN topologies and graph-network blocks."""
import numpy as np
from django.test import SimpleTestCase

from galaxy_allocation.services.autodiff import Tape, kaiming_init
from galaxy_allocation.services.exceptions import ShapeError
from galaxy_allocation.services.graph import (
    GnBlockParams,
    GraphState,
    GraphTopology,
    build_knn_graph,
    gn_block,
    message_passing,
)
from galaxy_allocation.services.rng import substream


def brute_force_neighbors(positions, k):
    """Reference kNN by sorting every pairwise distance."""
    n = len(positions)
    sets = {}
    for i in range(n):
        others = [(float(np.sum((positions[i] - positions[j]) ** 2)), j) for j in range(n) if j != i]
        others.sort()
        sets[i] = {j for _, j in others[:min(k, n - 1)]}
    return sets


def zero_params(block):
    params = {}
    for prefix, spec in block.mlps().items():
        for name, shape in spec.parameter_shapes(prefix).items():
            params[name] = np.zeros(shape)
    return params


class KnnGraphTests(SimpleTestCase):
    """Nearest-neighbour topology over sky positions."""

    def test_points_on_a_line(self):
        """x = 0, 1, 3 with k=1: 1->0, 0->1 and 1->2."""
        topology = build_knn_graph(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]), 1)
        edges = set(zip(topology.senders.tolist(), topology.receivers.tolist()))
        self.assertEqual(edges, {(1, 0), (0, 1), (1, 2)})

    def test_saturated_k_gives_complete_graph(self):
        topology = build_knn_graph(substream(0, 'pts').uniform(size=(5, 2)), 10)
        self.assertEqual(topology.num_edges, 5 * 4)
        for receiver, senders in topology.neighbor_sets().items():
            self.assertEqual(senders, set(range(5)) - {receiver})

    def test_matches_brute_force(self):
        """Random clouds up to 200 points agree with the exhaustive oracle."""
        for index, (n, k) in enumerate([(50, 8), (2, 8), (17, 3), (200, 8)]):
            positions = substream(11, 'knn', index).uniform(size=(n, 2))
            topology = build_knn_graph(positions, k)
            self.assertEqual(topology.neighbor_sets(), brute_force_neighbors(positions, k))

    def test_every_node_has_k_incoming_edges(self):
        topology = build_knn_graph(substream(2, 'pts').uniform(size=(30, 2)), 8)
        np.testing.assert_array_equal(np.bincount(topology.receivers), np.full(30, 8))

    def test_invalid_inputs(self):
        with self.assertRaises(ShapeError):
            build_knn_graph(np.zeros((1, 2)), 3)
        with self.assertRaises(ShapeError):
            build_knn_graph(np.zeros((4, 3)), 3)
        with self.assertRaises(ShapeError):
            GraphTopology(3, [0], [0])


class GnBlockTests(SimpleTestCase):
    """Edge, node and global updates."""

    def setUp(self):
        """Build a small block and a random graph state."""
        self.block = GnBlockParams('gn', 4, 3, 2, hidden_layers=1, hidden_width=6)
        rng = substream(5, 'gn')
        self.topology = build_knn_graph(rng.uniform(size=(8, 2)), 3)
        self.tape = Tape()
        self.state = GraphState(
            self.tape.constant(rng.normal(size=(8, 4))),
            self.tape.constant(rng.normal(size=(self.topology.num_edges, 3))),
            self.tape.constant(rng.normal(size=2)),
        )
        self.params = {}
        for prefix, spec in self.block.mlps().items():
            self.params.update(kaiming_init(spec, rng, prefix))

    def test_zero_block_gives_zero_state(self):
        out = gn_block(self.state, self.topology, self.block, zero_params(self.block), self.tape)
        self.assertFalse(np.any(out.nodes.data))
        self.assertFalse(np.any(out.edges.data))
        self.assertFalse(np.any(out.globals.data))

    def test_output_shapes(self):
        out = gn_block(self.state, self.topology, self.block, self.params, self.tape)
        self.assertEqual(out.nodes.shape, (8, 4))
        self.assertEqual(out.edges.shape, (self.topology.num_edges, 3))
        self.assertEqual(out.globals.shape, (2,))

    def test_isolated_node_sees_empty_sum(self):
        """A single node with no edges aggregates the zero vector."""
        empty = np.zeros(0, dtype=np.intp)
        topology = GraphTopology(1, empty, empty)
        state = GraphState(self.tape.constant(np.ones((1, 4))), self.tape.constant(np.zeros((0, 3))),
                           self.tape.constant(np.zeros(2)))
        out = gn_block(state, topology, self.block, self.params, self.tape)
        self.assertEqual(out.edges.shape, (0, 3))
        self.assertEqual(out.nodes.shape, (1, 4))

    def test_permutation_equivariance(self):
        """Relabelling nodes permutes node outputs and leaves the global unchanged."""
        permutation = substream(5, 'perm').permutation(8)
        out = gn_block(self.state, self.topology, self.block, self.params, self.tape)

        topology = self.topology.relabel(permutation)
        state = GraphState(self.tape.constant(self.state.nodes.data[permutation]),
                           self.state.edges, self.state.globals)
        moved = gn_block(state, topology, self.block, self.params, self.tape)
        np.testing.assert_allclose(moved.nodes.data, out.nodes.data[permutation], atol=1e-9)
        np.testing.assert_allclose(moved.edges.data, out.edges.data, atol=1e-9)
        np.testing.assert_allclose(moved.globals.data, out.globals.data, atol=1e-9)

    def test_three_zero_blocks(self):
        blocks = [GnBlockParams(f'gn{i}', 4, 3, 2, 1, 6) for i in range(3)]
        params = {}
        for block in blocks:
            params.update(zero_params(block))
        out = message_passing(self.state, self.topology, blocks, params, self.tape)
        self.assertFalse(np.any(out.nodes.data))

    def test_shared_prefixes_rejected(self):
        with self.assertRaises(ShapeError):
            message_passing(self.state, self.topology, [self.block] * 3, self.params, self.tape)
