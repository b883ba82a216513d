import pytest
import numpy as np
import pandas as pd

from src.autocf.data.graph import InteractionGraph, k_hop_neighborhood
from src.autocf.exceptions import CapacityError, ConfigError, NodeIndexError
from src.autocf.model.decoder import sample_attention_graph
from src.autocf.model.mask import (RelatednessScores, gumbel_perturb, infomax_loss, mask_edges,
                                   random_mask, relatedness_scores, select_centric,
                                   write_relatedness_audit)
from src.autocf.tensor import Tape, Tensor, ops
from tests.conftest import random_graph

SIGMOID_ONE = 0.7310585786300049


def relatedness_oracle(graph: InteractionGraph, ego: np.ndarray, k: int,
                       readout: str = 'mean') -> np.ndarray:
    """Double loop over every (v, v') pair of each neighborhood."""
    scores = []
    for v in range(graph.num_nodes):
        others = sorted(k_hop_neighborhood(graph, v, k).members - {v})
        cosines = [ego[v] @ ego[w] / (np.linalg.norm(ego[v]) * np.linalg.norm(ego[w]))
                   for w in others]
        pooled = 0.0
        if cosines:
            pooled = float(np.mean(cosines)) if readout == 'mean' else float(np.sum(cosines))
        scores.append(1.0 / (1.0 + np.exp(-pooled)))
    return np.array(scores)


def manual_scores(values) -> RelatednessScores:
    values = np.asarray(values, dtype=np.float64)
    return RelatednessScores(s=Tensor(values, requires_grad=True), readout=np.zeros(values.size),
                             k=1, nodes=np.arange(values.size),
                             eligible=np.ones(values.size, dtype=bool))


class TestRelatednessScores:
    """Test suite for subgraph relatedness scoring."""

    def test_identical_neighbors(self):
        graph = InteractionGraph(1, 1, [0], [0])
        scores = relatedness_scores(graph, Tensor([[1.0, 0.0], [1.0, 0.0]]), 1)
        assert np.allclose(scores.values, SIGMOID_ONE, atol=1e-12)

    def test_orthogonal_neighbors(self):
        graph = InteractionGraph(1, 1, [0], [0])
        scores = relatedness_scores(graph, Tensor([[1.0, 0.0], [0.0, 3.0]]), 1)
        assert np.allclose(scores.values, 0.5, atol=1e-12)

    @pytest.mark.parametrize('readout', ['mean', 'sum'])
    def test_matches_cosine_oracle(self, rng, readout):
        for k in (1, 2):
            graph = random_graph(rng, 4, 6, 0.35)
            ego = rng.normal(size=(graph.num_nodes, 4))
            scores = relatedness_scores(graph, Tensor(ego), k, readout=readout)
            assert np.allclose(scores.values, relatedness_oracle(graph, ego, k, readout),
                               rtol=0, atol=1e-10)
            assert np.all((scores.values > 0) & (scores.values < 1))

    def test_isolated_node_default(self):
        graph = InteractionGraph(2, 1, [0], [0])
        scores = relatedness_scores(graph, Tensor(np.ones((3, 2))), 2)
        assert scores.values[1] == pytest.approx(0.5)
        assert scores.eligible.tolist() == [True, False, True]

    def test_scale_invariance(self, toy, rng):
        ego = rng.normal(size=(toy.num_nodes, 8))
        plain = relatedness_scores(toy, Tensor(ego), 2).values
        scaled = relatedness_scores(toy, Tensor(ego * 37.5), 2).values
        assert np.allclose(plain, scaled, rtol=0, atol=1e-10)

    def test_subset_of_nodes(self, toy, rng):
        ego = Tensor(rng.normal(size=(toy.num_nodes, 4)))
        full = relatedness_scores(toy, ego, 1)
        subset = relatedness_scores(toy, ego, 1, nodes=[7, 2, 2])
        assert subset.nodes.tolist() == [2, 7]
        assert np.allclose(subset.values, full.values[[2, 7]])

    def test_invalid_arguments(self, toy):
        ego = Tensor(np.ones((toy.num_nodes, 2)))
        with pytest.raises(ConfigError):
            relatedness_scores(toy, ego, 0)
        with pytest.raises(NodeIndexError):
            relatedness_scores(toy, Tensor(np.ones((3, 2))), 1)

    @pytest.mark.parametrize('dim', [2, 8, 32])
    def test_cosine_lower_bound(self, rng, dim):
        """cos(v1, v') >= cos(v, v1) + cos(v, v') - 1 for unit vectors."""
        n = 100_000
        v, v1, w = (ops.normalize_rows(rng.normal(size=(n, dim)), 1e-12).values for _ in range(3))
        lhs = np.einsum('ij,ij->i', v1, w)
        rhs = np.einsum('ij,ij->i', v, v1) + np.einsum('ij,ij->i', v, w) - 1.0
        assert np.count_nonzero(lhs < rhs - 1e-9) == 0


class TestGumbelPerturb:
    """Test suite for Gumbel perturbation."""

    def test_noise_vanishes_at_inverse_e(self, mocker):
        scores = manual_scores([0.2, 0.5, 0.9])
        rng = mocker.Mock()
        rng.uniform.return_value = np.full(3, np.exp(-1.0))
        perturbed = gumbel_perturb(scores, rng)
        assert np.allclose(perturbed, np.log([0.2, 0.5, 0.9]), atol=1e-12)
        rng.uniform.assert_called_once_with(1e-10, 1.0 - 1e-10, size=3)

    def test_saturated_score(self, mocker):
        rng = mocker.Mock()
        rng.uniform.return_value = np.full(1, np.exp(-1.0))
        assert gumbel_perturb(manual_scores([1.0]), rng)[0] == pytest.approx(0.0, abs=1e-9)

    def test_noise_mean(self):
        scores = manual_scores(np.full(1000, 0.5))
        noise = gumbel_perturb(scores, np.random.default_rng(0)) - np.log(0.5)
        assert abs(noise.mean() - 0.5772) < 0.1

    def test_ineligible_never_selected(self, rng):
        scores = manual_scores([0.9, 0.1])
        scores.eligible[0] = False
        perturbed = gumbel_perturb(scores, rng)
        assert perturbed[0] == -np.inf
        assert select_centric(perturbed, 2).tolist() == [1]

    def test_deterministic_under_seed(self):
        scores = manual_scores(np.linspace(0.1, 0.9, 20))
        first = gumbel_perturb(scores, np.random.default_rng(4))
        second = gumbel_perturb(scores, np.random.default_rng(4))
        assert np.array_equal(first, second)

    def test_preserves_ranking_in_expectation(self):
        scores = manual_scores([0.2, 0.5, 0.8])
        rng = np.random.default_rng(2024)
        wins = np.zeros(3, dtype=int)
        for _ in range(10_000):
            wins[select_centric(gumbel_perturb(scores, rng), 1)[0]] += 1
        assert wins[2] > wins[1] > wins[0]


class TestSelectCentric:
    """Test suite for top-S selection."""

    def test_argmax(self):
        assert select_centric([0.1, 0.9, 0.5], 1).tolist() == [1]

    def test_ties_prefer_smaller_ids(self):
        assert select_centric([0.3, 0.3, 0.3, 0.3], 2).tolist() == [0, 1]

    def test_all_nodes(self):
        assert sorted(select_centric([0.4, 0.1, 0.7], 3).tolist()) == [0, 1, 2]

    def test_node_ids(self):
        assert select_centric([0.1, 0.9], 1, nodes=[10, 20]).tolist() == [20]

    def test_invalid_count(self):
        with pytest.raises(ConfigError):
            select_centric([0.1, 0.2], 0)
        with pytest.raises(ConfigError):
            select_centric([0.1, 0.2], 3)


class TestMaskEdges:
    """Test suite for subgraph edge masking."""

    def test_star(self):
        graph = InteractionGraph(1, 2, [0, 0], [0, 1])
        plan = mask_edges(graph, [0], 1)
        assert plan.masked_edges.tolist() == [[0, 0], [0, 1]]
        assert plan.surviving_graph.num_edges == 0
        assert plan.subgraph_nodes.tolist() == [0, 1, 2]

    def test_no_centric_nodes(self, toy):
        plan = mask_edges(toy, [], 2)
        assert plan.num_masked == 0
        assert plan.surviving_graph.edges == toy.edges

    def test_matches_membership_oracle(self, rng):
        graph = random_graph(rng, 20, 30, 0.1)
        centric = rng.choice(graph.num_nodes, size=3, replace=False)
        plan = mask_edges(graph, centric, 2)
        neighborhoods = [k_hop_neighborhood(graph, int(c), 2).members for c in centric]
        users, items = graph.edge_nodes
        expected = [any(u in members and i in members for members in neighborhoods)
                    for u, i in zip(users.tolist(), items.tolist())]
        assert plan.masked.tolist() == expected

    def test_partition(self, rng):
        """Masked and surviving edges split E over many randomized plans, and every
        attention graph drawn from a plan samples exactly |E'| pairs."""
        for trial in range(1000):
            graph = random_graph(rng, int(rng.integers(2, 13)), int(rng.integers(2, 13)),
                                 float(rng.uniform(0.1, 0.6)))
            if trial % 4 == 3:
                plan = random_mask(graph, int(rng.integers(0, graph.num_edges + 1)), rng)
            else:
                size = int(rng.integers(0, 5))
                centric = rng.choice(graph.num_nodes, size=size, replace=False)
                plan = mask_edges(graph, centric, int(rng.integers(1, 4)))
            masked = set(map(tuple, plan.masked_edges.tolist()))
            surviving = set(plan.surviving_graph.edges)
            assert not masked & surviving
            assert masked | surviving == set(graph.edges)
            assert len(masked) + len(surviving) == graph.num_edges

            ag = sample_attention_graph(plan, float(rng.uniform(0.5, 1.0)), rng)
            assert len(ag.sampled) == plan.surviving_graph.num_edges

    def test_monotone(self, rng):
        graph = random_graph(rng, 15, 15, 0.2)
        centric = rng.choice(graph.num_nodes, size=5, replace=False)
        smaller = mask_edges(graph, centric[:2], 2).masked
        larger = mask_edges(graph, centric, 2).masked
        assert np.all(larger[smaller])

    def test_duplicate_centric_nodes(self, toy):
        with pytest.raises(ConfigError):
            mask_edges(toy, [1, 1], 1)


class TestRandomMask:
    """Test suite for random edge masking."""

    def test_count(self, toy, rng):
        plan = random_mask(toy, 5, rng)
        assert plan.num_masked == 5
        assert plan.surviving_graph.num_edges == toy.num_edges - 5
        assert plan.centric.size == 0

    def test_capacity(self, toy, rng):
        with pytest.raises(CapacityError):
            random_mask(toy, toy.num_edges + 1, rng)


class TestInfomaxLoss:
    """Test suite for the infomax term."""

    def test_two_half_scores(self):
        assert infomax_loss(manual_scores([0.5, 0.5]), [0, 1]).item() == pytest.approx(-1.0)

    def test_single_node(self):
        assert infomax_loss(manual_scores([SIGMOID_ONE]), [0]).item() == pytest.approx(-SIGMOID_ONE)

    def test_matches_oracle(self, rng):
        graph = random_graph(rng, 4, 6, 0.35)
        ego = rng.normal(size=(graph.num_nodes, 4))
        scores = relatedness_scores(graph, Tensor(ego), 1)
        expected = -relatedness_oracle(graph, ego, 1).sum()
        assert infomax_loss(scores, np.arange(graph.num_nodes)).item() == pytest.approx(expected, abs=1e-10)

    def test_gradient_reaches_ego(self, toy, rng):
        ego = Tensor(rng.normal(size=(toy.num_nodes, 4)), requires_grad=True)
        with Tape() as tape:
            loss = infomax_loss(relatedness_scores(toy, ego, 2), np.arange(toy.num_nodes))
        tape.backward(loss, [ego])
        assert np.any(ego.grad != 0)

    def test_empty_set(self):
        with pytest.raises(ConfigError):
            infomax_loss(manual_scores([0.5]), [])

    def test_unscored_node(self, toy, rng):
        scores = relatedness_scores(toy, Tensor(rng.normal(size=(toy.num_nodes, 2))), 1, nodes=[0, 1])
        with pytest.raises(NodeIndexError):
            infomax_loss(scores, [0, 5])


class TestRelatednessAudit:
    """Test suite for the relatedness audit file."""

    def test_written_columns(self, toy, rng, tmp_path):
        scores = relatedness_scores(toy, Tensor(rng.normal(size=(toy.num_nodes, 4))), 1)
        path = tmp_path / 'relatedness.tsv'
        write_relatedness_audit(scores, [3, 8], str(path))
        frame = pd.read_csv(path, sep='\t')
        assert list(frame.columns) == ['node', 'score', 'readout', 'eligible', 'centric']
        assert len(frame) == toy.num_nodes
        assert frame.loc[frame['centric'], 'node'].tolist() == [3, 8]
