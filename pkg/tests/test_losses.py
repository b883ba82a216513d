import pytest
import numpy as np

from src.autocf.exceptions import ConfigError
from src.autocf.model.losses import (compose, rec_loss, recon_loss, squared_norm,
                                     uniformity_loss)
from src.autocf.tensor import Tape, Tensor
from tests.test_tensor import numeric_gradient


def uniformity_oracle(h: np.ndarray, batch_users, batch_items, users, items,
                      temperature: float = 1.0) -> float:
    def term(anchors, others):
        rows = [np.log(sum(np.exp(h[a] @ h[o] / temperature) for o in others)) for a in anchors]
        return float(np.mean(rows))
    return term(batch_users, items) + term(batch_users, users) + term(batch_items, items)


class TestDotProductLosses:
    """Test suite for the reconstruction and recommendation terms."""

    def test_recon_single_edge(self):
        h = Tensor([[1.0, 0.0], [1.0, 0.0]])
        assert recon_loss(h, np.array([[0, 0]]), 1).item() == pytest.approx(-1.0)

    def test_recon_nothing_masked(self, rng):
        h = Tensor(rng.normal(size=(4, 2)))
        assert recon_loss(h, np.empty((0, 2), dtype=np.int64), 2).item() == 0.0

    def test_recon_matches_mean(self, rng):
        h = rng.normal(size=(9, 3))
        edges = np.array([[0, 0], [0, 2], [1, 4], [3, 1], [2, 2]])
        expected = -np.mean([h[u] @ h[4 + i] for u, i in edges])
        assert recon_loss(Tensor(h), edges, 4).item() == pytest.approx(expected, abs=1e-12)

    def test_rec_single_edge(self):
        h = Tensor([[1.0, 2.0], [2.0, 2.0]])
        assert rec_loss(h, np.array([[0, 0]]), 1).item() == pytest.approx(-6.0)

    def test_rec_empty_batch(self):
        with pytest.raises(ConfigError):
            rec_loss(Tensor(np.ones((2, 2))), np.empty((0, 2)), 1)


class TestUniformityLoss:
    """Test suite for the batch-anchored uniformity term."""

    USERS = np.arange(4)
    ITEMS = np.arange(4, 9)

    def test_matches_loop_oracle(self, rng):
        h = rng.normal(size=(9, 3))
        batch_users, batch_items = [0, 2], [5, 7]
        value = uniformity_loss(Tensor(h), batch_users, batch_items, self.USERS, self.ITEMS).item()
        expected = uniformity_oracle(h, batch_users, batch_items, self.USERS, self.ITEMS)
        assert value == pytest.approx(expected, abs=1e-10)

    def test_temperature(self, rng):
        h = rng.normal(size=(9, 3))
        value = uniformity_loss(Tensor(h), [1], [4, 8], self.USERS, self.ITEMS,
                                temperature=0.5).item()
        expected = uniformity_oracle(h, [1], [4, 8], self.USERS, self.ITEMS, temperature=0.5)
        assert value == pytest.approx(expected, abs=1e-10)

    def test_zero_embeddings(self):
        value = uniformity_loss(Tensor(np.zeros((9, 2))), [0], [4], self.USERS, self.ITEMS).item()
        assert value == pytest.approx(2 * np.log(5.0) + np.log(4.0))

    def test_gradient(self, rng):
        h = Tensor(rng.normal(size=(9, 3)), requires_grad=True)

        def loss_fn():
            return uniformity_loss(h, [0, 3], [6], self.USERS, self.ITEMS)

        with Tape() as tape:
            loss = loss_fn()
        tape.backward(loss, [h])
        assert np.allclose(h.grad, numeric_gradient(loss_fn, h), rtol=1e-6, atol=1e-7)

    def test_invalid_arguments(self):
        h = Tensor(np.ones((9, 2)))
        with pytest.raises(ConfigError):
            uniformity_loss(h, [], [4], self.USERS, self.ITEMS)
        with pytest.raises(ConfigError):
            uniformity_loss(h, [0], [4], self.USERS, self.ITEMS, temperature=0.0)


class TestCompose:
    """Test suite for joint loss assembly."""

    def test_squared_norm(self):
        assert squared_norm([Tensor([[1.0, 2.0]]), Tensor([3.0])]).item() == pytest.approx(14.0)
        assert squared_norm([]).item() == 0.0

    def test_total_and_breakdown(self):
        terms = [Tensor(v) for v in (-2.0, -0.5, 3.0, -1.25, 40.0)]
        total, breakdown = compose(*terms, lambda1=0.3, lambda2=1e-3)
        expected = -2.0 + 0.3 * (3.0 - 1.25 - 0.5) + 1e-3 * 40.0
        assert total.item() == pytest.approx(expected)
        assert abs(breakdown.recompose() - breakdown.total) < 1e-10
        assert breakdown.recon == -0.5
        assert set(breakdown.to_record()) == {'rec', 'recon', 'uniformity', 'infomax',
                                              'weight_decay', 'total'}

    def test_zero_weights(self):
        terms = [Tensor(v) for v in (-2.0, 5.0, 5.0, 5.0, 5.0)]
        total, breakdown = compose(*terms, lambda1=0.0, lambda2=0.0)
        assert total.item() == pytest.approx(-2.0)
        assert breakdown.recompose() == pytest.approx(-2.0)
