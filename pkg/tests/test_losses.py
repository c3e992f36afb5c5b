import math

import numpy as np
import pytest

from framework import diffmath as dm
from framework.errors import RangeError, ShapeError
from models.config import LossConfig
from services.losses import (
    LossTerm,
    block_guided_loss,
    combine_losses,
    graph_block_guided_loss,
    multi_hot_arrival,
    one_hot,
    pooled_mean,
    total_loss,
)


def test_one_hot():
    assert one_hot(2, 4).tolist() == [0, 1, 0, 0]
    assert one_hot(1, 1).tolist() == [1]
    assert one_hot(4, 4).tolist() == [0, 0, 0, 1]
    with pytest.raises(RangeError):
        one_hot(5, 4)


def test_multi_hot_arrival():
    assert multi_hot_arrival(2, 4).tolist() == [0, 1, 1, 1]
    assert multi_hot_arrival(1, 3).tolist() == [1, 1, 1]
    assert multi_hot_arrival(3, 3).tolist() == [0, 0, 1]
    assert multi_hot_arrival([1, 2], 2).tolist() == [[1, 1], [0, 1]]
    with pytest.raises(RangeError):
        multi_hot_arrival(0, 3)


def test_block_guided_loss_closed_forms():
    assert block_guided_loss([0.0, 0.0], 1).item() == pytest.approx(math.log(2.0))
    assert block_guided_loss([0.0, 60.0, 0.0], 2).item() == pytest.approx(0.0, abs=1e-12)
    assert block_guided_loss([3.7], 1).item() == 0.0


def test_block_guided_loss_averages_rows():
    raw = np.array([[0.0, 0.0], [0.0, 0.0]])
    assert block_guided_loss(raw, [1, 2]).item() == pytest.approx(math.log(2.0))


def test_graph_block_guided_loss_closed_forms():
    assert graph_block_guided_loss([0.5, 0.5], 2).item() == pytest.approx(math.log(2.0))
    exact = [dm.EPS, 1.0 - dm.EPS, 1.0 - dm.EPS]
    assert graph_block_guided_loss(exact, 2).item() == pytest.approx(0.0, abs=1e-9)
    assert graph_block_guided_loss([1.0 - dm.EPS], 1).item() == pytest.approx(0.0, abs=1e-9)


def test_graph_block_guided_loss_needs_one_row_per_node():
    with pytest.raises(ShapeError):
        graph_block_guided_loss(np.full((2, 3), 0.5), [1, 2, 3])


def test_total_loss_arithmetic():
    cfg = LossConfig(gamma=1.0, delta=5.0)
    assert total_loss(1.0, [0.5], [0.2], cfg).item() == pytest.approx(2.5)
    assert total_loss(0.0, [0.0], [0.0], cfg).item() == 0.0


def test_zero_weights_reduce_to_classification():
    cls = dm.tensor(0.7)
    out = combine_losses(cls, [dm.tensor(9.0)], [dm.tensor(4.0)], LossConfig(gamma=0.0, delta=0.0))
    assert out.total is cls
    assert (out.bl, out.gbl) == (0.0, 0.0)


def test_terms_pool_by_count():
    pooled = pooled_mean([LossTerm(dm.tensor(1.0), 3), LossTerm(dm.tensor(3.0), 1), LossTerm(dm.tensor(50.0), 0)])
    assert pooled.item() == pytest.approx(1.5)
    assert pooled_mean([]) is None


def test_loss_gradient_reaches_gate_logits():
    raw = dm.parameter([[0.0, 0.0]])
    dm.backward(block_guided_loss(raw, 1))
    assert np.allclose(raw.grad, [[-0.5, 0.5]])
