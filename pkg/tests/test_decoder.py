import math

import numpy as np
import pytest
import torch

from crosskt.decoder import PredictionHead, masked_bce, sequence_bce
from fd import check_gradients


def test_zero_output_layer_gives_half():
    head = PredictionHead(4)
    with torch.no_grad():
        head.fc2.weight.zero_()
        head.fc2.bias.zero_()
    out = head(torch.randn(3, 4, dtype=torch.float64),
               torch.randn(3, 4, dtype=torch.float64))
    assert torch.all(out == 0.5)


def test_large_bias_saturates_toward_one():
    head = PredictionHead(4)
    with torch.no_grad():
        head.fc2.weight.zero_()
        head.fc2.bias.fill_(20.0)
    out = head(torch.randn(2, 4, dtype=torch.float64),
               torch.randn(2, 4, dtype=torch.float64))
    assert torch.all(out > 0.999999)


def test_matches_dense_math_oracle():
    torch.manual_seed(0)
    head = PredictionHead(3)
    states = torch.randn(5, 3, dtype=torch.float64)
    e_q = torch.randn(5, 3, dtype=torch.float64)
    out = head(states, e_q).detach().numpy()
    w1 = head.fc1.weight.detach().numpy()
    b1 = head.fc1.bias.detach().numpy()
    w2 = head.fc2.weight.detach().numpy()
    b2 = head.fc2.bias.detach().numpy()
    z = np.concatenate([states.numpy(), e_q.numpy()], axis=1)
    hidden = np.maximum(z @ w1.T + b1, 0.0)
    logits = hidden @ w2.T + b2
    expected = 1.0 / (1.0 + np.exp(-logits[:, 0]))
    assert np.allclose(out, expected, atol=1e-10)


def test_probabilities_strictly_inside_unit_interval():
    torch.manual_seed(1)
    head = PredictionHead(6)
    out = head(torch.randn(200, 6, dtype=torch.float64),
               torch.randn(200, 6, dtype=torch.float64))
    assert torch.all(out > 0.0) and torch.all(out < 1.0)


def test_perfect_confident_predictions():
    pred = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
    target = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
    mask = torch.ones(3, dtype=torch.float64)
    assert masked_bce(pred, target, mask).item() < 1e-6


def test_uninformative_predictions_give_ln2():
    pred = torch.full((10,), 0.5, dtype=torch.float64)
    target = torch.randint(0, 2, (10,)).to(torch.float64)
    mask = torch.ones(10, dtype=torch.float64)
    assert masked_bce(pred, target, mask).item() == pytest.approx(
        math.log(2.0), abs=1e-9)


def test_hand_computed_case():
    pred = torch.tensor([0.9, 0.2], dtype=torch.float64)
    target = torch.tensor([1.0, 0.0], dtype=torch.float64)
    mask = torch.ones(2, dtype=torch.float64)
    expected = -(math.log(0.9) + math.log(0.8)) / 2.0
    assert masked_bce(pred, target, mask).item() == pytest.approx(expected,
                                                                  abs=1e-12)


def test_padding_never_changes_loss():
    torch.manual_seed(2)
    pred = torch.rand(2, 5, dtype=torch.float64)
    target = torch.randint(0, 2, (2, 5)).to(torch.float64)
    mask = torch.ones(2, 5, dtype=torch.float64)
    base = masked_bce(pred, target, mask).item()
    pred_pad = torch.cat([pred, torch.rand(2, 3, dtype=torch.float64)], dim=1)
    target_pad = torch.cat([target, torch.ones(2, 3, dtype=torch.float64)], dim=1)
    mask_pad = torch.cat([mask, torch.zeros(2, 3, dtype=torch.float64)], dim=1)
    assert masked_bce(pred_pad, target_pad, mask_pad).item() == base


def test_no_valid_steps_rejected():
    with pytest.raises(ValueError, match="no valid steps"):
        masked_bce(torch.tensor([0.5]), torch.tensor([1.0]),
                   torch.tensor([0.0]))


def test_sequence_bce_excludes_first_step():
    pred = torch.tensor([[0.123, 0.9, 0.8]], dtype=torch.float64)
    target = torch.tensor([[0.0, 1.0, 1.0]], dtype=torch.float64)
    mask = torch.ones(1, 3, dtype=torch.float64)
    expected = -(math.log(0.9) + math.log(0.8)) / 2.0
    assert sequence_bce(pred, target, mask).item() == pytest.approx(expected)
    # changing the first-step prediction is invisible to the objective
    pred2 = pred.clone()
    pred2[0, 0] = 0.999
    assert sequence_bce(pred2, target, mask).item() == pytest.approx(expected)


def test_loss_gradients_match_finite_differences():
    torch.manual_seed(3)
    head = PredictionHead(4)
    states = torch.randn(2, 4, dtype=torch.float64)
    e_q = torch.randn(2, 4, dtype=torch.float64)
    target = torch.tensor([1.0, 0.0], dtype=torch.float64)
    mask = torch.ones(2, dtype=torch.float64)

    def build_loss():
        return masked_bce(head(states, e_q), target, mask)

    params = [states, e_q] + list(head.parameters())
    assert check_gradients(build_loss, params) < 1e-4
