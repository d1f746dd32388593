"""Next-response probability head and masked cross-entropy objective."""

from __future__ import annotations

import torch
from torch import nn

PROB_CLAMP = 1e-7


class PredictionHead(nn.Module):
    """sigmoid(W2 . relu(W1 . [state, e_q] + b1) + b2), hidden width d."""

    def __init__(self, d, dtype=torch.float64):
        super().__init__()
        self.fc1 = nn.Linear(2 * d, d, dtype=dtype)
        self.fc2 = nn.Linear(d, 1, dtype=dtype)

    def forward(self, states, e_q):
        z = torch.cat([states, e_q], dim=-1)
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(z)))).squeeze(-1)


def masked_bce(predictions, targets, mask):
    """Mean binary cross-entropy over mask-valid steps.

    Probabilities are clamped to [1e-7, 1-1e-7] inside the loss only.
    """
    valid = mask.to(predictions.dtype)
    n = valid.sum()
    if n.item() == 0:
        raise ValueError("masked_bce: no valid steps")
    p = predictions.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = targets.to(predictions.dtype)
    ll = y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)
    return -(ll * valid).sum() / n


def sequence_bce(predictions, targets, mask):
    """Training objective: step 1 of every window is excluded (no history)."""
    return masked_bce(predictions[..., 1:], targets[..., 1:], mask[..., 1:])
