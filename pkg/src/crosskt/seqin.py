"""Sequence instance normalization: causal per-sequence feature whitening.

Each step t is normalized with the mean and population standard deviation of
the multiset {p, m_1, ..., m_t}, where p is a learnable padding vector
prepended so the first step has defined statistics. Later steps never
influence earlier outputs.
"""

from __future__ import annotations

import torch
from torch import nn

# Variance floor: keeps sqrt differentiable when all seen vectors coincide;
# far below eps**2 so values are unaffected.
_VAR_FLOOR = 1e-30


class SequenceInstanceNorm(nn.Module):

    def __init__(self, dim, eps=1e-5, dtype=torch.float64):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(dim, dtype=dtype))
        self.beta = nn.Parameter(torch.zeros(dim, dtype=dtype))
        self.p = nn.Parameter(torch.zeros(dim, dtype=dtype))

    def forward(self, m, mask=None):
        """Normalize [..., T, d] causally; masked steps pass through zeros.

        Running sums make this O(T*d); no per-step rescan of the history.
        """
        if m.shape[-2] == 0:
            raise ValueError("cannot normalize an empty sequence")
        T = m.shape[-2]
        counts = torch.arange(2, T + 2, dtype=m.dtype, device=m.device)
        counts = counts.view(*([1] * (m.dim() - 2)), T, 1)
        sum1 = torch.cumsum(m, dim=-2) + self.p
        sum2 = torch.cumsum(m * m, dim=-2) + self.p * self.p
        mean = sum1 / counts
        var = sum2 / counts - mean * mean
        sigma = torch.clamp(var, min=_VAR_FLOOR).sqrt()
        out = self.gamma * ((m - mean) / (sigma + self.eps)) + self.beta
        if mask is not None:
            out = out * mask.to(out.dtype).unsqueeze(-1)
        return out
