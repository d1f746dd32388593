"""Sequence instance normalization never looks at the future.

Two feature sequences that agree on their first t steps produce bitwise
identical normalized outputs there, no matter what happens later: the
running statistics at step t cover only the learnable padding vector and
steps 1..t. Ordinary instance norm would leak the whole sequence into
every step.
"""

import torch

from crosskt.seqin import SequenceInstanceNorm

torch.manual_seed(0)
norm = SequenceInstanceNorm(4)
with torch.no_grad():
    norm.p.uniform_(-1, 1)

T, t = 12, 5
a = torch.randn(T, 4, dtype=torch.float64)
b = a.clone()
b[t:] = torch.randn(T - t, 4, dtype=torch.float64)

out_a, out_b = norm(a), norm(b)
print(f"prefix outputs bitwise identical: {torch.equal(out_a[:t], out_b[:t])}")
print(f"suffix outputs diverge:           {not torch.allclose(out_a[t:], out_b[t:])}")

# compare with a full-sequence (leaky) normalization of the same data
mu = a.mean(dim=0)
sigma = a.std(dim=0, unbiased=False)
leaky = (a - mu) / (sigma + 1e-5)
mu_b = b.mean(dim=0)
leaky_b = (b - mu_b) / (b.std(dim=0, unbiased=False) + 1e-5)
print(f"full-sequence norm leaks the future into the prefix: "
      f"{not torch.allclose(leaky[:t], leaky_b[:t])}")

# shifting data and padding vector together changes nothing
shift = torch.tensor([3.0, -2.0, 0.5, 10.0], dtype=torch.float64)
shifted = SequenceInstanceNorm(4)
with torch.no_grad():
    shifted.p.copy_(norm.p + shift)
    shifted.gamma.copy_(norm.gamma)
    shifted.beta.copy_(norm.beta)
print(f"shift invariance: {torch.allclose(shifted(a + shift), out_a, atol=1e-12)}")
