"""How relation-aware attention re-weights a student's history.

Pairs of steps get a relevance score in {0,1,2}: 2 for the same question,
1 for distinct questions sharing a concept, 0 otherwise. Post-softmax
attention weights are multiplied by learned factors a < b < c keyed by that
score and renormalized, so more related history gets more say.
"""

import numpy as np
import torch

from crosskt.encoders import RAAttentionLayer, RelevanceParams, relevance_matrix

# a tiny domain: 4 questions, 3 concepts
q_matrix = np.array([
    [1, 1, 0, 0],   # concept 0 tags questions 0 and 1
    [0, 1, 1, 0],   # concept 1 tags questions 1 and 2
    [0, 0, 0, 1],   # concept 2 tags question 3 only
], dtype=np.int8)

history = [0, 1, 3, 0]
R = relevance_matrix(history, q_matrix)
print("relevance matrix R(i,j) for question history", history)
print(R)

relevance = RelevanceParams()
a, b, c = (v.item() for v in relevance.values())
print(f"initial relevance weights: a={a:.3f} < b={b:.3f} < c={c:.3f}")

# equal attention scores isolate the relevance effect: zero the query map
torch.manual_seed(0)
layer = RAAttentionLayer(4, n_heads=1)
with torch.no_grad():
    layer.w_q.weight.zero_()

lam = (torch.as_tensor(a) * (torch.as_tensor(R) == 0)
       + torch.as_tensor(b) * (torch.as_tensor(R) == 1)
       + torch.as_tensor(c) * (torch.as_tensor(R) == 2))
lam = lam.to(torch.float64).unsqueeze(0).unsqueeze(0)

collected = []
layer(torch.randn(1, 4, 4, dtype=torch.float64),
      torch.randn(1, 4, 4, dtype=torch.float64), lam, collect=collected)
weights = collected[0][0, 0]
print("adjusted attention weights onto the final step (history scores equal):")
for i in range(3):
    print(f"  step {i} (q{history[i]}, R={R[i, 3]}): {weights[i, 3]:.3f}")
print("same-question history dominates; unrelated history is discounted.")
