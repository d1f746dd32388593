"""Knowledge-state encoders: recurrent, causal self-attention, relation-aware.

Every encoder returns per-step states aligned for prediction: the state at
step t may depend on questions up to t (attention variants) but on responses
only up to t-1. Attention scores are indexed [i, j] = (history, current) to
match the adjusted-weight formulation.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .embedding import uniform_embeddings
from .seqin import SequenceInstanceNorm

SEQIN_SITES = {"dkt": "dkt_h", "saint": "saint_o", "ra": "ra_x"}


def softplus_inverse(y):
    if y <= 0:
        raise ValueError("softplus inverse needs a positive value")
    return math.log(math.expm1(y))


class RelevanceParams(nn.Module):
    """Ordered relevance weights 0 < a < b < c.

    Parameterized by unconstrained reals through softplus gaps, so the
    ordering survives any optimizer step structurally.
    """

    def __init__(self, init=(0.5, 1.0, 1.5), dtype=torch.float64):
        super().__init__()
        a0, b0, c0 = init
        if not 0 < a0 < b0 < c0:
            raise ValueError("initial relevance weights must satisfy 0<a<b<c")
        self.u_a = nn.Parameter(torch.tensor(softplus_inverse(a0), dtype=dtype))
        self.u_b = nn.Parameter(torch.tensor(softplus_inverse(b0 - a0), dtype=dtype))
        self.u_c = nn.Parameter(torch.tensor(softplus_inverse(c0 - b0), dtype=dtype))

    def values(self):
        a = F.softplus(self.u_a)
        b = a + F.softplus(self.u_b)
        c = b + F.softplus(self.u_c)
        return a, b, c


def relevance_matrix(questions, q_matrix):
    """Pairwise relevance in {0,1,2}: same question + shared-concept flags."""
    questions = np.asarray(questions)
    q = np.asarray(q_matrix, dtype=np.int64)
    cols = q[:, questions]  # (n_c, T)
    shares = (cols.T @ cols) > 0
    same = questions[:, None] == questions[None, :]
    return same.astype(np.int64) + shares.astype(np.int64)


def relevance_matrix_batch(questions, q_matrix):
    """Batched relevance: questions (B, T) long, q_matrix (n_c, n_q) tensor."""
    q_safe = questions.clamp(min=0)
    cols = q_matrix.t()[q_safe]  # (B, T, n_c)
    shares = torch.bmm(cols, cols.transpose(1, 2)) > 0
    same = questions.unsqueeze(2) == questions.unsqueeze(1)
    return same.long() + shares.long()


def masked_attention_weights(scores, allowed):
    """Column-stochastic softmax over history axis -2, restricted to allowed.

    Columns with no allowed entry (no attendable history) get all-zero
    weights instead of NaN.
    """
    neg = torch.finfo(scores.dtype).min / 4
    logits = torch.where(allowed, scores, neg)
    colmax = logits.max(dim=-2, keepdim=True).values.detach()
    z = torch.exp(logits - colmax) * allowed
    den = z.sum(dim=-2, keepdim=True)
    den = torch.where(den > 0, den, 1.0)
    return z / den


def strict_causal_mask(T, device=None):
    """allowed[i, j] = history position i is strictly before j."""
    return torch.ones(T, T, dtype=torch.bool, device=device).triu(1)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.view(b, t, n_heads, d // n_heads).permute(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.permute(0, 2, 1, 3).reshape(b, t, h * dh)


class RAAttentionLayer(nn.Module):
    """Single relation-aware attention layer.

    Post-softmax weights are multiplied by the relevance weight lambda and
    renormalized to a distribution before the value sum; the first position
    has no history and yields a zero state.
    """

    def __init__(self, d, n_heads=4, dtype=torch.float64):
        super().__init__()
        if d % n_heads:
            raise ValueError("d must be divisible by n_heads")
        self.n_heads = n_heads
        self.w_q = nn.Linear(d, d, bias=False, dtype=dtype)
        self.w_k = nn.Linear(d, d, bias=False, dtype=dtype)
        self.w_v = nn.Linear(d, d, bias=False, dtype=dtype)

    def forward(self, q_stream, v_stream, lam, allowed=None, collect=None):
        T = q_stream.shape[1]
        q = _split_heads(self.w_q(q_stream), self.n_heads)
        k = _split_heads(self.w_k(q_stream), self.n_heads)
        v = _split_heads(self.w_v(v_stream), self.n_heads)
        scores = torch.einsum("bhid,bhjd->bhij", q, k) / math.sqrt(q.shape[-1])
        if allowed is None:
            allowed = strict_causal_mask(T, scores.device)
        alpha = masked_attention_weights(scores, allowed)
        adjusted = lam * alpha
        den = adjusted.sum(dim=-2, keepdim=True)
        den = torch.where(den > 0, den, 1.0)
        weights = adjusted / den
        if collect is not None:
            collect.append(weights.detach())
        return _merge_heads(torch.einsum("bhij,bhid->bhjd", weights, v))


class RAEncoder(nn.Module):
    """Stack of relation-aware attention layers with causal normalization.

    Queries/keys always come from the (position-augmented) question stream;
    values start from the projected question-response stream and flow through
    the stack.
    """

    def __init__(self, d, n_heads=4, n_layers=2, max_len=200, use_seqin=True,
                 use_positions=True, dtype=torch.float64):
        super().__init__()
        self.use_positions = use_positions
        self.in_proj = nn.Linear(2 * d, d, bias=False, dtype=dtype)
        self.pos_q = nn.Parameter(uniform_embeddings(max_len, d, dtype))
        self.pos_v = nn.Parameter(uniform_embeddings(max_len, d, dtype))
        self.layers = nn.ModuleList(
            [RAAttentionLayer(d, n_heads, dtype) for _ in range(n_layers)])
        self.relevance = RelevanceParams(dtype=dtype)
        self.norm = SequenceInstanceNorm(d, dtype=dtype) if use_seqin else None
        self.start = nn.Parameter(uniform_embeddings(1, d, dtype)[0])

    def relevance_weights(self, relations):
        a, b, c = self.relevance.values()
        lam = (a * (relations == 0) + b * (relations == 1)
               + c * (relations == 2))
        return lam.unsqueeze(1)  # broadcast over heads

    def forward(self, e_q, e_qr, mask, relations, collect_attention=None):
        B, T, d = e_q.shape
        qs, vs = e_q, self.in_proj(e_qr)
        if self.use_positions:
            qs = qs + self.pos_q[:T]
            vs = vs + self.pos_v[:T]
        lam = self.relevance_weights(relations)
        allowed = strict_causal_mask(T, qs.device)
        x = vs
        for layer in self.layers:
            x = layer(qs, x, lam, allowed, collect_attention)
        x = x * mask.unsqueeze(-1)
        h = self.norm(x, mask) if self.norm is not None else x
        start = self.start.view(1, 1, d).expand(B, 1, d)
        return torch.cat([start, h[:, 1:]], dim=1)


class DKTEncoder(nn.Module):
    """Recurrent encoder over question-response embeddings.

    The raw hidden state at t has seen the response at t, so states are
    shifted right by one for prediction; step 1 uses a learned start state.
    """

    def __init__(self, d, n_layers=1, max_len=200, use_seqin=True,
                 dtype=torch.float64):
        super().__init__()
        self.lstm = nn.LSTM(2 * d, d, num_layers=n_layers, batch_first=True)
        self.lstm.to(dtype)
        self.norm = SequenceInstanceNorm(d, dtype=dtype) if use_seqin else None
        self.start = nn.Parameter(uniform_embeddings(1, d, dtype)[0])

    def forward(self, e_q, e_qr, mask, relations=None, collect_attention=None):
        B, T, _ = e_qr.shape
        h_raw, _ = self.lstm(e_qr)
        if self.norm is not None:
            h = self.norm(h_raw, mask)
        else:
            h = h_raw * mask.unsqueeze(-1)
        d = h.shape[-1]
        start = self.start.view(1, 1, d).expand(B, 1, d)
        states = torch.cat([start, h[:, :-1]], dim=1)
        return states * mask.unsqueeze(-1)


class CausalMultiheadAttention(nn.Module):
    """Scaled dot-product attention where position j attends keys i <= j."""

    def __init__(self, d, n_heads=4, dtype=torch.float64):
        super().__init__()
        if d % n_heads:
            raise ValueError("d must be divisible by n_heads")
        self.n_heads = n_heads
        self.w_q = nn.Linear(d, d, bias=False, dtype=dtype)
        self.w_k = nn.Linear(d, d, bias=False, dtype=dtype)
        self.w_v = nn.Linear(d, d, bias=False, dtype=dtype)
        self.w_o = nn.Linear(d, d, bias=False, dtype=dtype)

    def forward(self, query, memory):
        Tq, Tm = query.shape[1], memory.shape[1]
        q = _split_heads(self.w_q(query), self.n_heads)
        k = _split_heads(self.w_k(memory), self.n_heads)
        v = _split_heads(self.w_v(memory), self.n_heads)
        scores = torch.einsum("bhjd,bhid->bhij", q, k) / math.sqrt(q.shape[-1])
        allowed = torch.ones(Tm, Tq, dtype=torch.bool,
                             device=scores.device).triu(0)  # i <= j inclusive
        weights = masked_attention_weights(scores, allowed)
        out = torch.einsum("bhij,bhid->bhjd", weights, v)
        return self.w_o(_merge_heads(out))


class TransformerBlock(nn.Module):
    """Post-norm block: causal self-attention, optional cross-attention, FFN."""

    def __init__(self, d, n_heads=4, cross=False, dtype=torch.float64):
        super().__init__()
        self.self_attn = CausalMultiheadAttention(d, n_heads, dtype)
        self.norm1 = nn.LayerNorm(d, dtype=dtype)
        self.cross_attn = (CausalMultiheadAttention(d, n_heads, dtype)
                           if cross else None)
        self.norm2 = nn.LayerNorm(d, dtype=dtype) if cross else None
        self.ff = nn.Sequential(
            nn.Linear(d, 2 * d, dtype=dtype), nn.ReLU(),
            nn.Linear(2 * d, d, dtype=dtype))
        self.norm3 = nn.LayerNorm(d, dtype=dtype)

    def forward(self, x, memory=None):
        x = self.norm1(x + self.self_attn(x, x))
        if self.cross_attn is not None:
            x = self.norm2(x + self.cross_attn(x, memory))
        return self.norm3(x + self.ff(x))


class SAINTEncoder(nn.Module):
    """Transformer encoder over questions, decoder over shifted responses.

    The encoder self-attends causally (inclusive of the current question);
    its normalized output is cross-attended by a decoder whose input is the
    question-response stream shifted right behind a learned start token, so
    the state at t sees responses only up to t-1.
    """

    def __init__(self, d, n_heads=4, n_layers=2, max_len=200, use_seqin=True,
                 use_positions=True, dtype=torch.float64):
        super().__init__()
        self.use_positions = use_positions
        self.in_proj = nn.Linear(2 * d, d, bias=False, dtype=dtype)
        self.pos_q = nn.Parameter(uniform_embeddings(max_len, d, dtype))
        self.pos_v = nn.Parameter(uniform_embeddings(max_len, d, dtype))
        self.sos = nn.Parameter(uniform_embeddings(1, d, dtype)[0])
        self.enc_blocks = nn.ModuleList(
            [TransformerBlock(d, n_heads, cross=False, dtype=dtype)
             for _ in range(n_layers)])
        self.dec_blocks = nn.ModuleList(
            [TransformerBlock(d, n_heads, cross=True, dtype=dtype)
             for _ in range(n_layers)])
        self.norm = SequenceInstanceNorm(d, dtype=dtype) if use_seqin else None

    def encode_questions(self, e_q, mask):
        T = e_q.shape[1]
        o = e_q + self.pos_q[:T] if self.use_positions else e_q
        for blk in self.enc_blocks:
            o = blk(o)
        return o * mask.unsqueeze(-1)

    def forward(self, e_q, e_qr, mask, relations=None, collect_attention=None):
        B, T, d = e_q.shape
        o = self.encode_questions(e_q, mask)
        o = self.norm(o, mask) if self.norm is not None else o
        z = torch.cat([self.sos.view(1, 1, d).expand(B, 1, d),
                       self.in_proj(e_qr)[:, :-1]], dim=1)
        if self.use_positions:
            z = z + self.pos_v[:T]
        x = z
        for blk in self.dec_blocks:
            x = blk(x, memory=o)
        return x * mask.unsqueeze(-1)


def build_encoder(variant, d, n_heads=4, n_layers=2, max_len=200,
                  use_seqin=True, use_positions=True, dtype=torch.float64):
    if variant == "dkt":
        return DKTEncoder(d, n_layers=n_layers, max_len=max_len,
                          use_seqin=use_seqin, dtype=dtype)
    if variant == "saint":
        return SAINTEncoder(d, n_heads=n_heads, n_layers=n_layers,
                            max_len=max_len, use_seqin=use_seqin,
                            use_positions=use_positions, dtype=dtype)
    if variant == "ra":
        return RAEncoder(d, n_heads=n_heads, n_layers=n_layers,
                         max_len=max_len, use_seqin=use_seqin,
                         use_positions=use_positions, dtype=dtype)
    raise ValueError(f"unknown encoder variant {variant!r}")
