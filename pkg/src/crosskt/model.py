"""End-to-end knowledge tracing model.

One module owns the per-domain concept tables, the optional prototype and
target tables, a pluggable encoder, and the prediction head. The question
representation is selected per forward pass: "source" (per-domain concept
means), "proto" (prototype re-representation), or "target" (prototype-
anchored blend).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from . import aggregation
from .decoder import PredictionHead
from .embedding import (ConceptTable, PrototypeTable, TargetConceptTable,
                        proto_q_matrix, question_mean_operator)
from .encoders import SEQIN_SITES, build_encoder, relevance_matrix_batch

MODES = ("source", "proto", "target")


class ModelError(RuntimeError):
    pass


class KTModel(nn.Module):

    def __init__(self, source_specs, d=256, encoder="ra", n_heads=4,
                 n_layers=2, max_len=200, lambda_mix=0.7, use_seqin=True,
                 use_positions=True, dtype=torch.float64):
        super().__init__()
        self.d = d
        self.variant = encoder
        self.lambda_mix = float(lambda_mix)
        self.max_len = max_len
        self.dtype = dtype
        self.source_ids = [s.domain_id for s in source_specs]
        self.concept_counts = {s.domain_id: s.n_concepts for s in source_specs}
        self.tables = nn.ModuleDict({
            str(s.domain_id): ConceptTable(s.n_concepts, d, s.domain_id, dtype)
            for s in source_specs})
        for spec in source_specs:
            self._register_domain(spec)
        self.encoder = build_encoder(encoder, d, n_heads=n_heads,
                                     n_layers=n_layers, max_len=max_len,
                                     use_seqin=use_seqin,
                                     use_positions=use_positions, dtype=dtype)
        self.head = PredictionHead(d, dtype)
        self.prototypes = None
        self.target_table = None
        self.target_id = None

    def _register_domain(self, spec):
        qm = torch.as_tensor(np.array(spec.q_matrix), dtype=self.dtype)
        self.register_buffer(f"qmatrix_{spec.domain_id}", qm)
        self.register_buffer(
            f"qmean_{spec.domain_id}",
            question_mean_operator(spec.q_matrix, self.dtype))

    # -- phase transitions ---------------------------------------------------

    def set_prototypes(self, prototypes, assignment):
        """Install the prototype table and per-source prototype-question
        mean operators derived from the cluster assignment."""
        self.prototypes = PrototypeTable(prototypes, assignment, self.dtype)
        offset = 0
        for did in self.source_ids:
            n_c = self.concept_counts[did]
            a_slice = assignment[:, offset:offset + n_c]
            offset += n_c
            q = (getattr(self, f"qmatrix_{did}").numpy() > 0).astype(np.int8)
            proto_q = proto_q_matrix(a_slice, q)
            self.register_buffer(f"proto_qmean_{did}",
                                 question_mean_operator(proto_q, self.dtype))
        if offset != assignment.shape[1]:
            raise ModelError("assignment columns do not cover source concepts")

    def init_target(self, spec, seed):
        if self.prototypes is None:
            raise ModelError("prototypes must exist before target init")
        protos = self.prototypes.embeddings.detach().numpy()
        emb, choices = aggregation.init_target_table(protos, spec.n_concepts,
                                                     seed=seed)
        self.attach_target(spec, emb, choices)

    def attach_target(self, spec, embeddings, init_choices):
        self.target_table = TargetConceptTable(embeddings, init_choices,
                                               self.lambda_mix, self.dtype)
        self.target_id = spec.domain_id
        self._register_domain(spec)

    # -- representations -----------------------------------------------------

    def question_reprs(self, mode, domain_id):
        """Embedding row per question id of the domain, under a mode."""
        if mode == "source":
            op = getattr(self, f"qmean_{domain_id}")
            return op @ self.tables[str(domain_id)].embeddings
        if mode == "proto":
            if self.prototypes is None:
                raise ModelError("prototype mode before clustering")
            op = getattr(self, f"proto_qmean_{domain_id}")
            return op @ self.prototypes.embeddings
        if mode == "target":
            if self.target_table is None or domain_id != self.target_id:
                raise ModelError("target mode needs an attached target domain")
            op = getattr(self, f"qmean_{domain_id}")
            e_all = op @ self.target_table.embeddings
            protos = self.prototypes.embeddings
            d2 = ((e_all.detach().unsqueeze(1) - protos.unsqueeze(0)) ** 2).sum(-1)
            nearest = d2.argmin(dim=1)  # ties -> lowest prototype index
            lam = self.target_table.lam
            return (1.0 - lam) * protos[nearest] + lam * e_all
        raise ModelError(f"unknown mode {mode!r}")

    def forward(self, questions, responses, mask, domain_id, mode,
                collect_attention=None):
        q_safe = questions.clamp(min=0)
        m = mask.to(self.dtype)
        reprs = self.question_reprs(mode, domain_id)
        e_q = reprs[q_safe] * m.unsqueeze(-1)
        r = (responses.to(self.dtype) * m).unsqueeze(-1)
        e_qr = torch.cat([e_q * r, e_q * (1.0 - r)], dim=-1)
        relations = None
        if self.variant == "ra":
            relations = relevance_matrix_batch(
                questions, getattr(self, f"qmatrix_{domain_id}"))
        states = self.encoder(e_q, e_qr, m, relations, collect_attention)
        probs = self.head(states, e_q)
        return probs, states

    # -- parameter bookkeeping -----------------------------------------------

    def encoder_decoder_parameters(self):
        return list(self.encoder.parameters()) + list(self.head.parameters())

    def table_parameters(self):
        return [t.embeddings for t in self.tables.values()]

    def assert_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise ModelError(f"non-finite parameter {name}")


def batch_tensors(batch, dtype=torch.float64):
    """Convert a stacked numpy batch into model-ready tensors."""
    return {
        "questions": torch.as_tensor(batch["questions"], dtype=torch.long),
        "responses": torch.as_tensor(batch["responses"], dtype=dtype),
        "mask": torch.as_tensor(batch["mask"], dtype=dtype),
        "domain_id": batch["domain_id"],
    }


def named_tensor_map(model):
    """Checkpoint tensor naming: stable keys for every learnable tensor."""
    out = {}
    for did in model.source_ids:
        out[f"concepts/{did}"] = model.tables[str(did)].embeddings
    if model.prototypes is not None:
        out["prototypes"] = model.prototypes.embeddings
    if model.target_table is not None:
        out["target_concepts"] = model.target_table.embeddings
    site = SEQIN_SITES[model.variant]
    norm = getattr(model.encoder, "norm", None)
    if norm is not None:
        out[f"seqin/{site}/gamma"] = norm.gamma
        out[f"seqin/{site}/beta"] = norm.beta
        out[f"seqin/{site}/p"] = norm.p
    relevance = getattr(model.encoder, "relevance", None)
    if relevance is not None:
        out["relevance/u_a"] = relevance.u_a
        out["relevance/u_b"] = relevance.u_b
        out["relevance/u_c"] = relevance.u_c
    skip_prefixes = ("norm.", "relevance.")
    for name, p in model.encoder.named_parameters():
        if name.startswith(skip_prefixes):
            continue
        out[f"encoder/{model.variant}/{name}"] = p
    out["decoder/W1"] = model.head.fc1.weight
    out["decoder/b1"] = model.head.fc1.bias
    out["decoder/W2"] = model.head.fc2.weight
    out["decoder/b2"] = model.head.fc2.bias
    return out
