"""Node-to-hyperedge and hyperedge-to-node attention updates.

One layer = hyperedge phase then node phase:

    alpha  = softmax over an edge's members of  <e W_e, g W_g> / sqrt(D)
    e'     = relu(W_v sum_members alpha * g) + e
    beta   = softmax over a node's incident edges of  <e' W_e, g W_g> / sqrt(D)
    g'     = sum_incident MLP_family(beta * e') + g

Short-term slots are ordered (previous edge, next edge); boundary frames have
only one of them and the missing slot is masked out of the softmax and the sum.
A disabled family is neither updated nor seen by any node.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
from torch import nn

from .errors import NumericError
from .hypergraph import HyperedgeSet, HypergraphState

LOGIT_CLAMP = 30.0
FAMILIES = ("short_term", "long_term", "spatial")
# beta slot order per node
SLOTS = ("short_prev", "short_next", "long_term", "spatial")


def mlp(dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim))


class MessagePassingLayer(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.W_e = nn.Linear(dim, dim, bias=False)
        self.W_g = nn.Linear(dim, dim, bias=False)
        self.W_v = nn.Linear(dim, dim, bias=False)
        self.mlp_short = mlp(dim)
        self.mlp_long = mlp(dim)
        self.mlp_spatial = mlp(dim)


@dataclass
class AttentionRecord:
    """Attention weights of one layer (batch dims lead every tensor).

    alpha_short [.., N, T-1, 2], alpha_long [.., N, T], alpha_spatial [.., T, N],
    beta [.., N, T, 4] with ``beta_mask`` marking the slots that exist.
    Disabled families hold ``None``.
    """

    layer: int
    alpha_short: Optional[torch.Tensor] = None
    alpha_long: Optional[torch.Tensor] = None
    alpha_spatial: Optional[torch.Tensor] = None
    beta: Optional[torch.Tensor] = None
    beta_mask: Optional[torch.Tensor] = None

    def groups(self) -> List[torch.Tensor]:
        """Every softmax group as a flat tensor of weights (for invariant checks)."""
        out = []
        for a in (self.alpha_short, self.alpha_long, self.alpha_spatial):
            if a is not None:
                out.extend(a.reshape(-1, a.shape[-1]).unbind(0))
        if self.beta is not None:
            b = self.beta.reshape(-1, self.beta.shape[-1])
            m = self.beta_mask.reshape(-1, self.beta_mask.shape[-1])
            out.extend(row[mask] for row, mask in zip(b, m) if mask.any())
        return out

    def to_dict(self, batch_index: Optional[int] = None) -> dict:
        """JSON-ready rows keyed by family, person and frame.

        Each listed row is one softmax group and sums to 1.
        """

        def pick(x):
            x = x.detach().cpu().double()
            return x[batch_index] if batch_index is not None else x

        doc: dict = {"layer": self.layer, "alpha": {}, "beta": {}}
        if self.alpha_short is not None:
            a = pick(self.alpha_short)
            doc["alpha"]["short_term"] = {
                f"person={n},frame={t}": a[n, t].tolist()
                for n in range(a.shape[0]) for t in range(a.shape[1])}
        if self.alpha_long is not None:
            a = pick(self.alpha_long)
            doc["alpha"]["long_term"] = {f"person={n}": a[n].tolist() for n in range(a.shape[0])}
        if self.alpha_spatial is not None:
            a = pick(self.alpha_spatial)
            doc["alpha"]["spatial"] = {f"frame={t}": a[t].tolist() for t in range(a.shape[0])}
        if self.beta is not None:
            b, m = pick(self.beta), self.beta_mask
            m = m[batch_index] if batch_index is not None else m
            rows = {}
            for n in range(b.shape[0]):
                for t in range(b.shape[1]):
                    rows[f"person={n},frame={t}"] = {
                        SLOTS[s]: float(b[n, t, s]) for s in range(4) if bool(m[n, t, s])}
            doc["beta"] = rows
        return doc


def _check_finite(x: torch.Tensor, what: str, layer: int) -> None:
    if not torch.isfinite(x).all():
        bad = (~torch.isfinite(x)).sum().item()
        raise NumericError(
            f"non-finite {what} at layer {layer} ({bad} entries, max |finite| = "
            f"{x[torch.isfinite(x)].abs().max().item() if torch.isfinite(x).any() else float('nan'):.3g}); "
            "parameters are probably exploding")


class MessagePassing(nn.Module):
    def __init__(self, dim: int, layers: int = 3, use_short_term: bool = True,
                 use_long_term: bool = True, use_spatial: bool = True):
        super().__init__()
        if layers < 1:
            raise ValueError(f"layer count must be >= 1, got {layers}")
        if not (use_short_term or use_long_term or use_spatial):
            raise ValueError("at least one hyperedge family must be enabled")
        self.dim = dim
        self.num_layers = layers
        self.enabled = {"short_term": use_short_term, "long_term": use_long_term,
                        "spatial": use_spatial}
        self.layers = nn.ModuleList(MessagePassingLayer(dim) for _ in range(layers))
        self.message_count: Dict[str, int] = {}

    # -- phase 1 ---------------------------------------------------------
    def update_hyperedges(self, state: HypergraphState, layer: int) -> Tuple[HypergraphState, AttentionRecord]:
        p = self.layers[layer]
        g = state.nodes
        e = state.edges
        scale = 1.0 / math.sqrt(self.dim)
        gp = p.W_g(g)                                # [.., N, T, D]
        rec = AttentionRecord(layer)
        short, long_, spatial = e.short_term, e.long_term, e.spatial
        vec_terms = 0

        if self.enabled["short_term"]:
            ep = p.W_e(e.short_term)                 # [.., N, T-1, D]
            logits = torch.stack([(ep * gp[..., :-1, :]).sum(-1),
                                  (ep * gp[..., 1:, :]).sum(-1)], dim=-1) * scale
            alpha = torch.softmax(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP), dim=-1)
            msg = alpha[..., 0:1] * g[..., :-1, :] + alpha[..., 1:2] * g[..., 1:, :]
            short = torch.relu(p.W_v(msg)) + e.short_term
            rec.alpha_short = alpha
            vec_terms += alpha[..., 0].numel() * 2 // _batch(alpha, 3)

        if self.enabled["long_term"]:
            ep = p.W_e(e.long_term)                  # [.., N, D]
            logits = (gp * ep.unsqueeze(-2)).sum(-1) * scale       # [.., N, T]
            alpha = torch.softmax(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP), dim=-1)
            msg = (alpha.unsqueeze(-1) * g).sum(-2)
            long_ = torch.relu(p.W_v(msg)) + e.long_term
            rec.alpha_long = alpha
            vec_terms += alpha.numel() // _batch(alpha, 2)

        if self.enabled["spatial"]:
            ep = p.W_e(e.spatial)                    # [.., T, D]
            logits = (gp * ep.unsqueeze(-3)).sum(-1).transpose(-1, -2) * scale  # [.., T, N]
            alpha = torch.softmax(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP), dim=-1)
            msg = (alpha.transpose(-1, -2).unsqueeze(-1) * g).sum(-3)
            spatial = torch.relu(p.W_v(msg)) + e.spatial
            rec.alpha_spatial = alpha
            vec_terms += alpha.numel() // _batch(alpha, 2)

        for name, x in (("short-term edges", short), ("long-term edges", long_), ("spatial edges", spatial)):
            _check_finite(x, name, layer)
        self.message_count["edge_phase"] = self.message_count.get("edge_phase", 0) + vec_terms * self.dim
        edges = HyperedgeSet(short, long_, spatial, e.incidence)
        return HypergraphState(g, edges, state.layer + 1), rec

    # -- phase 2 ---------------------------------------------------------
    def update_nodes(self, state: HypergraphState, layer: int,
                     record: Optional[AttentionRecord] = None) -> HypergraphState:
        """Node update from edges that are already at layer+1."""
        p = self.layers[layer]
        g = state.nodes
        e = state.edges
        N, T, D = g.shape[-3:]
        lead = g.shape[:-3]
        scale = 1.0 / math.sqrt(self.dim)
        gp = p.W_g(g)

        zeros_edge = g.new_zeros(*lead, N, 1, D)
        if self.enabled["short_term"]:
            prev_e = torch.cat([zeros_edge, e.short_term], dim=-2)   # edge t-1 for node t
            next_e = torch.cat([e.short_term, zeros_edge], dim=-2)   # edge t for node t
        else:
            prev_e = next_e = g.new_zeros(g.shape)
        long_e = e.long_term.unsqueeze(-2).expand(g.shape)
        spat_e = e.spatial.unsqueeze(-3).expand(g.shape)
        cand = torch.stack([prev_e, next_e, long_e, spat_e], dim=-2)  # [.., N, T, 4, D]

        mask = torch.zeros(N, T, 4, dtype=torch.bool, device=g.device)
        if self.enabled["short_term"]:
            mask[:, 1:, 0] = True
            mask[:, :-1, 1] = True
        mask[:, :, 2] = self.enabled["long_term"]
        mask[:, :, 3] = self.enabled["spatial"]

        logits = (p.W_e(cand) * gp.unsqueeze(-2)).sum(-1) * scale
        logits = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP).masked_fill(~mask, float("-inf"))
        beta = torch.softmax(logits, dim=-1)
        weighted = beta.unsqueeze(-1) * cand

        out = g
        if self.enabled["short_term"]:
            m_prev = mask[..., 0:1].to(g.dtype)
            m_next = mask[..., 1:2].to(g.dtype)
            out = out + p.mlp_short(weighted[..., 0, :]) * m_prev + p.mlp_short(weighted[..., 1, :]) * m_next
        if self.enabled["long_term"]:
            out = out + p.mlp_long(weighted[..., 2, :])
        if self.enabled["spatial"]:
            out = out + p.mlp_spatial(weighted[..., 3, :])
        _check_finite(out, "node embeddings", layer)

        self.message_count["node_phase"] = self.message_count.get("node_phase", 0) + int(mask.sum()) * self.dim
        if record is not None:
            record.beta = beta
            record.beta_mask = mask.expand(*lead, N, T, 4) if lead else mask
        return HypergraphState(out, e, state.layer)

    def forward(self, state0: HypergraphState) -> Tuple[torch.Tensor, HypergraphState, List[AttentionRecord]]:
        """Run all layers; returns (Z [.., N, T, D], final state, per-layer records)."""
        self.message_count = {}
        if state0.layer != 0:
            raise ValueError("message passing starts from a layer-0 state")
        state = state0
        records = []
        for l in range(self.num_layers):
            state, rec = self.update_hyperedges(state, l)
            state = self.update_nodes(state, l, rec)
            records.append(rec)
        return state.nodes, state, records

    run = forward


def _batch(x: torch.Tensor, core_dims: int) -> int:
    """Number of batch elements in front of the last ``core_dims`` axes."""
    return int(math.prod(x.shape[:-core_dims])) if x.ndim > core_dims else 1
