"""Autoregressive multi-person decoder with relation reasoning.

Step T+1: a GRU reads the T node embeddings of a person followed by their last
observed pose, and the readout gives the first predicted pose. From then on
the GRU input is the person's reasoning vector r_hat plus their previous
prediction, and its hidden state is carried across steps.

After every step the reasoning vectors are refreshed:

    r_hat_p[n] = sum_{m != n} I[n, m] + y_hat_p[n]
    I[n, m]    = a[n, m] * V(key_m),  a[n, :] = softmax over m != n of <Q(key_n), K(key_m)>

where ``key`` is g_{T,L} for the first step and r_hat_{p-1} afterwards.
All pose-shaped quantities are flattened to ``3J`` inside this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch
from torch import nn

from .errors import ShapeMismatchError, StepOverflowError

LOGIT_CLAMP = 30.0


class PairAttention(nn.Module):
    """Pairwise interaction terms between persons, pose-shaped output."""

    def __init__(self, in_dim: int, att_dim: int, out_dim: int):
        super().__init__()
        self.att_dim = att_dim
        self.query = nn.Linear(in_dim, att_dim)
        self.key = nn.Linear(in_dim, att_dim)
        self.value = nn.Linear(in_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x [.., N, in]`` -> interactions ``[.., N, N-1, out]`` (row n lists m != n in order)."""
        N = x.shape[-2]
        if N == 1:
            return x.new_zeros(*x.shape[:-2], 1, 0, self.value.out_features)
        q, k, v = self.query(x), self.key(x), self.value(x)
        logits = (q @ k.transpose(-1, -2)) / math.sqrt(self.att_dim)
        logits = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        eye = torch.eye(N, dtype=torch.bool, device=x.device)
        weights = torch.softmax(logits.masked_fill(eye, float("-inf")), dim=-1)
        inter = weights.unsqueeze(-1) * v.unsqueeze(-3)            # [.., N, N, out]
        off = ~eye
        return inter[..., off, :].reshape(*x.shape[:-2], N, N - 1, -1)


@dataclass
class ReasoningState:
    y_hat: torch.Tensor       # [.., N, 3J]
    r_hat: torch.Tensor       # [.., N, 3J]
    interactions: torch.Tensor  # [.., N, N-1, 3J]
    hidden: torch.Tensor      # [.., N, H]
    step: int                 # 1-based offset into the prediction window (frame T + step)
    horizon: int              # P

    def pose_shaped(self, J: int):
        lead = self.y_hat.shape[:-1]
        return (self.y_hat.reshape(*lead, J, 3), self.r_hat.reshape(*lead, J, 3),
                self.interactions.reshape(*self.interactions.shape[:-1], J, 3))


@dataclass
class PredictionOutput:
    y_hat: torch.Tensor                      # [.., N, P, J, 3]
    trace: List[ReasoningState] = field(default_factory=list)

    def r_hat(self) -> torch.Tensor:
        """Reasoning trace ``[.., N, P, 3J]``."""
        return torch.stack([s.r_hat for s in self.trace], dim=-2)

    def interaction_log(self) -> List[torch.Tensor]:
        return [s.interactions for s in self.trace]


def combine(interactions: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """r = sum over other persons of I + y."""
    return interactions.sum(dim=-2) + y


class InteractiveDecoder(nn.Module):
    def __init__(self, node_dim: int, hidden_dim: int, joints: int, att_dim: Optional[int] = None):
        super().__init__()
        pose_dim = 3 * joints
        att_dim = att_dim or node_dim
        self.joints = joints
        self.hidden_dim = hidden_dim
        self.z_in = nn.Linear(node_dim, hidden_dim)
        self.pose_in = nn.Linear(pose_dim, hidden_dim)
        self.r_in = nn.Linear(pose_dim, hidden_dim)
        self.cell = nn.GRUCell(hidden_dim, hidden_dim)
        self.readout = nn.Linear(hidden_dim, pose_dim)
        self.att_nodes = PairAttention(node_dim, att_dim, pose_dim)
        self.att_reason = PairAttention(pose_dim, att_dim, pose_dim)
        nn.init.normal_(self.readout.weight, std=1e-3)
        nn.init.zeros_(self.readout.bias)

    def _gru(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        lead = x.shape[:-1]
        return self.cell(x.reshape(-1, x.shape[-1]), h.reshape(-1, h.shape[-1])).reshape(*lead, -1)

    def first_step(self, Z: torch.Tensor, x_last: torch.Tensor, horizon: int = 1) -> ReasoningState:
        """``Z [.., N, T, D]``, ``x_last [.., N, J, 3]`` -> state at frame T+1."""
        if x_last.shape[-2:] != (self.joints, 3) or x_last.shape[:-2] != Z.shape[:-2]:
            raise ShapeMismatchError(f"x_T {tuple(x_last.shape)} does not match Z {tuple(Z.shape)}")
        x_flat = x_last.reshape(*x_last.shape[:-2], 3 * self.joints)
        h = Z.new_zeros(*Z.shape[:-2], self.hidden_dim)
        for t in range(Z.shape[-2]):
            h = self._gru(self.z_in(Z[..., t, :]), h)
        h = self._gru(self.pose_in(x_flat), h)
        y = x_flat + self.readout(h)
        inter = self.att_nodes(Z[..., -1, :])
        return ReasoningState(y, combine(inter, y), inter, h, 1, horizon)

    def step(self, prev: ReasoningState) -> ReasoningState:
        if prev.step >= prev.horizon:
            raise StepOverflowError(f"step {prev.step + 1} exceeds the prediction horizon {prev.horizon}")
        h = self._gru(self.r_in(prev.r_hat) + self.pose_in(prev.y_hat), prev.hidden)
        y = prev.y_hat + self.readout(h)
        inter = self.att_reason(prev.r_hat)
        return ReasoningState(y, combine(inter, y), inter, h, prev.step + 1, prev.horizon)

    def decode(self, Z: torch.Tensor, x_last: torch.Tensor, P: int) -> PredictionOutput:
        if P < 1:
            raise ValueError("P must be >= 1")
        state = self.first_step(Z, x_last, horizon=P)
        trace = [state]
        for _ in range(P - 1):
            state = self.step(state)
            trace.append(state)
        y = torch.stack([s.y_hat for s in trace], dim=-2)
        y = y.reshape(*y.shape[:-1], self.joints, 3)
        return PredictionOutput(y, trace)

    forward = decode

    def teacher_forced_reasoning(self, Z: torch.Tensor, Y_future: torch.Tensor) -> torch.Tensor:
        """Ground-truth reasoning trace ``[.., N, P, 3J]`` from ``Y_future [.., N, P, J, 3]``."""
        if Y_future.shape[-2:] != (self.joints, 3) or Y_future.shape[:-3] != Z.shape[:-2]:
            raise ShapeMismatchError(f"Y {tuple(Y_future.shape)} does not match Z {tuple(Z.shape)}")
        y = Y_future.reshape(*Y_future.shape[:-2], 3 * self.joints)
        r = combine(self.att_nodes(Z[..., -1, :]), y[..., 0, :])
        out = [r]
        for p in range(1, y.shape[-2]):
            r = combine(self.att_reason(r), y[..., p, :])
            out.append(r)
        return torch.stack(out, dim=-2)
