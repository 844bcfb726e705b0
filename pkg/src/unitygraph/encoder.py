"""Per-frame pose encoder: masked multi-head attention over skeleton joints.

Each joint's 3-D coordinate is lifted to ``D`` features, joints attend only to
their skeleton neighbours (and themselves), the attended features are
mean-pooled over joints and passed through a two-layer ReLU feed-forward map.
Mean pooling makes the embedding invariant to joint relabelling.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ShapeMismatchError
from .motion_data import MotionSequence, Skeleton

LOGIT_CLAMP = 30.0


def adjacency_mask(skeleton: Skeleton, device=None) -> torch.Tensor:
    return torch.as_tensor(skeleton.adjacency(self_loops=True), device=device)


class PoseEncoder(nn.Module):
    def __init__(self, hidden_dim: int = 64, heads: int = 4):
        super().__init__()
        if hidden_dim < 1 or heads < 1 or hidden_dim % heads:
            raise ValueError(f"hidden_dim ({hidden_dim}) must be a positive multiple of heads ({heads})")
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.joint_in = nn.Linear(3, hidden_dim)
        self.query = nn.Linear(hidden_dim, hidden_dim)
        self.key = nn.Linear(hidden_dim, hidden_dim)
        self.value = nn.Linear(hidden_dim, hidden_dim)
        self.attn_out = nn.Linear(hidden_dim, hidden_dim)
        self.ff1 = nn.Linear(hidden_dim, hidden_dim)
        self.ff2 = nn.Linear(hidden_dim, hidden_dim)

    def joint_attention(self, pose: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        """Attention weights ``[..., heads, J, J]`` (rows = querying joint)."""
        h = self.joint_in(pose)
        q = self._split(self.query(h))
        k = self._split(self.key(h))
        dh = self.hidden_dim // self.heads
        logits = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
        logits = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        logits = logits.masked_fill(~adjacency, float("-inf"))
        return torch.softmax(logits, dim=-1)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # [..., J, D] -> [..., heads, J, D/heads]
        *lead, J, D = x.shape
        return x.reshape(*lead, J, self.heads, D // self.heads).transpose(-3, -2)

    def forward(self, pose: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        """``pose [..., J, 3]`` -> embedding ``[..., D]``."""
        J = pose.shape[-2]
        if pose.shape[-1] != 3 or adjacency.shape != (J, J):
            raise ShapeMismatchError(
                f"pose {tuple(pose.shape)} does not match adjacency {tuple(adjacency.shape)}")
        h = self.joint_in(pose)
        attn = self.joint_attention(pose, adjacency)
        v = self._split(self.value(h))
        mixed = (attn @ v).transpose(-3, -2).reshape(h.shape)
        pooled = self.attn_out(mixed).mean(dim=-2)
        return self.ff2(torch.relu(self.ff1(pooled)))


def _as_tensor(x, like: nn.Module) -> torch.Tensor:
    p = next(like.parameters())
    return torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x, dtype=p.dtype, device=p.device)


def encode_pose(pose, skeleton: Skeleton, params: PoseEncoder) -> torch.Tensor:
    pose = _as_tensor(pose, params)
    if pose.shape != (skeleton.joint_count, 3):
        raise ShapeMismatchError(f"pose shape {tuple(pose.shape)} != ({skeleton.joint_count}, 3)")
    return params(pose, adjacency_mask(skeleton, pose.device))


def encode_scene(observed, params: PoseEncoder, skeleton: Skeleton = None) -> torch.Tensor:
    """Node grid ``[N, T, D]``; entry (n, t) depends on ``x_t^n`` only.

    ``observed`` is a MotionSequence or an ``[N, T, J, 3]`` array (then
    ``skeleton`` is required).
    """
    if isinstance(observed, MotionSequence):
        skeleton = observed.skeleton
        observed = observed.positions
    if skeleton is None:
        raise ValueError("skeleton is required for raw arrays")
    x = _as_tensor(observed, params)
    if x.ndim != 4 or x.shape[-2:] != (skeleton.joint_count, 3):
        raise ShapeMismatchError(f"observed shape {tuple(x.shape)} incompatible with J={skeleton.joint_count}")
    return params(x, adjacency_mask(skeleton, x.device))
