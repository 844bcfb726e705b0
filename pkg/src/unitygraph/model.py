"""End-to-end predictor: encoder -> hypergraph -> message passing -> decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import nn

from .decoder import InteractiveDecoder, PredictionOutput
from .encoder import PoseEncoder
from .hypergraph import init_state
from .message_passing import AttentionRecord, MessagePassing
from .objectives import LossReport, LossWeights, ReconstructionHead, loss


@dataclass
class ModelOutput:
    y_hat: torch.Tensor            # [.., N, P, J, 3] world coordinates
    y_hat_local: torch.Tensor      # same, root-normalised frame
    x_hat_local: torch.Tensor      # [.., N, T, J, 3] reconstruction, normalised frame
    x_local: torch.Tensor          # normalised observed input
    offset: torch.Tensor           # [.., N, 1, 1, 3] world = local + offset
    Z: torch.Tensor
    prediction: PredictionOutput
    attention: List[AttentionRecord]


class UnityGraphModel(nn.Module):
    def __init__(self, joints: int, node_dim: int = 64, hidden_dim: int = 128, layers: int = 3,
                 heads: int = 4, att_dim: Optional[int] = None, use_short_term: bool = True,
                 use_long_term: bool = True, use_spatial: bool = True):
        super().__init__()
        self.joints = joints
        self.encoder = PoseEncoder(node_dim, heads)
        self.message_passing = MessagePassing(node_dim, layers, use_short_term, use_long_term, use_spatial)
        self.decoder = InteractiveDecoder(node_dim, hidden_dim, joints, att_dim)
        self.reconstruction = ReconstructionHead(node_dim, joints)

    @staticmethod
    def root_offset(observed: torch.Tensor) -> torch.Tensor:
        """Each person's first-frame root joint, broadcastable over [N, T, J, 3]."""
        return observed[..., :, 0:1, 0:1, :]

    def forward(self, observed: torch.Tensor, adjacency: torch.Tensor, P: int) -> ModelOutput:
        """``observed [.., N, T, J, 3]`` in world meters."""
        offset = self.root_offset(observed)
        x = observed - offset
        nodes = self.encoder(x, adjacency)
        Z, _, records = self.message_passing(init_state(nodes))
        pred = self.decoder.decode(Z, x[..., -1, :, :], P)
        x_hat = self.reconstruction(Z)
        return ModelOutput(pred.y_hat + offset, pred.y_hat, x_hat, x, offset, Z, pred, records)

    def objective(self, out: ModelOutput, future: torch.Tensor, weights: LossWeights) -> LossReport:
        y_local = future - out.offset
        r_true = self.decoder.teacher_forced_reasoning(out.Z, y_local)
        return loss(out.y_hat_local, y_local, out.x_hat_local, out.x_local,
                    out.prediction.r_hat(), r_true, weights)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_groups(model: UnityGraphModel) -> dict:
    """Named parameter groups used by gradient checks and reporting."""
    mp = model.message_passing
    dec = model.decoder
    groups = {
        "encoder": list(model.encoder.parameters()),
        "W_e/W_g/W_v": [p for layer in mp.layers for p in (layer.W_e.weight, layer.W_g.weight, layer.W_v.weight)],
        "edge_to_node_mlps": [p for layer in mp.layers for m in (layer.mlp_short, layer.mlp_long, layer.mlp_spatial)
                              for p in m.parameters()],
        "decoder_cell": [*dec.cell.parameters(), *dec.z_in.parameters(), *dec.pose_in.parameters(),
                         *dec.r_in.parameters()],
        "r2m": [*dec.att_nodes.parameters(), *dec.att_reason.parameters()],
        "readouts": [*dec.readout.parameters(), *model.reconstruction.parameters()],
    }
    return groups
