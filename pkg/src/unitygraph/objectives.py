"""Training objective and evaluation metrics.

Losses are torch (differentiable); metrics are numpy float64 and report
millimetres. Horizon conventions:

* predicted frame k (1-based) sits k / fps seconds after the last observed frame;
  a horizon of h seconds maps to k = floor(h * fps + 0.5) frames.
* ``mpjpe`` at horizon h is cumulative: the mean over predicted frames 1..k.
* ``vim`` at t ms is read at frame k alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .errors import HorizonOutOfRangeError, NonFiniteError, ShapeMismatchError

DEFAULT_HORIZONS_S = (1.0, 2.0, 3.0)
DEFAULT_VIM_MS = (100, 240, 500, 640, 900)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    pre: float = 0.7
    rec: float = 0.2
    inf: float = 0.1

    def __post_init__(self):
        if not self.pre > 0:
            raise ValueError("the prediction-loss weight must be positive")
        if self.rec < 0 or self.inf < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    pre: torch.Tensor
    rec: torch.Tensor
    inf: torch.Tensor
    total: torch.Tensor
    per_person: Dict[str, torch.Tensor] = field(default_factory=dict)

    def as_floats(self) -> Dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("pre", "rec", "inf", "total")}


class ReconstructionHead(nn.Module):
    """Linear read-out from final node embeddings back to poses."""

    def __init__(self, node_dim: int, joints: int):
        super().__init__()
        self.joints = joints
        self.linear = nn.Linear(node_dim, 3 * joints)

    def forward(self, nodes: torch.Tensor) -> torch.Tensor:
        return reconstruct(nodes, self)


def reconstruct(nodes: torch.Tensor, head: ReconstructionHead) -> torch.Tensor:
    """``nodes [.., N, T, D]`` -> ``[.., N, T, J, 3]``."""
    if nodes.shape[-1] != head.linear.in_features:
        raise ShapeMismatchError(f"nodes have D={nodes.shape[-1]}, head expects {head.linear.in_features}")
    out = head.linear(nodes)
    return out.reshape(*out.shape[:-1], head.joints, 3)


def _fro(x: torch.Tensor, core_dims: int) -> torch.Tensor:
    """Frobenius norm over the last ``core_dims`` axes (single square root)."""
    dims = tuple(range(-core_dims, 0))
    return torch.sqrt((x * x).sum(dim=dims))


def loss(y_hat: torch.Tensor, y: torch.Tensor, x_hat: torch.Tensor, x: torch.Tensor,
         r_hat: torch.Tensor, r: torch.Tensor, weights: LossWeights = LossWeights()) -> LossReport:
    """Three-term objective for one scene, or the batch mean over a leading scene axis.

    ``y_hat, y``: [.., N, P, J, 3]; ``x_hat, x``: [.., N, T, J, 3];
    ``r_hat, r``: [.., N, P, 3J] (or pose-shaped [.., N, P, J, 3]).
    """
    if y_hat.shape != y.shape or x_hat.shape != x.shape or r_hat.shape != r.shape:
        raise ShapeMismatchError(
            f"shape mismatch: Y {tuple(y_hat.shape)}/{tuple(y.shape)}, X {tuple(x_hat.shape)}/"
            f"{tuple(x.shape)}, r {tuple(r_hat.shape)}/{tuple(r.shape)}")
    for name, t in (("Y_hat", y_hat), ("Y", y), ("X_hat", x_hat), ("X", x), ("r_hat", r_hat), ("r", r)):
        if not torch.isfinite(t).all():
            raise NonFiniteError(f"{name} contains non-finite values")
    if r_hat.ndim == y.ndim:   # pose-shaped traces
        r_hat = r_hat.reshape(*r_hat.shape[:-2], -1)
        r = r.reshape(*r.shape[:-2], -1)
    pre = _fro(y_hat - y, 4)
    rec = _fro(x_hat - x, 4)
    step_norms = _fro(r_hat - r, 1)                  # [.., N, P]
    inf = step_norms.sum(dim=(-1, -2))
    per_person = {
        "pre": _fro(y_hat - y, 3),
        "rec": _fro(x_hat - x, 3),
        "inf": step_norms.sum(dim=-1),
    }
    if pre.ndim:
        pre, rec, inf = pre.mean(), rec.mean(), inf.mean()
        per_person = {k: v.mean(dim=0) for k, v in per_person.items()}
    total = weights.pre * pre + weights.rec * rec + weights.inf * inf
    return LossReport(pre, rec, inf, total, per_person)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def horizon_frames(seconds: float, fps: float) -> int:
    return int(math.floor(seconds * fps + 0.5))


def _pair(y_hat, y) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_hat.detach().cpu() if torch.is_tensor(y_hat) else y_hat, dtype=np.float64)
    b = np.asarray(y.detach().cpu() if torch.is_tensor(y) else y, dtype=np.float64)
    if a.shape != b.shape or a.ndim < 3 or a.shape[-1] != 3:
        raise ShapeMismatchError(f"prediction {a.shape} and ground truth {b.shape} must match [N, P, J, 3]")
    return a, b


def mpjpe_per_frame(y_hat, y) -> np.ndarray:
    """Mean joint error per predicted frame, meters, shape [P]."""
    a, b = _pair(y_hat, y)
    err = np.linalg.norm(a - b, axis=-1)          # [.., N, P, J]
    err = np.moveaxis(err, -2, 0)                 # [P, .., N, J]
    return err.reshape(err.shape[0], -1).mean(axis=1)


def mpjpe(y_hat, y, fps: float, horizons_s: Sequence[float] = DEFAULT_HORIZONS_S) -> Dict[float, float]:
    """Cumulative MPJPE in mm at each horizon that fits in the prediction window.

    When none of the requested horizons fits, the full window (P / fps) is reported.
    """
    per_frame = mpjpe_per_frame(y_hat, y)
    P = per_frame.shape[0]
    out = {}
    for h in horizons_s:
        k = horizon_frames(h, fps)
        if 1 <= k <= P:
            out[float(h)] = float(per_frame[:k].mean() * 1000.0)
    if not out:
        out[round(P / fps, 6)] = float(per_frame.mean() * 1000.0)
    return out


def vim(y_hat, y, t_ms: float, fps: float) -> float:
    """Norm of the stacked J*3 displacement at one frame, averaged over persons, in mm."""
    a, b = _pair(y_hat, y)
    P = a.shape[-3]
    k = horizon_frames(t_ms / 1000.0, fps)
    if not 1 <= k <= P:
        raise HorizonOutOfRangeError(f"{t_ms} ms maps to predicted frame {k}, outside 1..{P}")
    d = a[..., k - 1, :, :] - b[..., k - 1, :, :]       # [.., N, J, 3]
    per_person = np.sqrt((d * d).sum(axis=(-1, -2)))
    return float(per_person.mean() * 1000.0)


@dataclass
class PPCResult:
    """Per-joint correlation; ``defined`` is False where either series is constant."""

    values: np.ndarray
    defined: np.ndarray

    def mean(self) -> Optional[float]:
        return float(self.values[self.defined].mean()) if self.defined.any() else None

    def to_list(self) -> List[Optional[float]]:
        return [float(v) if ok else None for v, ok in zip(self.values, self.defined)]


def ppc(series1, series2, eps: float = 1e-12) -> PPCResult:
    """Pearson correlation per joint between two ``[T', J]`` scalar series."""
    a = np.asarray(series1, dtype=np.float64)
    b = np.asarray(series2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatchError(f"series must both be [T', J], got {a.shape} and {b.shape}")
    if a.shape[0] < 2:
        raise ShapeMismatchError("need at least two time steps")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    va = np.sqrt((ac * ac).sum(axis=0))
    vb = np.sqrt((bc * bc).sum(axis=0))
    scale_a = np.maximum(np.abs(a).max(axis=0), 1.0)
    scale_b = np.maximum(np.abs(b).max(axis=0), 1.0)
    defined = (va > eps * scale_a) & (vb > eps * scale_b)
    values = np.zeros(a.shape[1])
    num = (ac * bc).sum(axis=0)
    values[defined] = num[defined] / (va[defined] * vb[defined])
    values = np.clip(values, -1.0, 1.0)
    return PPCResult(values, defined)


def root_distance_series(positions) -> np.ndarray:
    """Per-joint distance from the person's root joint: ``[.., F, J, 3] -> [.., F, J]``."""
    x = np.asarray(positions, dtype=np.float64)
    return np.linalg.norm(x - x[..., :1, :], axis=-1)


def ppc_series(positions, a: int, b: int, window: int) -> List[Optional[float]]:
    """Sliding-window interaction score between persons a and b.

    Entry i is the joint-mean PPC over frames [i, i + window); None when no
    joint has variance in that window.
    """
    d = root_distance_series(positions)        # [N, F, J]
    F = d.shape[1]
    if window < 2 or window > F:
        raise ShapeMismatchError(f"window {window} must lie in [2, {F}]")
    return [ppc(d[a, s:s + window], d[b, s:s + window]).mean() for s in range(F - window + 1)]


@dataclass
class MetricReport:
    mpjpe_at: Dict[float, float] = field(default_factory=dict)
    vim_at: Dict[int, float] = field(default_factory=dict)
    ppc: Dict[str, List[Optional[float]]] = field(default_factory=dict)
    scenes: int = 0

    def to_dict(self) -> dict:
        return {
            "mpjpe_mm": {f"{k:g}s": v for k, v in self.mpjpe_at.items()},
            "vim_mm": {f"{k}ms": v for k, v in self.vim_at.items()},
            "ppc": self.ppc,
            "scenes": self.scenes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = []
        if self.mpjpe_at:
            keys = list(self.mpjpe_at)
            rows.append("metric  | " + " | ".join(f"{k:>7g}s" for k in keys))
            rows.append("MPJPE   | " + " | ".join(f"{self.mpjpe_at[k]:8.1f}" for k in keys))
        if self.vim_at:
            keys = list(self.vim_at)
            rows.append("metric  | " + " | ".join(f"{k:>6d}ms" for k in keys) + " |      AVG")
            vals = [self.vim_at[k] for k in keys]
            rows.append("VIM     | " + " | ".join(f"{v:8.1f}" for v in vals) + f" | {np.mean(vals):8.1f}")
        return "\n".join(rows)


def metric_report(y_hat, y, fps: float, horizons_s=DEFAULT_HORIZONS_S,
                  vim_ms: Iterable[int] = DEFAULT_VIM_MS) -> MetricReport:
    a, b = _pair(y_hat, y)
    P = a.shape[-3]
    rep = MetricReport(mpjpe_at=mpjpe(a, b, fps, horizons_s), scenes=1)
    for t in vim_ms:
        if 1 <= horizon_frames(t / 1000.0, fps) <= P:
            rep.vim_at[int(t)] = vim(a, b, t, fps)
    if a.ndim == 4 and a.shape[0] > 1 and P >= 2:
        d = root_distance_series(a)
        for i in range(a.shape[0]):
            for j in range(a.shape[0]):
                if i != j:
                    rep.ppc[f"{i}->{j}"] = ppc(d[i], d[j]).to_list()
    return rep
