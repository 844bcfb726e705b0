"""JSON and static-plot exports for predictions and attention."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .decoder import PredictionOutput  # noqa: E402
from .message_passing import AttentionRecord  # noqa: E402
from .motion_data import Skeleton  # noqa: E402
from .objectives import ppc_series  # noqa: E402


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def trace_to_dict(pred: PredictionOutput, joints: int) -> dict:
    """Per-step interaction terms and reasoning vectors for an unbatched prediction."""
    steps = []
    for s in pred.trace:
        y, r, inter = s.pose_shaped(joints)
        N = y.shape[-3]
        others = [[m for m in range(N) if m != n] for n in range(N)]
        steps.append({
            "step": s.step,
            "r_hat": r.detach().double().tolist(),
            "interactions": {f"{n}<-{m}": inter[n, k].detach().double().tolist()
                             for n in range(N) for k, m in enumerate(others[n])},
        })
    return {"joints": joints, "steps": steps}


def pairwise_ppc(positions: np.ndarray, window: int) -> Dict[str, list]:
    N = positions.shape[0]
    return {f"{a}-{b}": ppc_series(positions, a, b, window)
            for a in range(N) for b in range(a + 1, N)}


def _draw(ax, pose: np.ndarray, skeleton: Skeleton, color, alpha=1.0, lw=1.2):
    for i, j in skeleton.edges:
        ax.plot([pose[i, 0], pose[j, 0]], [pose[i, 2], pose[j, 2]], color=color, alpha=alpha, lw=lw)


def plot_skeletons(observed: np.ndarray, predicted: np.ndarray, skeleton: Skeleton, path,
                   ground_truth: Optional[np.ndarray] = None, every: int = 3) -> Path:
    """Side view (x against height) of observed, predicted and optional true poses."""
    N = observed.shape[0]
    fig, axes = plt.subplots(1, N, figsize=(4 * N, 4), squeeze=False)
    cmap = plt.get_cmap("tab10")
    for n in range(N):
        ax = axes[0, n]
        for t in range(0, observed.shape[1], every):
            _draw(ax, observed[n, t], skeleton, "0.6", alpha=0.5)
        if ground_truth is not None:
            for t in range(0, ground_truth.shape[1], every):
                _draw(ax, ground_truth[n, t], skeleton, "k", alpha=0.35, lw=0.8)
        for t in range(0, predicted.shape[1], every):
            _draw(ax, predicted[n, t], skeleton, cmap(n % 10))
        ax.set_title(f"person {n}")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("height [m]")
        ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return Path(path)


def _heatmap(matrix: np.ndarray, title: str, xlabel: str, ylabel: str, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, aspect="auto", vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return Path(path)


def plot_attention(rec: AttentionRecord, out_dir) -> Dict[str, Path]:
    """One heatmap per family for an unbatched record."""
    out_dir = Path(out_dir)
    files = {}
    L = rec.layer
    if rec.alpha_short is not None:
        a = rec.alpha_short.detach().double().numpy()     # [N, T-1, 2]
        files["short_term"] = _heatmap(a.reshape(-1, 2), f"layer {L} short-term", "member",
                                       "edge (person, frame)", out_dir / f"attention_layer{L}_short_term.png")
    if rec.alpha_long is not None:
        files["long_term"] = _heatmap(rec.alpha_long.detach().double().numpy(), f"layer {L} long-term",
                                      "frame", "person", out_dir / f"attention_layer{L}_long_term.png")
    if rec.alpha_spatial is not None:
        files["spatial"] = _heatmap(rec.alpha_spatial.detach().double().numpy(), f"layer {L} spatial",
                                    "person", "frame", out_dir / f"attention_layer{L}_spatial.png")
    if rec.beta is not None:
        b = rec.beta.detach().double().numpy()
        files["node"] = _heatmap(b.reshape(-1, b.shape[-1]), f"layer {L} node-side",
                                 "slot (prev, next, long, spatial)", "node (person, frame)",
                                 out_dir / f"attention_layer{L}_node.png")
    return files


def plot_ppc(doc: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key, series in doc["predicted"].items():
        ys = [np.nan if v is None else v for v in series]
        ax.plot(range(len(ys)), ys, label=f"pred {key}")
    for key, series in doc.get("ground_truth", {}).items():
        ys = [np.nan if v is None else v for v in series]
        ax.plot(range(len(ys)), ys, "--", label=f"true {key}")
    ax.axvline(doc["observed_frames"] - doc["window"] + 0.5, color="0.5", lw=0.8)
    ax.set_xlabel("window start frame")
    ax.set_ylabel("PPC")
    ax.set_ylim(-1.05, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return Path(path)
