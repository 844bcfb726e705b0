"""Training loop, evaluation, prediction export and the constant-pose baseline."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from . import export
from .checkpoint import Checkpoint, check_compatible, load_checkpoint
from .config import RunConfig
from .encoder import adjacency_mask
from .errors import (EmptyDatasetError, InsufficientFramesError, NonFiniteError, NumericError,
                     ShapeMismatchError)
from .model import UnityGraphModel
from .motion_data import (MotionSequence, generate_synthetic, load_dataset, save_scene,
                          split_scene)
from .objectives import DEFAULT_HORIZONS_S, DEFAULT_VIM_MS, MetricReport, metric_report

log = logging.getLogger(__name__)

HELDOUT_SEED_OFFSET = 10_000


class TrainingAborted(NumericError):
    """Loss went non-finite; ``checkpoint`` holds the last good state."""

    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    observed: torch.Tensor     # [B, N, T, J, 3]
    future: torch.Tensor       # [B, N, P, J, 3]
    adjacency: torch.Tensor    # [J, J]
    fps: float


def synthetic_scenes(config: RunConfig, count: int, seed_offset: int = 0) -> List[MotionSequence]:
    return [generate_synthetic(config.synthetic_config(config.synthetic_seed + seed_offset + i))
            for i in range(count)]


def training_scenes(config: RunConfig) -> List[MotionSequence]:
    if config.data_dir is not None:
        scenes = load_dataset(config.data_dir, "train")
    else:
        scenes = synthetic_scenes(config, config.num_scenes)
    if not scenes:
        raise EmptyDatasetError("no training scenes")
    return scenes


def heldout_scenes(config: RunConfig) -> List[MotionSequence]:
    if config.data_dir is not None:
        return load_dataset(config.data_dir, "test")
    return synthetic_scenes(config, config.heldout_scenes, HELDOUT_SEED_OFFSET)


def make_batches(scenes: Sequence[MotionSequence], T: int, P: int, batch_size: int,
                 dtype: torch.dtype, order: Optional[Sequence[int]] = None) -> List[Batch]:
    """Stack scenes into batches; scenes only share a batch when N, J and fps agree."""
    order = range(len(scenes)) if order is None else order
    groups: Dict[tuple, List[int]] = {}
    for i in order:
        s = scenes[i]
        groups.setdefault((s.persons, s.joints, s.fps, s.skeleton.edges), []).append(i)
    out = []
    for idx in groups.values():
        for k in range(0, len(idx), batch_size):
            chunk = [scenes[i] for i in idx[k:k + batch_size]]
            splits = [split_scene(s, T, P) for s in chunk]
            obs = torch.tensor(np.stack([sp.observed.positions for sp in splits]), dtype=dtype)
            fut = torch.tensor(np.stack([sp.future.positions for sp in splits]), dtype=dtype)
            out.append(Batch(obs, fut, adjacency_mask(chunk[0].skeleton), chunk[0].fps))
    return out


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------

def build_model(config: RunConfig) -> UnityGraphModel:
    model = UnityGraphModel(config.J, node_dim=config.D, hidden_dim=config.H, layers=config.L,
                            heads=config.attention_heads, use_short_term=config.use_short_term,
                            use_long_term=config.use_long_term, use_spatial=config.use_spatial)
    return model.to(config.dtype)


def model_from_checkpoint(ckpt: Checkpoint) -> Tuple[UnityGraphModel, RunConfig]:
    config = RunConfig.from_dict(ckpt.config)
    model = build_model(config)
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model, config


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def _rng_state(rng: np.random.Generator) -> dict:
    return {"torch": torch.get_rng_state(), "numpy": rng.bit_generator.state}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    """``steps[i]`` is the loss seen before update i; the last entry follows the final update."""

    steps: List[dict] = field(default_factory=list)
    epochs: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seconds: float = 0.0

    def totals(self) -> List[float]:
        return [s["total"] for s in self.steps]

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "epochs": self.epochs, "steps": self.steps,
                           "seconds": self.seconds}, indent=1, sort_keys=True)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: TrainLog
    model: UnityGraphModel


def _batch_loss(model: UnityGraphModel, batch: Batch, config: RunConfig):
    out = model(batch.observed, batch.adjacency, batch.future.shape[2])
    return model.objective(out, batch.future, config.loss_weights())


def _snapshot(model, optimizer, config, epoch, step, rng) -> Checkpoint:
    return Checkpoint({k: v.detach().clone() for k, v in model.state_dict().items()},
                      config.to_dict(), epoch, step, copy.deepcopy(optimizer.state_dict()),
                      _rng_state(rng))


def train(config: RunConfig, scenes: Optional[Sequence[MotionSequence]] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Fit a model; deterministic for a fixed seed and precision."""
    t0 = time.perf_counter()
    scenes = list(scenes) if scenes is not None else training_scenes(config)
    if not scenes:
        raise EmptyDatasetError("no training scenes")
    for s in scenes:
        if s.joints != config.J:
            raise ShapeMismatchError(f"scene has J={s.joints}, config expects J={config.J}")
    rng = seed_everything(config.seed)
    model = build_model(config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=config.decay_every,
                                                gamma=config.lr_decay)
    tlog = TrainLog(config=config.to_dict())
    last_good = _snapshot(model, optimizer, config, 0, 0, rng)
    step = 0
    max_steps = config.max_steps if config.max_steps is not None else math.inf

    def record(report, epoch):
        vals = report.as_floats()
        if not all(math.isfinite(v) for v in vals.values()):
            raise TrainingAborted(f"non-finite loss at step {step}: {vals}", last_good)
        tlog.steps.append({"step": step, "epoch": epoch, **vals})
        return vals

    epoch = 0
    model.train()
    while epoch < config.epochs and step < max_steps:
        order = rng.permutation(len(scenes))
        sums = {"pre": 0.0, "rec": 0.0, "inf": 0.0, "total": 0.0}
        n_batches = 0
        for batch in make_batches(scenes, config.T, config.P, config.batch_size, config.dtype, order):
            if step >= max_steps:
                break
            try:
                report = _batch_loss(model, batch, config)
            except (NumericError, NonFiniteError) as exc:
                raise TrainingAborted(f"step {step}: {exc}", last_good) from exc
            vals = record(report, epoch)
            optimizer.zero_grad()
            report.total.backward()
            optimizer.step()
            step += 1
            n_batches += 1
            for k in sums:
                sums[k] += vals[k]
        if n_batches == 0:
            break
        scheduler.step()
        epoch += 1
        entry = {"epoch": epoch, "step": step, "lr": optimizer.param_groups[0]["lr"],
                 **{k: v / n_batches for k, v in sums.items()}}
        tlog.epochs.append(entry)
        log.info("epoch %d step %d total %.5f", epoch, step, entry["total"])
        if on_epoch is not None:
            on_epoch(entry)
        last_good = _snapshot(model, optimizer, config, epoch, step, rng)

    # loss after the final update, measured on the first batch in canonical order
    model.eval()
    with torch.no_grad():
        try:
            final = [_batch_loss(model, b, config)
                     for b in make_batches(scenes, config.T, config.P, config.batch_size, config.dtype)]
        except (NumericError, NonFiniteError) as exc:
            raise TrainingAborted(f"after step {step}: {exc}", last_good) from exc
    totals = {k: float(np.mean([getattr(r, k).item() for r in final])) for k in ("pre", "rec", "inf", "total")}
    if not all(math.isfinite(v) for v in totals.values()):
        raise TrainingAborted(f"non-finite loss after step {step}", last_good)
    tlog.steps.append({"step": step, "epoch": epoch, **totals})
    tlog.seconds = time.perf_counter() - t0
    ckpt = _snapshot(model, optimizer, config, epoch, step, rng)
    return TrainResult(ckpt, tlog, model)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _horizons(P: int, fps: float) -> Tuple[float, ...]:
    full = round(P / fps, 6)
    return tuple(sorted(set(DEFAULT_HORIZONS_S) | {full}))


def aggregate_reports(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise EmptyDatasetError("nothing to aggregate")
    out = MetricReport(scenes=sum(r.scenes for r in reports))
    weights = [r.scenes for r in reports]
    for attr in ("mpjpe_at", "vim_at"):
        keys = sorted(set().union(*(getattr(r, attr).keys() for r in reports)))
        for k in keys:
            vals = [(getattr(r, attr)[k], w) for r, w in zip(reports, weights) if k in getattr(r, attr)]
            getattr(out, attr)[k] = sum(v * w for v, w in vals) / sum(w for _, w in vals)
    pairs = sorted(set().union(*(r.ppc.keys() for r in reports)))
    for pair in pairs:
        rows = [r.ppc[pair] for r in reports if pair in r.ppc]
        J = len(rows[0])
        merged = []
        for j in range(J):
            vals = [row[j] for row in rows if j < len(row) and row[j] is not None]
            merged.append(float(np.mean(vals)) if vals else None)
        out.ppc[pair] = merged
    return out


def _as_model(source) -> Tuple[UnityGraphModel, RunConfig]:
    if isinstance(source, (str, Path)):
        source = load_checkpoint(source)
    if isinstance(source, Checkpoint):
        return model_from_checkpoint(source)
    if isinstance(source, TrainResult):
        return source.model, RunConfig.from_dict(source.checkpoint.config)
    raise TypeError(f"cannot build a model from {type(source).__name__}")


def _as_scenes(dataset) -> List[MotionSequence]:
    if isinstance(dataset, (str, Path)):
        path = Path(dataset)
        scenes = load_dataset(path, "test") or load_dataset(path)
    else:
        scenes = list(dataset)
    if not scenes:
        raise EmptyDatasetError("dataset contains no scenes")
    return scenes


def predict_scenes(model: UnityGraphModel, scenes: Sequence[MotionSequence], T: int, P: int) -> List[np.ndarray]:
    dtype = next(model.parameters()).dtype
    preds = []
    model.eval()
    with torch.no_grad():
        for s in scenes:
            if s.frames < T:
                raise InsufficientFramesError(f"scene has {s.frames} frames, need T = {T}")
            obs = torch.tensor(s.positions[:, :T], dtype=dtype)
            preds.append(model(obs, adjacency_mask(s.skeleton), P).y_hat.double().numpy())
    return preds


def evaluate(source, dataset, vim_ms: Sequence[int] = DEFAULT_VIM_MS) -> MetricReport:
    """Free-running decode on each scene; metrics averaged over scenes."""
    model, config = _as_model(source)
    scenes = _as_scenes(dataset)
    for s in scenes:
        if s.joints != config.J:
            raise ShapeMismatchError(f"checkpoint expects J={config.J}, scene has J={s.joints}")
    reports = []
    for s, y_hat in zip(scenes, predict_scenes(model, scenes, config.T, config.P)):
        fut = split_scene(s, config.T, config.P).future.positions
        reports.append(metric_report(y_hat, fut, s.fps, _horizons(config.P, s.fps), vim_ms))
    return aggregate_reports(reports)


def constant_pose_baseline(observed: np.ndarray, P: int) -> np.ndarray:
    """Repeat the last observed pose ``P`` times: ``[N, T, J, 3] -> [N, P, J, 3]``."""
    observed = np.asarray(observed, dtype=np.float64)
    return np.repeat(observed[..., -1:, :, :], P, axis=-3)


def evaluate_baseline(dataset, T: int, P: int, vim_ms: Sequence[int] = DEFAULT_VIM_MS) -> MetricReport:
    scenes = _as_scenes(dataset)
    reports = []
    for s in scenes:
        sp = split_scene(s, T, P)
        y_hat = constant_pose_baseline(sp.observed.positions, P)
        reports.append(metric_report(y_hat, sp.future.positions, s.fps, _horizons(P, s.fps), vim_ms))
    return aggregate_reports(reports)


# ---------------------------------------------------------------------------
# Prediction export
# ---------------------------------------------------------------------------

def predict(source, scene: Union[MotionSequence, str, Path], out_dir, plots: bool = True) -> Dict[str, Path]:
    """Predict one scene and write the scene, attention, trace, PPC and plot files."""
    from .motion_data import load_scene

    model, config = _as_model(source)
    if not isinstance(scene, MotionSequence):
        scene = load_scene(scene)
    check_compatible(Checkpoint({}, config.to_dict()), scene.joints)
    T, P = config.T, config.P
    if scene.frames < T:
        raise InsufficientFramesError(f"scene has {scene.frames} frames, need T = {T}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = next(model.parameters()).dtype
    observed = scene.positions[:, :T]
    with torch.no_grad():
        out = model(torch.tensor(observed, dtype=dtype), adjacency_mask(scene.skeleton), P)
    y_hat = out.y_hat.double().numpy()
    pred_scene = scene.with_positions(y_hat)
    files: Dict[str, Path] = {}

    files["prediction"] = out_dir / "prediction.json"
    save_scene(pred_scene, files["prediction"])

    for rec in out.attention:
        key = f"attention_layer{rec.layer}"
        files[key] = out_dir / f"{key}.json"
        export.write_json(files[key], rec.to_dict())

    files["interaction_trace"] = out_dir / "interaction_trace.json"
    export.write_json(files["interaction_trace"], export.trace_to_dict(out.prediction, config.J))

    timeline = np.concatenate([observed, y_hat], axis=1)
    gt = scene.positions[:, :T + P] if scene.frames >= T + P else None
    window = min(max(2, int(round(scene.fps))), timeline.shape[1])
    doc = {"window": window, "fps": scene.fps, "observed_frames": T,
           "predicted": export.pairwise_ppc(timeline, window)}
    if gt is not None:
        doc["ground_truth"] = export.pairwise_ppc(gt, window)
    files["ppc_series"] = out_dir / "ppc_series.json"
    export.write_json(files["ppc_series"], doc)

    if plots:
        files["skeleton_plot"] = out_dir / "skeleton.png"
        export.plot_skeletons(observed, y_hat, scene.skeleton, files["skeleton_plot"],
                              ground_truth=None if gt is None else gt[:, T:])
        for rec in out.attention:
            for family, path in export.plot_attention(rec, out_dir).items():
                files[f"attention_layer{rec.layer}_{family}_plot"] = path
        files["ppc_plot"] = out_dir / "ppc_series.png"
        export.plot_ppc(doc, files["ppc_plot"])
    return files
