"""Skeletons, multi-person motion sequences, scene files and synthetic scenes.

Coordinates are absolute world coordinates in meters, z up. Nothing here is
root-centred; normalisation belongs to the model.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    InsufficientFramesError,
    NonFiniteError,
    SceneFormatError,
    ShapeMismatchError,
)

FORMAT_VERSION = 1
FLOAT_DECIMALS = 6  # 1 micrometre; declared precision of scene files
MOTION_STYLES = ("walk", "approach", "stop_and_talk", "group_walk")

# (name, parent, rest offset from parent in the body frame: x forward, y left, z up).
# Parents always precede children, so every prefix of this table is a connected tree.
_TEMPLATE: Tuple[Tuple[str, int, Tuple[float, float, float]], ...] = (
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("spine", 0, (0.0, 0.0, 0.25)),
    ("l_hip", 0, (0.0, 0.10, 0.0)),
    ("r_hip", 0, (0.0, -0.10, 0.0)),
    ("neck", 1, (0.0, 0.0, 0.30)),
    ("l_knee", 2, (0.0, 0.0, -0.45)),
    ("r_knee", 3, (0.0, 0.0, -0.45)),
    ("head", 4, (0.0, 0.0, 0.20)),
    ("l_shoulder", 4, (0.0, 0.18, -0.02)),
    ("r_shoulder", 4, (0.0, -0.18, -0.02)),
    ("l_ankle", 5, (0.0, 0.0, -0.45)),
    ("r_ankle", 6, (0.0, 0.0, -0.45)),
    ("l_elbow", 8, (0.0, 0.0, -0.28)),
    ("r_elbow", 9, (0.0, 0.0, -0.28)),
    ("l_wrist", 12, (0.0, 0.0, -0.26)),
    ("r_wrist", 13, (0.0, 0.0, -0.26)),
)
_EXTRA_OFFSET = (0.0, 0.0, -0.06)
_PELVIS_HEIGHT = 0.95


@dataclass(frozen=True)
class Skeleton:
    joint_names: Tuple[str, ...]
    edges: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(str(n) for n in self.joint_names))
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        J = len(self.joint_names)
        if J < 1:
            raise ShapeMismatchError("skeleton needs at least one joint")
        for i, j in self.edges:
            if not (0 <= i < J and 0 <= j < J):
                raise SceneFormatError(f"bone ({i}, {j}) references a joint outside [0, {J})")
            if i == j:
                raise SceneFormatError(f"self-loop bone on joint {i}")
        if not _connected(J, self.edges):
            raise SceneFormatError("skeleton graph is not connected")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def adjacency(self, self_loops: bool = True) -> np.ndarray:
        """Symmetric boolean [J, J] adjacency."""
        J = self.joint_count
        adj = np.eye(J, dtype=bool) if self_loops else np.zeros((J, J), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def parents(self) -> List[int]:
        """BFS parent of each joint when the bone graph is rooted at joint 0."""
        J = self.joint_count
        nbrs = [[] for _ in range(J)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        parent = [-2] * J
        parent[0] = -1
        queue = [0]
        while queue:
            u = queue.pop(0)
            for v in sorted(nbrs[u]):
                if parent[v] == -2:
                    parent[v] = u
                    queue.append(v)
        return parent

    def permuted(self, perm: Sequence[int]) -> "Skeleton":
        """Relabel joints so that new joint k is old joint perm[k]."""
        inv = np.argsort(perm)
        names = [self.joint_names[p] for p in perm]
        edges = [(int(inv[i]), int(inv[j])) for i, j in self.edges]
        return Skeleton(tuple(names), tuple(edges))


def _connected(J: int, edges: Iterable[Tuple[int, int]]) -> bool:
    parent = list(range(J))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        parent[find(i)] = find(j)
    return len({find(k) for k in range(J)}) == 1


def _template_entry(j: int):
    if j < len(_TEMPLATE):
        return _TEMPLATE[j]
    # beyond the template, grow two alternating chains off the wrists
    return (f"extra_{j}", j - 2, _EXTRA_OFFSET)


def default_skeleton(J: int) -> Skeleton:
    """First ``J`` joints of a 16-joint humanoid (extended with chains if J > 16)."""
    if J < 1:
        raise ConfigError("J must be >= 1")
    entries = [_template_entry(j) for j in range(J)]
    names = tuple(e[0] for e in entries)
    edges = tuple((e[1], j) for j, e in enumerate(entries) if e[1] >= 0)
    return Skeleton(names, edges)


@dataclass
class MotionSequence:
    skeleton: Skeleton
    positions: np.ndarray  # [N, frames, J, 3], meters
    fps: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 4 or self.positions.shape[-1] != 3:
            raise ShapeMismatchError(
                f"positions must have shape [N, frames, J, 3], got {self.positions.shape}")
        N, F, J, _ = self.positions.shape
        if N < 1 or F < 1:
            raise ShapeMismatchError(f"empty scene: N={N}, frames={F}")
        if J != self.skeleton.joint_count:
            raise ShapeMismatchError(
                f"positions have {J} joints but the skeleton has {self.skeleton.joint_count}")
        if not np.all(np.isfinite(self.positions)):
            raise NonFiniteError("positions contain NaN or Inf")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ShapeMismatchError(f"fps must be a positive finite number, got {self.fps}")
        self.fps = float(self.fps)

    @property
    def persons(self) -> int:
        return self.positions.shape[0]

    @property
    def frames(self) -> int:
        return self.positions.shape[1]

    @property
    def joints(self) -> int:
        return self.positions.shape[2]

    def with_positions(self, positions: np.ndarray) -> "MotionSequence":
        return MotionSequence(self.skeleton, positions, self.fps)


@dataclass
class SceneSplit:
    observed: MotionSequence
    future: MotionSequence


def split_scene(seq: MotionSequence, T: int, P: int) -> SceneSplit:
    """Observed window = first ``T`` frames, future = the following ``P``.

    Both halves are copies, so neither can alias the other.
    """
    if T < 1 or P < 1:
        raise InsufficientFramesError(f"T and P must be positive (T={T}, P={P})")
    if seq.frames < T + P:
        raise InsufficientFramesError(
            f"scene has {seq.frames} frames, need T + P = {T + P}")
    obs = seq.positions[:, :T].copy()
    fut = seq.positions[:, T:T + P].copy()
    return SceneSplit(seq.with_positions(obs), seq.with_positions(fut))


# ---------------------------------------------------------------------------
# Scene files
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    s = f"{x:.{FLOAT_DECIMALS}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def canonical_json(obj) -> str:
    """Compact JSON with sorted keys and fixed-decimal floats."""
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(json.dumps(str(k)) + ":" + canonical_json(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise NonFiniteError("cannot serialise a non-finite float")
        return _fmt_float(float(obj))
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def scene_to_dict(seq: MotionSequence) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "fps": float(seq.fps),
        "persons": seq.persons,
        "frames": seq.frames,
        "skeleton": {
            "joint_names": list(seq.skeleton.joint_names),
            "edges": [list(e) for e in seq.skeleton.edges],
        },
        "positions": seq.positions.tolist(),
    }


def dumps_scene(seq: MotionSequence) -> str:
    return canonical_json(scene_to_dict(seq)) + "\n"


def save_scene(seq: MotionSequence, path) -> None:
    _atomic_write_text(Path(path), dumps_scene(seq))


def scene_from_dict(doc) -> MotionSequence:
    if not isinstance(doc, dict):
        raise SceneFormatError("scene file must hold a JSON object")
    for key in ("format_version", "fps", "skeleton", "positions"):
        if key not in doc:
            raise SceneFormatError(f"missing key {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise SceneFormatError(f"unsupported format_version {doc['format_version']!r}")
    skel = doc["skeleton"]
    if not isinstance(skel, dict) or "joint_names" not in skel or "edges" not in skel:
        raise SceneFormatError("skeleton must contain joint_names and edges")
    try:
        edges = [tuple(e) for e in skel["edges"]]
        if any(len(e) != 2 for e in edges):
            raise SceneFormatError("every edge must be a pair of joint indices")
        skeleton = Skeleton(tuple(skel["joint_names"]), tuple(edges))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ShapeMismatchError):
            raise
        raise SceneFormatError(f"bad skeleton: {exc}") from exc
    try:
        positions = np.array(doc["positions"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"positions is not a rectangular numeric array: {exc}") from exc
    if positions.ndim != 4 or positions.shape[-1] != 3:
        raise ShapeMismatchError(f"positions must be [N][frames][J][3], got shape {positions.shape}")
    declared = {"persons": 0, "frames": 1}
    for key, axis in declared.items():
        if key in doc and int(doc[key]) != positions.shape[axis]:
            raise ShapeMismatchError(
                f"header declares {key}={doc[key]} but the array has {positions.shape[axis]}")
    if positions.shape[2] != skeleton.joint_count:
        raise ShapeMismatchError(
            f"skeleton declares {skeleton.joint_count} joints but the array has {positions.shape[2]}")
    try:
        fps = float(doc["fps"])
    except (TypeError, ValueError) as exc:
        raise SceneFormatError("fps must be a number") from exc
    return MotionSequence(skeleton, positions, fps)


def load_scene(path) -> MotionSequence:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: invalid JSON ({exc})") from exc
    return scene_from_dict(doc)


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Datasets: a directory of scene files plus manifest.json
# ---------------------------------------------------------------------------

MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


def write_dataset(out_dir, scenes: Sequence[MotionSequence], splits: Sequence[str]) -> Path:
    out_dir = Path(out_dir)
    entries = []
    for i, (seq, split) in enumerate(zip(scenes, splits)):
        if split not in SPLITS:
            raise ConfigError(f"unknown split tag {split!r}")
        rel = f"scenes/scene_{i:04d}.json"
        save_scene(seq, out_dir / rel)
        entries.append({"path": rel, "split": split})
    _atomic_write_text(out_dir / MANIFEST, json.dumps({"scenes": entries}, indent=2, sort_keys=True) + "\n")
    return out_dir / MANIFEST


def load_dataset(data_dir, split: Optional[str] = None) -> List[MotionSequence]:
    data_dir = Path(data_dir)
    manifest = data_dir / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    try:
        doc = json.loads(manifest.read_text())
        entries = doc["scenes"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SceneFormatError(f"bad manifest {manifest}: {exc}") from exc
    out = []
    for entry in entries:
        if split is not None and entry.get("split") != split:
            continue
        out.append(load_scene(data_dir / entry["path"]))
    return out


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSceneConfig:
    N: int = 3
    T: int = 15
    P: int = 15
    J: int = 8
    seed: int = 0
    coupling: float = 0.5
    arena_radius: float = 6.0
    motion_styles: List[str] = field(default_factory=lambda: ["walk"])
    fps: float = 15.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.N < 1 or self.T < 2 or self.P < 1 or self.J < 1:
            raise ConfigError(f"need N>=1, T>=2, P>=1, J>=1 (got N={self.N}, T={self.T}, "
                              f"P={self.P}, J={self.J})")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError(f"coupling must lie in [0, 1], got {self.coupling}")
        # the body is ~1.8 m tall; smaller arenas cannot contain a standing person
        if not self.arena_radius >= 3.0:
            raise ConfigError(f"arena_radius must be >= 3 m, got {self.arena_radius}")
        if not self.fps > 0:
            raise ConfigError("fps must be positive")
        if not self.motion_styles:
            raise ConfigError("motion_styles must not be empty")
        for s in self.motion_styles:
            if s not in MOTION_STYLES:
                raise ConfigError(f"unknown motion style {s!r}; choose from {MOTION_STYLES}")

    def style_of(self, n: int) -> str:
        return self.motion_styles[n % len(self.motion_styles)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSceneConfig":
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        return cls(**known)


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _joint_pitch(name: str, phase: float, amp: float, gesture: float) -> float:
    """Sagittal swing angle applied at a joint, driven by the gait phase."""
    if name == "spine":
        return 0.08 * amp + 0.12 * amp * math.sin(2.0 * phase) + 0.15 * gesture
    if name == "neck":
        return 0.1 * amp * math.sin(2.0 * phase + 0.8) - 0.2 * gesture
    if name == "l_hip":
        return 0.4 * amp * math.sin(phase)
    if name == "r_hip":
        return 0.4 * amp * math.sin(phase + math.pi)
    if name == "l_knee":
        return 0.6 * amp * 0.5 * (1.0 + math.sin(phase + 0.6))
    if name == "r_knee":
        return 0.6 * amp * 0.5 * (1.0 + math.sin(phase + math.pi + 0.6))
    if name == "l_shoulder":
        return 0.35 * amp * math.sin(phase + math.pi) - 0.5 * gesture
    if name == "r_shoulder":
        return 0.35 * amp * math.sin(phase) - 0.3 * gesture
    if name == "l_elbow":
        return -0.3 * (0.5 + 0.5 * math.sin(phase)) * max(amp, 0.3) - 0.6 * gesture
    if name == "r_elbow":
        return -0.3 * (0.5 + 0.5 * math.sin(phase + math.pi)) * max(amp, 0.3) - 0.4 * gesture
    return 0.0


def _joint_roll(name: str, phase: float, amp: float) -> float:
    """Frontal-plane (abduction) angle; breaks the rigid pelvis-to-knee distance."""
    if name == "l_hip":
        return 0.15 * amp * math.sin(phase + 0.3)
    if name == "r_hip":
        return -0.15 * amp * math.sin(phase + math.pi + 0.3)
    return 0.0


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def pose_from_state(J: int, root_xy: np.ndarray, heading: float, phase: float,
                    amp: float, gesture: float) -> np.ndarray:
    """Forward kinematics of the template skeleton for one frame, [J, 3]."""
    out = np.zeros((J, 3))
    rots = [None] * J
    bounce = 0.02 * amp * math.cos(2.0 * phase)
    out[0] = (root_xy[0], root_xy[1], _PELVIS_HEIGHT + bounce)
    rots[0] = _rot_z(heading)
    for j in range(J):
        name, parent, offset = _template_entry(j)
        if parent >= 0:
            out[j] = out[parent] + rots[parent] @ np.asarray(offset)
            base = rots[parent]
        else:
            base = rots[0]
        pitch = _joint_pitch(name, phase, amp, gesture)
        roll = _joint_roll(name, phase, amp)
        rots[j] = base @ _rot_y(pitch) @ _rot_x(roll)
    return out


_MAX_PHASE_RATE = 2.0 * math.pi * 1.3  # rad/s; bounds limb speed
_BODY_REACH = 0.6    # max horizontal joint offset from the pelvis (m)
_BODY_HEIGHT = 1.8   # max joint height (m)


def _effective_radius(arena_radius: float) -> float:
    """Radius the root may occupy so that every joint stays inside the arena."""
    return math.sqrt(arena_radius ** 2 - _BODY_HEIGHT ** 2) - _BODY_REACH


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 1e-9 else np.zeros_like(v)


def generate_synthetic(config: SyntheticSceneConfig) -> MotionSequence:
    """Deterministic multi-person scene with ``T + P`` frames.

    Root trajectories come from a small social-force integrator; limb motion
    is a gait cycle whose phase advances with speed. Every inter-person term
    (repulsion, following a moving target, group cohesion, phase
    entrainment) is scaled by ``config.coupling``, so at coupling 0 each
    person depends only on their own random stream and on the anchor
    positions other persons draw from theirs.
    """
    config.validate()
    N, J, fps = config.N, config.J, float(config.fps)
    frames = config.T + config.P
    r_eff = _effective_radius(config.arena_radius)
    substeps = 4
    dt = 1.0 / (fps * substeps)
    tau = 0.5
    max_speed = 2.0
    c = float(config.coupling)

    group_rng = np.random.default_rng([config.seed, 1_000_003])
    group_heading = group_rng.uniform(0.0, 2.0 * math.pi)
    rngs = [np.random.default_rng([config.seed, n]) for n in range(N)]

    pos = np.zeros((N, 2))
    vel = np.zeros((N, 2))
    pref_speed = np.zeros(N)
    heading = np.zeros(N)
    phase = np.zeros(N)
    wander = np.zeros(N)
    base_pos = np.zeros((N, 2))
    behind = np.zeros(N)
    lateral = np.zeros(N)
    for n, rng in enumerate(rngs):
        rad = 0.55 * r_eff * math.sqrt(rng.uniform())
        ang = rng.uniform(0.0, 2.0 * math.pi)
        base_pos[n] = (rad * math.cos(ang), rad * math.sin(ang))
        pref_speed[n] = rng.uniform(0.9, 1.4)
        heading[n] = rng.uniform(0.0, 2.0 * math.pi)
        phase[n] = rng.uniform(0.0, 2.0 * math.pi)
        wander[n] = rng.uniform(-0.15, 0.15)
        behind[n] = rng.uniform(2.5, 3.5)
        lateral[n] = rng.uniform(-0.8, 0.8)
    base_heading = heading.copy()
    styles = [config.style_of(n) for n in range(N)]
    # "anchor" = where others aim at; depends only on a person's own random stream
    anchor = base_pos.copy()
    pos = base_pos.copy()
    for n in range(N):
        if styles[n] in ("approach", "stop_and_talk") and N > 1:
            # start a few metres behind the target, then close in faster than it walks
            m = (n - 1) % N
            fwd = np.array([math.cos(base_heading[m]), math.sin(base_heading[m])])
            side = np.array([-fwd[1], fwd[0]])
            start = base_pos[m] - behind[n] * fwd + lateral[n] * side
            r = float(np.linalg.norm(start))
            pos[n] = start if r <= 0.8 * r_eff else start * (0.8 * r_eff / r)
            heading[n] = base_heading[m]
            pref_speed[n] *= 1.4
        if styles[n] == "group_walk":
            heading[n] = group_heading + 0.1 * wander[n]
        vel[n] = 0.5 * pref_speed[n] * np.array([math.cos(heading[n]), math.sin(heading[n])])
    stopped = np.zeros(N, dtype=bool)
    facing = np.array([math.atan2(v[1], v[0]) for v in vel])
    gesture_phase = np.array([rng.uniform(0.0, 2.0 * math.pi) for rng in rngs])

    positions = np.zeros((N, frames, J, 3))
    t_now = 0.0
    for f in range(frames):
        for n in range(N):
            speed = float(np.linalg.norm(vel[n]))
            amp = min(speed / 1.3, 1.0)
            gesture = 0.5 * (1.0 - min(speed / 0.4, 1.0)) * (1.0 + math.sin(gesture_phase[n] + 2.1 * t_now))
            positions[n, f] = pose_from_state(J, pos[n], facing[n], phase[n], amp, gesture)
        for _ in range(substeps):
            acc = np.zeros((N, 2))
            for n in range(N):
                style = styles[n]
                target = (n - 1) % N
                if style in ("approach", "stop_and_talk") and N > 1:
                    goal = anchor[target] + c * (pos[target] - anchor[target])
                    to_goal = goal - pos[n]
                    dist = float(np.linalg.norm(to_goal))
                    if style == "stop_and_talk" and dist < 1.2:
                        stopped[n] = True
                    gain = min(max((dist - 1.0) / 1.0, 0.0), 1.0)
                    # far away: head for the goal; close in: fall in step with the target
                    desired = pref_speed[n] * gain * _unit(to_goal) + c * (1.0 - gain) * vel[target]
                else:
                    heading[n] += wander[n] * dt
                    desired = pref_speed[n] * np.array([math.cos(heading[n]), math.sin(heading[n])])
                if stopped[n]:
                    desired = np.zeros(2)
                # steer back toward the centre near the arena edge
                r = float(np.linalg.norm(pos[n]))
                if r > 0.75 * r_eff:
                    w = min((r - 0.75 * r_eff) / (0.25 * r_eff), 1.0)
                    inward = -pos[n] / r * pref_speed[n]
                    desired = (1.0 - w) * desired + w * inward
                    if style not in ("approach", "stop_and_talk"):
                        heading[n] = math.atan2(desired[1], desired[0]) if np.any(desired) else heading[n]
                acc[n] = (desired - vel[n]) / tau
                if c > 0.0:
                    for m in range(N):
                        if m == n:
                            continue
                        diff = pos[n] - pos[m]
                        d = float(np.linalg.norm(diff))
                        acc[n] += c * 2.0 * math.exp((0.6 - d) / 0.3) * _unit(diff)
                        if style == "group_walk" and styles[m] == "group_walk":
                            acc[n] += c * 0.8 * (vel[m] - vel[n])
                            acc[n] += c * 0.3 * max(d - 1.0, 0.0) * _unit(-diff)
            new_phase = phase.copy()
            for n in range(N):
                speed = float(np.linalg.norm(vel[n]))
                omega = 2.0 * math.pi * (0.4 + 0.45 * speed)
                if c > 0.0:
                    for m in range(N):
                        if m == n:
                            continue
                        d = float(np.linalg.norm(pos[n] - pos[m]))
                        w = math.exp(-max(d - 1.0, 0.0) / 1.0)
                        omega += c * 2.5 * w * math.sin(phase[m] - phase[n])
                omega = min(max(omega, 0.0), _MAX_PHASE_RATE)
                new_phase[n] = phase[n] + omega * dt
            phase = new_phase
            vel = vel + dt * acc
            for n in range(N):
                s = float(np.linalg.norm(vel[n]))
                if s > max_speed:
                    vel[n] *= max_speed / s
            pos = pos + dt * vel
            for n in range(N):
                r = float(np.linalg.norm(pos[n]))
                if r > r_eff:
                    u = pos[n] / r
                    pos[n] = u * r_eff
                    outward = float(vel[n] @ u)
                    if outward > 0:
                        vel[n] -= outward * u
                s = float(np.linalg.norm(vel[n]))
                if s > 0.05:
                    target_facing = math.atan2(vel[n][1], vel[n][0])
                    delta = (target_facing - facing[n] + math.pi) % (2.0 * math.pi) - math.pi
                    facing[n] += delta * min(1.0, 4.0 * dt)
            t_now += dt
    return MotionSequence(default_skeleton(J), positions, fps)
