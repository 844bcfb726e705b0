import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from unitygraph.errors import (ConfigError, InsufficientFramesError, NonFiniteError, SceneFormatError,
                               ShapeMismatchError)
from unitygraph.motion_data import (FLOAT_DECIMALS, MOTION_STYLES, MotionSequence, Skeleton,
                                    SyntheticSceneConfig, default_skeleton, dumps_scene,
                                    generate_synthetic, load_dataset, load_scene, save_scene,
                                    scene_from_dict, scene_to_dict, split_scene, write_dataset)


def chain(J):
    return Skeleton(tuple(f"j{i}" for i in range(J)), tuple((i, i + 1) for i in range(J - 1)))


def random_scene(N=2, F=30, J=4, seed=0, fps=30.0):
    rng = np.random.default_rng(seed)
    return MotionSequence(chain(J), rng.normal(size=(N, F, J, 3)), fps)


# -- skeleton ---------------------------------------------------------------

def test_skeleton_rejects_bad_edges():
    with pytest.raises(SceneFormatError):
        Skeleton(("a", "b"), ((0, 2),))
    with pytest.raises(SceneFormatError):
        Skeleton(("a", "b"), ((1, 1), (0, 1)))
    with pytest.raises(SceneFormatError):
        Skeleton(("a", "b", "c"), ((0, 1),))


@pytest.mark.parametrize("J", [1, 2, 8, 15, 16, 20])
def test_default_skeleton_is_a_tree(J):
    sk = default_skeleton(J)
    assert sk.joint_count == J
    assert len(sk.edges) == J - 1
    parents = sk.parents()
    assert parents[0] == -1 and all(p >= 0 for p in parents[1:])


def test_adjacency_is_symmetric_with_self_loops():
    adj = default_skeleton(8).adjacency()
    assert (adj == adj.T).all() and adj.diagonal().all()
    assert not default_skeleton(8).adjacency(self_loops=False).diagonal().any()


# -- sequences and scene files ---------------------------------------------

def test_motion_sequence_validation():
    with pytest.raises(NonFiniteError):
        MotionSequence(chain(2), np.full((1, 3, 2, 3), np.nan), 10.0)
    with pytest.raises(ShapeMismatchError):
        MotionSequence(chain(3), np.zeros((1, 3, 2, 3)), 10.0)
    with pytest.raises(ShapeMismatchError):
        MotionSequence(chain(2), np.zeros((1, 3, 2, 3)), 0.0)


def test_load_valid_scene(tmp_path):
    seq = random_scene(N=2, F=30, J=4)
    save_scene(seq, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    assert back.positions.shape == (2, 30, 4, 3)


def test_header_frame_mismatch(tmp_path):
    doc = scene_to_dict(random_scene(F=29))
    doc["frames"] = 30
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ShapeMismatchError):
        load_scene(tmp_path / "s.json")


@pytest.mark.parametrize("mutate, err", [
    (lambda d: d.pop("positions"), SceneFormatError),
    (lambda d: d.update(format_version=2), SceneFormatError),
    (lambda d: d.update(positions=[[[1.0, 2.0]]]), ShapeMismatchError),
    (lambda d: d["skeleton"].update(edges=[[0, 9]]), SceneFormatError),
])
def test_malformed_scene(mutate, err):
    doc = scene_to_dict(random_scene())
    mutate(doc)
    with pytest.raises(err):
        scene_from_dict(doc)


def test_non_finite_in_file():
    doc = scene_to_dict(random_scene(N=1, F=2, J=2))
    doc["positions"][0][0][0][0] = float("inf")
    with pytest.raises(NonFiniteError):
        scene_from_dict(doc)


def test_round_trip_is_byte_identical(tmp_path):
    seq = random_scene()
    save_scene(seq, tmp_path / "a.json")
    save_scene(load_scene(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4), st.just(3), st.just(3)),
              elements=finite))
def test_round_trip_lossless_to_declared_precision(positions):
    seq = MotionSequence(chain(3), positions, 25.0)
    back = scene_from_dict(json.loads(dumps_scene(seq)))
    assert np.abs(back.positions - positions).max() <= 0.5 * 10 ** -FLOAT_DECIMALS + 1e-12
    assert dumps_scene(back) == dumps_scene(seq)


def test_dataset_io(tmp_path):
    scenes = [random_scene(seed=i) for i in range(3)]
    write_dataset(tmp_path, scenes, ["train", "train", "test"])
    assert len(load_dataset(tmp_path)) == 3
    assert len(load_dataset(tmp_path, "train")) == 2
    assert len(load_dataset(tmp_path, "val")) == 0
    with pytest.raises(ConfigError):
        write_dataset(tmp_path, scenes[:1], ["holdout"])
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing")


# -- split ----------------------------------------------------------------

@pytest.mark.parametrize("F, T, P", [(60, 15, 45), (30, 16, 14)])
def test_split_sizes(F, T, P):
    sp = split_scene(random_scene(F=F), T, P)
    assert sp.observed.frames == T and sp.future.frames == P


def test_split_insufficient():
    with pytest.raises(InsufficientFramesError):
        split_scene(random_scene(F=10), 8, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 5))
def test_split_reconstructs_and_does_not_alias(T, P, extra):
    seq = random_scene(F=T + P + extra)
    sp = split_scene(seq, T, P)
    np.testing.assert_array_equal(np.concatenate([sp.observed.positions, sp.future.positions], axis=1),
                                  seq.positions[:, :T + P])
    before = sp.future.positions.copy()
    sp.observed.positions[...] = 0.0
    np.testing.assert_array_equal(sp.future.positions, before)
    assert seq.positions.any()


# -- synthetic scenes ----------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        SyntheticSceneConfig(N=0)
    with pytest.raises(ConfigError):
        SyntheticSceneConfig(T=1)
    with pytest.raises(ConfigError):
        SyntheticSceneConfig(coupling=1.5)
    with pytest.raises(ConfigError):
        SyntheticSceneConfig(motion_styles=["dance"])
    with pytest.raises(ConfigError):
        SyntheticSceneConfig(arena_radius=2.0)


def test_generator_is_deterministic():
    cfg = SyntheticSceneConfig(N=3, seed=4, motion_styles=list(MOTION_STYLES))
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert a.frames == cfg.T + cfg.P


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.sampled_from([10.0, 15.0, 25.0]),
       st.floats(0.0, 1.0), st.floats(3.0, 8.0),
       st.lists(st.sampled_from(MOTION_STYLES), min_size=1, max_size=4))
def test_generator_bounds_and_continuity(seed, N, fps, coupling, radius, styles):
    cfg = SyntheticSceneConfig(N=N, T=10, P=20, J=8, seed=seed, coupling=coupling,
                               arena_radius=radius, motion_styles=styles, fps=fps)
    x = generate_synthetic(cfg).positions
    assert np.linalg.norm(x, axis=-1).max() <= radius
    step = np.linalg.norm(np.diff(x, axis=1), axis=-1).max()
    assert step <= 0.5


def test_zero_coupling_isolates_persons():
    a = generate_synthetic(SyntheticSceneConfig(N=3, seed=2, coupling=0.0,
                                                motion_styles=["walk", "walk", "group_walk"]))
    b = generate_synthetic(SyntheticSceneConfig(N=3, seed=2, coupling=0.0,
                                                motion_styles=["walk", "approach", "stop_and_talk"]))
    np.testing.assert_array_equal(a.positions[0], b.positions[0])
    assert not np.array_equal(a.positions[1], b.positions[1])


def test_single_person_scene():
    seq = generate_synthetic(SyntheticSceneConfig(N=1, J=16, motion_styles=["approach"]))
    assert seq.positions.shape == (1, 30, 16, 3)


def test_config_dict_round_trip():
    cfg = SyntheticSceneConfig(N=2, seed=9, motion_styles=["walk", "approach"])
    assert SyntheticSceneConfig.from_dict(cfg.to_dict()) == cfg
