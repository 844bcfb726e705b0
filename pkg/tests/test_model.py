import numpy as np
import torch

from unitygraph.encoder import adjacency_mask
from unitygraph.hypergraph import init_state
from unitygraph.model import UnityGraphModel, parameter_count, parameter_groups
from unitygraph.motion_data import SyntheticSceneConfig, default_skeleton, generate_synthetic
from unitygraph.objectives import LossWeights


def scene(N=3, J=8, seed=0):
    return generate_synthetic(SyntheticSceneConfig(N=N, T=6, P=4, J=J, seed=seed,
                                                   motion_styles=["walk", "approach"]))


def test_parameter_groups_partition_the_model():
    m = UnityGraphModel(8, 16, 24, 2)
    ids = [id(p) for g in parameter_groups(m).values() for p in g]
    assert len(ids) == len(set(ids))
    assert set(ids) == {id(p) for p in m.parameters()}
    assert parameter_count(m) == sum(p.numel() for p in m.parameters())


def test_parameter_count_stable_across_initialisations():
    counts = {parameter_count(UnityGraphModel(15, 64, 128, 3)) for _ in range(3)}
    assert len(counts) == 1


def test_translation_of_the_scene_translates_the_prediction():
    m = UnityGraphModel(8, 16, 24, 2).double()
    x = torch.tensor(scene().positions[:, :6])
    adj = adjacency_mask(default_skeleton(8))
    shift = torch.tensor([1.5, -2.0, 0.3], dtype=torch.float64)
    a = m(x, adj, 4)
    b = m(x + shift, adj, 4)
    torch.testing.assert_close(b.y_hat, a.y_hat + shift, rtol=0, atol=1e-9)
    torch.testing.assert_close(b.y_hat_local, a.y_hat_local, rtol=0, atol=1e-9)


def test_batched_forward_matches_per_scene():
    m = UnityGraphModel(8, 16, 24, 2).double()
    xs = torch.tensor(np.stack([scene(seed=s).positions[:, :6] for s in range(3)]))
    adj = adjacency_mask(default_skeleton(8))
    batched = m(xs, adj, 4).y_hat
    for b in range(3):
        torch.testing.assert_close(batched[b], m(xs[b], adj, 4).y_hat, rtol=0, atol=1e-12)


def test_objective_terms_are_finite_and_weighted():
    m = UnityGraphModel(8, 16, 24, 2).double()
    s = scene()
    x = torch.tensor(s.positions[:, :6])
    y = torch.tensor(s.positions[:, 6:10])
    out = m(x, adjacency_mask(s.skeleton), 4)
    rep = m.objective(out, y, LossWeights())
    f = rep.as_floats()
    assert all(np.isfinite(v) and v >= 0 for v in f.values())
    assert abs(f["total"] - (0.7 * f["pre"] + 0.2 * f["rec"] + 0.1 * f["inf"])) < 1e-12


def test_reconstruction_overfits_one_scene():
    torch.manual_seed(0)
    s = generate_synthetic(SyntheticSceneConfig(N=3, T=15, P=15, J=8, seed=0))
    x = torch.tensor(s.positions[:, :15], dtype=torch.float32)
    m = UnityGraphModel(8, 32, 64, 3)
    adj = adjacency_mask(s.skeleton)
    opt = torch.optim.AdamW(m.parameters(), lr=3e-3, weight_decay=0.0)
    sched = torch.optim.lr_scheduler.StepLR(opt, 250, 0.5)
    xl = x - m.root_offset(x)
    for _ in range(800):
        Z, _, _ = m.message_passing(init_state(m.encoder(xl, adj)))
        err = torch.sqrt(((m.reconstruction(Z) - xl) ** 2).sum())
        opt.zero_grad()
        err.backward()
        opt.step()
        sched.step()
    with torch.no_grad():
        Z, _, _ = m.message_passing(init_state(m.encoder(xl, adj)))
        mm = (m.reconstruction(Z) - xl).norm(dim=-1).mean().item() * 1000
    assert mm < 5.0
