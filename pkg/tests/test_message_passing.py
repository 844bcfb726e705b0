import math
from itertools import product

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import layer_params, message_passing_oracle
from unitygraph.errors import NumericError
from unitygraph.hypergraph import count_messages, init_state
from unitygraph.message_passing import MessagePassing

FLAG_SETS = [f for f in product([True, False], repeat=3) if any(f)]


def randomise(mp: MessagePassing, gen: torch.Generator, scale=0.7):
    with torch.no_grad():
        for p in mp.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)


def test_zero_layers_rejected():
    with pytest.raises(ValueError):
        MessagePassing(4, layers=0)


def test_uniform_attention_for_identical_members():
    mp = MessagePassing(4, 1).double()
    g = torch.randn(1, 1, 4, dtype=torch.float64).expand(3, 5, 4).clone()
    _, _, (rec,) = mp(init_state(g))
    torch.testing.assert_close(rec.alpha_short, torch.full((3, 4, 2), 0.5, dtype=torch.float64))
    torch.testing.assert_close(rec.alpha_long, torch.full((3, 5), 0.2, dtype=torch.float64))
    torch.testing.assert_close(rec.alpha_spatial, torch.full((5, 3), 1 / 3, dtype=torch.float64))


def test_negative_value_branch_leaves_edges_unchanged():
    mp = MessagePassing(3, 1).double()
    with torch.no_grad():
        mp.layers[0].W_v.weight.copy_(-torch.eye(3))
    g = torch.rand(2, 4, 3, dtype=torch.float64) + 0.1     # positive, so W_v maps to negative
    s0 = init_state(g)
    s1, _ = mp.update_hyperedges(s0, 0)
    for name in ("short_term", "long_term", "spatial"):
        assert torch.equal(getattr(s1.edges, name), getattr(s0.edges, name))
    assert s1.layer == 1


def test_zero_mlps_leave_nodes_unchanged():
    mp = MessagePassing(3, 2).double()
    for layer in mp.layers:
        for m in (layer.mlp_short, layer.mlp_long, layer.mlp_spatial):
            for p in m.parameters():
                torch.nn.init.zeros_(p)
    g = torch.randn(2, 4, 3, dtype=torch.float64)
    Z, _, _ = mp(init_state(g))
    assert torch.equal(Z, g)


def test_hand_chosen_single_person_instance():
    # N=1, T=2, D=2 with fixed projections; compared to the loop oracle
    mp = MessagePassing(2, 1).double()
    with torch.no_grad():
        L = mp.layers[0]
        L.W_e.weight.copy_(torch.tensor([[1.0, 0.5], [-0.5, 2.0]]))
        L.W_g.weight.copy_(torch.tensor([[0.3, -1.0], [1.0, 0.2]]))
        L.W_v.weight.copy_(torch.tensor([[1.0, 0.0], [0.5, 1.0]]))
    g = torch.tensor([[[0.2, -1.0], [1.5, 0.7]]], dtype=torch.float64)
    Z, state, _ = mp(init_state(g))
    Zo, eo, _ = message_passing_oracle(layer_params(mp), g.numpy())
    assert np.abs(state.edges.short_term[0, 0].detach().numpy() - eo[("s", 0, 0)]).max() <= 1e-12
    assert np.abs(state.edges.long_term[0].detach().numpy() - eo[("l", 0)]).max() <= 1e-12
    assert np.abs(Z.detach().numpy() - Zo).max() <= 1e-12


@pytest.mark.parametrize("flags", FLAG_SETS)
def test_matches_oracle_for_every_family_combination(flags):
    gen = torch.Generator().manual_seed(sum(flags) * 7 + flags[0])
    for N, T in [(1, 2), (2, 3), (3, 4)]:
        mp = MessagePassing(4, 2, *flags).double()
        randomise(mp, gen)
        g = torch.randn(N, T, 4, generator=gen, dtype=torch.float64)
        Z, state, recs = mp(init_state(g))
        Zo, eo, logs = message_passing_oracle(layer_params(mp), g.numpy(), flags)
        assert np.abs(Z.detach().numpy() - Zo).max() <= 1e-9
        alpha, beta = logs[-1]
        rec = recs[-1]
        for (n, t), row in beta.items():
            slots = [s for s in range(4) if rec.beta_mask[n, t, s]]
            np.testing.assert_allclose(rec.beta[n, t, slots].detach().numpy(), list(row.values()), atol=1e-12)
        if flags[1]:
            for n in range(N):
                np.testing.assert_allclose(rec.alpha_long[n].detach().numpy(), alpha[("l", n)], atol=1e-12)


@pytest.mark.parametrize("flags", FLAG_SETS)
def test_disabled_family_is_frozen_and_shapes_stable(flags):
    mp = MessagePassing(4, 2, *flags).double()
    g = torch.randn(2, 5, 4, dtype=torch.float64)
    s0 = init_state(g)
    Z, s, recs = mp(s0)
    assert Z.shape == g.shape
    for on, name in zip(flags, ("short_term", "long_term", "spatial")):
        same = torch.equal(getattr(s.edges, name), getattr(s0.edges, name))
        assert same == (not on)
    for rec in recs:
        assert (rec.alpha_short is None) == (not flags[0])
        assert rec.beta_mask[..., 2].all() == flags[1]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 2**31 - 1), st.floats(0.1, 5.0))
def test_attention_groups_normalised(N, T, seed, scale):
    gen = torch.Generator().manual_seed(seed)
    mp = MessagePassing(8, 2)
    randomise(mp, gen, scale)
    g = torch.randn(N, T, 8, generator=gen) * scale
    _, _, recs = mp(init_state(g))
    for rec in recs:
        for grp in rec.groups():
            assert abs(grp.sum().item() - 1.0) <= 1e-6
            assert (grp >= 0).all() and (grp <= 1).all()


def test_attention_json_rows_sum_to_one():
    mp = MessagePassing(4, 1)
    _, _, (rec,) = mp(init_state(torch.randn(2, 3, 4)))
    doc = rec.to_dict()
    for family, rows in doc["alpha"].items():
        for row in rows.values():
            assert abs(sum(row) - 1) <= 1e-6
    for row in doc["beta"].values():
        assert abs(sum(row.values()) - 1) <= 1e-6
    assert set(doc["beta"]["person=0,frame=0"]) == {"short_next", "long_term", "spatial"}


def test_person_permutation_equivariance():
    mp = MessagePassing(8, 3).double()
    g = torch.randn(4, 6, 8, dtype=torch.float64)
    Z, s, _ = mp(init_state(g))
    rng = np.random.default_rng(0)
    for _ in range(10):
        perm = list(rng.permutation(4))
        Zp, sp, _ = mp(init_state(g[perm]))
        torch.testing.assert_close(Zp, Z[perm], rtol=0, atol=1e-10)
        torch.testing.assert_close(sp.edges.long_term, s.edges.long_term[perm], rtol=0, atol=1e-10)
        torch.testing.assert_close(sp.edges.spatial, s.edges.spatial, rtol=0, atol=1e-10)


def test_batched_equals_unbatched():
    mp = MessagePassing(4, 2).double()
    g = torch.randn(3, 2, 5, 4, dtype=torch.float64)
    Zb, _, _ = mp(init_state(g))
    for b in range(3):
        torch.testing.assert_close(Zb[b], mp(init_state(g[b]))[0], rtol=0, atol=1e-12)


@pytest.mark.parametrize("N, T", [(1, 2), (2, 3), (3, 15), (4, 9)])
def test_message_count_matches_accounting(N, T):
    mp = MessagePassing(16, 3)
    mp(init_state(torch.randn(N, T, 16)))
    per_layer = sum(mp.message_count.values()) // 3
    c = count_messages(N, T, 16)
    assert per_layer == c["executed_cost"]
    assert mp.message_count["edge_phase"] // 3 == c["executed_edge_phase"]


def test_non_finite_raises():
    mp = MessagePassing(4, 1)
    g = torch.randn(2, 3, 4)
    g[0, 0, 0] = float("nan")
    with pytest.raises(NumericError):
        mp(init_state(g))
