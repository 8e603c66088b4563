import math

import numpy as np
import pytest
import torch
import torch.nn as nn

import oracles
from geovis.ieg import InterdependentEntityGraph, aggregate_neighbors, neighbor_attention, neighbor_feature


@pytest.fixture(autouse=True, scope="module")
def _f64():
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(torch.float32)


def identity_w3(c):
    w3 = nn.Linear(c, c)
    with torch.no_grad():
        w3.weight.copy_(torch.eye(c)), w3.bias.zero_()
    return w3


def test_lambda_one_is_identity():
    f = torch.randn(3, 4)
    torch.testing.assert_close(neighbor_feature(f, nn.Linear(4, 4), 3, lam=1.0), f)


def test_lambda_zero_constant_features():
    f = torch.full((3, 4), 1.5)
    torch.testing.assert_close(neighbor_feature(f, identity_w3(4), 3, lam=0.0), torch.full((3, 4), 0.75))


def test_two_channel_neighbor_feature_oracle():
    w3 = nn.Linear(2, 2)
    W, b = [[1.0, -0.5], [2.0, 0.25]], [0.1, -0.2]
    with torch.no_grad():
        w3.weight.copy_(torch.tensor(W)), w3.bias.copy_(torch.tensor(b))
    f = [0.4, -1.2]
    got = neighbor_feature(torch.tensor([f]), w3, 3, lam=0.5)[0].tolist()
    z = oracles.linear(W, b, f)
    g = sum(z) / 2
    np.testing.assert_allclose(got, [0.5 * f[0] + 0.5 * g / 2, 0.5 * f[1] + 0.5 * g / 2], atol=1e-12)


def test_aggregate_neighbors_examples():
    S = torch.randn(3, 2)
    assert aggregate_neighbors(S, torch.tensor([True, False, False]), 0).abs().max() == 0
    rows = aggregate_neighbors(S, torch.tensor([True, False, True]), 0)
    assert rows[0].abs().max() == 0
    torch.testing.assert_close(rows[1], S[2])
    present = torch.tensor([True, True, False, True])
    S = torch.randn(4, 3)
    want = [[S[u, c].item() * float(present[u]) for c in range(3)] for u in (0, 2, 3)]
    np.testing.assert_allclose(aggregate_neighbors(S, present, 1).numpy(), want)


def test_identical_neighbors_all_ones():
    row = torch.randn(1, 5)
    torch.testing.assert_close(neighbor_attention(row.expand(2, 5)), torch.ones(2))


def test_single_valid_neighbor_weight_one():
    W = neighbor_attention(torch.randn(2, 3), torch.tensor([True, False]))
    assert W[0].item() == pytest.approx(1.0)


def test_neighbor_attention_scalar_oracle():
    S = [[0.5, -1.0], [1.5, 0.25]]
    W = neighbor_attention(torch.tensor(S)).tolist()
    want = [0.0, 0.0]
    for q in S:
        p = oracles.softmax([sum(a * b for a, b in zip(k, q)) / math.sqrt(2) for k in S])
        want = [w + pk for w, pk in zip(want, p)]
    np.testing.assert_allclose(W, want, atol=1e-12)


def test_refine_two_entities_lambda_one():
    ieg = InterdependentEntityGraph(3, lam=1.0)
    f = torch.tensor([[0.3, -0.2, 1.0]]).expand(2, 3)
    refined, _ = ieg(f, torch.ones(2, dtype=torch.bool))
    torch.testing.assert_close(refined, 2 * f)


def test_identical_entities_identical_refined():
    ieg = InterdependentEntityGraph(4)
    refined, _ = ieg(torch.randn(1, 4).expand(3, 4), torch.ones(3, dtype=torch.bool))
    torch.testing.assert_close(refined, refined[:1].expand(3, 4))


@pytest.mark.parametrize("present", [[1, 1, 1], [1, 0, 1], [1, 0, 0]])
def test_refine_scalar_oracle(present):
    ieg = InterdependentEntityGraph(2, lam=0.5)
    W3, b3 = [[0.7, -0.3], [0.2, 1.1]], [0.05, -0.1]
    with torch.no_grad():
        ieg.w3.weight.copy_(torch.tensor(W3)), ieg.w3.bias.copy_(torch.tensor(b3))
    f = [[0.5, -1.0], [1.5, 0.25], [-0.4, 0.8]]
    refined, _ = ieg(torch.tensor(f), torch.tensor(present, dtype=torch.bool))
    np.testing.assert_allclose(refined.detach().numpy(), oracles.ieg_refine(f, present, W3, b3), atol=1e-12)


def test_zero_neighbor_context_passes_features_through():
    ieg = InterdependentEntityGraph(4, zero_neighbor_context=True)
    f = torch.randn(2, 3, 4)
    refined, _ = ieg(f, torch.ones(2, 3, dtype=torch.bool))
    torch.testing.assert_close(refined, f)


def test_invalid_neighbor_values_have_no_influence():
    ieg = InterdependentEntityGraph(4)
    f = torch.randn(3, 4)
    present = torch.tensor([True, False, True])
    g = f.clone()
    g[1] = 1e3
    torch.testing.assert_close(ieg(f, present)[0], ieg(g, present)[0])
