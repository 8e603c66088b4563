import numpy as np
import pytest
import torch

import oracles
from geovis.fusion import ChannelAttention, Fusion, channel_attention, time_mean
from geovis.visual import VisualStream


@pytest.fixture(autouse=True, scope="module")
def _f64():
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(torch.float32)


def inputs(B=2, T=4, E=3, C=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    ge, ve = torch.randn(B, T, E, C, generator=g), torch.randn(B, T, E, C, generator=g)
    return ge, ve, torch.ones(B, T, E, dtype=torch.bool), torch.ones(B, T, dtype=torch.bool)


def test_zero_w2_gives_half():
    ca = ChannelAttention(6)
    with torch.no_grad():
        ca.w2.weight.zero_(), ca.w2.bias.zero_()
    torch.testing.assert_close(ca(torch.randn(3, 6)), torch.full((3, 6), 0.5))


def test_gap_of_constant():
    x = torch.full((1, 7, 3), 2.5)
    torch.testing.assert_close(time_mean(x, torch.ones(1, 7, dtype=torch.bool)), torch.full((1, 3), 2.5))


def test_gap_ignores_padded_frames():
    x = torch.tensor([[[1.0], [3.0], [100.0]]])
    assert time_mean(x, torch.tensor([[True, True, False]])).item() == pytest.approx(2.0)


def test_two_channel_gate_oracle():
    ca = ChannelAttention(2, ratio=1)
    W1, b1 = [[1.0, -2.0], [0.5, 0.5], [0.0, 1.0], [-1.0, 0.0]], [0.1, 0.0, -0.3, 0.2]
    W2, b2 = [[1.0, 0.0, -1.0, 2.0], [0.5, 0.5, 0.5, 0.5]], [0.0, -0.1]
    with torch.no_grad():
        ca.w1.weight.copy_(torch.tensor(W1)), ca.w1.bias.copy_(torch.tensor(b1))
        ca.w2.weight.copy_(torch.tensor(W2)), ca.w2.bias.copy_(torch.tensor(b2))
    x = torch.tensor([[[0.3, -0.7], [1.1, 0.4]]])
    got = channel_attention(x, ca)[0].tolist()
    gap = [(0.3 + 1.1) / 2, (-0.7 + 0.4) / 2]
    np.testing.assert_allclose(got, oracles.channel_gate(W1, b1, W2, b2, gap), atol=1e-12)


def test_fusion_identity_attention_additive_merge():
    ge, ve, present, fm = inputs(C=3)
    fusion = Fusion(3, 3, 2, 1, use_attention=False)
    with torch.no_grad():
        fusion.merge.weight.copy_(torch.cat([torch.eye(3), torch.eye(3)], 1))
        fusion.merge.bias.zero_()
    torch.testing.assert_close(fusion(ge, ve, present, fm), ge + ve)


def test_masked_entity_zero_output():
    ge, ve, present, fm = inputs()
    present[:, :, 1] = False
    out = Fusion(5, 7, 2, 1)(ge, ve, present, fm)
    assert out[:, :, 1].abs().max() == 0


def test_scalar_pipeline_one_entity():
    """E=1, C2=2: gates from the time-pooled [g; v] descriptor, then merge."""
    fusion = Fusion(2, 3, 1, 0, variant="d", ratio=16)
    ca = fusion.attention["all"]
    rng = np.random.default_rng(3)
    W1, b1 = rng.normal(size=(4, 4)).round(2), rng.normal(size=4).round(2)
    W2, b2 = rng.normal(size=(4, 4)).round(2), rng.normal(size=4).round(2)
    Wm, bm = rng.normal(size=(3, 4)).round(2), rng.normal(size=3).round(2)
    with torch.no_grad():
        for lin, W, b in ((ca.w1, W1, b1), (ca.w2, W2, b2), (fusion.merge, Wm, bm)):
            lin.weight.copy_(torch.tensor(W)), lin.bias.copy_(torch.tensor(b))
    g = [[0.5, -1.0], [1.5, 0.25], [-0.5, 0.0]]
    v = [[0.2, 0.1], [0.0, -0.3], [1.0, 2.0]]
    out = fusion(torch.tensor(g)[None, :, None], torch.tensor(v)[None, :, None],
                 torch.ones(1, 3, 1, dtype=torch.bool), torch.ones(1, 3, dtype=torch.bool))
    T = len(g)
    gap = [sum(g[t][c] for t in range(T)) / T for c in range(2)] + [sum(v[t][c] for t in range(T)) / T for c in range(2)]
    A = oracles.channel_gate(W1.tolist(), b1.tolist(), W2.tolist(), b2.tolist(), gap)
    for t in range(T):
        x = [g[t][0] * A[0], g[t][1] * A[1], v[t][0] * A[2], v[t][1] * A[3]]
        np.testing.assert_allclose(out[0, t, 0].detach().numpy(), oracles.linear(Wm.tolist(), bm.tolist(), x),
                                   atol=1e-12)


@pytest.mark.parametrize("variant", ["a", "b", "c", "d"])
def test_variants_share_output_shape(variant):
    ge, ve, present, fm = inputs()
    out, A = Fusion(5, 7, 2, 1, variant=variant)(ge, ve, present, fm, return_attention=True)
    assert out.shape == (2, 4, 3, 7)
    assert A.shape == (2, 2, 3, 5)
    assert ((A > 0) & (A < 1)).all()


def test_time_entity_pooling_is_entity_symmetric():
    ge, ve, present, fm = inputs()
    fusion = Fusion(5, 7, 3, 0, gap_mode="time_entity")
    perm = [2, 0, 1]
    torch.testing.assert_close(fusion(ge[:, :, perm], ve[:, :, perm], present, fm),
                               fusion(ge, ve, present, fm)[:, :, perm])


def test_visual_stream_examples():
    vs = VisualStream(3, 2)
    with torch.no_grad():
        for m in vs.mlp:
            if hasattr(m, "bias"):
                m.bias.zero_()
    assert vs(torch.zeros(1, 4, 3), torch.ones(1, 4, dtype=torch.bool)).abs().max() == 0
    vs = VisualStream(3, 2)
    mask = torch.tensor([[True, False]])
    assert vs(torch.randn(1, 2, 3), mask)[0, 1].abs().max() == 0


def test_visual_stream_scalar_oracle():
    vs = VisualStream(1, 1)
    lin1, lin2 = vs.mlp[0], vs.mlp[2]
    with torch.no_grad():
        lin1.weight.fill_(1.5), lin1.bias.fill_(-0.5), lin2.weight.fill_(-2.0), lin2.bias.fill_(0.25)
    for x in (-1.0, 0.1, 2.0):
        got = vs(torch.tensor([[x]]), torch.tensor([True])).item()
        assert got == pytest.approx(oracles.mlp([[1.5]], [-0.5], [[-2.0]], [0.25], [x])[0], abs=1e-12)


def test_visual_stream_locality():
    vs = VisualStream(4, 3)
    x = torch.randn(2, 5, 4)
    m = torch.ones(2, 5, dtype=torch.bool)
    y = x.clone()
    y[0, 2] += 1.0
    diff = (vs(x, m) - vs(y, m)).abs().sum(-1)
    assert diff[0, 2] > 0
    diff[0, 2] = 0
    assert diff.max() == 0


def test_visual_dim_mismatch_rejected():
    from geovis.errors import DataError

    with pytest.raises(DataError, match="visual feature dim"):
        VisualStream(4, 3)(torch.randn(2, 5), torch.ones(2, dtype=torch.bool))
