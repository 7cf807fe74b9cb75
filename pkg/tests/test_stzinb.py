import numpy as np
import pytest
import torch

from urbanfusion.models.stzinb import (
    STZINB,
    CrossAttention,
    DiffusionGraphConv,
    STZINBConfig,
    TemporalConvTCN,
    multihead_attention,
    transition_matrix,
)
from urbanfusion.models.zinb import zinb_nll

from . import oracles
from .gradcheck import module_errors, relative_errors
from .test_stgcn import random_graph


def small_config(**kw):
    base = dict(input_horizon=8, gcn_widths=(6, 6, 8), tcn_widths=(6, 6, 8), embed_dim=8, heads=2)
    base.update(kw)
    return STZINBConfig(**base)


# ---------------------------------------------------------------- diffusion conv

@pytest.mark.parametrize("order", [1, 2, 3])
def test_diffusion_conv_matches_oracle(float64, rng, order):
    A = rng.uniform(0, 1, (5, 5)) * (rng.random((5, 5)) < 0.7)
    np.fill_diagonal(A, 0)
    layer = DiffusionGraphConv(3, 4, A, order)
    h = torch.randn(1, 5, 3)
    ref = oracles.diffusion_conv(A, h[0].numpy(), layer.theta_f.detach().numpy(), layer.theta_b.detach().numpy())
    np.testing.assert_allclose(layer(h)[0].detach().numpy(), ref, atol=1e-10)


def test_diffusion_single_self_neighbour(float64):
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    layer = DiffusionGraphConv(1, 1, A, 1)
    with torch.no_grad():
        layer.theta_f.fill_(2.0)
        layer.theta_b.fill_(0.5)
    h = torch.tensor([[[1.5], [-1.0]]])
    torch.testing.assert_close(layer(h), torch.tensor([[[1.5 * 2.5], [0.0]]]))


def test_diffusion_zero_input(float64, rng):
    layer = DiffusionGraphConv(3, 4, random_graph(rng, 5), 2)
    assert torch.all(layer(torch.zeros(2, 5, 3)) == 0)


def test_transition_rows_and_isolated_nodes():
    W = transition_matrix(np.array([[0, 2.0, 2.0], [1.0, 0, 0], [0, 0, 0]]))
    np.testing.assert_allclose(W.sum(axis=1), [1, 1, 0])
    with pytest.raises(ValueError):
        transition_matrix(np.array([[0, -1.0], [1.0, 0]]))


# ---------------------------------------------------------------- TCN

def test_tcn_identity(float64):
    layer = TemporalConvTCN(4, 4)
    with torch.no_grad():
        layer.gamma.weight.copy_(torch.eye(4))
        layer.gamma.bias.zero_()
    h = torch.rand(2, 3, 4)
    torch.testing.assert_close(layer(h), h)


def test_tcn_very_negative_bias_silences():
    layer = TemporalConvTCN(4, 3)
    with torch.no_grad():
        layer.gamma.bias.fill_(-1e6)
    assert torch.all(layer(torch.rand(2, 3, 4)) == 0)


def test_tcn_affine_oracle(float64):
    layer = TemporalConvTCN(4, 3)
    h = torch.randn(5, 4)
    W, b = layer.gamma.weight.detach().numpy(), layer.gamma.bias.detach().numpy()
    ref = np.array([[max(0.0, sum(W[o, i] * h[r, i].item() for i in range(4)) + b[o]) for o in range(3)]
                    for r in range(5)])
    np.testing.assert_allclose(layer(h).detach().numpy(), ref, atol=1e-12)


# ---------------------------------------------------------------- attention

def test_attention_zero_values_leaves_embedding(float64):
    att = CrossAttention(3, 8, 2)
    with torch.no_grad():
        att.W_V.weight.zero_()
    h = torch.randn(2, 5, 8)
    torch.testing.assert_close(att.attend(h, torch.randn(2, 4, 3)), h)


def test_attention_single_key_returns_value(float64):
    q, k, v = torch.randn(1, 3, 4), torch.randn(1, 1, 4), torch.randn(1, 1, 4)
    torch.testing.assert_close(multihead_attention(q, k, v, 2), v.expand(1, 3, 4))


def test_attention_equal_scores_average(float64):
    q = torch.zeros(1, 2, 4)
    k, v = torch.randn(1, 5, 4), torch.randn(1, 5, 4)
    torch.testing.assert_close(multihead_attention(q, k, v, 2), v.mean(dim=1, keepdim=True).expand(1, 2, 4))


def test_attention_heads_must_divide():
    with pytest.raises(ValueError):
        CrossAttention(3, 10, 4)
    with pytest.raises(ValueError):
        STZINBConfig(embed_dim=30, heads=4, gcn_widths=(30,), tcn_widths=(30,))


# ---------------------------------------------------------------- full model

def test_output_codomain(rng):
    model = STZINB(random_graph(rng, 6), small_config())
    n, p, pi = model(torch.randn(4, 8, 6) * 5)
    assert n.shape == p.shape == pi.shape == (4, 6)
    assert torch.all(n > 0) and torch.all((p > 0) & (p < 1)) and torch.all((pi > 0) & (pi < 1))


def test_permutation_equivariance(float64, rng):
    A = random_graph(rng, 6)
    model = STZINB(A, small_config(attention=True), weather_dim=3)
    x, w = torch.randn(2, 8, 6), torch.randn(2, 8, 3)
    perm = rng.permutation(6)
    base = model(x, w)
    model.set_adjacency(A[np.ix_(perm, perm)])
    for a, b in zip(model(x[:, :, perm], w), base):
        torch.testing.assert_close(a, b[:, perm])


def test_weather_ignored_without_attention(rng):
    model = STZINB(random_graph(rng, 5), small_config())
    x = torch.randn(2, 8, 5)
    for a, b in zip(model(x, torch.randn(2, 8, 3)), model(x, torch.randn(2, 8, 3))):
        assert torch.equal(a, b)


def test_attention_requires_aligned_weather(rng):
    model = STZINB(random_graph(rng, 5), small_config(attention=True), weather_dim=3)
    with pytest.raises(ValueError):
        model(torch.randn(2, 8, 5))
    with pytest.raises(ValueError):
        model(torch.randn(2, 8, 5), torch.randn(2, 7, 3))
    with pytest.raises(ValueError):
        STZINB(random_graph(rng, 5), small_config(attention=True))


def test_untrained_predict_distribution_raises(rng):
    model = STZINB(random_graph(rng, 5), small_config())
    with pytest.raises(RuntimeError):
        model.predict_distribution(torch.randn(1, 8, 5))


def test_predict_distribution_after_fit_flag(rng):
    model = STZINB(random_graph(rng, 5), small_config())
    model.fitted = True
    params = model.predict_distribution(torch.randn(3, 8, 5))
    assert params.n.dtype == np.float64 and params.mean().shape == (3, 5)


# ---------------------------------------------------------------- gradients

def test_gradients_diffusion_conv(float64, rng):
    layer = DiffusionGraphConv(3, 2, random_graph(rng, 4), 2)
    h = torch.randn(1, 4, 3, requires_grad=True)
    errs = relative_errors(lambda: (layer(h) ** 2).sum(), [h, layer.theta_f, layer.theta_b])
    assert max(errs) <= 1e-4


def test_gradients_attention(float64):
    att = CrossAttention(3, 4, 2)
    h, w = torch.randn(2, 5, 4, requires_grad=True), torch.randn(2, 3, 3, requires_grad=True)
    assert max(relative_errors(lambda: (att(h, w) ** 2).sum(), [h, w] + list(att.parameters()))) <= 1e-4


@pytest.mark.parametrize("attention", [False, True])
def test_gradients_end_to_end(float64, rng, attention):
    torch.manual_seed(5)
    model = STZINB(random_graph(rng, 4), small_config(attention=attention), weather_dim=2)
    x, w = torch.randn(3, 8, 4), torch.randn(3, 8, 2)
    y = torch.tensor(rng.poisson(2.0, (3, 4)), dtype=torch.float64)
    errs = module_errors(model, lambda: zinb_nll(y, *model(x, w)))
    assert max(errs) <= 1e-3
