import numpy as np
import pytest
import torch

from urbanfusion.models.stgcn import (
    STGCN,
    ChebGraphConv,
    STConvBlock,
    STGCNConfig,
    TemporalGatedConv,
    huber_loss,
    scaled_laplacian,
)
from urbanfusion.models.training import fit, make_windows, seed_everything, step_lr

from . import oracles
from .gradcheck import module_errors, relative_errors


def random_graph(rng, N, density=0.6):
    A = rng.uniform(0.3, 1.0, (N, N)) * (rng.random((N, N)) < density)
    A = np.triu(A, 1)
    return A + A.T


def small_config(**kw):
    base = dict(input_horizon=8, blocks=((4, 3, 4), (4, 3, 4)), head_hidden=5, temporal_kernel=2)
    base.update(kw)
    return STGCNConfig(**base)


# ---------------------------------------------------------------- temporal gated conv

def test_zero_gate_halves_filter(float64):
    layer = TemporalGatedConv(2, 3, 3)
    with torch.no_grad():
        layer.gate.weight.zero_()
        layer.gate.bias.zero_()
    h = torch.randn(1, 12, 4, 2)
    x = h.permute(0, 3, 1, 2)
    expected = 0.5 * layer.filter(x).permute(0, 2, 3, 1)
    torch.testing.assert_close(layer(h), expected)


def test_valid_length():
    assert TemporalGatedConv(1, 2, 3)(torch.randn(2, 12, 5, 1)).shape == (2, 10, 5, 2)


def test_zero_input_zero_bias_gives_zero():
    layer = TemporalGatedConv(2, 3, 3)
    with torch.no_grad():
        layer.filter.bias.zero_()
        layer.gate.bias.zero_()
    assert torch.all(layer(torch.zeros(1, 5, 3, 2)) == 0)


def test_sequence_shorter_than_kernel():
    with pytest.raises(ValueError):
        TemporalGatedConv(1, 1, 3)(torch.zeros(1, 2, 3, 1))


def test_gated_conv_matches_loop_oracle(float64):
    layer = TemporalGatedConv(2, 3, 3)
    h = torch.randn(1, 6, 4, 2)
    ref = oracles.gated_temporal_conv(
        h[0].numpy(), layer.filter.weight[:, :, :, 0].detach().numpy(), layer.filter.bias.detach().numpy(),
        layer.gate.weight[:, :, :, 0].detach().numpy(), layer.gate.bias.detach().numpy())
    np.testing.assert_allclose(layer(h)[0].detach().numpy(), ref, atol=1e-12)


# ---------------------------------------------------------------- chebyshev conv

def test_identity_filter_passthrough(float64, rng):
    L = scaled_laplacian(random_graph(rng, 5))
    layer = ChebGraphConv(3, 3, 3, L)
    with torch.no_grad():
        layer.theta.zero_()
        layer.theta[0] = torch.eye(3)
    h = torch.rand(2, 4, 5, 3)
    torch.testing.assert_close(layer(h), h)


def test_edgeless_graph_is_local(float64):
    layer = ChebGraphConv(2, 2, 3, scaled_laplacian(np.zeros((4, 4))))
    h = torch.randn(1, 1, 4, 2)
    out = layer(h)
    h2 = h.clone()
    h2[..., 1:, :] = torch.randn(1, 1, 3, 2)
    torch.testing.assert_close(layer(h2)[..., 0, :], out[..., 0, :])


def test_path_graph_matches_eigendecomposition(float64, rng):
    A = np.array([[0, 1.0, 0], [1.0, 0, 1.0], [0, 1.0, 0]])
    layer = ChebGraphConv(2, 3, 3, scaled_laplacian(A))
    h = torch.randn(1, 1, 3, 2)
    ref = oracles.cheb_conv_spectral(A, h[0, 0].numpy(), layer.theta.detach().numpy())
    np.testing.assert_allclose(layer(h)[0, 0].detach().numpy(), ref, atol=1e-8)


def test_random_graph_matches_eigendecomposition(float64, rng):
    A = random_graph(rng, 6)
    layer = ChebGraphConv(3, 2, 3, scaled_laplacian(A))
    h = torch.randn(1, 1, 6, 3)
    ref = oracles.cheb_conv_spectral(A, h[0, 0].numpy(), layer.theta.detach().numpy())
    np.testing.assert_allclose(layer(h)[0, 0].detach().numpy(), ref, atol=1e-8)


def test_non_symmetric_adjacency_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        scaled_laplacian(np.array([[0, 1.0], [0.5, 0]]))


# ---------------------------------------------------------------- blocks and model

@pytest.mark.parametrize("k", [2, 3, 4])
def test_block_shape_law(k, rng):
    block = STConvBlock(1, (4, 3, 4), k, 3, scaled_laplacian(random_graph(rng, 5)))
    out = block(torch.randn(2, 12, 5, 1))
    assert out.shape == (2, 12 - 2 * (k - 1), 5, 4)


def test_config_rejects_too_short_horizon():
    with pytest.raises(ValueError):
        STGCNConfig(input_horizon=8, temporal_kernel=3)
    with pytest.raises(ValueError):
        STGCNConfig(huber_delta=0)


def test_zero_head_predicts_zero(rng):
    model = STGCN(random_graph(rng, 5), small_config())
    model.zero_head()
    assert torch.all(model(torch.randn(3, 8, 5)) == 0)


def test_permutation_equivariance(float64, rng):
    A = random_graph(rng, 6)
    torch.manual_seed(0)
    model = STGCN(A, small_config(), weather_dim=2)
    x, w = torch.randn(2, 8, 6), torch.randn(2, 8, 2)
    perm = rng.permutation(6)
    base = model(x, w)
    model.set_adjacency(A[np.ix_(perm, perm)])
    torch.testing.assert_close(model(x[:, :, perm], w), base[:, perm])


def test_deterministic_forward(rng):
    A = random_graph(rng, 5)
    outs = []
    for _ in range(2):
        seed_everything(3)
        model = STGCN(A, small_config())
        outs.append(model(torch.ones(1, 8, 5)))
    assert torch.equal(outs[0], outs[1])


def test_weather_clock_mismatch(rng):
    model = STGCN(random_graph(rng, 4), small_config(), weather_dim=2)
    with pytest.raises(ValueError):
        model(torch.randn(1, 8, 4), torch.randn(1, 7, 2))
    with pytest.raises(ValueError):
        model(torch.randn(1, 8, 4))


# ---------------------------------------------------------------- huber

def test_huber_values():
    z = torch.zeros(1)
    assert huber_loss(z, z).item() == 0
    assert huber_loss(z, torch.ones(1)).item() == pytest.approx(0.5)
    assert huber_loss(z, torch.full((1,), 20.0)).item() == pytest.approx(150.0)


def test_huber_matches_oracle(rng):
    y, yh = rng.normal(0, 15, 50), rng.normal(0, 15, 50)
    got = huber_loss(torch.tensor(y), torch.tensor(yh)).item()
    assert got == pytest.approx(oracles.huber(y, yh), rel=1e-12)


def test_huber_continuous_at_knot(float64):
    for side in (-1e-7, 1e-7):
        r = torch.tensor([10.0 + side], requires_grad=True)
        loss = huber_loss(torch.zeros(1), r)
        loss.backward()
        assert loss.item() == pytest.approx(50.0, abs=1e-5)
        assert r.grad.item() == pytest.approx(10.0, abs=1e-5)


# ---------------------------------------------------------------- gradients

def test_gradients_temporal_conv(float64):
    torch.manual_seed(0)
    layer = TemporalGatedConv(2, 3, 3)
    h = torch.randn(1, 6, 3, 2, requires_grad=True)
    tensors = [h] + list(layer.parameters())
    assert max(relative_errors(lambda: (layer(h) ** 2).sum(), tensors)) <= 1e-4


def test_gradients_cheb_conv(float64, rng):
    torch.manual_seed(1)
    layer = ChebGraphConv(2, 3, 3, scaled_laplacian(random_graph(rng, 5)))
    h = torch.randn(1, 2, 5, 2, requires_grad=True)
    assert max(relative_errors(lambda: (layer(h) ** 2).sum(), [h, layer.theta])) <= 1e-4


def test_gradients_huber(float64):
    y = torch.randn(30) * 15
    yh = (torch.randn(30) * 15).requires_grad_()
    assert max(relative_errors(lambda: huber_loss(y, yh), [yh])) <= 1e-4


def test_gradients_end_to_end(float64, rng):
    torch.manual_seed(2)
    model = STGCN(random_graph(rng, 4), small_config(layer_norm=False))
    x, y = torch.randn(3, 8, 4), torch.randn(3, 4)
    assert max(module_errors(model, lambda: huber_loss(y, model(x)))) <= 1e-3


# ---------------------------------------------------------------- training

def test_lr_schedule():
    assert step_lr(1e-3, 4, 0.7, 5) == 1e-3
    assert step_lr(1e-3, 5, 0.7, 5) == pytest.approx(1e-3 * 0.7)
    assert step_lr(1e-3, 12, 0.7, 5) == pytest.approx(1e-3 * 0.49)


def _toy(series, rng):
    A = random_graph(rng, 5)
    cfg = small_config(max_epochs=50, patience=50, batch_size=8)
    train = make_windows(series, series, 8, range(0, 60))
    val = make_windows(series, series, 8, range(60, 80))
    return A, cfg, train, val


def test_constant_target_learned(rng):
    series = np.full((80, 5), 0.7)
    A, cfg, train, val = _toy(series, rng)
    seed_everything(0)
    model = STGCN(A, cfg)
    hist = fit(model, lambda m, x, w, y: huber_loss(y, m(x, w)), train, val, lr=cfg.lr, batch_size=8,
               max_epochs=50, patience=50, seed=0, decay_rate=0.7, decay_every=5)
    assert hist.train_loss[-1] < 1e-3 * hist.train_loss[0] or hist.train_loss[-1] < 1e-4
    assert hist.lr[5] == pytest.approx(1e-3 * 0.7)
    assert hist.converged


def test_loss_history_reproducible(rng):
    series = rng.normal(size=(80, 5))
    A, cfg, train, val = _toy(series, rng)
    runs = []
    for _ in range(2):
        seed_everything(0)
        model = STGCN(A, cfg)
        runs.append(fit(model, lambda m, x, w, y: huber_loss(y, m(x, w)), train, val, lr=1e-3,
                        batch_size=8, max_epochs=3, patience=5, seed=0).train_loss)
    assert runs[0] == runs[1]
