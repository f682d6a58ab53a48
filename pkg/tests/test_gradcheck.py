"""Analytic gradients against central finite differences on a small model."""
import numpy as np
import pytest
import torch

from myobench.models import RecurrentNet, create_recurrent, grad_check, init_parameters
from myobench.vicreg import AugmentConfig, VicregConfig, augment_window, vicreg_loss


def tiny_net(seed=0):
    net = RecurrentNet(input_dim=24, hidden_dim=8, n_classes=7).to(torch.float64)
    init_parameters(net, seed)
    return net


def test_xent_gradients_match_finite_differences():
    net = tiny_net(seed=0)
    rng = np.random.default_rng(1)
    x = torch.from_numpy(rng.standard_normal((16, 10, 24)))
    y = torch.from_numpy(rng.integers(0, 7, 16))

    def loss_fn():
        _, logits = net(x)
        return torch.nn.functional.cross_entropy(logits, y)

    err = grad_check(loss_fn, net, n_samples=220, h=1e-5, seed=2)
    assert err < 1e-4


def test_vicreg_gradients_match_finite_differences():
    net = tiny_net(seed=3)
    backbone = net.backbone
    rng = np.random.default_rng(4)
    trial = rng.standard_normal((60, 24))
    cfg = AugmentConfig(rng_seed=5)
    views_a, views_b = [], []
    for i, anchor in enumerate(range(13, 45, 2)):
        va, _ = augment_window(trial, anchor, 10, cfg, i, 0)
        vb, _ = augment_window(trial, anchor, 10, cfg, i, 1)
        views_a.append(va)
        views_b.append(vb)
    xa = torch.from_numpy(np.stack(views_a))
    xb = torch.from_numpy(np.stack(views_b))
    vic = VicregConfig()

    def loss_fn():
        return vicreg_loss(backbone(xa), backbone(xb), vic).total

    err = grad_check(loss_fn, backbone, n_samples=220, h=1e-5, seed=6)
    assert err < 1e-4


def test_grad_check_requires_parameters():
    net = tiny_net(seed=7)
    with pytest.raises(ValueError):
        grad_check(lambda: torch.tensor(0.0), net, n_samples=0)
    for p in net.parameters():
        p.requires_grad_(False)
    with pytest.raises(ValueError):
        grad_check(lambda: torch.tensor(0.0), net, n_samples=10)


def test_grad_check_requires_double_precision():
    net = create_recurrent(seed=8, hidden_dim=8, dtype=torch.float32)
    x = torch.randn(4, 6, 24)
    y = torch.zeros(4, dtype=torch.long)

    def loss_fn():
        return torch.nn.functional.cross_entropy(net(x)[1], y)

    with pytest.raises(ValueError, match="double"):
        grad_check(loss_fn, net, n_samples=10)
