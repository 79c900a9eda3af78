"""Shared test helpers: finite differences, toy models, a tiny shift scenario."""

import pytest

import tsadapt.autodiff as ad
from tsadapt.backbone import EncoderConfig, Model, pretrain_source
from tsadapt.data import ShiftSpec, generate_shifted_pair


def finite_difference_max_rel_error(loss_fn, tensors, h=1e-5, floor=1e-6):
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild the graph on every call; tensors are the leaves to
    check. Returns the worst relative error over all coordinates. The floor
    keeps coordinates whose true gradient is zero (e.g. a conv bias feeding a
    train-mode batch norm) in the absolute-error regime instead of comparing
    float noise against float noise.
    """
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    ad.backward(loss)
    grads = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with ad.no_grad():
                up = loss_fn().item()
            flat[i] = orig - h
            with ad.no_grad():
                down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(numeric), abs(gflat[i]), floor)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst


def tiny_model(n_classes=3, in_channels=2, seed=0):
    """A small but fully wired model for fast gradient and pipeline tests."""
    config = EncoderConfig(
        in_channels=in_channels,
        filters=(3, 4, 5),
        kernel_sizes=(3, 3, 3),
        pool_widths=(2, 1, 2),
    )
    return Model(config, n_classes, seed=seed)


SOURCE_SPEC = ShiftSpec(amplitude=0.1, noise_std=0.03)
TARGET_SPEC = ShiftSpec(amplitude=0.3, noise_std=0.5)


@pytest.fixture(scope="session")
def shift_data():
    """One small source/target draw shared across tests."""
    return generate_shifted_pair(SOURCE_SPEC, TARGET_SPEC, (192, 320), seed=0)


@pytest.fixture(scope="session")
def pretrained(shift_data):
    """A quickly pretrained compact model on the shared source split."""
    train, _ = shift_data
    model = Model(EncoderConfig(in_channels=2, filters=(8, 12, 12)), 3, seed=0)
    pretrain_source(model, train.values, train.labels, epochs=8, batch_size=32,
                    lr=1e-3, seed=0)
    return model
