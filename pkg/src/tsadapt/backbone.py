"""Three-block 1D-CNN encoder, linear classifier, and source pretraining.

Each encoder block is conv1d -> batch norm -> relu -> max pool; a global
average pool over time turns the last block's activations into one feature
vector per sample. The classifier is a single linear layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BNState, Tensor
from .errors import ConformanceError, ContractError, LabelRangeError

BN_MODES = ("train-stats", "running-stats")


@dataclass(frozen=True)
class EncoderConfig:
    """Shape of the encoder: three blocks of (filters, kernel, stride, pool).

    Convolutions use padding = kernel // 2 ("same" up to parity), so pooling
    does all the shrinking. The feature dimension equals the last filter
    count because of the global average pool.
    """

    in_channels: int
    filters: tuple = (64, 128, 128)
    kernel_sizes: tuple = (8, 5, 3)
    strides: tuple = (1, 1, 1)
    pool_widths: tuple = (2, 2, 2)

    def __post_init__(self):
        if self.in_channels < 1:
            raise ContractError("in_channels must be positive")
        for name in ("filters", "kernel_sizes", "strides", "pool_widths"):
            if len(getattr(self, name)) != 3:
                raise ContractError(f"{name} must list exactly three blocks")

    @property
    def feature_dim(self) -> int:
        return self.filters[-1]

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "filters": list(self.filters),
            "kernel_sizes": list(self.kernel_sizes),
            "strides": list(self.strides),
            "pool_widths": list(self.pool_widths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            in_channels=int(d["in_channels"]),
            filters=tuple(d.get("filters", (64, 128, 128))),
            kernel_sizes=tuple(d.get("kernel_sizes", (8, 5, 3))),
            strides=tuple(d.get("strides", (1, 1, 1))),
            pool_widths=tuple(d.get("pool_widths", (2, 2, 2))),
        )


class ConvBlock:
    __slots__ = ("weight", "bias", "gamma", "beta", "bn")

    def __init__(self, weight, bias, gamma, beta, bn: BNState):
        self.weight = weight
        self.bias = bias
        self.gamma = gamma
        self.beta = beta
        self.bn = bn


class Model:
    """Encoder parameters (conv + BN per block) and a linear classifier."""

    def __init__(self, config: EncoderConfig, n_classes: int, seed: int = 0):
        if n_classes < 2:
            raise ContractError("need at least two classes")
        self.config = config
        self.n_classes = n_classes
        rng = np.random.default_rng(seed)
        self.blocks: list[ConvBlock] = []
        cin = config.in_channels
        for f, k in zip(config.filters, config.kernel_sizes):
            std = np.sqrt(2.0 / (cin * k))
            self.blocks.append(
                ConvBlock(
                    weight=Tensor(rng.normal(0.0, std, (f, cin, k)), requires_grad=True),
                    bias=Tensor(np.zeros(f), requires_grad=True),
                    gamma=Tensor(np.ones(f), requires_grad=True),
                    beta=Tensor(np.zeros(f), requires_grad=True),
                    bn=BNState(f),
                )
            )
            cin = f
        fdim = config.feature_dim
        self.cls_weight = Tensor(
            rng.normal(0.0, np.sqrt(1.0 / fdim), (n_classes, fdim)), requires_grad=True
        )
        self.cls_bias = Tensor(np.zeros(n_classes), requires_grad=True)

    def encoder_parameters(self, blocks=(True, True, True)) -> dict:
        params = {}
        for i, (blk, on) in enumerate(zip(self.blocks, blocks)):
            if not on:
                continue
            params[f"enc.{i}.conv.w"] = blk.weight
            params[f"enc.{i}.conv.b"] = blk.bias
            params[f"enc.{i}.bn.gamma"] = blk.gamma
            params[f"enc.{i}.bn.beta"] = blk.beta
        return params

    def bn_parameters(self) -> dict:
        params = {}
        for i, blk in enumerate(self.blocks):
            params[f"enc.{i}.bn.gamma"] = blk.gamma
            params[f"enc.{i}.bn.beta"] = blk.beta
        return params

    def named_parameters(self) -> dict:
        params = self.encoder_parameters()
        params["cls.w"] = self.cls_weight
        params["cls.b"] = self.cls_bias
        return params

    def named_buffers(self) -> dict:
        bufs = {}
        for i, blk in enumerate(self.blocks):
            bufs[f"enc.{i}.bn.rmean"] = blk.bn.running_mean
            bufs[f"enc.{i}.bn.rvar"] = blk.bn.running_var
        return bufs

    def clone(self) -> "Model":
        other = Model.__new__(Model)
        other.config = self.config
        other.n_classes = self.n_classes
        other.blocks = [
            ConvBlock(
                weight=Tensor(b.weight.data, requires_grad=True),
                bias=Tensor(b.bias.data, requires_grad=True),
                gamma=Tensor(b.gamma.data, requires_grad=True),
                beta=Tensor(b.beta.data, requires_grad=True),
                bn=b.bn.clone(),
            )
            for b in self.blocks
        ]
        other.cls_weight = Tensor(self.cls_weight.data, requires_grad=True)
        other.cls_bias = Tensor(self.cls_bias.data, requires_grad=True)
        return other


def encode(model: Model, x, bn_mode: str = "running-stats") -> Tensor:
    """Run the encoder on a (B, Cin, L) batch, returning (B, F) features."""
    if bn_mode not in BN_MODES:
        raise ContractError(f"unknown bn mode {bn_mode!r}")
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim != 3 or t.shape[1] != model.config.in_channels:
        raise ConformanceError(
            f"encode: input shape {t.shape} does not conform to "
            f"(B, {model.config.in_channels}, L)"
        )
    cfg = model.config
    for blk, k, s, p in zip(model.blocks, cfg.kernel_sizes, cfg.strides, cfg.pool_widths):
        t = ad.conv1d(t, blk.weight, blk.bias, stride=s, padding=k // 2)
        t = ad.batch_norm1d(t, blk.gamma, blk.beta, blk.bn, mode=bn_mode)
        t = ad.relu(t)
        t = ad.max_pool1d(t, p)
    return ad.mean(t, axis=2)


def classify(model: Model, features) -> Tensor:
    """Linear classifier: logits = features @ W.T + bias."""
    f = features if isinstance(features, Tensor) else Tensor(features)
    return ad.linear(f, model.cls_weight, model.cls_bias)


def forward(model: Model, x, bn_mode: str = "running-stats"):
    feats = encode(model, x, bn_mode)
    return feats, classify(model, feats)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the given integer labels."""
    n, c = logits.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.mul(ad.log(ad.softmax(logits)), Tensor(onehot))
    return ad.scalar_mul(ad.tensor_sum(picked), -1.0 / n)


def pretrain_source(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int = 40,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    epoch_losses: list | None = None,
) -> Model:
    """Empirical risk minimization with Adam and cross-entropy.

    Trains encoder and classifier jointly with BN in train-stats mode; the
    model is updated in place and returned. epoch_losses, when given, is
    filled with the mean minibatch loss of each epoch.
    """
    from .optim import Adam

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 3 or len(x) != len(y):
        raise ContractError(f"bad training data shapes {x.shape} / {y.shape}")
    if len(x) == 0:
        raise ContractError("empty training dataset")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= model.n_classes:
        raise LabelRangeError(
            f"labels must be integers in 0..{model.n_classes - 1}"
        )
    opt = Adam(list(model.named_parameters().values()), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        losses = []
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            _, logits = forward(model, x[idx], bn_mode="train-stats")
            loss = cross_entropy(logits, y[idx])
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
        if epoch_losses is not None:
            epoch_losses.append(float(np.mean(losses)))
    return model


def predict(model: Model, x, bn_mode: str = "running-stats") -> np.ndarray:
    """Argmax class of each sample, without recording a graph."""
    with ad.no_grad():
        _, logits = forward(model, x, bn_mode)
    return logits.data.argmax(axis=1)


# ---------------------------------------------------------------------------
# snapshots: binary tensors plus a JSON sidecar with the architecture
# ---------------------------------------------------------------------------

def save_model(path, model: Model) -> None:
    tensors = dict(model.named_parameters())
    tensors.update(model.named_buffers())
    ad.save_tensors(path, tensors)
    sidecar = {
        "encoder": model.config.to_dict(),
        "n_classes": model.n_classes,
    }
    with open(f"{path}.json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)


def load_model(path) -> Model:
    with open(f"{path}.json") as f:
        sidecar = json.load(f)
    config = EncoderConfig.from_dict(sidecar["encoder"])
    model = Model(config, int(sidecar["n_classes"]))
    tensors = ad.load_tensors(path)
    for name, param in model.named_parameters().items():
        if name not in tensors:
            raise ContractError(f"snapshot is missing parameter {name!r}")
        if tensors[name].shape != param.data.shape:
            raise ConformanceError(
                f"snapshot tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {param.data.shape}"
            )
        param.data[...] = tensors[name]
    for name, buf in model.named_buffers().items():
        if name not in tensors:
            raise ContractError(f"snapshot is missing buffer {name!r}")
        buf[...] = tensors[name]
    return model
