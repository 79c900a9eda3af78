"""Reference adaptation strategies sharing the streaming protocol.

source       frozen forward with the pretrained running statistics
bn-stats     forward with current-batch BN statistics, no parameter update
tent         bn-stats forward, then one step minimizing mean prediction
             entropy, updating only the BN affine parameters
pseudo-label bn-stats forward, then one cross-entropy step against the
             argmax hard labels, updating the same normalization parameters
"""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .accup import shannon_entropy
from .adapt import RunRecord
from .backbone import Model, cross_entropy, forward
from .errors import ConfigurationError, ContractError
from .optim import Adam

KINDS = ("source", "bn-stats", "tent", "pseudo-label")


class StrategyConfig:
    """Baseline kind plus the learning rate for the strategies that step."""

    def __init__(self, kind: str, lr: float = 1e-3):
        if kind not in KINDS:
            raise ConfigurationError(f"unknown baseline kind {kind!r}")
        if lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {lr}")
        self.kind = kind
        self.lr = float(lr)

    def takes_step(self) -> bool:
        return self.kind in ("tent", "pseudo-label")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lr": self.lr}


class BaselineState:
    def __init__(self, model: Model, config: StrategyConfig):
        self.model = model
        self.config = config
        self.optimizer = (
            Adam(list(model.bn_parameters().values()), lr=config.lr)
            if config.takes_step()
            else None
        )
        self.step = 0


def baseline_adapt_batch(state: BaselineState, values: np.ndarray):
    """Consume one unlabeled batch under the configured strategy."""
    if not isinstance(values, np.ndarray):
        raise ContractError(
            "baseline_adapt_batch takes a bare (B, Cin, L) value array"
        )
    kind = state.config.kind
    if kind == "source":
        with ad.no_grad():
            _, logits = forward(state.model, values, bn_mode="running-stats")
        preds = logits.data.argmax(axis=1)
    elif kind == "bn-stats":
        with ad.no_grad():
            _, logits = forward(state.model, values, bn_mode="train-stats")
        preds = logits.data.argmax(axis=1)
    elif kind == "tent":
        _, logits = forward(state.model, values, bn_mode="train-stats")
        preds = logits.data.argmax(axis=1)
        p = ad.softmax(logits)
        rows = ad.scalar_mul(ad.tensor_sum(ad.mul(p, ad.log(p)), axis=-1), -1.0)
        loss = ad.mean(rows)
        state.optimizer.zero_grad()
        ad.backward(loss)
        state.optimizer.step()
    else:  # pseudo-label
        _, logits = forward(state.model, values, bn_mode="train-stats")
        preds = logits.data.argmax(axis=1)
        loss = cross_entropy(logits, preds)
        state.optimizer.zero_grad()
        ad.backward(loss)
        state.optimizer.step()
    state.step += 1
    return preds, state


def run_baseline_stream(
    model: Model,
    stream,
    config: StrategyConfig,
    seed: int = 0,
    config_hash: str = "",
) -> RunRecord:
    """Streaming loop for the baselines; same record format as run_stream."""
    from .metrics import macro_f1

    batches = list(stream)
    if not batches:
        raise ContractError("empty stream")
    values, labels = [], []
    for b in batches:
        if isinstance(b, np.ndarray):
            values.append(b)
            labels.append(None)
        else:
            values.append(np.asarray(b.values, dtype=np.float64))
            labels.append(None if b.labels is None else np.asarray(b.labels))

    state = BaselineState(model.clone(), config)
    record = RunRecord(strategy=config.kind, seed=seed, config_hash=config_hash)
    start = time.perf_counter()
    for v in values:
        preds, state = baseline_adapt_batch(state, v)
        record.batch_predictions.append(preds.tolist())
        record.batch_losses.append(0.0)
    record.wall_ms = (time.perf_counter() - start) * 1e3
    if all(l is not None for l in labels):
        truth = np.concatenate(labels)
        record.macro_f1 = macro_f1(
            record.all_predictions(), truth, model.n_classes
        ).macro_f1
    return record


def mean_batch_entropy(model: Model, values: np.ndarray, bn_mode: str = "train-stats") -> float:
    """Mean Shannon entropy of the model's predictions on one batch."""
    with ad.no_grad():
        _, logits = forward(model, values, bn_mode=bn_mode)
    return float(shannon_entropy(logits.data).mean())
