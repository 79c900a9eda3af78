"""Single-pass streaming adaptation loop.

Each arriving batch is seen exactly once: predict with the current model,
grow the support set, rebuild prototypes, take one optimizer step on the
masked encoder parameters. Predictions are always the pre-update forward.
Labels never enter this module; batches are bare value arrays.

A run owns its AdaptState exclusively (the loop is inherently sequential);
independent runs over different seeds or configs may execute in parallel.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import accup as acc
from . import autodiff as ad
from .accup import AccupConfig, EnsembleOutput, PrototypeSet, SupportSet
from .augment import apply_augment
from .backbone import Model, classify, encode
from .errors import ConfigurationError, ContractError, NumericDomainError
from .optim import Adam


@dataclass(frozen=True)
class LayerMask:
    """Which encoder blocks receive gradient updates during adaptation."""

    conv1: bool = True
    conv2: bool = True
    conv3: bool = True

    def blocks(self) -> tuple:
        return (self.conv1, self.conv2, self.conv3)

    def __post_init__(self):
        if not any(self.blocks()):
            raise ConfigurationError("at least one encoder block must stay trainable")

    def to_dict(self) -> dict:
        return {"conv1": self.conv1, "conv2": self.conv2, "conv3": self.conv3}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerMask":
        return cls(bool(d.get("conv1", True)), bool(d.get("conv2", True)),
                   bool(d.get("conv3", True)))


@dataclass
class RunRecord:
    """Per-run provenance: predictions, losses, score, timing."""

    strategy: str
    seed: int
    config_hash: str
    batch_losses: list = field(default_factory=list)
    batch_predictions: list = field(default_factory=list)
    macro_f1: float | None = None
    wall_ms: float = 0.0

    def all_predictions(self) -> np.ndarray:
        if not self.batch_predictions:
            return np.array([], dtype=np.intp)
        return np.concatenate([np.asarray(p, dtype=np.intp) for p in self.batch_predictions])

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "batch_losses": [float(v) for v in self.batch_losses],
            "batch_predictions": [[int(v) for v in p] for p in self.batch_predictions],
            "macro_f1": None if self.macro_f1 is None else float(self.macro_f1),
            "wall_ms": float(self.wall_ms),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            strategy=d["strategy"],
            seed=int(d["seed"]),
            config_hash=d["config_hash"],
            batch_losses=list(d.get("batch_losses", [])),
            batch_predictions=[list(p) for p in d.get("batch_predictions", [])],
            macro_f1=d.get("macro_f1"),
            wall_ms=float(d.get("wall_ms", 0.0)),
        )


class AdaptState:
    """Mutable state of one adaptation run.

    The classifier is never part of the trainable set; only the encoder
    blocks selected by the layer mask (plus the ensemble weight when it is
    learnable) are optimized.
    """

    def __init__(self, model: Model, config: AccupConfig, layer_mask: LayerMask | None = None,
                 seed: int = 0):
        self.model = model
        self.config = config
        self.layer_mask = layer_mask or LayerMask()
        self.rng = np.random.default_rng(seed)
        self.support = (
            SupportSet.from_classifier(model.cls_weight.data)
            if config.use_prototypes
            else None
        )
        self.ens_weight = (
            acc.make_ensemble_weight() if config.ensemble_mode == "learnable" else None
        )
        params = list(model.encoder_parameters(self.layer_mask.blocks()).values())
        if self.ens_weight is not None:
            params.append(self.ens_weight)
        self.optimizer = Adam(params, lr=config.lr)
        self.step = 0


def accup_batch(
    model: Model,
    x_raw: np.ndarray,
    x_aug: np.ndarray | None,
    config: AccupConfig,
    support: SupportSet | None = None,
    prototypes: PrototypeSet | None = None,
    ens_weight=None,
):
    """Build the prediction-and-loss graph for one batch.

    The streaming path passes `support`: ensemble rows are appended to it and
    prototypes are rebuilt before being used (as constants). The gradient
    check path passes `prototypes` directly so the loss is a pure function of
    the model parameters. Returns (EnsembleOutput, loss tensor or None).
    """
    bn_mode = "train-stats" if config.bn_policy == "batch" else "running-stats"
    f_raw = encode(model, x_raw, bn_mode)
    p_raw = classify(model, f_raw)
    if config.use_augmentation and x_aug is not None:
        f_aug = encode(model, x_aug, bn_mode)
        p_aug = classify(model, f_aug)
        if config.ensemble_mode == "learnable":
            f_ens, p_ens = acc.ensemble(f_raw, p_raw, f_aug, p_aug, ens_weight, "learnable")
        else:
            f_ens, p_ens = acc.ensemble(f_raw, p_raw, f_aug, p_aug,
                                        config.ensemble_weight, "fixed")
    else:
        f_aug, p_aug = f_raw, p_raw
        f_ens, p_ens = f_raw, p_raw

    h_ens = acc.shannon_entropy(p_ens.data)

    protos = prototypes
    if config.use_prototypes:
        if support is not None:
            acc.update_support(support, f_ens.data, p_ens.data, h_ens,
                               p_ens.data.argmax(axis=1))
            protos = acc.compute_prototypes(support, config.k_support)
        if protos is None:
            raise ContractError("prototype path needs a support set or prototypes")

    if config.use_prototypes and config.use_entropy_comparison:
        p_proto = acc.prototype_logits(f_ens, protos, config.eta)
        h_proto = acc.shannon_entropy(p_proto.data)
        p_out, pseudo = acc.entropy_compare(p_ens, h_ens, p_proto, h_proto)
        p_proto_val, h_proto_val = p_proto.data.copy(), h_proto
    else:
        # without the comparison scheme the ensemble prediction stands
        p_out, pseudo = p_ens, p_ens.data.argmax(axis=1)
        p_proto_val = h_proto_val = None

    outputs = EnsembleOutput(
        f_ens=f_ens.data.copy(),
        p_ens=p_ens.data.copy(),
        h_ens=h_ens,
        p_proto=p_proto_val,
        h_proto=h_proto_val,
        p_out=p_out.data.copy(),
        pseudo_labels=pseudo,
    )

    if not config.use_contrast:
        return outputs, None

    def per_view(p_view, f_view):
        if config.use_prototypes and config.use_entropy_comparison:
            pp = acc.prototype_logits(f_view, protos, config.eta)
            fused, _ = acc.entropy_compare(
                p_view, acc.shannon_entropy(p_view.data),
                pp, acc.shannon_entropy(pp.data),
            )
            return fused
        return p_view

    z = ad.concat([per_view(p_raw, f_raw), per_view(p_aug, f_aug)], axis=0)
    labels = np.concatenate([pseudo, pseudo])
    loss = acc.contrastive_loss(z, labels, config.tau, anchors=config.anchor_mode)
    return outputs, loss


def adapt_batch(state: AdaptState, values: np.ndarray):
    """Consume one unlabeled batch: predict, update memory, one Adam step.

    Returns (predictions, loss value, state). The predictions come from the
    pre-update forward pass.
    """
    if not isinstance(values, np.ndarray):
        raise ContractError(
            "adapt_batch takes a bare (B, Cin, L) value array; strip labels first"
        )
    cfg = state.config
    if cfg.use_augmentation:
        x_aug = apply_augment(values, cfg.augment, state.rng)
    else:
        x_aug = None

    if cfg.use_contrast:
        outputs, loss = accup_batch(state.model, values, x_aug, cfg,
                                    support=state.support, ens_weight=state.ens_weight)
        if not np.isfinite(loss.data):
            raise NumericDomainError(
                f"non-finite adaptation loss at step {state.step}"
            )
        state.optimizer.zero_grad()
        ad.backward(loss)
        loss_value = loss.item()
    else:
        with ad.no_grad():
            outputs, _ = accup_batch(state.model, values, x_aug, cfg,
                                     support=state.support, ens_weight=state.ens_weight)
        state.optimizer.zero_grad()
        loss_value = 0.0
    state.optimizer.step()
    state.step += 1
    return outputs.pseudo_labels, loss_value, state


def run_stream(
    model: Model,
    stream,
    config: AccupConfig,
    seed: int = 0,
    layer_mask: LayerMask | None = None,
    config_hash: str = "",
) -> RunRecord:
    """Fold adapt_batch over an ordered finite stream of batches.

    The input model is cloned, never mutated. Stream items may be bare value
    arrays or objects with .values/.labels; labels, when present on every
    batch, are used only to score the collected predictions afterwards.
    """
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

    state = AdaptState(model.clone(), config, layer_mask, seed)
    record = RunRecord(strategy="accup", seed=seed, config_hash=config_hash)
    start = time.perf_counter()
    for v in values:
        preds, loss_value, state = adapt_batch(state, v)
        record.batch_predictions.append(preds.tolist())
        record.batch_losses.append(loss_value)
    record.wall_ms = (time.perf_counter() - start) * 1e3
    if all(l is not None for l in labels):
        truth = np.concatenate(labels)
        record.macro_f1 = macro_f1(
            record.all_predictions(), truth, model.n_classes
        ).macro_f1
    return record
