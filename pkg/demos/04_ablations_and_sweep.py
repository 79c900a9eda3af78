#!/usr/bin/env python3
"""Module ablations and a support-size sweep on a reduced synthetic scenario.

Run from the repository root:  python3 demos/04_ablations_and_sweep.py
"""

import numpy as np

from tsadapt.accup import AccupConfig
from tsadapt.adapt import run_stream
from tsadapt.backbone import EncoderConfig, Model, pretrain_source
from tsadapt.data import generate_shifted_pair, make_stream
from tsadapt.experiment import (
    ABLATION_PRESETS,
    HYPERPARAM_PRESETS,
    apply_preset,
    default_synthetic_scenario,
)

scenario = default_synthetic_scenario()
train, target = generate_shifted_pair(
    scenario.source, scenario.target, (scenario.n_source, 640),
    seed=scenario.gen_seed,
)
model = Model(EncoderConfig(in_channels=2, filters=(16, 24, 24)), 3, seed=0)
pretrain_source(model, train.values, train.labels, epochs=40, batch_size=32,
                lr=1e-3, seed=0)
stream = make_stream(target, 32)
base = AccupConfig(**HYPERPARAM_PRESETS["synthetic"])

# --- remove one module at a time ----------------------------------------------
print(f"{'variant':<18s} macro-F1")
full = run_stream(model, stream, base, seed=0).macro_f1
print(f"{'full method':<18s} {full:.4f}")
for name in sorted(ABLATION_PRESETS):
    config = apply_preset(base, name)
    score = run_stream(model, stream, config, seed=0).macro_f1
    print(f"{name:<18s} {score:.4f}")

# --- sweep the support filter size K -------------------------------------------
print("\nsupport filter size sweep (single seed):")
for k in (1, 5, 10, 20, 50, 100, 200, 500):
    config = AccupConfig(**{**HYPERPARAM_PRESETS["synthetic"], "k_support": k})
    score = run_stream(model, stream, config, seed=0).macro_f1
    print(f"  K={k:<4d} macro-F1={score:.4f}")

# --- fixed ensemble weights over the studied grid -------------------------------
print("\nraw-view ensemble weight sweep:")
for w in np.arange(0.1, 1.0, 0.2):
    config = AccupConfig(**{**HYPERPARAM_PRESETS["synthetic"],
                            "ensemble_weight": round(float(w), 2)})
    score = run_stream(model, stream, config, seed=0).macro_f1
    print(f"  w={w:.1f} macro-F1={score:.4f}")
