"""
Transfer learning and the three model topologies
================================================

A central classifier donates its weights to an RU-model; the frozen
RU-model is replicated in front of a voting head (distributed model) and,
with a frozen DU feature extractor added, in the hybrid model.
"""

import numpy as np

from cfamc.flops import estimate_model_flops
from cfamc.model import (
    ModelSpec,
    assemble_distributed,
    assemble_hybrid,
    build_classifier,
    build_du_feature_model,
    trainable_names,
    transfer_weights,
)

rng = np.random.default_rng(0)
x = (rng.standard_normal((5, 3, 256)) + 1j * rng.standard_normal((5, 3, 256))).astype(np.complex64)

central = build_classifier(ModelSpec("central", 128, 4), seed=1)
print("central probabilities row sums:", central.predict_proba(x).sum(1))

ru = build_classifier(ModelSpec("ru", 128, 4), seed=2)
transfer_weights(central, ru, ("feature_extraction", "decision"))
gap = np.abs(ru.predict_proba(x[:, 0]) - central.predict_proba(x[:, 0])).max()
print(f"RU-model vs donor on one branch: max difference {gap:.1e}")
print("RU-model trainable parameters after transfer:", trainable_names(ru))

distributed = assemble_distributed(ru, n_ru=3, seed=3)
print("distributed: voting input", distributed.voting.dense1.in_features,
      "trainable", sorted({n.split(".")[0] for n in trainable_names(distributed)}))

du = build_du_feature_model(ModelSpec("du_feature", 256, 7), seed=4)
transfer_weights(build_classifier(ModelSpec("central", 256, 7), seed=5), du, ("feature_extraction",))
hybrid = assemble_hybrid(ru, du, n_ru=3, seed=6, frame_len=256)
print("hybrid: voting input", hybrid.voting.dense1.in_features)
print("hybrid predictions:", hybrid.predict(x))

for model in (central, distributed, hybrid):
    r = estimate_model_flops(model.spec)
    print(f"{model.spec.tag}: per-RU {r.per_ru / 1e6:.2f} MFLOPs, DU {r.du / 1e6:.2f} MFLOPs, "
          f"total {r.mflops:.2f}")
