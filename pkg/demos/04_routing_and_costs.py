#!/usr/bin/env python3
"""Dynamic routing mechanics and the cost ledger.

Shows the STEBS pipeline (logits -> budget-normalized probabilities ->
hard samples), how the inference budget knob beta trades expected compute
for capacity, and per-block usage rates under the different routing modes.
"""

import numpy as np

from dmvfn import (
    DmvfnConfig, DmvfnModel, RoutingMode, make_routing, stebs_probabilities,
    model_ledger, usage_rate, SynthConfig, gen_moving_shapes,
)
from dmvfn.tensor import Tensor

model = DmvfnModel(DmvfnConfig(width_scale=0.5), seed=0)
ledger = model_ledger(model, 64, 64)
print("static cost at 64x64: %.1f MFLOPs (blocks) + %.2f MFLOPs (routing net)"
      % (ledger.super_static / 1e6, ledger.routing / 1e6))
print("routing net is %.1f%% of the super network\n" % (100 * ledger.routing / ledger.super_static))

# budget normalization: probabilities scale with beta until the clamp bites
rng = np.random.default_rng(0)
logits = rng.standard_normal(9) * 1.5
print("expected cost vs inference budget beta (same logits):")
for beta in (0.3, 0.4, 0.5, 0.6, 0.7, 0.8):
    w = stebs_probabilities(logits, beta)
    print("  beta %.1f: E[blocks] = %.2f, expected %.1f MFLOPs"
          % (beta, w.sum(), ledger.expected(w) / 1e6))

# per-block usage rates over a small dataset, per routing mode
clips = list(gen_moving_shapes(SynthConfig(num_clips=20, frames=3, seed=7)))
print("\nper-block usage rates x100 (untrained net, so STEBS sits at beta):")
for kind in ("always_on", "random", "stebs"):
    stats = usage_rate(model, clips, RoutingMode(kind=kind, beta=0.5, p=0.5),
                       rng=np.random.default_rng(1))
    print(f"  {kind:10s}", " ".join(f"{v * 100:5.1f}" for v in stats.rates["all"]))

# a trained routing net makes per-sample decisions; here just show shapes
prev = Tensor(clips[0].frames[0][None])
cur = Tensor(clips[0].frames[1][None])
r = make_routing(RoutingMode(kind="stebs", beta=0.5), model.routing, prev, cur,
                 "infer", np.random.default_rng(2))
print("\none sample: probabilities", np.round(r.w[0], 2), "-> selected", r.v.data[0].astype(int))
