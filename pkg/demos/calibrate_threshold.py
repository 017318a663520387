"""
Choosing the binarization threshold
===================================

The solver returns a soft mask scaled to [0, 1]; the benchmark needs binary
masks. The threshold is picked on seeds 100-119 and then frozen. The
acceptance suite uses seeds 0-9 and a J Mean floor slightly under the
held-out score (0.60).
"""

import numpy as np

from govos.media_io import desk_spec, synth_sequence
from govos.metrics import j_mean
from govos.solver import SolverConfig, binarize, finalize_mask, run

thresholds = np.round(np.arange(0.10, 0.75, 0.05), 2)


def score_table(seeds):
    rows = []
    for seed in seeds:
        video, flows, gt = synth_sequence(desk_spec(seed))
        soft, _ = run(video, flows, SolverConfig())
        mask = finalize_mask(soft)
        rows.append([j_mean(binarize(mask, t), gt.masks) for t in thresholds])
    return np.array(rows)


held_out = score_table(range(100, 120)).mean(axis=0)
best = thresholds[int(np.argmax(held_out))]
print("held-out mean J by threshold:")
for t, s in zip(thresholds, held_out):
    print(f"  {t:.2f}  {s:.3f}{'  <- best' if t == best else ''}")

test = score_table(range(10))
col = list(thresholds).index(0.3)
print(f"\nseeds 0-9 at 0.30: mean J {test[:, col].mean():.3f}, per seed {np.round(test[:, col], 2)}")
