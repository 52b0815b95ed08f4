"""
Ablating the adaptation losses
==============================

Each mode switches off one piece: ``wo_L`` stops source supervision after
the first epoch, ``wo_Lin`` skips the student's self-supervision loss,
``wo_Lex`` freezes the prompts. Accuracies are averaged over a few seeds.
"""

import numpy as np

from autos.pipeline import RunConfig, run_pipeline
from autos.suite import SUITE

seeds = range(5)
modes = ("autos", "autos_sf", "fedavg", "wo_L", "wo_Lin", "wo_Lex", "wo_tarcof")
results = {}
for mode in modes:
    runs = [run_pipeline(RunConfig.from_flat(dict(SUITE, seed=s, **{"adapt.mode": mode}))) for s in seeds]
    results[mode] = runs
    accs = [r.final["accuracy"] for r in runs]
    print(f"{mode:10s} mean {np.mean(accs):.4f}  per seed {np.round(accs, 3).tolist()}")

###############################################################################
# Teacher agreement: cross-entropy between teacher and student before the
# first adaptation pass and after the last one.

for r in results["autos"]:
    print(f"seed {r.seed}: CE {r.final['ce_before']:.3f} -> {r.final['ce_after']:.3f}")
