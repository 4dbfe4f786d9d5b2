"""Train a small encoder, then use its own uncertainty to drop the least reliable predictions.

Uses noise-free projections: at SNR 0.1 the desk-sized model overfits and its
confidence ranking is close to chance.  About five minutes on one core.  Run: python3 demos/03_train_and_filter.py [epochs, default 30]
"""
import dataclasses
import math
import sys

import numpy as np

from cryorient.pipeline import desk_configs, run_experiment, simulate
from cryorient.recon import fsc, reconstruct, resolution_at, uncertainty_report
from cryorient.uncertainty import quantile_filter

# Desk settings with the noise switched off; the CTF and random shifts stay.
sim, enc, tcfg = desk_configs()
sim = dataclasses.replace(sim, snr=math.inf)
if len(sys.argv) > 1:
    tcfg = dataclasses.replace(tcfg, epochs=int(sys.argv[1]))
_, stack = simulate(sim)


def log(row):
    print(f"epoch {row['epoch']:2d}  loss {row['train_loss']:.3f}  "
          f"train median {row['train_med_err']:.3f}  val median {row['val_med_err']:.3f}", flush=True)


res = run_experiment(stack, enc, tcfg, log=log)
print("median error by split:", {k: round(v, 3) for k, v in res.median.items()})

test = stack.indices("test")
rep = uncertainty_report(res.errors[test], res.stats["lambda_max"][test], res.stats["trace_stat"][test])
print(f"Spearman with error: lambda_max {rep.spearman_lambda_max:.3f}, trace_stat {rep.spearman_trace:.3f}")

# Keep the 75% of test images the model is most sure about.
keep = quantile_filter(res.stats["trace_stat"][test], 0.75, res.stats["degenerate"][test])
print(f"median error: all {np.median(res.errors[test]):.3f}, kept {np.median(res.errors[test][keep]):.3f}")

# Reference: the same test images placed at their true orientations, so only orientation error differs.
ref = reconstruct(stack.images[test], stack.quats[test], stack.shifts[test], pixel_size=stack.pixel_size)
for name, sel in (("all", test), ("kept", test[keep])):
    rec = reconstruct(stack.images[sel], res.quats[sel], stack.shifts[sel], pixel_size=stack.pixel_size)
    r = resolution_at(fsc(rec, ref), pixel_size=stack.pixel_size)
    print(f"{name:4s}: {len(sel)} images, resolution {r.angstrom:.1f} A")
