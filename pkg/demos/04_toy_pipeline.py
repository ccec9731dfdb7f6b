"""
Toy pipeline in miniature
=========================

Builds the synthetic rock-salt/perovskite corpus, trains a small model for
a few hundred steps, and samples all three tasks. The numbers are rough at
this size; the command-line ``train`` with the generated ``train.cfg`` is
the full-size version.

Run with ``python3 demos/04_toy_pipeline.py [steps]``.
"""

import sys

import numpy as np

from xtalflow.config import RunConfig
from xtalflow.metrics import match_rate_rmse, structural_validity
from xtalflow.model import FlowModel
from xtalflow.sampler import Task, generate_batch, guided_generate
from xtalflow.toydata import make_toy_dataset, prototype_crystal, toy_compositions
from xtalflow.trainer import backbone_config, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

# %%
records = make_toy_dataset(200, seed=0)
cfg = RunConfig().updated(d_model=32, n_layers=1, n_heads=4, d_time=32, batch_size=32, lr=1e-3,
                          max_steps=steps, ema_decay=0.99, orbit_tol=0.1, augment_translation=False,
                          val_every=10_000, val_samples=16, val_steps=50)
result = train(records, cfg)
losses = np.array([r.loss for r in result.history])
print(f"loss: first 10 steps {losses[:10].mean():.3f}, last 20 steps {losses[-20:].mean():.3f}")

# %%
# The trainer fits the length prior and atom-count histogram from the data;
# rebuild them for sampling.
from xtalflow.paths import fit_lognormal  # noqa: E402

prior = fit_lognormal(np.stack([r.to_crystal().lattice.lengths for r in records]))
sizes, freq = np.unique([len(r.atomic_numbers) for r in records], return_counts=True)
counts = {int(n): k / len(records) for n, k in zip(sizes, freq)}
model = FlowModel(backbone_config(cfg), result.state.ema, prior, counts)
rng = np.random.default_rng(1)

# %%
# De novo generation.
dng = generate_batch([Task.dng()] * 20, model, 200, rng)
print("DNG structural validity:", np.mean([structural_validity(c) for c in dng]))

# %%
# Structure prediction for each prototype composition, five candidates each.
targets = [prototype_crystal(f) for f in toy_compositions()]
preds = [generate_batch([Task.csp(t.atom_types)] * 5, model, 200, rng) for t in targets]
print("CSP match rate %.1f%%, RMSE %.4f" % match_rate_rmse(preds, targets))

# %%
# Guided atom-type generation on the rock-salt frame.
out = guided_generate(Task.atg(targets[0]), model, 200, rng)
print("ATG types on the NaCl frame:", out.atom_types.tolist())
