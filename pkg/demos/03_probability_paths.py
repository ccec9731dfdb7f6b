"""
Discrete and continuous probability paths
=========================================

Atom types follow a masked continuous-time Markov chain, while coordinates
and lattice parameters follow straight (or geodesic) paths integrated with
Euler steps. Both can be checked against exact answers.
"""

import numpy as np

from xtalflow.paths import MASK, cond_vel_frac, cond_vel_linear
from xtalflow.sampler import ctmc_step, ode_step
from xtalflow.torus import torus_log

# %%
# Masked CTMC on three categories driven by the exact rate p1 / (1 - t):
# the terminal histogram reproduces p1.
p1 = np.array([0.5, 0.3, 0.2])
rng = np.random.default_rng(0)
steps, chains = 500, 100_000
atoms = np.full(chains, MASK)
for k in range(steps):
    rate = np.broadcast_to(p1 / (1.0 - k / steps), (chains, 3))
    atoms = ctmc_step(atoms, rate, 1.0 / steps, rng, is_final=k == steps - 1)
freq = np.bincount(atoms, minlength=3) / chains
print("target:", p1, "sampled:", np.round(freq, 4), "TV:", round(0.5 * np.abs(freq - p1).sum(), 4))

# %%
# Euler integration of the conditional velocity lands exactly on the
# endpoint, whatever the number of steps.
f0, f1 = rng.random((4, 3)), rng.random((4, 3))
l0, l1 = np.array([4.0, 5.0, 6.0]), np.array([3.5, 5.5, 7.0])
a0, a1 = np.array([80.0, 90.0, 100.0]), np.array([90.0, 90.0, 90.0])
for k in (10, 100, 500):
    f, l, a = f0, l0, a0
    for i in range(k):
        s = i / k
        f, l, a = ode_step(f, l, a, cond_vel_frac(f, f1, s), cond_vel_linear(l, l1, s),
                           cond_vel_linear(a, a1, s), 1.0 / k)
    print(f"K={k:3d}: torus error {np.abs(torus_log(f, f1)).max():.1e}, "
          f"length error {np.abs(l - l1).max():.1e}")
