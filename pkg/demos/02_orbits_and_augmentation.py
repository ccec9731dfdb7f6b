"""
Orbits and permutation augmentation
===================================

Sites related by symmetry form orbits. Only permutations that map each
orbit onto itself are used to augment training data, which shrinks the
space of orderings dramatically compared with all N! relabellings.
"""

import math

import numpy as np

from xtalflow.symmetry import (
    augment,
    augment_permutation,
    canonical_order,
    full_perm_space_log10,
    partition_orbits,
    reduced_perm_space_log10,
)
from xtalflow.toydata import prototype_record

# %%
# A cubic perovskite has one A cation, one B cation and three equivalent
# oxygens.
rec = prototype_record("SrTiO3")
crystal = rec.to_crystal()
structure = partition_orbits(crystal, rec.ops(), rec.wyckoff_letters)
ordered, structure = canonical_order(crystal, structure)
for g in structure.groups:
    print(f"Z={g.element:2d} Wyckoff {g.wyckoff_letter}: orbit sizes {[o.size for o in g.orbits]}")
print("canonical order:", ordered.atom_types.tolist())

# %%
# Counting: 5! = 120 relabellings in general, but only 3! = 6 respect the
# orbits.
print(f"log10 |S_N|     = {full_perm_space_log10(5):.3f} ({math.factorial(5)})")
print(f"log10 |reduced| = {reduced_perm_space_log10(structure):.3f} ({round(10 ** reduced_perm_space_log10(structure))})")

# %%
# Sampling augmentation permutations until no new one shows up finds
# exactly those six.
rng = np.random.default_rng(0)
seen = {tuple(int(i) for i in augment_permutation(structure, rng)) for _ in range(500)}
for p in sorted(seen):
    print(p)

# %%
# A full augmentation also applies a rigid random translation to every site.
moved = augment(structure, ordered, rng)
print(np.round(moved.frac_coords, 3))

# %%
# For 20 free sites the unrestricted space is 20!, about 10^18.39.
print(f"log10(20!) = {full_perm_space_log10(20):.2f}")
