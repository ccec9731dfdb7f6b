"""
Periodic geometry
=================

Fractional coordinates live on a 3-torus, and a lattice has many
equivalent bases. This walk-through shows the shortest-displacement maps
used by the coordinate flow and how Niggli reduction picks one canonical
basis.

Run with ``python3 demos/01_geometry.py``.
"""

import numpy as np

from xtalflow.lattice import (
    Crystal,
    LatticeParams,
    matrix_to_params,
    min_periodic_distance,
    niggli_reduce,
    params_to_matrix,
)
from xtalflow.torus import torus_exp, torus_log

# %%
# Two points near opposite faces of the cell are close on the torus: the
# log map returns the short way round, not the naive difference.
f = np.array([[0.95, 0.10, 0.50]])
g = np.array([[0.05, 0.90, 0.50]])
v = torus_log(f, g)
print("naive difference:", g - f)
print("torus log:       ", v)
print("exp(log) lands on g:", torus_exp(f, v))

# %%
# Walking along the geodesic in ten equal steps never crosses the long way.
path = np.array([torus_exp(f, s * v)[0] for s in np.linspace(0, 1, 11)])
print(np.round(path, 3))

# %%
# The face-centred cubic primitive cell, written in a deliberately skewed
# basis, has the same volume but ugly angles. Niggli reduction recovers the
# 60 degree rhombohedral form.
a = 4.0
fcc = 0.5 * a * np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
skewed = np.array([[1, 0, 0], [1, 1, 0], [2, 1, 1]]) @ fcc
print("skewed:  ", np.round(matrix_to_params(skewed).as_tuple(), 3))
reduced, t = niggli_reduce(skewed)
print("reduced: ", np.round(matrix_to_params(reduced).as_tuple(), 3))
print("transform:\n", t)

# %%
# Minimum-image distances see neighbours across the boundary.
c = Crystal([11, 17], [[0.0, 0.0, 0.0], [0.9, 0.0, 0.0]], LatticeParams.from_tuple(5, 5, 5, 90, 90, 90))
print("closest pair (A):", round(min_periodic_distance(c), 3))
print("round trip of the lattice:", np.round(matrix_to_params(params_to_matrix(c.lattice)).as_tuple(), 12))
