"""Synthetic two-prototype corpus: rock-salt (2 sites) and cubic perovskite (5 sites).

Rock-salt crystals use the face-centred primitive cell (lengths ``a/sqrt 2``,
angles 60 degrees). Each crystal carries the full cubic point group as
fractional-basis operations, so coordinate jitter leaves the labels valid
only up to the jitter size; preprocess with ``orbit_tol`` of about 0.1.
"""

from __future__ import annotations

from itertools import permutations, product

import numpy as np

from .elements import atomic_number
from .io import DatasetRecord, record_from_crystal
from .lattice import Crystal, matrix_to_params
from .symmetry import SymmetryOp
from .torus import torus_exp

__all__ = [
    "ROCKSALT",
    "PEROVSKITE",
    "prototype_crystal",
    "prototype_ops",
    "prototype_record",
    "make_toy_dataset",
    "toy_compositions",
    "TOY_TRAIN_CONFIG",
]

# formula -> cubic conventional lattice constant (angstrom)
ROCKSALT = {"NaCl": (("Na", "Cl"), 5.64), "KCl": (("K", "Cl"), 6.29),
            "MgO": (("Mg", "O"), 4.21), "CaO": (("Ca", "O"), 4.81)}
PEROVSKITE = {"SrTiO3": (("Sr", "Ti", "O"), 3.905), "BaTiO3": (("Ba", "Ti", "O"), 4.00),
              "CaTiO3": (("Ca", "Ti", "O"), 3.84), "KTaO3": (("K", "Ta", "O"), 3.989)}

_FCC_PRIMITIVE = 0.5 * np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])

# desk-scale settings written next to the generated corpus
TOY_TRAIN_CONFIG = """\
# desk-scale training settings for the toy corpus
d_model = 64
n_layers = 2
n_heads = 4
coord_harmonics = 1
orbit_tol = 0.1
augment_translation = False
lr = 1e-3
ema_decay = 0.99
batch_size = 256
max_steps = 2000
val_every = 50
val_samples = 64
val_steps = 100
"""


def _cubic_rotations():
    mats = []
    for perm in permutations(range(3)):
        for signs in product((1, -1), repeat=3):
            r = np.zeros((3, 3), dtype=np.int64)
            for i, (j, sgn) in enumerate(zip(perm, signs)):
                r[i, j] = sgn
            mats.append(r)
    return mats


def prototype_ops(kind: str) -> list[SymmetryOp]:
    """The 48 cubic point operations in the prototype's fractional basis."""
    basis = _FCC_PRIMITIVE if kind == "rocksalt" else np.eye(3)
    inv_t = np.linalg.inv(basis).T
    ops = []
    for r in _cubic_rotations():
        r_frac = inv_t @ r @ basis.T
        ops.append(SymmetryOp(np.round(r_frac).astype(np.int64), np.zeros(3)))
    return ops


def _layout(formula: str):
    if formula in ROCKSALT:
        (cat, an), a = ROCKSALT[formula]
        types = [atomic_number(cat), atomic_number(an)]
        frac = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]])
        return "rocksalt", types, frac, ["a", "b"], a * _FCC_PRIMITIVE, 225
    if formula in PEROVSKITE:
        (aa, bb, ox), a = PEROVSKITE[formula]
        types = [atomic_number(aa), atomic_number(bb)] + [atomic_number(ox)] * 3
        frac = np.array([[0, 0, 0], [0.5, 0.5, 0.5], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]], dtype=float)
        return "perovskite", types, frac, ["a", "b", "c", "c", "c"], a * np.eye(3), 221
    raise KeyError(f"unknown toy formula {formula!r}")


def toy_compositions() -> list[str]:
    return list(ROCKSALT) + list(PEROVSKITE)


def prototype_crystal(formula: str) -> Crystal:
    """Ideal (unjittered) prototype structure."""
    _, types, frac, _, mat, _ = _layout(formula)
    return Crystal(np.array(types), frac, matrix_to_params(mat), {"id": formula})


def prototype_record(formula: str, record_id: str | None = None) -> DatasetRecord:
    kind, _, _, letters, _, sg = _layout(formula)
    return record_from_crystal(prototype_crystal(formula), record_id or formula, sg, prototype_ops(kind), letters)


def make_toy_dataset(n: int = 400, seed: int = 0, coord_sigma: float = 0.01,
                     coord_clip: float = 0.02, length_jitter: float = 0.02) -> list[DatasetRecord]:
    """``n`` jittered prototype crystals, cycling through the eight formulas."""
    rng = np.random.default_rng(seed)
    formulas = toy_compositions()
    ops_cache = {kind: prototype_ops(kind) for kind in ("rocksalt", "perovskite")}
    records = []
    for i in range(n):
        formula = formulas[i % len(formulas)]
        kind, types, frac, letters, mat, sg = _layout(formula)
        noise = np.clip(coord_sigma * rng.standard_normal(frac.shape), -coord_clip, coord_clip)
        params = matrix_to_params(mat)
        lengths = params.lengths * (1.0 + length_jitter * rng.standard_normal(3))
        lattice = type(params)(lengths, params.angles)
        crystal = Crystal(np.array(types), torus_exp(frac, noise), lattice)
        records.append(record_from_crystal(crystal, f"toy-{i:05d}", sg, ops_cache[kind], letters))
    return records
