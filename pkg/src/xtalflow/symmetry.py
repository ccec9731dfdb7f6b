"""Orbit partitioning, composition/symmetry-aware site ordering and the
hierarchical (inter-orbit, intra-orbit) permutation augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import elements
from .lattice import Crystal
from .torus import torus_exp, wrap

__all__ = [
    "InconsistentSymmetryError",
    "SymmetryOp",
    "Orbit",
    "WyckoffGroup",
    "OrbitStructure",
    "identity_op",
    "partition_orbits",
    "canonical_order",
    "composition_order",
    "augment_permutation",
    "augment",
    "reduced_perm_space_log10",
    "full_perm_space_log10",
]


class InconsistentSymmetryError(ValueError):
    """A supplied operation does not map the crystal onto itself."""


@dataclass(frozen=True)
class SymmetryOp:
    """Space-group operation in the fractional basis: ``f -> (R f + tau) mod 1``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation)
        if rot.shape != (3, 3) or not np.array_equal(rot, np.round(rot)):
            raise ValueError("rotation must be a 3x3 integer matrix")
        rot = np.round(rot).astype(np.int64)
        if round(np.linalg.det(rot)) not in (1, -1):
            raise ValueError(f"rotation determinant must be +-1, got {np.linalg.det(rot)}")
        tau = np.mod(np.asarray(self.translation, dtype=float).reshape(3), 1.0)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.where(tau >= 1.0, 0.0, tau))

    def apply(self, frac: np.ndarray) -> np.ndarray:
        return torus_exp(np.asarray(frac) @ self.rotation.T, self.translation)

    def is_identity(self) -> bool:
        return np.array_equal(self.rotation, np.eye(3, dtype=np.int64)) and not np.any(
            wrap(self.translation)
        )


def identity_op() -> SymmetryOp:
    return SymmetryOp(np.eye(3, dtype=np.int64), np.zeros(3))


@dataclass(frozen=True)
class Orbit:
    site_indices: tuple[int, ...]
    element: int
    wyckoff_letter: str

    @property
    def size(self) -> int:
        return len(self.site_indices)


@dataclass(frozen=True)
class WyckoffGroup:
    element: int
    wyckoff_letter: str
    orbits: tuple[Orbit, ...]

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(i for o in self.orbits for i in o.site_indices)


@dataclass(frozen=True)
class OrbitStructure:
    groups: tuple[WyckoffGroup, ...]

    @property
    def orbits(self) -> tuple[Orbit, ...]:
        return tuple(o for g in self.groups for o in g.orbits)

    @property
    def num_sites(self) -> int:
        return sum(o.size for o in self.orbits)


def _group_key(element: int, letter: str):
    return (*elements.en_sort_key(element), letter)


def partition_orbits(crystal: Crystal, ops, wyckoff_letters, tol: float = 1e-3) -> OrbitStructure:
    """Group sites into orbits under the closure of ``ops``.

    Sites ``i`` and ``j`` are merged when some operation maps ``i`` onto ``j``
    within ``tol`` (component-wise, modulo 1). Every image must land on a site
    of the same element and Wyckoff letter.
    """
    n = crystal.num_sites
    letters = [str(x) for x in wyckoff_letters]
    if len(letters) != n:
        raise ValueError(f"{len(letters)} Wyckoff letters for {n} sites")
    if tol <= 0:
        raise ValueError("tol must be positive")
    ops = list(ops) or [identity_op()]
    frac = crystal.frac_coords
    types = crystal.atom_types

    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for op in ops:
        images = op.apply(frac)
        diff = np.abs(wrap(images[:, None, :] - frac[None, :, :])).max(axis=-1)
        for i in range(n):
            same = np.flatnonzero((diff[i] <= tol) & (types == types[i]))
            if same.size == 0:
                raise InconsistentSymmetryError(
                    f"operation maps site {i} to {images[i]}, matching no site of element {types[i]}"
                )
            j = int(same[np.argmin(diff[i, same])])
            if letters[j] != letters[i]:
                raise InconsistentSymmetryError(
                    f"sites {i} and {j} are symmetry-equivalent but carry Wyckoff letters "
                    f"{letters[i]!r} and {letters[j]!r}"
                )
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    members: dict[int, list[int]] = {}
    for i in range(n):
        members.setdefault(find(i), []).append(i)
    orbits = [Orbit(tuple(m), int(types[m[0]]), letters[m[0]]) for m in members.values()]
    return _assemble(orbits)


def _assemble(orbits) -> OrbitStructure:
    by_key: dict[tuple[int, str], list[Orbit]] = {}
    for o in orbits:
        by_key.setdefault((o.element, o.wyckoff_letter), []).append(o)
    keys = sorted(by_key, key=lambda k: _group_key(*k))
    return OrbitStructure(tuple(WyckoffGroup(k[0], k[1], tuple(by_key[k])) for k in keys))


def _coord_key(frac_row) -> tuple[float, float, float]:
    return tuple(float(x) for x in frac_row)


def canonical_order(crystal: Crystal, structure: OrbitStructure):
    """Reorder sites: groups by (electronegativity, Z, Wyckoff letter); orbits
    within a group by their smallest coordinate triple; sites within an orbit
    by coordinate triple. Returns ``(crystal, structure)`` in the new order."""
    frac = crystal.frac_coords
    order: list[int] = []
    new_groups = []
    for group in sorted(structure.groups, key=lambda g: _group_key(g.element, g.wyckoff_letter)):
        sorted_orbits = [sorted(o.site_indices, key=lambda i: _coord_key(frac[i])) for o in group.orbits]
        sorted_orbits.sort(key=lambda sites: _coord_key(frac[sites[0]]))
        new_orbits = []
        for sites in sorted_orbits:
            start = len(order)
            order.extend(sites)
            new_orbits.append(
                Orbit(tuple(range(start, len(order))), group.element, group.wyckoff_letter)
            )
        new_groups.append(WyckoffGroup(group.element, group.wyckoff_letter, tuple(new_orbits)))
    if sorted(order) != list(range(crystal.num_sites)):
        raise ValueError("orbit structure does not partition the crystal's sites")
    return crystal.permuted(order), OrbitStructure(tuple(new_groups))


def composition_order(atom_types) -> np.ndarray:
    """Site order for a bare composition: ascending electronegativity, then Z.

    This is the ordering available for structure prediction, where only the
    composition is known.
    """
    types = np.asarray(atom_types, dtype=np.int64)
    return np.array(sorted(range(types.size), key=lambda i: elements.en_sort_key(types[i])), dtype=np.int64)


def augment_permutation(structure: OrbitStructure, rng: np.random.Generator) -> np.ndarray:
    """Site permutation drawn uniformly from the hierarchical augmentation set.

    Assumes ``structure`` indexes a canonically ordered crystal (contiguous
    group blocks). Returns ``perm`` with new site ``k`` taken from old site
    ``perm[k]``.
    """
    perm: list[int] = []
    for group in structure.groups:
        for idx in rng.permutation(len(group.orbits)):
            sites = np.asarray(group.orbits[idx].site_indices)
            perm.extend(int(i) for i in sites[rng.permutation(sites.size)])
    return np.asarray(perm, dtype=np.int64)


def augment(
    structure: OrbitStructure,
    crystal: Crystal,
    rng: np.random.Generator,
    translate: bool = True,
) -> Crystal:
    """Inter-orbit then intra-orbit permutation, then one global translation
    ``u ~ U[0,1)^3`` added modulo 1. The input is not modified."""
    out = crystal.permuted(augment_permutation(structure, rng))
    if not translate:
        return out
    shift = rng.random(3)
    return Crystal(out.atom_types, torus_exp(out.frac_coords, shift), out.lattice, dict(out.meta))


def reduced_perm_space_log10(structure: OrbitStructure) -> float:
    """log10 of prod_groups (#orbits)! * prod_orbits (orbit size)!."""
    ln = sum(math.lgamma(len(g.orbits) + 1) for g in structure.groups)
    ln += sum(math.lgamma(o.size + 1) for o in structure.orbits)
    return ln / math.log(10.0)


def full_perm_space_log10(n: int) -> float:
    return math.lgamma(n + 1) / math.log(10.0)
