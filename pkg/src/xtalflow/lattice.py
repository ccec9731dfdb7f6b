"""Crystal representation, lattice algebra, Niggli reduction and periodic distances.

Conventions
-----------
* A lattice matrix has the lattice vectors as **rows**; Cartesian positions of
  fractional rows ``F`` (shape ``(N, 3)``) are ``F @ L``.
* Angles are degrees on every public surface.
* :func:`params_to_matrix` returns the canonical lower-triangular orientation
  (a along x, b in the xy-plane).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import elements
from .torus import wrap

__all__ = [
    "InvalidLatticeError",
    "InvalidCrystalError",
    "ReductionError",
    "LatticeParams",
    "Crystal",
    "params_to_matrix",
    "matrix_to_params",
    "frac_to_cart",
    "cell_volume",
    "niggli_reduce",
    "is_niggli_reduced",
    "min_periodic_distance",
    "self_image_distance",
]

ANGLE_MIN, ANGLE_MAX = 60.0, 120.0
_ANGLE_SLACK = 1e-6
_MIN_VOLUME = 1e-12


class InvalidLatticeError(ValueError):
    pass


class InvalidCrystalError(ValueError):
    pass


class ReductionError(RuntimeError):
    pass


@dataclass(frozen=True)
class LatticeParams:
    """Cell lengths (angstrom) and angles (degrees: alpha, beta, gamma)."""

    lengths: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=float).reshape(3)
        angles = np.asarray(self.angles, dtype=float).reshape(3)
        if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
            raise InvalidLatticeError(f"lattice lengths must be positive, got {lengths}")
        if not np.all(np.isfinite(angles)) or np.any(angles <= 0) or np.any(angles >= 180):
            raise InvalidLatticeError(f"lattice angles must lie in (0, 180), got {angles}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "angles", angles)

    @classmethod
    def from_tuple(cls, a, b, c, alpha, beta, gamma) -> "LatticeParams":
        return cls(np.array([a, b, c]), np.array([alpha, beta, gamma]))

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(x) for x in (*self.lengths, *self.angles))

    def in_angle_domain(self) -> bool:
        return bool(
            np.all(self.angles >= ANGLE_MIN - _ANGLE_SLACK)
            and np.all(self.angles <= ANGLE_MAX + _ANGLE_SLACK)
        )

    @property
    def volume(self) -> float:
        return cell_volume(params_to_matrix(self))


@dataclass(frozen=True)
class Crystal:
    """One primitive cell: atomic numbers, fractional coordinates ``(N, 3)`` in
    [0, 1), and lattice parameters with angles in [60, 120] degrees."""

    atom_types: np.ndarray
    frac_coords: np.ndarray
    lattice: LatticeParams
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        types = np.asarray(self.atom_types, dtype=np.int64).reshape(-1)
        frac = np.asarray(self.frac_coords, dtype=float).reshape(-1, 3)
        if types.size < 1:
            raise InvalidCrystalError("a crystal needs at least one site")
        if frac.shape[0] != types.size:
            raise InvalidCrystalError(
                f"{types.size} atom types but {frac.shape[0]} coordinate rows"
            )
        if np.any(types < 1) or np.any(types > elements.MAX_Z):
            raise InvalidCrystalError(f"atom types outside 1..{elements.MAX_Z}: {types}")
        bad = np.argwhere(~((frac >= 0.0) & (frac < 1.0)))
        if bad.size:
            i, k = bad[0]
            raise InvalidCrystalError(
                f"site {i} coordinate {k} = {frac[i, k]!r} outside [0, 1)"
            )
        if not isinstance(self.lattice, LatticeParams):
            raise InvalidCrystalError("lattice must be LatticeParams")
        if not self.lattice.in_angle_domain():
            raise InvalidCrystalError(
                f"lattice angles {self.lattice.angles} outside [{ANGLE_MIN}, {ANGLE_MAX}]"
            )
        object.__setattr__(self, "atom_types", types)
        object.__setattr__(self, "frac_coords", frac)

    @property
    def num_sites(self) -> int:
        return int(self.atom_types.size)

    @property
    def matrix(self) -> np.ndarray:
        return params_to_matrix(self.lattice)

    @property
    def volume(self) -> float:
        return cell_volume(self.matrix)

    def composition(self) -> dict[int, int]:
        zs, counts = np.unique(self.atom_types, return_counts=True)
        return {int(z): int(n) for z, n in zip(zs, counts)}

    def permuted(self, order) -> "Crystal":
        order = np.asarray(order, dtype=np.int64)
        return Crystal(self.atom_types[order], self.frac_coords[order], self.lattice, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, Crystal):
            return NotImplemented
        return (
            np.array_equal(self.atom_types, other.atom_types)
            and np.array_equal(self.frac_coords, other.frac_coords)
            and np.array_equal(self.lattice.lengths, other.lattice.lengths)
            and np.array_equal(self.lattice.angles, other.lattice.angles)
        )

    __hash__ = None


def params_to_matrix(p: LatticeParams) -> np.ndarray:
    """Lower-triangular lattice matrix (rows are a, b, c)."""
    a, b, c = p.lengths
    alpha, beta, gamma = np.deg2rad(p.angles)
    ca, cb, cg = np.cos(alpha), np.cos(beta), np.cos(gamma)
    sg = np.sin(gamma)
    cy = (ca - cb * cg) / sg
    cz2 = 1.0 - cb * cb - cy * cy
    volume = a * b * c * sg * np.sqrt(max(cz2, 0.0))
    if cz2 <= 0.0 or volume < _MIN_VOLUME:
        raise InvalidLatticeError(f"degenerate cell for params {p.as_tuple()}")
    return np.array(
        [
            [a, 0.0, 0.0],
            [b * cg, b * sg, 0.0],
            [c * cb, c * cy, c * np.sqrt(cz2)],
        ]
    )


def matrix_to_params(m) -> LatticeParams:
    """Row norms and pairwise angles (degrees) of a lattice matrix."""
    m = np.asarray(m, dtype=float).reshape(3, 3)
    lengths = np.linalg.norm(m, axis=1)
    if np.any(lengths < 1e-12):
        raise InvalidLatticeError("zero-length lattice vector")
    if abs(np.linalg.det(m)) < _MIN_VOLUME:
        raise InvalidLatticeError("near-collinear or coplanar lattice vectors")

    def angle(i, j):
        cos = np.dot(m[i], m[j]) / (lengths[i] * lengths[j])
        return np.rad2deg(np.arccos(np.clip(cos, -1.0, 1.0)))

    return LatticeParams(lengths, np.array([angle(1, 2), angle(0, 2), angle(0, 1)]))


def frac_to_cart(c: Crystal) -> np.ndarray:
    """Cartesian positions, shape ``(N, 3)``."""
    return c.frac_coords @ params_to_matrix(c.lattice)


def cell_volume(m) -> float:
    return float(abs(np.linalg.det(np.asarray(m, dtype=float))))


# --------------------------------------------------------------------------
# Niggli reduction (Krivy & Gruber, with the epsilon-stabilized comparisons of
# Grosse-Kunstleve, Sauter & Adams)
# --------------------------------------------------------------------------

_A1 = np.array([[0, -1, 0], [-1, 0, 0], [0, 0, -1]])
_A2 = np.array([[-1, 0, 0], [0, 0, -1], [0, -1, 0]])
_A8 = np.array([[1, 0, 1], [0, 1, 1], [0, 0, 1]])


def _metric_params(g):
    return g[0, 0], g[1, 1], g[2, 2], 2 * g[1, 2], 2 * g[0, 2], 2 * g[0, 1]


def niggli_reduce(m, eps_rel: float = 1e-5, max_iter: int = 10_000):
    """Niggli-reduce a lattice matrix.

    Returns ``(reduced, T)`` with integer ``T`` (``|det T| = 1``) such that
    ``reduced = T @ m``; the orientation of ``m`` is kept.
    """
    m = np.asarray(m, dtype=float).reshape(3, 3)
    vol = cell_volume(m)
    if vol < _MIN_VOLUME:
        raise InvalidLatticeError("cannot reduce a degenerate lattice")
    e = eps_rel * vol ** (1.0 / 3.0)
    # basis vectors as columns of B; every step is B <- B @ M, G <- M^T G M
    total = np.eye(3, dtype=np.int64)

    def apply(mat):
        nonlocal total, g
        total = total @ mat
        g = mat.T @ g @ mat

    g = m @ m.T
    for _ in range(max_iter):
        A, B, C, xi, eta, zeta = _metric_params(g)
        if B + e < A or (abs(A - B) < e and abs(xi) > abs(eta) + e):
            apply(_A1)
            A, B, C, xi, eta, zeta = _metric_params(g)
        if C + e < B or (abs(B - C) < e and abs(eta) > abs(zeta) + e):
            apply(_A2)
            continue

        l = 0 if abs(xi) < e else int(np.sign(xi))
        mm = 0 if abs(eta) < e else int(np.sign(eta))
        n = 0 if abs(zeta) < e else int(np.sign(zeta))
        if l * mm * n == 1:
            apply(np.diag([l, mm, n]))
        else:
            i = -1 if l == 1 else 1
            j = -1 if mm == 1 else 1
            k = -1 if n == 1 else 1
            if i * j * k == -1:
                if n == 0:
                    k = -1
                elif mm == 0:
                    j = -1
                elif l == 0:
                    i = -1
            apply(np.diag([i, j, k]))
        A, B, C, xi, eta, zeta = _metric_params(g)

        if abs(xi) > B + e or (abs(xi - B) < e and 2 * eta < zeta - e) or (
            abs(xi + B) < e and zeta < -e
        ):
            apply(np.array([[1, 0, 0], [0, 1, -int(np.sign(xi))], [0, 0, 1]]))
            continue
        if abs(eta) > A + e or (abs(eta - A) < e and 2 * xi < zeta - e) or (
            abs(eta + A) < e and zeta < -e
        ):
            apply(np.array([[1, 0, -int(np.sign(eta))], [0, 1, 0], [0, 0, 1]]))
            continue
        if abs(zeta) > A + e or (abs(zeta - A) < e and 2 * xi < eta - e) or (
            abs(zeta + A) < e and eta < -e
        ):
            apply(np.array([[1, -int(np.sign(zeta)), 0], [0, 1, 0], [0, 0, 1]]))
            continue
        s = xi + eta + zeta + A + B
        if s < -e or (abs(s) < e and 2 * (A + eta) + zeta > e):
            apply(_A8)
            continue
        break
    else:
        raise ReductionError(f"Niggli reduction did not converge in {max_iter} iterations")

    t = total.T.copy()
    return t @ m, t


def is_niggli_reduced(m, eps_rel: float = 1e-5) -> bool:
    """Check the full set of Niggli conditions on the metric of ``m``."""
    m = np.asarray(m, dtype=float).reshape(3, 3)
    e = eps_rel * cell_volume(m) ** (1.0 / 3.0)
    A, B, C, xi, eta, zeta = _metric_params(m @ m.T)
    if A > B + e or B > C + e:
        return False
    if abs(A - B) < e and abs(xi) > abs(eta) + e:
        return False
    if abs(B - C) < e and abs(eta) > abs(zeta) + e:
        return False
    type1 = xi > e and eta > e and zeta > e
    type2 = xi <= e and eta <= e and zeta <= e
    if not (type1 or type2):
        return False
    if abs(xi) > B + e or abs(eta) > A + e or abs(zeta) > A + e:
        return False
    if xi + eta + zeta + A + B < -e:
        return False
    if type1:
        if abs(xi - B) < e and zeta > 2 * eta + e:
            return False
        if abs(eta - A) < e and zeta > 2 * xi + e:
            return False
        if abs(zeta - A) < e and eta > 2 * xi + e:
            return False
    else:
        if abs(xi + B) < e and abs(zeta) > e:
            return False
        if abs(eta + A) < e and abs(zeta) > e:
            return False
        if abs(zeta + A) < e and abs(eta) > e:
            return False
        if abs(xi + eta + zeta + A + B) < e and 2 * (A + eta) + zeta > e:
            return False
    return True


# --------------------------------------------------------------------------
# periodic distances
# --------------------------------------------------------------------------

def _image_offsets(p: LatticeParams) -> np.ndarray:
    ratio = p.lengths.max() / p.lengths.min()
    wide = np.any(p.angles < 75.0) or np.any(p.angles > 105.0) or ratio > 3.0
    r = range(-2, 3) if wide else range(-1, 2)
    return np.array(list(product(r, r, r)), dtype=float)


def min_periodic_distance(c: Crystal) -> float:
    """Minimum-image distance over distinct site pairs (inf for one site)."""
    n = c.num_sites
    if n < 2:
        return float("inf")
    lat = params_to_matrix(c.lattice)
    offsets = _image_offsets(c.lattice)
    i, j = np.triu_indices(n, k=1)
    d = wrap(c.frac_coords[j] - c.frac_coords[i])
    cart = (d[:, None, :] + offsets[None, :, :]) @ lat
    return float(np.sqrt(np.min(np.einsum("pok,pok->po", cart, cart))))


def self_image_distance(p: LatticeParams) -> float:
    """Shortest nonzero lattice vector within the image search box."""
    offsets = _image_offsets(p)
    offsets = offsets[np.any(offsets != 0, axis=1)]
    cart = offsets @ params_to_matrix(p)
    return float(np.sqrt(np.min(np.einsum("ok,ok->o", cart, cart))))
