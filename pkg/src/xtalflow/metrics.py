"""Evaluation: structure matching, match rate and RMSE, structural and
compositional validity, and 1-D Wasserstein property distances."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.stats import wasserstein_distance

from . import elements
from .lattice import (
    Crystal,
    InvalidLatticeError,
    cell_volume,
    min_periodic_distance,
    niggli_reduce,
    params_to_matrix,
    self_image_distance,
)
from .torus import wrap

__all__ = [
    "MatchTolerances",
    "structure_match",
    "match_rate_rmse",
    "structural_validity",
    "compositional_validity",
    "total_validity",
    "wasserstein_1d",
    "property_distances",
    "write_report_csv",
    "write_verdicts_jsonl",
    "MAX_OXIDATION_COMBINATIONS",
]

log = logging.getLogger(__name__)

MAX_OXIDATION_COMBINATIONS = 10**6
MIN_DISTANCE = 0.5
MIN_VOLUME = 0.1


@dataclass(frozen=True)
class MatchTolerances:
    stol: float = 0.5
    ltol: float = 0.3
    angle_tol: float = 10.0

    def __post_init__(self):
        if min(self.stol, self.ltol, self.angle_tol) <= 0:
            raise ValueError("tolerances must be positive")


# --------------------------------------------------------------------------
# structure matching
# --------------------------------------------------------------------------

_COMBOS = np.array([v for v in product(range(-2, 3), repeat=3) if any(v)], dtype=float)
_IMAGES = np.array(list(product((-1, 0, 1), repeat=3)), dtype=float)


def _reduced(c: Crystal):
    """Niggli-reduced basis and the coordinates re-expressed in it."""
    reduced, t = niggli_reduce(params_to_matrix(c.lattice))
    frac = np.mod(c.frac_coords @ np.linalg.inv(t), 1.0)
    return reduced, frac


def _angles(m):
    g = m @ m.T
    n = np.sqrt(np.diag(g))
    cos = np.clip(g / np.outer(n, n), -1.0, 1.0)
    return np.rad2deg(np.arccos([cos[1, 2], cos[0, 2], cos[0, 1]]))


def _lattice_candidates(r1, r2, tol: MatchTolerances):
    """Integer matrices ``M`` (unimodular) with ``M r2`` close to ``r1`` in
    lengths and angles."""
    vecs = _COMBOS @ r2
    lens = np.linalg.norm(vecs, axis=1)
    target_lens = np.linalg.norm(r1, axis=1)
    target_ang = _angles(r1)
    limit = 1.0 + tol.ltol
    options = []
    for i in range(3):
        ratio = np.maximum(lens / target_lens[i], target_lens[i] / lens)
        options.append(np.flatnonzero(ratio <= limit))
    out = []
    for i, j, k in product(*options):
        m = _COMBOS[[i, j, k]]
        if round(abs(np.linalg.det(m))) != 1:
            continue
        if np.all(np.abs(_angles(m @ r2) - target_ang) <= tol.angle_tol):
            out.append(m)
    return out


def _pair_distances(f1, f2, lat):
    """Minimum-image Cartesian distances and fractional offsets, (n1, n2)."""
    d = wrap(f2[None, :, :] - f1[:, None, :])
    cart = (d[:, :, None, :] + _IMAGES) @ lat
    dist2 = np.einsum("ijok,ijok->ijo", cart, cart)
    best = np.argmin(dist2, axis=-1)
    offs = d + _IMAGES[best]
    return np.sqrt(np.take_along_axis(dist2, best[..., None], -1)[..., 0]), offs


def _bottleneck(cost):
    """Perfect matching minimizing the largest cost; returns its value."""
    values = np.unique(cost)
    lo, hi = 0, values.size - 1
    n = cost.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        match = maximum_bipartite_matching(csr_matrix(cost <= values[mid]), perm_type="column")
        if np.all(match >= 0) and match.size == n:
            hi = mid
        else:
            lo = mid + 1
    return values[lo]


def _assign(f1, f2, types1, types2, lat):
    """Per-element assignment: bottleneck-optimal, then least-squares among
    those. Returns (max distance, rms distance, per-site offsets)."""
    n = f1.shape[0]
    dist, offs = _pair_distances(f1, f2, lat)
    cols = np.empty(n, dtype=np.int64)
    for z in np.unique(types1):
        ri = np.flatnonzero(types1 == z)
        ci = np.flatnonzero(types2 == z)
        block = dist[np.ix_(ri, ci)]
        cap = _bottleneck(block)
        sq = np.where(block <= cap, block**2, 1e12 + block**2)
        r, c = linear_sum_assignment(sq)
        cols[ri[r]] = ci[c]
    picked = dist[np.arange(n), cols]
    return float(picked.max()), float(np.sqrt(np.mean(picked**2))), offs[np.arange(n), cols]


def structure_match(c1: Crystal, c2: Crystal, tol: MatchTolerances | None = None) -> float | None:
    """Normalized RMS displacement when ``c1`` and ``c2`` match, else None.

    Both cells are Niggli-reduced. Lattice correspondences are unimodular
    integer combinations of ``c2``'s reduced vectors within the length and
    angle tolerances. Each correspondence is compared on the averaged metric
    (which keeps the test symmetric in its arguments), with translations
    anchored on pairings of the rarest element and refined by the mean
    displacement. Distances are normalized by ``(V / N)^(1/3)`` of the
    averaged cell; the pair matches when the largest normalized displacement
    is at most ``stol``. Only equal site counts are compared (no supercells).
    """
    tol = tol or MatchTolerances()
    if c1.composition() != c2.composition():
        return None
    try:
        r1, f1 = _reduced(c1)
        r2, f2 = _reduced(c2)
    except InvalidLatticeError:
        return None
    n = c1.num_sites
    t1, t2 = c1.atom_types, c2.atom_types
    comp = c1.composition()
    anchor_z = min(comp, key=lambda z: (comp[z], z))
    i0 = int(np.flatnonzero(t1 == anchor_z)[0])
    best = None
    for m in _lattice_candidates(r1, r2, tol):
        b2 = m @ r2
        g = 0.5 * (r1 @ r1.T + b2 @ b2.T)
        try:
            lat = np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            continue
        norm = (math.sqrt(np.linalg.det(g)) / n) ** (1.0 / 3.0)
        f2m = np.mod(f2 @ np.linalg.inv(m), 1.0)
        for j in np.flatnonzero(t2 == anchor_z):
            shift = f2m[j] - f1[i0]
            g2 = np.mod(f2m - shift, 1.0)
            _, _, offs = _assign(f1, g2, t1, t2, lat)
            g2 = np.mod(g2 - offs.mean(axis=0), 1.0)
            worst, rms, _ = _assign(f1, g2, t1, t2, lat)
            worst, rms = worst / norm, rms / norm
            if worst <= tol.stol and (best is None or rms < best):
                best = rms
    return best


def match_rate_rmse(predictions, targets, tol: MatchTolerances | None = None):
    """Match rate (percent) and mean RMSE over matched targets.

    ``predictions[i]`` is the candidate list for ``targets[i]``; a target
    matches if any candidate does, scored by its best candidate. RMSE is NaN
    when nothing matches.
    """
    if len(predictions) != len(targets):
        raise ValueError("predictions and targets must be aligned")
    if not targets:
        raise ValueError("no targets")
    rmses = []
    for cands, target in zip(predictions, targets):
        scores = [r for r in (structure_match(c, target, tol) for c in cands) if r is not None]
        if scores:
            rmses.append(min(scores))
    rate = 100.0 * len(rmses) / len(targets)
    return rate, (float(np.mean(rmses)) if rmses else float("nan"))


# --------------------------------------------------------------------------
# validity
# --------------------------------------------------------------------------

def structural_validity(c: Crystal) -> bool:
    """Every interatomic and self-image distance above 0.5 angstrom and a
    cell volume of at least 0.1 cubic angstrom."""
    try:
        volume = c.volume
    except InvalidLatticeError:
        return False
    if volume < MIN_VOLUME:
        return False
    return min_periodic_distance(c) > MIN_DISTANCE and self_image_distance(c.lattice) > MIN_DISTANCE


def compositional_validity(composition) -> bool:
    """Charge neutrality with the electronegativity ordering test.

    ``composition`` maps atomic number to count. Unary and all-metal
    compositions pass. Otherwise some choice of one oxidation state per
    element must sum to zero (count-weighted) with every anion at least as
    electronegative as every cation.
    """
    comp = {int(z): int(n) for z, n in dict(composition).items()}
    if any(n <= 0 for n in comp.values()):
        raise ValueError("counts must be positive")
    zs = sorted(comp)
    for z in zs:
        elements.symbol(z)  # raises UnsupportedElementError
    if len(zs) == 1 or all(elements.is_metal(z) for z in zs):
        return True
    states = [elements.oxidation_states(z) for z in zs]
    if any(not s for s in states):
        return False
    if math.prod(len(s) for s in states) > MAX_OXIDATION_COMBINATIONS:
        log.warning("oxidation-state search for %s exceeds %d combinations", comp, MAX_OXIDATION_COMBINATIONS)
        return False
    counts = [comp[z] for z in zs]
    en = [elements.electronegativity(z) for z in zs]
    for combo in product(*states):
        if sum(q * n for q, n in zip(combo, counts)) != 0:
            continue
        anions = [e for q, e in zip(combo, en) if q < 0]
        cations = [e for q, e in zip(combo, en) if q > 0]
        if any(e is None for e in anions + cations):
            continue
        if not anions or not cations or min(anions) >= max(cations):
            return True
    return False


def total_validity(crystals) -> float:
    """Fraction of crystals that are both structurally and compositionally valid."""
    crystals = list(crystals)
    if not crystals:
        return 0.0
    ok = sum(structural_validity(c) and compositional_validity(c.composition()) for c in crystals)
    return ok / len(crystals)


# --------------------------------------------------------------------------
# distribution distances
# --------------------------------------------------------------------------

def wasserstein_1d(a, b) -> float:
    """Exact 1-D earth mover's distance between two empirical samples."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(wasserstein_distance(a, b))


def property_distances(generated, reference) -> tuple[float, float]:
    """``(d_rho, d_elem)``: distances between atomic densities N/V and
    between numbers of distinct elements."""
    def density(c):
        return c.num_sites / c.volume

    d_rho = wasserstein_1d([density(c) for c in generated], [density(c) for c in reference])
    d_elem = wasserstein_1d([len(c.composition()) for c in generated], [len(c.composition()) for c in reference])
    return d_rho, d_elem


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def write_report_csv(path, rows: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key, value in rows.items():
            w.writerow([key, value])


def write_verdicts_jsonl(path, verdicts) -> None:
    with open(path, "w") as fh:
        for v in verdicts:
            fh.write(json.dumps(v, sort_keys=True) + "\n")
