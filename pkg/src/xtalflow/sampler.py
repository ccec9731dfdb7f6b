"""Any-to-any generation: de novo (DNG), structure prediction from a
composition (CSP) and atom-type generation on a fixed structure (ATG).

All three tasks walk a straight line through the (t, s) time square on a
uniform grid ``lambda_k = k / K``:

* DNG: ``(t, s) = (lambda, lambda)``
* CSP: ``(t, s) = (1, lambda)``, atom types held fixed
* ATG: ``(t, s) = (lambda, 1)``, structure held fixed

Atom types advance by masked CTMC jumps, structure by Euler steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .backbone import NumericError
from .lattice import ANGLE_MAX, ANGLE_MIN, Crystal, LatticeParams
from .model import FlowModel, predict_fields
from .paths import K_ELEM, MASK, PAD, categories_to_types, param_rate, types_to_categories, interpolate_frac, interpolate_linear
from .symmetry import composition_order
from .torus import torus_exp

__all__ = [
    "SamplingError",
    "Task",
    "GuidanceConfig",
    "trajectory",
    "sample_num_atoms",
    "ctmc_step",
    "ode_step",
    "generate",
    "generate_batch",
    "guided_generate",
    "LENGTH_FLOOR",
]

log = logging.getLogger(__name__)

LENGTH_FLOOR = 1e-3


class SamplingError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class Task:
    kind: str  # "dng" | "csp" | "atg"
    atom_types: np.ndarray | None = None
    structure: Crystal | None = None

    def __post_init__(self):
        if self.kind not in ("dng", "csp", "atg"):
            raise ValueError(f"unknown task {self.kind!r}")
        if self.kind == "csp" and (self.atom_types is None or len(self.atom_types) == 0):
            raise ValueError("CSP needs a nonempty composition")
        if self.kind == "atg" and not isinstance(self.structure, Crystal):
            raise ValueError("ATG needs a structure")

    @classmethod
    def dng(cls) -> "Task":
        return cls("dng")

    @classmethod
    def csp(cls, atom_types) -> "Task":
        """Composition in canonical (electronegativity, Z) site order."""
        types = np.asarray(atom_types, dtype=np.int64).reshape(-1)
        return cls("csp", atom_types=types[composition_order(types)])

    @classmethod
    def atg(cls, structure: Crystal) -> "Task":
        return cls("atg", structure=structure)


@dataclass(frozen=True)
class GuidanceConfig:
    enabled: bool = False
    scale: float = 2.0
    noise: float = 0.1
    mix: str = "logit"  # ATG mixing level: "logit" or "rate"

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("guidance scale must be >= 0")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise level must lie in [0, 1]")
        if self.mix not in ("logit", "rate"):
            raise ValueError("mix must be 'logit' or 'rate'")


def trajectory(kind: str, lam):
    """``(t, s)`` at path parameter ``lam`` for a task kind."""
    lam = np.asarray(lam, dtype=float)
    one = np.ones_like(lam)
    return {"dng": (lam, lam), "csp": (one, lam), "atg": (lam, one)}[kind]


def sample_num_atoms(counts: dict, rng: np.random.Generator, size=None):
    """Draw atom counts in proportion to their empirical frequencies."""
    if not counts:
        raise ValueError("empty atom-count distribution")
    ns = np.array(sorted(counts), dtype=np.int64)
    w = np.array([counts[n] for n in ns], dtype=float)
    return rng.choice(ns, size=size, p=w / w.sum())


def ctmc_step(atoms, rate, dt: float, rng: np.random.Generator, is_final: bool = False):
    """One masked-CTMC jump step.

    A masked site jumps with probability ``min(1, dt * sum(rate))`` and lands
    on category ``j`` with probability ``rate_j / sum(rate)``; other sites are
    untouched. On the final step every masked site jumps. Negative rates are
    floored at 0. Two uniforms per site are always consumed.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    atoms = np.asarray(atoms, dtype=np.int64)
    rate = np.maximum(np.asarray(rate, dtype=float), 0.0)
    total = rate.sum(axis=-1)
    u_jump = rng.random(atoms.shape)
    u_dest = rng.random(atoms.shape)
    masked = atoms == MASK
    jump = masked & ((u_jump < np.minimum(1.0, dt * total)) | is_final)
    dead = jump & (total <= 0.0)
    if np.any(dead):
        log.warning("%d masked site(s) with all-zero rate; drawing uniformly", int(dead.sum()))
    probs = np.where(total[..., None] > 0, rate / np.where(total > 0, total, 1.0)[..., None], 1.0 / rate.shape[-1])
    cdf = np.cumsum(probs, axis=-1)
    dest = np.minimum((cdf < u_dest[..., None] * cdf[..., -1:]).sum(axis=-1), rate.shape[-1] - 1)
    return np.where(jump, dest, atoms)


def ode_step(frac, lengths, angles, v_frac, v_len, v_ang, ds: float):
    """Euler step: coordinates on the torus, lengths floored at
    ``LENGTH_FLOOR``, angles (degrees) clamped to [60, 120]."""
    if ds <= 0:
        raise ValueError("ds must be positive")
    frac = torus_exp(frac, ds * np.asarray(v_frac, dtype=float))
    lengths = np.maximum(np.asarray(lengths, dtype=float) + ds * np.asarray(v_len, dtype=float), LENGTH_FLOOR)
    angles = np.clip(np.asarray(angles, dtype=float) + ds * np.asarray(v_ang, dtype=float), ANGLE_MIN, ANGLE_MAX)
    return frac, lengths, angles


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

@dataclass
class _State:
    atoms: np.ndarray    # (B, N) categories / MASK / PAD
    frac: np.ndarray     # (B, N, 3)
    lengths: np.ndarray  # (B, 3)
    angles: np.ndarray   # (B, 3) degrees
    mask: np.ndarray     # (B, N)


def _init_state(tasks, model: FlowModel, rng) -> _State:
    sizes = []
    for task in tasks:
        if task.kind == "dng":
            sizes.append(int(sample_num_atoms(model.atom_counts, rng)))
        elif task.kind == "csp":
            sizes.append(len(task.atom_types))
        else:
            sizes.append(task.structure.num_sites)
    b, n_max = len(tasks), max(sizes)
    st = _State(np.full((b, n_max), PAD, dtype=np.int64), np.zeros((b, n_max, 3)),
                np.zeros((b, 3)), np.zeros((b, 3)), np.zeros((b, n_max), dtype=bool))
    for i, (task, n) in enumerate(zip(tasks, sizes)):
        st.mask[i, :n] = True
        st.atoms[i, :n] = MASK
        st.frac[i, :n] = rng.random((n, 3))
        st.lengths[i] = model.prior.sample(rng)
        st.angles[i] = rng.uniform(ANGLE_MIN, ANGLE_MAX, size=3)
        if task.kind == "csp":
            st.atoms[i, :n] = types_to_categories(task.atom_types)
        elif task.kind == "atg":
            c = task.structure
            st.frac[i, :n] = c.frac_coords
            st.lengths[i] = c.lattice.lengths
            st.angles[i] = c.lattice.angles
    return st


def _corrupt(tasks, st: _State, noise: float, model: FlowModel, rng):
    """Noisy copy of the conditions at time ``noise`` (fresh draw per call)."""
    atoms, frac = st.atoms.copy(), st.frac.copy()
    lengths, angles = st.lengths.copy(), st.angles.copy()
    for i, task in enumerate(tasks):
        n = int(st.mask[i].sum())
        if task.kind == "csp":
            keep = rng.random(n) < noise
            atoms[i, :n] = np.where(keep, st.atoms[i, :n], MASK)
        elif task.kind == "atg":
            frac[i, :n] = interpolate_frac(rng.random((n, 3)), st.frac[i, :n], noise)
            lengths[i] = interpolate_linear(model.prior.sample(rng), st.lengths[i], noise)
            angles[i] = interpolate_linear(rng.uniform(ANGLE_MIN, ANGLE_MAX, size=3), st.angles[i], noise)
    return atoms, frac, lengths, angles


def _finish(tasks, st: _State) -> list[Crystal]:
    out = []
    for i, task in enumerate(tasks):
        n = int(st.mask[i].sum())
        if task.kind == "atg":
            c = task.structure
            types = categories_to_types(st.atoms[i, :n])
            out.append(Crystal(types, c.frac_coords, c.lattice, {"task": "atg"}))
            continue
        types = task.atom_types if task.kind == "csp" else categories_to_types(st.atoms[i, :n])
        lattice = LatticeParams(st.lengths[i].copy(), st.angles[i].copy())
        out.append(Crystal(types, st.frac[i, :n].copy(), lattice, {"task": task.kind}))
    return out


def generate_batch(tasks, model: FlowModel, steps: int = 500, rng: np.random.Generator | None = None,
                   guidance: GuidanceConfig | None = None) -> list[Crystal]:
    """Run ``len(tasks)`` independent chains in one padded batch.

    Tasks may be mixed. Guidance applies to CSP and ATG chains only; its
    corruption noise comes from a stream spawned off ``rng`` so the main
    stream is consumed exactly as without guidance.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not tasks:
        return []
    rng = rng if rng is not None else np.random.default_rng()
    guidance = guidance or GuidanceConfig()
    kinds = np.array([t.kind for t in tasks])
    guided = guidance.enabled and np.any(kinds != "dng")
    g_rng = rng.spawn(1)[0] if guided else None
    st = _init_state(tasks, model, rng)
    move_atoms = kinds != "csp"
    move_struct = kinds != "atg"
    w = guidance.scale
    dt = 1.0 / steps
    for k in range(steps):
        lam = k / steps
        t = np.where(kinds == "csp", 1.0, lam)
        s = np.where(kinds == "atg", 1.0, lam)
        try:
            f = predict_fields(model, st.atoms, st.frac, st.lengths, st.angles, t, s, st.mask)
            rate, v_frac, v_len, v_ang = f.rate, f.frac, f.lengths, f.angles
            if guided:
                c_atoms, c_frac, c_len, c_ang = _corrupt(tasks, st, guidance.noise, model, g_rng)
                t_c = np.where(kinds == "csp", guidance.noise, t)
                s_c = np.where(kinds == "atg", guidance.noise, s)
                g = predict_fields(model, c_atoms, c_frac, c_len, c_ang, t_c, s_c, st.mask)
                csp = (kinds == "csp")
                atg = (kinds == "atg")
                mix = lambda a, b: (1.0 - w) * a + w * b  # noqa: E731
                v_frac = np.where(csp[:, None, None], mix(g.frac, v_frac), v_frac)
                v_len = np.where(csp[:, None], mix(g.lengths, v_len), v_len)
                v_ang = np.where(csp[:, None], mix(g.angles, v_ang), v_ang)
                if guidance.mix == "logit":
                    mixed = param_rate(st.atoms, mix(g.logits, f.logits), t[:, None])
                else:
                    mixed = np.maximum(mix(param_rate(st.atoms, g.logits, t[:, None]), rate), 0.0)
                rate = np.where(atg[:, None, None], mixed, rate)
        except NumericError as exc:
            raise SamplingError(str(exc), step=k) from exc
        final = k == steps - 1
        if np.any(move_atoms):
            new_atoms = ctmc_step(st.atoms, rate, dt, rng, is_final=final)
            st.atoms = np.where(move_atoms[:, None], new_atoms, st.atoms)
        if np.any(move_struct):
            frac, lengths, angles = ode_step(st.frac, st.lengths, st.angles, v_frac, v_len, v_ang, dt)
            st.frac = np.where(move_struct[:, None, None], frac, st.frac)
            st.lengths = np.where(move_struct[:, None], lengths, st.lengths)
            st.angles = np.where(move_struct[:, None], angles, st.angles)
    if np.any(st.atoms[st.mask] == MASK):
        raise SamplingError("masked tokens remain after the final step", step=steps - 1)
    return _finish(tasks, st)


def generate(task: Task, model: FlowModel, steps: int = 500, rng: np.random.Generator | None = None,
             guidance: GuidanceConfig | None = None) -> Crystal:
    return generate_batch([task], model, steps, rng, guidance)[0]


def guided_generate(task: Task, model: FlowModel, steps: int = 500, rng: np.random.Generator | None = None,
                    scale: float = 2.0, noise: float = 0.1, mix: str = "logit") -> Crystal:
    if task.kind == "dng":
        raise ValueError("guidance needs a CSP or ATG condition")
    return generate(task, model, steps, rng, GuidanceConfig(True, scale, noise, mix))
