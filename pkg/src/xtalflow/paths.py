"""Base distributions, conditional paths, conditional targets, clean-data
parameterization and Bregman divergences for the four modalities.

Atom types are handled as category indices: category ``z - 1`` for atomic
number ``z`` (``K_ELEM`` real categories), plus the reserved ``MASK`` and
``PAD`` indices. Rate vectors live on the ``K_ELEM`` real categories only.
Inside the flow, angles are radians; public helpers that face the user
(``sample_base``) speak degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import MAX_Z
from .torus import torus_exp, torus_log

__all__ = [
    "K_ELEM",
    "MASK",
    "PAD",
    "DENOM_FLOOR",
    "DEFAULT_LOSS_WEIGHTS",
    "LogNormalPrior",
    "types_to_categories",
    "categories_to_types",
    "sample_time",
    "fit_lognormal",
    "sample_base",
    "interpolate_discrete",
    "interpolate_frac",
    "interpolate_linear",
    "cond_rate_atoms",
    "cond_vel_frac",
    "cond_vel_linear",
    "param_rate",
    "param_rate_vjp",
    "param_vel_frac",
    "param_vel_linear",
    "softmax",
    "gkl",
    "flow_matching_loss",
    "LossReport",
]

K_ELEM = MAX_Z
MASK = K_ELEM
PAD = K_ELEM + 1
DENOM_FLOOR = 1e-4
GKL_FLOOR = 1e-12
DEFAULT_LOSS_WEIGHTS = {"A": 0.5, "F": 2.0, "Ll": 1.0, "La": 1.0}


def _inv_remaining(time):
    return 1.0 / np.maximum(1.0 - np.asarray(time, dtype=float), DENOM_FLOOR)


def types_to_categories(atom_types) -> np.ndarray:
    return np.asarray(atom_types, dtype=np.int64) - 1


def categories_to_types(cats) -> np.ndarray:
    cats = np.asarray(cats, dtype=np.int64)
    if np.any((cats < 0) | (cats >= K_ELEM)):
        raise ValueError("masked or padded categories have no atomic number")
    return cats + 1


# --------------------------------------------------------------------------
# times and base distributions
# --------------------------------------------------------------------------

def sample_time(rng: np.random.Generator, clip: float = 0.9, size=None):
    """Independent ``t, s ~ U[0, 1]``, each clipped from above at ``clip``."""
    if not 0.0 < clip <= 1.0:
        raise ValueError("clip must lie in (0, 1]")
    t = np.minimum(rng.random(size), clip)
    s = np.minimum(rng.random(size), clip)
    return t, s


@dataclass(frozen=True)
class LogNormalPrior:
    """Per-component LogNormal over lattice lengths (a, b, c)."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(3)
        sigma = np.asarray(self.sigma, dtype=float).reshape(3)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Shape ``(3,)`` when ``n`` is None, else ``(n, 3)``."""
        shape = (3,) if n is None else (n, 3)
        return np.exp(self.mu + self.sigma * rng.standard_normal(shape))


def fit_lognormal(lengths, sigma_floor: float = 1e-3) -> LogNormalPrior:
    """Maximum-likelihood LogNormal fit, one (mu, sigma) per length component."""
    x = np.asarray(lengths, dtype=float).reshape(-1, 3)
    if x.shape[0] < 2:
        raise ValueError("need at least two samples to fit a LogNormal")
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("lattice lengths must be positive and finite")
    logs = np.log(x)
    return LogNormalPrior(logs.mean(axis=0), np.maximum(logs.std(axis=0), sigma_floor))


def sample_base(n: int, prior: LogNormalPrior, rng: np.random.Generator):
    """Draw ``(atom_state, frac, lengths, angles_deg)`` from the joint base:
    all-MASK atoms, uniform coordinates, LogNormal lengths, U[60, 120] angles."""
    if n < 1:
        raise ValueError("need at least one site")
    atoms = np.full(n, MASK, dtype=np.int64)
    frac = rng.random((n, 3))
    lengths = prior.sample(rng)
    angles = rng.uniform(60.0, 120.0, size=3)
    return atoms, frac, lengths, angles


# --------------------------------------------------------------------------
# conditional paths
# --------------------------------------------------------------------------

def interpolate_discrete(a1, time_t, rng: np.random.Generator) -> np.ndarray:
    """Mixture path from the mask point mass: keep ``a1`` w.p. ``t``, else MASK."""
    a1 = np.asarray(a1, dtype=np.int64)
    t = np.asarray(time_t, dtype=float)
    keep = rng.random(a1.shape) < t
    return np.where(keep, a1, MASK)


def interpolate_frac(f0, f1, time_s):
    """Torus geodesic ``exp_{f0}(s log_{f0}(f1))``."""
    return torus_exp(f0, np.asarray(time_s, dtype=float) * torus_log(f0, f1))


def interpolate_linear(y0, y1, time_s):
    s = np.asarray(time_s, dtype=float)
    return (1.0 - s) * np.asarray(y0, dtype=float) + s * np.asarray(y1, dtype=float)


# --------------------------------------------------------------------------
# conditional targets
# --------------------------------------------------------------------------

def cond_rate_atoms(a_t, a1, time_t, num_categories: int = K_ELEM) -> np.ndarray:
    """``delta_M(a_t) delta_{a1} / (1 - t)`` over the real categories."""
    a_t = np.asarray(a_t, dtype=np.int64)
    a1 = np.asarray(a1, dtype=np.int64)
    masked = (a_t == MASK).astype(float)
    onehot = np.zeros((*a1.shape, num_categories))
    real = (a1 >= 0) & (a1 < num_categories)
    np.put_along_axis(onehot, np.where(real, a1, 0)[..., None], real[..., None].astype(float), axis=-1)
    scale = masked * _inv_remaining(time_t)
    return onehot * scale[..., None]


def cond_vel_frac(f_s, f1, time_s):
    return torus_log(f_s, f1) * _inv_remaining(time_s)


def cond_vel_linear(y_s, y1, time_s):
    return (np.asarray(y1, dtype=float) - np.asarray(y_s, dtype=float)) * _inv_remaining(time_s)


# --------------------------------------------------------------------------
# parameterization from clean-data predictions
# --------------------------------------------------------------------------

def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def param_rate(a_t, logits, time_t) -> np.ndarray:
    """``delta_M(a_t) softmax(logits) / (1 - t)``; logits cover real categories only."""
    masked = (np.asarray(a_t) == MASK).astype(float)
    scale = masked * _inv_remaining(time_t)
    return softmax(logits) * scale[..., None]


def param_rate_vjp(a_t, logits, time_t, grad_rate) -> np.ndarray:
    """Vector-Jacobian product of :func:`param_rate` with respect to ``logits``."""
    masked = (np.asarray(a_t) == MASK).astype(float)
    scale = (masked * _inv_remaining(time_t))[..., None]
    p = softmax(logits)
    g = grad_rate * scale
    return p * (g - np.sum(p * g, axis=-1, keepdims=True))


def param_vel_frac(f_s, f_pred, time_s):
    """``log_{f_s}(f_pred mod 1) / (1 - s)``."""
    return torus_log(f_s, np.mod(f_pred, 1.0)) * _inv_remaining(time_s)


def param_vel_linear(y_s, y_pred, time_s):
    return (np.asarray(y_pred, dtype=float) - np.asarray(y_s, dtype=float)) * _inv_remaining(time_s)


# --------------------------------------------------------------------------
# divergences and the multimodal loss
# --------------------------------------------------------------------------

def gkl(u, v, floor: float = GKL_FLOOR):
    """Generalized KL ``sum u log(u/v) - sum u + sum v`` over the last axis.

    ``0 log 0 = 0``; ``v`` is floored at ``floor`` inside the log.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    pos = u > 0
    safe_u = np.where(pos, u, 1.0)
    xlogx = np.where(pos, u * (np.log(safe_u) - np.log(np.maximum(v, floor))), 0.0)
    return xlogx.sum(axis=-1) - u.sum(axis=-1) + v.sum(axis=-1)


def _gkl_grad_v(u, v, floor: float = GKL_FLOOR):
    return 1.0 - np.where(u > 0, u / np.maximum(v, floor), 0.0)


@dataclass
class LossReport:
    total: float
    terms: dict
    grads: dict


def flow_matching_loss(pred: dict, target: dict, site_mask, weights=None) -> LossReport:
    """Weighted sum of per-modality divergences and its gradients.

    ``pred`` / ``target`` hold ``rate`` (B, N, K), ``F`` (B, N, 3), ``Ll`` (B, 3)
    and ``La`` (B, 3). The rate term is ``GKL(target, pred)`` (target in the
    first slot, which keeps the divergence finite for one-hot targets). Per-site
    terms are averaged over each crystal's real sites, then over the batch.
    """
    w = dict(DEFAULT_LOSS_WEIGHTS)
    if weights is not None:
        w.update(weights)
    mask = np.asarray(site_mask, dtype=float)
    batch = mask.shape[0]
    n_real = np.maximum(mask.sum(axis=1), 1.0)
    site_w = mask / n_real[:, None] / batch

    d_a = gkl(target["rate"], pred["rate"])
    diff_f = pred["F"] - target["F"]
    d_f = np.sum(diff_f**2, axis=-1)
    diff_l = pred["Ll"] - target["Ll"]
    diff_ang = pred["La"] - target["La"]

    terms = {
        "A": float(np.sum(d_a * site_w)),
        "F": float(np.sum(d_f * site_w)),
        "Ll": float(np.sum(diff_l**2) / batch),
        "La": float(np.sum(diff_ang**2) / batch),
    }
    total = sum(w[k] * terms[k] for k in terms)
    grads = {
        "rate": w["A"] * _gkl_grad_v(target["rate"], pred["rate"]) * site_w[..., None],
        "F": w["F"] * 2.0 * diff_f * site_w[..., None],
        "Ll": w["Ll"] * 2.0 * diff_l / batch,
        "La": w["La"] * 2.0 * diff_ang / batch,
    }
    return LossReport(float(total), terms, grads)
