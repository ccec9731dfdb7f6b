"""Trained-model bundle and the mapping from network outputs to flow fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig, BatchInput, ForwardOutput, forward
from .paths import LogNormalPrior, param_rate, param_vel_frac, param_vel_linear

__all__ = ["FlowModel", "Fields", "predict_fields"]


@dataclass
class FlowModel:
    """Everything sampling needs: backbone config and weights, the length
    prior and the empirical atom-count distribution."""

    cfg: BackboneConfig
    params: dict
    prior: LogNormalPrior
    atom_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.atom_counts = {int(k): float(v) for k, v in self.atom_counts.items()}


@dataclass
class Fields:
    """Flow fields at one state. Angle velocities are degrees per unit time."""

    logits: np.ndarray
    rate: np.ndarray
    frac: np.ndarray
    lengths: np.ndarray
    angles: np.ndarray
    out: ForwardOutput


def predict_fields(model: FlowModel, atoms, frac, lengths, angles_deg, t, s, mask) -> Fields:
    """Evaluate the network on a padded batch and parameterize its clean-data
    predictions into a rate vector and velocities.

    ``t`` and ``s`` are per-crystal arrays. The network sees angles in radians.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    batch = BatchInput(
        np.asarray(atoms, dtype=np.int64), np.asarray(frac, dtype=float),
        np.asarray(lengths, dtype=float), np.deg2rad(angles_deg), t, s, np.asarray(mask, dtype=bool),
    )
    out = forward(batch, model.params, model.cfg)
    rate = param_rate(batch.atoms, out.logits, t[:, None])
    v_frac = param_vel_frac(batch.frac, out.frac, s[:, None, None])
    v_len = param_vel_linear(batch.lengths, out.lengths, s[:, None])
    v_ang = param_vel_linear(angles_deg, np.rad2deg(out.angles), s[:, None])
    return Fields(out.logits, rate, v_frac, v_len, v_ang, out)
