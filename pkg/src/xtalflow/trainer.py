"""Training: preprocessing, one optimization step, AdamW, EMA, clipping, the
epoch loop with validation-based model selection, and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .backbone import BackboneConfig, BatchInput, NumericError, backward, forward, init_params
from .config import RunConfig
from .lattice import Crystal
from .model import FlowModel
from .paths import (
    PAD,
    LogNormalPrior,
    cond_rate_atoms,
    cond_vel_frac,
    cond_vel_linear,
    fit_lognormal,
    flow_matching_loss,
    interpolate_discrete,
    interpolate_frac,
    interpolate_linear,
    param_rate,
    param_rate_vjp,
    param_vel_frac,
    param_vel_linear,
    sample_base,
    sample_time,
    types_to_categories,
    DENOM_FLOOR,
)
from .symmetry import OrbitStructure, augment, canonical_order, partition_orbits
from .torus import wrap

__all__ = [
    "TrainingError",
    "TrainState",
    "TrainExample",
    "StepReport",
    "TrainResult",
    "preprocess",
    "backbone_config",
    "init_state",
    "adamw_update",
    "ema_update",
    "clip_gradients",
    "global_norm",
    "epoch_batches",
    "batch_rng",
    "training_step",
    "select_checkpoint",
    "train",
    "save_state",
    "load_state",
]

log = logging.getLogger(__name__)

_MAX_CONSECUTIVE_SKIPS = 20


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainExample:
    crystal: Crystal
    structure: OrbitStructure


@dataclass
class TrainState:
    params: dict
    ema: dict
    m: dict
    v: dict
    step: int = 0
    epoch: int = 0
    batch: int = 0  # next batch index within ``epoch``

    def copy(self) -> "TrainState":
        dup = lambda d: {k: v.copy() for k, v in d.items()}  # noqa: E731
        return TrainState(dup(self.params), dup(self.ema), dup(self.m), dup(self.v), self.step, self.epoch, self.batch)


@dataclass
class StepReport:
    step: int
    loss: float
    terms: dict
    grad_norm: float
    skipped: bool = False


@dataclass
class TrainResult:
    state: TrainState
    selected: dict
    selected_epoch: int | None
    history: list = field(default_factory=list)
    validations: list = field(default_factory=list)


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------

def preprocess(records, orbit_tol: float = 1e-3) -> list[TrainExample]:
    """Partition orbits and canonically order every record."""
    out = []
    for rec in records:
        crystal = rec.to_crystal()
        structure = partition_orbits(crystal, rec.ops(), rec.wyckoff_letters, tol=orbit_tol)
        out.append(TrainExample(*canonical_order(crystal, structure)))
    return out


def backbone_config(cfg: RunConfig) -> BackboneConfig:
    return BackboneConfig(d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
                          max_n=cfg.max_n, d_time=cfg.d_time, time_clip=cfg.time_clip,
                          coord_harmonics=cfg.coord_harmonics)


def init_state(bcfg: BackboneConfig, seed: int) -> TrainState:
    params = init_params(bcfg, np.random.default_rng([seed, 0x5EED]))
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return TrainState(params, {k: v.copy() for k, v in params.items()}, zeros,
                      {k: np.zeros_like(v) for k, v in params.items()})


# --------------------------------------------------------------------------
# optimizer pieces
# --------------------------------------------------------------------------

def adamw_update(params, grads, m, v, step, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One AdamW step with bias correction and decoupled weight decay.

    ``step`` is the 1-based index of this update. Returns new
    ``(params, m, v)`` dictionaries; inputs are not modified.
    """
    b1, b2 = betas
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for k, p in params.items():
        g = grads[k]
        mk = b1 * m[k] + (1.0 - b1) * g
        vk = b2 * v[k] + (1.0 - b2) * g * g
        update = (mk / c1) / (np.sqrt(vk / c2) + eps)
        new_p[k] = p - lr * weight_decay * p - lr * update
        new_m[k], new_v[k] = mk, vk
    return new_p, new_m, new_v


def ema_update(ema, params, decay):
    return {k: decay * ema[k] + (1.0 - decay) * params[k] for k in ema}


def global_norm(grads) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, max_norm):
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


# --------------------------------------------------------------------------
# batching and randomness
# --------------------------------------------------------------------------

def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches for one epoch; the last may be partial."""
    order = np.random.default_rng([seed, epoch, 0xBA7C4]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    """Per-batch stream keyed on (seed, epoch, batch) so resumption is exact."""
    return np.random.default_rng([seed, epoch, batch])


# --------------------------------------------------------------------------
# one step
# --------------------------------------------------------------------------

def _assemble(examples, prior: LogNormalPrior, rng, time_clip, translate=True):
    b = len(examples)
    n_max = max(e.crystal.num_sites for e in examples)
    a1 = np.full((b, n_max), PAD, dtype=np.int64)
    f1 = np.zeros((b, n_max, 3))
    f0 = np.zeros((b, n_max, 3))
    mask = np.zeros((b, n_max), dtype=bool)
    l1, l0, ang1, ang0 = (np.zeros((b, 3)) for _ in range(4))
    for i, ex in enumerate(examples):
        c = augment(ex.structure, ex.crystal, rng, translate=translate)
        n = c.num_sites
        _, frac0, len0, angdeg0 = sample_base(n, prior, rng)
        a1[i, :n] = types_to_categories(c.atom_types)
        f1[i, :n], f0[i, :n] = c.frac_coords, frac0
        mask[i, :n] = True
        l1[i], l0[i] = c.lattice.lengths, len0
        ang1[i], ang0[i] = np.deg2rad(c.lattice.angles), np.deg2rad(angdeg0)
    t, s = sample_time(rng, time_clip, size=b)
    a_t = np.where(mask, interpolate_discrete(a1, t[:, None], rng), PAD)
    f_s = np.where(mask[..., None], interpolate_frac(f0, f1, s[:, None, None]), 0.0)
    l_s = interpolate_linear(l0, l1, s[:, None])
    ang_s = interpolate_linear(ang0, ang1, s[:, None])
    batch = BatchInput(a_t, f_s, l_s, ang_s, t, s, mask)
    target = {
        "rate": cond_rate_atoms(a_t, a1, t[:, None]),
        "F": cond_vel_frac(f_s, f1, s[:, None, None]) * mask[..., None],
        "Ll": cond_vel_linear(l_s, l1, s[:, None]),
        "La": cond_vel_linear(ang_s, ang1, s[:, None]),
    }
    return batch, target


def _loss_and_grads(params, bcfg, batch: BatchInput, target, weights):
    out = forward(batch, params, bcfg)
    t, s = batch.t, batch.s
    maskf = batch.mask[..., None].astype(float)
    v_frac = param_vel_frac(batch.frac, out.frac, s[:, None, None])
    # compare coordinate velocities as displacements on the torus: without the
    # wrap the loss jumps wherever a predicted displacement crosses +-1/2
    remaining = np.maximum(1.0 - s, DENOM_FLOOR)[:, None, None]
    v_frac = target["F"] + wrap((v_frac - target["F"]) * remaining) / remaining
    pred = {
        "rate": param_rate(batch.atoms, out.logits, t[:, None]),
        "F": v_frac * maskf,
        "Ll": param_vel_linear(batch.lengths, out.lengths, s[:, None]),
        "La": param_vel_linear(batch.angles, out.angles, s[:, None]),
    }
    report = flow_matching_loss(pred, target, batch.mask, weights)
    inv_s = 1.0 / np.maximum(1.0 - s, DENOM_FLOOR)
    grads = backward(
        out, params, bcfg,
        grad_logits=param_rate_vjp(batch.atoms, out.logits, t[:, None], report.grads["rate"]),
        grad_frac=report.grads["F"] * maskf * inv_s[:, None, None],
        grad_lengths=report.grads["Ll"] * inv_s[:, None],
        grad_angles=report.grads["La"] * inv_s[:, None],
    )
    return report, grads


def training_step(state: TrainState, examples, cfg: RunConfig, bcfg: BackboneConfig,
                  prior: LogNormalPrior, rng: np.random.Generator) -> tuple[TrainState, StepReport]:
    """Augment, corrupt, predict, back-propagate, clip, AdamW, EMA.

    A non-finite loss or gradient skips the update: the returned state only
    differs from the input by its step counter.
    """
    batch, target = _assemble(examples, prior, rng, cfg.time_clip, cfg.augment_translation)
    step = state.step + 1
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            report, grads = _loss_and_grads(state.params, bcfg, batch, target, cfg.loss_weights)
        norm = global_norm(grads)
        ok = math.isfinite(report.total) and math.isfinite(norm)
    except (FloatingPointError, NumericError) as exc:
        log.warning("step %d: numeric failure (%s); update skipped", step, exc)
        ok, report, norm = False, None, float("nan")
    if not ok:
        skipped = TrainState(state.params, state.ema, state.m, state.v, step, state.epoch, state.batch)
        return skipped, StepReport(step, float("nan"), {}, norm, skipped=True)
    grads = clip_gradients(grads, cfg.grad_clip)
    params, m, v = adamw_update(state.params, grads, state.m, state.v, step, cfg.lr,
                                (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    ema = ema_update(state.ema, params, cfg.ema_decay)
    new = TrainState(params, ema, m, v, step, state.epoch, state.batch)
    return new, StepReport(step, report.total, dict(report.terms), norm)


# --------------------------------------------------------------------------
# model selection
# --------------------------------------------------------------------------

def select_checkpoint(validations, top_k: int = 3):
    """Latest epoch among the ``top_k`` validation passes ranked by validity.

    ``validations`` holds ``(epoch, validity)`` pairs. Ties in validity rank
    the later epoch higher.
    """
    if not validations:
        return None
    ranked = sorted(validations, key=lambda ev: (ev[1], ev[0]), reverse=True)[:top_k]
    return max(epoch for epoch, _ in ranked)


def _validate(params, bcfg, prior, atom_counts, cfg: RunConfig, epoch: int) -> float:
    from .metrics import total_validity
    from .sampler import Task, generate_batch

    model = FlowModel(bcfg, params, prior, atom_counts)
    rng = np.random.default_rng([cfg.seed, epoch, 0x7A11D])
    crystals = generate_batch([Task.dng()] * cfg.val_samples, model, cfg.val_steps, rng)
    return total_validity(crystals)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_state(path, state: TrainState, cfg: RunConfig, prior: LogNormalPrior, atom_counts,
               fingerprint: str = "", extra: dict | None = None) -> None:
    meta = {
        "config": cfg.to_dict(),
        "prior": {"mu": prior.mu.tolist(), "sigma": prior.sigma.tolist()},
        "atom_counts": {str(k): float(v) for k, v in sorted(atom_counts.items())},
        "step": state.step,
        "rng": {"seed": cfg.seed, "epoch": state.epoch, "batch": state.batch},
        "dataset_fingerprint": fingerprint,
        "extra": extra or {},
    }
    tensors = {}
    for prefix, d in (("params", state.params), ("ema", state.ema), ("adam_m", state.m), ("adam_v", state.v)):
        tensors.update({f"{prefix}.{k}": v for k, v in d.items()})
    io.save_checkpoint(path, meta, tensors)


def load_state(path):
    """Returns ``(state, cfg, prior, atom_counts, meta)``.

    Tensor shapes are checked against the stored config; a mismatch raises
    :class:`io.CheckpointError`.
    """
    meta, tensors = io.load_checkpoint(path)
    cfg = RunConfig().updated(**meta["config"])
    bcfg = backbone_config(cfg)
    expected = init_params(bcfg, np.random.default_rng(0))
    groups = {}
    for prefix in ("params", "ema", "adam_m", "adam_v"):
        d = {}
        for k, ref in expected.items():
            name = f"{prefix}.{k}"
            if name not in tensors:
                raise io.CheckpointError(f"{path}: missing tensor {name!r}")
            if tensors[name].shape != ref.shape:
                raise io.CheckpointError(
                    f"{path}: tensor {name!r} has shape {tensors[name].shape}, config expects {ref.shape}"
                )
            d[k] = tensors[name]
        groups[prefix] = d
    rng = meta["rng"]
    state = TrainState(groups["params"], groups["ema"], groups["adam_m"], groups["adam_v"],
                       int(meta["step"]), int(rng["epoch"]), int(rng["batch"]))
    prior = LogNormalPrior(np.array(meta["prior"]["mu"]), np.array(meta["prior"]["sigma"]))
    atom_counts = {int(k): v for k, v in meta["atom_counts"].items()}
    return state, cfg, prior, atom_counts, meta


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------

_CSV_FIELDS = ["step", "epoch", "loss", "loss_A", "loss_F", "loss_Ll", "loss_La", "grad_norm", "skipped", "validity"]


def train(records, cfg: RunConfig, out_dir=None, state: TrainState | None = None,
          prior: LogNormalPrior | None = None, atom_counts=None) -> TrainResult:
    """Epoch loop with shuffled batches, periodic validation and selection.

    Validation runs every ``val_every`` epochs and after the final epoch;
    the selected weights (EMA when ``val_use_ema``) are the latest epoch among
    the three best validity scores. With ``out_dir`` the run writes
    ``metrics.csv``, ``last.ckpt``, ``epoch_XXXXX.ckpt`` per validation and
    ``model.ckpt`` holding the selected weights.
    """
    if not records:
        raise ValueError("dataset is empty")
    examples = preprocess(records, cfg.orbit_tol)
    bcfg = backbone_config(cfg)
    if prior is None:
        prior = fit_lognormal(np.stack([e.crystal.lattice.lengths for e in examples]))
    if atom_counts is None:
        ns, counts = np.unique([e.crystal.num_sites for e in examples], return_counts=True)
        atom_counts = {int(n): float(c) / len(examples) for n, c in zip(ns, counts)}
    fingerprint = io.dataset_fingerprint(records)
    state = state or init_state(bcfg, cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "a" if state.step else "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        if not state.step:
            writer.writeheader()

    history, validations, snapshots = [], [], {}
    skips = 0
    last_good = state

    def emit(row):
        if writer is not None:
            writer.writerow({k: row.get(k, "") for k in _CSV_FIELDS})

    def validate(epoch):
        weights = state.ema if cfg.val_use_ema else state.params
        validity = _validate(weights, bcfg, prior, atom_counts, cfg, epoch)
        validations.append((epoch, validity))
        snapshots[epoch] = {k: v.copy() for k, v in weights.items()}
        emit({"step": state.step, "epoch": epoch, "validity": f"{validity:.6f}"})
        log.info("epoch %d step %d validity %.3f", epoch, state.step, validity)
        if out is not None:
            save_state(out / f"epoch_{epoch:05d}.ckpt", state, cfg, prior, atom_counts, fingerprint)

    done = False
    try:
        while not done and state.epoch < cfg.max_epochs:
            batches = epoch_batches(len(examples), cfg.batch_size, cfg.seed, state.epoch)
            while state.batch < len(batches):
                idx = batches[state.batch]
                rng = batch_rng(cfg.seed, state.epoch, state.batch)
                state, rep = training_step(state, [examples[i] for i in idx], cfg, bcfg, prior, rng)
                state.batch += 1
                history.append(rep)
                emit({"step": rep.step, "epoch": state.epoch, "loss": rep.loss,
                      **{f"loss_{k}": v for k, v in rep.terms.items()},
                      "grad_norm": rep.grad_norm, "skipped": int(rep.skipped)})
                if rep.skipped:
                    skips += 1
                    if skips >= _MAX_CONSECUTIVE_SKIPS:
                        if out is not None:
                            save_state(out / "last.ckpt", last_good, cfg, prior, atom_counts, fingerprint)
                        raise TrainingError(f"{skips} consecutive non-finite steps ending at step {rep.step}")
                else:
                    skips = 0
                    last_good = state
                if cfg.max_steps and state.step >= cfg.max_steps:
                    done = True
                    break
            if state.batch >= len(batches):
                state.epoch += 1
                state.batch = 0
                if state.epoch % cfg.val_every == 0 and not done:
                    validate(state.epoch)
        if not validations or validations[-1][0] != state.epoch:
            validate(state.epoch)
    finally:
        if writer is not None:
            fh.close()

    chosen = select_checkpoint(validations)
    selected = snapshots[chosen]
    if out is not None:
        save_state(out / "last.ckpt", state, cfg, prior, atom_counts, fingerprint)
        sel_state = TrainState(selected, selected, state.m, state.v, state.step, state.epoch, state.batch)
        save_state(out / "model.ckpt", sel_state, cfg, prior, atom_counts, fingerprint,
                   extra={"selected_epoch": chosen, "validations": [list(v) for v in validations]})
    return TrainResult(state, selected, chosen, history, validations)
