"""Command-line entry points: train, sample, evaluate, inspect, make-toy-dataset."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, load_config
from .lattice import InvalidLatticeError
from .metrics import (
    MatchTolerances,
    compositional_validity,
    match_rate_rmse,
    property_distances,
    structural_validity,
    structure_match,
    write_report_csv,
    write_verdicts_jsonl,
)
from .model import FlowModel
from .sampler import GuidanceConfig, Task, generate_batch
from .symmetry import canonical_order, full_perm_space_log10, partition_orbits, reduced_perm_space_log10
from .toydata import TOY_TRAIN_CONFIG, make_toy_dataset
from .trainer import TrainingError, backbone_config, load_state, train

__all__ = ["main", "build_parser"]

log = logging.getLogger("xtalflow")


class UsageError(Exception):
    pass


def _overrides(args, names):
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _parse_sets(pairs):
    from .config import parse_config_text
    return parse_config_text("\n".join(pairs or []))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config, **_parse_sets(args.set), **_overrides(args, ["seed", "max_steps"]))
    records = io.load_dataset(args.dataset)
    try:
        res = train(records, cfg, out_dir=args.out)
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1
    losses = [r.loss for r in res.history if not r.skipped]
    print(f"steps={res.state.step} epochs={res.state.epoch} final_loss={losses[-1]:.4f} "
          f"selected_epoch={res.selected_epoch}")
    return 0


def _load_model(path, use_raw: bool):
    try:
        state, cfg, prior, counts, _ = load_state(path)
    except (io.CheckpointError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from None
    return FlowModel(backbone_config(cfg), state.params if use_raw else state.ema, prior, counts)


def cmd_sample(args) -> int:
    if args.task in ("csp", "atg") and not args.condition_file:
        raise UsageError(f"--task {args.task} requires --condition-file")
    model = _load_model(args.checkpoint, args.raw_weights)
    cfg = load_config(args.config, **_overrides(args, ["seed", "steps", "num_samples", "guidance", "guidance_scale", "noise_level"]))
    tasks, ids = [], []
    if args.task == "dng":
        for k in range(cfg.num_samples):
            tasks.append(Task.dng())
            ids.append(f"dng-{k:05d}")
    else:
        conds = io.load_dataset(args.condition_file, relaxed=True)
        for rec in conds:
            if args.task == "csp":
                if any(z == 0 for z in rec.atomic_numbers):
                    raise UsageError(f"condition {rec.id}: CSP needs real atomic numbers")
                task = Task.csp(rec.atomic_numbers)
            else:
                task = Task.atg(rec.to_crystal(placeholder_type=1))
            for k in range(cfg.num_samples):
                tasks.append(task)
                ids.append(f"{rec.id}/{k}")
    enabled = {"on": True, "off": False}.get(cfg.guidance, cfg.num_samples == 1 and args.task != "dng")
    guidance = GuidanceConfig(enabled, cfg.guidance_scale, cfg.noise_level, cfg.atg_guidance_mix)
    rng = np.random.default_rng(cfg.seed)
    crystals = generate_batch(tasks, model, cfg.steps, rng, guidance)
    io.write_dataset(args.out, [io.record_from_crystal(c, i) for c, i in zip(crystals, ids)])
    print(f"wrote {len(crystals)} crystals to {args.out} (guidance {'on' if enabled else 'off'})")
    return 0


def _group_predictions(records):
    groups = defaultdict(list)
    for rec in records:
        groups[rec.id.rsplit("/", 1)[0]].append(rec)
    return groups


def _safe_crystal(rec):
    try:
        return rec.to_crystal(placeholder_type=1)
    except (InvalidLatticeError, ValueError):
        return None


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    tol = MatchTolerances(cfg.stol, cfg.ltol, cfg.angle_tol)
    preds = io.load_dataset(args.predictions, relaxed=True)
    rows, verdicts = {}, []
    if args.task == "dng":
        crystals = [_safe_crystal(r) for r in preds]
        for rec, c in zip(preds, crystals):
            s_ok = c is not None and structural_validity(c)
            c_ok = c is not None and compositional_validity(c.composition())
            verdicts.append({"id": rec.id, "structural": bool(s_ok), "compositional": bool(c_ok)})
        n = len(verdicts)
        rows["num_samples"] = n
        rows["structural_validity"] = f"{100.0 * sum(v['structural'] for v in verdicts) / n:.2f}"
        rows["compositional_validity"] = f"{100.0 * sum(v['compositional'] for v in verdicts) / n:.2f}"
        rows["total_validity"] = f"{100.0 * sum(v['structural'] and v['compositional'] for v in verdicts) / n:.2f}"
        if args.reference:
            ref = [r.to_crystal() for r in io.load_dataset(args.reference, relaxed=True)]
            ok = [c for c in crystals if c is not None and _has_volume(c)]
            d_rho, d_elem = property_distances(ok, ref)
            rows["d_rho"] = f"{d_rho:.6f}"
            rows["d_elem"] = f"{d_elem:.6f}"
    else:
        if not args.targets:
            raise UsageError(f"--task {args.task} requires --targets")
        targets = io.load_dataset(args.targets, relaxed=True)
        groups = _group_predictions(preds)
        cands, tcrys = [], []
        for t in targets:
            tc = t.to_crystal()
            group = [c for c in (_safe_crystal(r) for r in groups.get(t.id, [])) if c is not None]
            cands.append(group)
            tcrys.append(tc)
            best = [structure_match(c, tc, tol) for c in group]
            hits = [b for b in best if b is not None]
            verdicts.append({"id": t.id, "candidates": len(group), "matched": bool(hits),
                             "rmse": min(hits) if hits else None})
        mr, rmse = match_rate_rmse(cands, tcrys, tol)
        rows["num_targets"] = len(targets)
        rows["match_rate"] = f"{mr:.2f}"
        rows["rmse"] = f"{rmse:.6f}" if np.isfinite(rmse) else "nan"
        if args.task == "atg":
            flat = [c for group in cands for c in group]
            valid = sum(compositional_validity(c.composition()) for c in flat)
            rows["compositional_validity"] = f"{100.0 * valid / max(len(flat), 1):.2f}"
    write_report_csv(args.out, rows)
    if args.verdicts:
        write_verdicts_jsonl(args.verdicts, verdicts)
    for k, v in rows.items():
        print(f"{k}: {v}")
    return 0


def _has_volume(c):
    try:
        return c.volume > 0
    except InvalidLatticeError:
        return False


def cmd_inspect(args) -> int:
    cfg = load_config(args.config, **_overrides(args, ["orbit_tol"]))
    records = io.load_dataset(args.dataset)
    rows = []
    for rec in records:
        crystal = rec.to_crystal()
        structure = partition_orbits(crystal, rec.ops(), rec.wyckoff_letters, tol=cfg.orbit_tol)
        ordered, structure = canonical_order(crystal, structure)
        full = full_perm_space_log10(crystal.num_sites)
        reduced = reduced_perm_space_log10(structure)
        rows.append((rec.id, crystal.num_sites, full, reduced))
        if not args.quiet:
            print(f"{rec.id}: N={crystal.num_sites} log10|S_N|={full:.2f} log10|reduced|={reduced:.2f}")
            for g in structure.groups:
                sizes = ",".join(str(o.size) for o in g.orbits)
                print(f"  Z={g.element} wyckoff={g.wyckoff_letter} orbits=[{sizes}] sites={list(g.sites)}")
            print(f"  order: {ordered.atom_types.tolist()}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "N", "log10_full", "log10_reduced"])
            for rid, n, full, reduced in rows:
                w.writerow([rid, n, f"{full:.4f}", f"{reduced:.4f}"])
    return 0


def cmd_make_toy(args) -> int:
    records = make_toy_dataset(args.n, seed=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    io.write_dataset(out, records)
    cfg_path = out.with_name("train.cfg")
    cfg_path.write_text(TOY_TRAIN_CONFIG)
    print(f"wrote {len(records)} records to {out} and settings to {cfg_path}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xtalflow", description="Multimodal flow matching for crystals.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("dataset")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    t.add_argument("--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate crystals from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--task", choices=("dng", "csp", "atg"), required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--num-samples", type=int)
    s.add_argument("--guidance", choices=("auto", "on", "off"))
    s.add_argument("--guidance-scale", type=float)
    s.add_argument("--noise-level", type=float)
    s.add_argument("--condition-file")
    s.add_argument("--raw-weights", action="store_true", help="sample with raw instead of EMA weights")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", help="score generated crystals")
    e.add_argument("predictions")
    e.add_argument("--task", choices=("dng", "csp", "atg"), required=True)
    e.add_argument("--targets", help="condition file the predictions were generated from")
    e.add_argument("--reference", help="reference set for density/element distances (dng)")
    e.add_argument("--config")
    e.add_argument("--verdicts", help="per-sample JSONL output")
    e.add_argument("--out", required=True, help="report CSV")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="orbit structure and permutation-space sizes")
    i.add_argument("dataset")
    i.add_argument("--config")
    i.add_argument("--orbit-tol", type=float)
    i.add_argument("--csv", help="write (id, N, log10 sizes) rows")
    i.add_argument("--quiet", action="store_true")
    i.set_defaults(func=cmd_inspect)

    m = sub.add_parser("make-toy-dataset", help="write the synthetic two-prototype corpus")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--n", type=int, default=400)
    m.set_defaults(func=cmd_make_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, io.DatasetError, FileNotFoundError) as exc:
        parser.exit(2, f"{parser.prog} {args.command}: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
