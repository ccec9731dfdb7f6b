"""Dataset records (line-delimited JSON) and the binary checkpoint container."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Crystal, InvalidCrystalError, InvalidLatticeError, LatticeParams
from .symmetry import SymmetryOp

__all__ = [
    "DatasetError",
    "CheckpointError",
    "DatasetRecord",
    "record_from_crystal",
    "load_dataset",
    "write_dataset",
    "dataset_fingerprint",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

log = logging.getLogger(__name__)

_LATTICE_KEYS = ("a", "b", "c", "alpha", "beta", "gamma")
_FIELDS = (
    "id", "atomic_numbers", "frac_coords", "lattice", "spacegroup_number",
    "symmetry_ops", "wyckoff_letters",
)


class DatasetError(ValueError):
    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class CheckpointError(ValueError):
    pass


@dataclass
class DatasetRecord:
    id: str
    atomic_numbers: list
    frac_coords: list
    lattice: dict
    spacegroup_number: int | None = None
    symmetry_ops: list = field(default_factory=list)
    wyckoff_letters: list = field(default_factory=list)

    def to_crystal(self, placeholder_type: int | None = None) -> Crystal:
        """Build the :class:`Crystal`. ``placeholder_type`` replaces atomic
        number 0 (structure-only condition records)."""
        types = np.asarray(self.atomic_numbers, dtype=np.int64)
        if placeholder_type is not None:
            types = np.where(types == 0, placeholder_type, types)
        lat = LatticeParams.from_tuple(*(self.lattice[k] for k in _LATTICE_KEYS))
        return Crystal(types, np.asarray(self.frac_coords, dtype=float).reshape(-1, 3), lat,
                       {"id": self.id})

    def ops(self) -> list[SymmetryOp]:
        return [SymmetryOp(np.asarray(o["rotation"]), np.asarray(o["translation"])) for o in self.symmetry_ops]

    def to_json(self) -> str:
        payload = {
            "id": self.id,
            "atomic_numbers": [int(z) for z in self.atomic_numbers],
            "frac_coords": [[float(x) for x in row] for row in self.frac_coords],
            "lattice": {k: float(self.lattice[k]) for k in _LATTICE_KEYS},
            "spacegroup_number": None if self.spacegroup_number is None else int(self.spacegroup_number),
            "symmetry_ops": [
                {
                    "rotation": [[int(v) for v in row] for row in np.asarray(o["rotation"])],
                    "translation": [float(v) for v in o["translation"]],
                }
                for o in self.symmetry_ops
            ],
            "wyckoff_letters": [str(w) for w in self.wyckoff_letters],
        }
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("record must be a JSON object")
        missing = [k for k in _FIELDS if k not in obj]
        if missing:
            raise ValueError(f"missing fields {missing}")
        extra = sorted(set(obj) - set(_FIELDS))
        if extra:
            raise ValueError(f"unknown fields {extra}")
        return cls(**{k: obj[k] for k in _FIELDS})

    def validate(self, relaxed: bool = False) -> None:
        """Raise ``ValueError`` naming the offending site/field.

        Relaxed mode (generated samples, condition files) accepts empty
        symmetry fields, a missing space group and atomic number 0.
        """
        n = len(self.atomic_numbers)
        if n < 1:
            raise ValueError("record has no sites")
        if len(self.frac_coords) != n:
            raise ValueError(f"{n} atomic numbers but {len(self.frac_coords)} coordinate rows")
        frac = np.asarray(self.frac_coords, dtype=float)
        if frac.shape != (n, 3):
            raise ValueError("frac_coords must be N rows of 3 numbers")
        for i, row in enumerate(frac):
            for k, x in enumerate(row):
                if not (0.0 <= x < 1.0):
                    raise ValueError(f"site {i}: coordinate {k} = {x!r} outside [0, 1)")
        if set(self.lattice) != set(_LATTICE_KEYS):
            raise ValueError(f"lattice must have keys {_LATTICE_KEYS}")
        has_symmetry = bool(self.symmetry_ops) or bool(self.wyckoff_letters)
        if relaxed:
            zs = np.asarray(self.atomic_numbers, dtype=np.int64)
            placeholder = int(np.max(zs[zs > 0])) if np.any(zs > 0) else 1
            self.to_crystal(placeholder_type=placeholder)
        else:
            self.to_crystal()
        if relaxed and not has_symmetry and self.spacegroup_number is None:
            return
        sg = self.spacegroup_number
        if sg is None or not 1 <= int(sg) <= 230:
            raise ValueError(f"spacegroup_number {sg!r} outside 1..230")
        if len(self.wyckoff_letters) != n:
            raise ValueError(f"{len(self.wyckoff_letters)} Wyckoff letters for {n} sites")
        for i, w in enumerate(self.wyckoff_letters):
            if not (isinstance(w, str) and len(w) == 1 and "a" <= w <= "z"):
                raise ValueError(f"site {i}: bad Wyckoff letter {w!r}")
        ops = self.ops()
        if not any(op.is_identity() for op in ops):
            raise ValueError("symmetry_ops must include the identity")


def record_from_crystal(crystal: Crystal, record_id: str, spacegroup_number=None, ops=(), wyckoff_letters=()) -> DatasetRecord:
    a, b, c, al, be, ga = crystal.lattice.as_tuple()
    return DatasetRecord(
        id=str(record_id),
        atomic_numbers=[int(z) for z in crystal.atom_types],
        frac_coords=crystal.frac_coords.tolist(),
        lattice=dict(zip(_LATTICE_KEYS, (a, b, c, al, be, ga))),
        spacegroup_number=spacegroup_number,
        symmetry_ops=[{"rotation": op.rotation.tolist(), "translation": op.translation.tolist()} for op in ops],
        wyckoff_letters=list(wyckoff_letters),
    )


def load_dataset(path, relaxed: bool = False, max_fail_fraction: float = 0.01) -> list[DatasetRecord]:
    """Read and validate line-delimited records.

    Per-line failures are collected with line numbers. If more than
    ``max_fail_fraction`` of the lines fail, :class:`DatasetError` is raised
    listing them; otherwise bad lines are logged and skipped.
    """
    records, failures = [], []
    total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                rec = DatasetRecord.from_json(line)
            except (ValueError, TypeError) as exc:
                failures.append(f"line {lineno}: parse error: {exc}")
                continue
            try:
                rec.validate(relaxed=relaxed)
            except (ValueError, TypeError, KeyError, InvalidCrystalError, InvalidLatticeError) as exc:
                failures.append(f"line {lineno} ({rec.id}): validation error: {exc}")
                continue
            records.append(rec)
    if failures and len(failures) > max_fail_fraction * total:
        raise DatasetError(
            f"{len(failures)} of {total} records failed in {path}:\n" + "\n".join(failures), failures
        )
    for msg in failures:
        log.warning("skipping %s", msg)
    return records


def write_dataset(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def dataset_fingerprint(records) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(rec.to_json().encode())
        h.update(b"\n")
    return h.hexdigest()


# --------------------------------------------------------------------------
# checkpoint container
#
#   b"MCFL" | u32 version | u32 len + JSON metadata | u32 count |
#   per tensor: u32 len + name | u32 ndim | u64 dims... | float64 data (LE)
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MCFL"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        name_bytes = name.encode()
        parts.append(struct.pack("<I", len(name_bytes)) + name_bytes)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    meta = json.loads(data[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = data[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(float)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    return meta, tensors
