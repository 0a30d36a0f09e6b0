"""Byte-stable persistence: array containers, run manifests, loss logs.

Reruns with the same config and seed must produce byte-identical
artifacts, so large arrays go into a small custom container (fixed
magic, canonical JSON header, raw little-endian buffers) rather than a
zip-based format whose member timestamps differ between runs.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import SimulatedDataset
from .training import TrainingHistory

__all__ = [
    "write_arrays",
    "read_arrays",
    "write_dataset",
    "read_dataset",
    "write_history_csv",
    "read_history_csv",
    "config_digest",
    "RunManifest",
]

_MAGIC = b"HNPEDS01"

_DATASET_FIELDS = ("alpha0", "beta", "x0", "extra", "extra_alphas")


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays to one self-describing binary file."""
    if not arrays:
        raise ValueError("nothing to write")
    blobs = {name: np.asarray(arr, dtype=np.float64) for name, arr in arrays.items()}
    header = {
        name: {"shape": list(a.shape), "dtype": "<f8"}
        for name, a in sorted(blobs.items())
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for name in sorted(blobs):
            fh.write(blobs[name].astype("<f8", copy=False).tobytes(order="C"))


def read_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an array container (bad magic)")
        head_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(head_len).decode())
        out = {}
        for name in sorted(header):
            meta = header[name]
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated buffer for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out


def write_dataset(path, dataset: SimulatedDataset) -> None:
    write_arrays(path, {name: getattr(dataset, name) for name in _DATASET_FIELDS})


def read_dataset(path) -> SimulatedDataset:
    arrays = read_arrays(path)
    missing = [name for name in _DATASET_FIELDS if name not in arrays]
    if missing:
        raise ValueError(f"{path}: dataset fields missing: {missing}")
    return SimulatedDataset(**{name: arrays[name] for name in _DATASET_FIELDS})


def write_history_csv(path, history: TrainingHistory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, (tr, va) in enumerate(zip(history.train_loss, history.val_loss)):
            writer.writerow([epoch, repr(tr), repr(va)])


def read_history_csv(path) -> TrainingHistory:
    history = TrainingHistory()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "train_loss", "val_loss"]:
            raise ValueError(f"{path}: unexpected history header {header!r}")
        for row in reader:
            history.train_loss.append(float(row[1]))
            history.val_loss.append(float(row[2]))
    if history.val_loss:
        best = int(np.argmin(history.val_loss))
        history.best_epoch = best
        history.best_val = history.val_loss[best]
    return history


def config_digest(config) -> str:
    """Canonical hash of a config mapping or dataclass."""
    if dataclasses.is_dataclass(config) and not isinstance(config, type):
        config = dataclasses.asdict(config)
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _file_entry(path: Path) -> dict:
    data = path.read_bytes()
    return {"bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}


@dataclasses.dataclass
class RunManifest:
    """Inventory of one run's artifacts, diffable across reruns.

    ``equivalent_to`` ignores timestamps: two runs match when they used
    the same config and code and produced the same files byte for byte.
    """

    config_hash: str
    seed: int
    code_version: str = __version__
    created: str = ""
    files: dict[str, dict] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not self.created:
            self.created = datetime.now(timezone.utc).isoformat()

    def add_file(self, root: Path, path: Path) -> None:
        self.files[path.relative_to(root).as_posix()] = _file_entry(path)

    def validate(self, root: Path) -> None:
        missing = [name for name in self.files if not (root / name).is_file()]
        if missing:
            raise FileNotFoundError(f"manifest lists absent files: {missing}")

    def equivalent_to(self, other: "RunManifest") -> bool:
        return (
            self.config_hash == other.config_hash
            and self.seed == other.seed
            and self.code_version == other.code_version
            and self.files == other.files
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(**payload)
