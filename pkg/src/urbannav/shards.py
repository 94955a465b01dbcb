"""On-disk dataset shards.

A shard is a directory holding ``index.json`` (schema version, sample
count, metadata, record file list) and columnar ``records-NNNNN.npz``
files. A shard set is a directory of shards plus ``catalog.json``.
Files are written with fixed zip timestamps so identical inputs give
identical bytes.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import NavigationSample
from .errors import DataError, SchemaVersionMismatch
from .scenarios import ScenarioTagSet

SCHEMA_VERSION = 1
INDEX = "index.json"
CATALOG = "catalog.json"
RECORDS_PER_FILE = 65536
_TAGS = ("turn", "crossing", "detour", "proximity", "crowd")


@dataclass
class DatasetShard:
    samples: list[NavigationSample]
    metadata: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def data_root(self) -> Path | None:
        rel = self.metadata.get("data_root")
        if rel is None or self.path is None:
            return None
        return (self.path / rel).resolve()


def _save_npz(path: Path, arrays: dict[str, np.ndarray]):
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def _str_array(values, shape):
    a = np.array(values, dtype=str)
    if a.size == 0:
        a = np.zeros(shape, dtype="<U1")
    return a.reshape(shape)


def _columns(samples: list[NavigationSample], k: int, h: int) -> dict[str, np.ndarray]:
    n = len(samples)
    tags = np.zeros((n, len(_TAGS)), dtype=bool)
    tagged = np.zeros(n, dtype=bool)
    for i, s in enumerate(samples):
        if s.scenario_tags is not None:
            tagged[i] = True
            tags[i] = [getattr(s.scenario_tags, name) for name in _TAGS]
    return {
        "trajectory_id": _str_array([s.trajectory_id for s in samples], (n,)),
        "t": np.array([s.t for s in samples], dtype=np.int64),
        "frame_index": np.array([s.frame_index for s in samples], dtype=np.int64),
        "past_frame_refs": _str_array([s.past_frame_refs for s in samples], (n, k)),
        "future_frame_refs": _str_array([s.future_frame_refs for s in samples], (n, h)),
        "past_positions": np.array([s.past_positions for s in samples], dtype=np.float64).reshape(n, k, 2),
        "target_position": np.array([s.target_position for s in samples], dtype=np.float64).reshape(n, 2),
        "future_actions": np.array([s.future_actions for s in samples], dtype=np.float64).reshape(n, h, 2),
        "arrival_label": np.array([s.arrival_label for s in samples], dtype=bool),
        "step_length": np.array([s.step_length for s in samples], dtype=np.float64),
        "tags": tags,
        "tagged": tagged,
    }


def write_shard(samples: list[NavigationSample], path, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for old in path.glob("records-*.npz"):
        old.unlink()
    k = len(samples[0].past_positions) if samples else (metadata or {}).get("context", 5)
    h = len(samples[0].future_actions) if samples else (metadata or {}).get("horizon", 5)
    for s in samples:
        if len(s.past_positions) != k or len(s.future_actions) != h:
            raise DataError("samples in one shard must share context and horizon")
    files = []
    for j, start in enumerate(range(0, max(len(samples), 1), RECORDS_PER_FILE)):
        name = f"records-{j:05d}.npz"
        _save_npz(path / name, _columns(samples[start : start + RECORDS_PER_FILE], k, h))
        files.append(name)
    index = {
        "schema_version": SCHEMA_VERSION,
        "num_samples": len(samples),
        "context": k,
        "horizon": h,
        "records": files,
        "metadata": metadata or {},
    }
    (path / INDEX).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return path


def _read_index(path: Path) -> dict:
    try:
        index = json.loads((path / INDEX).read_text())
    except FileNotFoundError:
        raise DataError(f"no shard index at {path}") from None
    if index.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"shard {path} has schema {index.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    return index


def read_shard(path) -> DatasetShard:
    path = Path(path)
    index = _read_index(path)
    samples: list[NavigationSample] = []
    for name in index["records"]:
        with np.load(path / name, allow_pickle=False) as z:
            cols = {key: z[key] for key in z.files}
        for i in range(len(cols["t"])):
            tags = ScenarioTagSet(*map(bool, cols["tags"][i])) if cols["tagged"][i] else None
            samples.append(
                NavigationSample(
                    trajectory_id=str(cols["trajectory_id"][i]),
                    t=int(cols["t"][i]),
                    frame_index=int(cols["frame_index"][i]),
                    past_frame_refs=[str(r) for r in cols["past_frame_refs"][i]],
                    past_positions=cols["past_positions"][i].copy(),
                    target_position=cols["target_position"][i].copy(),
                    future_actions=cols["future_actions"][i].copy(),
                    future_frame_refs=[str(r) for r in cols["future_frame_refs"][i]],
                    arrival_label=bool(cols["arrival_label"][i]),
                    step_length=float(cols["step_length"][i]),
                    scenario_tags=tags,
                )
            )
    if len(samples) != index["num_samples"]:
        raise DataError(f"shard {path} declares {index['num_samples']} samples, found {len(samples)}")
    return DatasetShard(samples, index.get("metadata", {}), path)


def write_catalog(root, entries: list[dict]):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, "shards": sorted(entries, key=lambda e: e["id"])}
    (root / CATALOG).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_catalog(root) -> list[dict]:
    root = Path(root)
    doc = json.loads((root / CATALOG).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"catalog {root} has schema {doc.get('schema_version')!r}")
    return doc["shards"]


def load_shards(path) -> list[DatasetShard]:
    """Read one shard directory, or every shard listed in a shard set's catalog."""
    path = Path(path)
    if (path / CATALOG).exists():
        return [read_shard(path / e["path"]) for e in read_catalog(path)]
    if (path / INDEX).exists():
        return [read_shard(path)]
    raise DataError(f"{path} is neither a shard nor a shard set")


def all_samples(shards: list[DatasetShard]) -> list[NavigationSample]:
    return [s for sh in shards for s in sh.samples]
