"""Versioned on-disk container for fitted detectors and segment datasets.

A container is an uncompressed ``.npz`` zip whose ``__meta__`` entry holds a
JSON header (format name, version, payload kind, metadata) and whose other
entries are float64/int arrays.  Entries are written in sorted order with a
fixed timestamp, so equal content always produces equal bytes.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import GmmModel, LofIndex
from .evaluation import SegmentDataset, TrajectorySegments
from .flows import FlowModel
from .trajectory import StandardizerStats

FORMAT = "gradings-container"
VERSION = 1
_META = "__meta__"
_EPOCH = (1980, 1, 1, 0, 0, 0)

_MODEL_KINDS = {"flow": FlowModel, "gmm": GmmModel, "lof": LofIndex}


class SerializationError(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_container(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    header = {"format": FORMAT, "version": VERSION, "kind": kind, "meta": _jsonable(meta)}
    entries = {_META: np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for name, arr in arrays.items():
        if name == _META:
            raise SerializationError(f"reserved array name {name!r}")
        entries[name] = np.ascontiguousarray(arr)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, entries[name], allow_pickle=False)
    return buf.getvalue()


def read_container(data: bytes, expect_kind: str | tuple[str, ...] | None = None):
    """Returns (kind, meta, arrays); rejects unknown formats and versions."""
    try:
        with np.load(io.BytesIO(data), allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise SerializationError(f"not a readable container: {exc}") from exc
    if _META not in arrays:
        raise SerializationError("container has no header")
    header = json.loads(arrays.pop(_META).tobytes().decode())
    if header.get("format") != FORMAT:
        raise SerializationError(f"unexpected format {header.get('format')!r}")
    if header.get("version") != VERSION:
        raise SerializationError(f"unsupported container version {header.get('version')!r}")
    kind = header["kind"]
    if expect_kind is not None:
        allowed = (expect_kind,) if isinstance(expect_kind, str) else expect_kind
        if kind not in allowed:
            raise SerializationError(f"expected a {'/'.join(allowed)} container, found {kind!r}")
    return kind, header["meta"], arrays


@dataclass
class ModelBundle:
    """A fitted detector plus everything needed to score raw segments with it."""

    model: FlowModel | GmmModel | LofIndex
    stats: StandardizerStats
    window: int
    train_ids: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        for name, cls in _MODEL_KINDS.items():
            if isinstance(self.model, cls):
                return name
        raise SerializationError(f"cannot serialize {type(self.model).__name__}")

    @property
    def dim(self) -> int:
        return self.stats.dim


def dumps_model(bundle: ModelBundle) -> bytes:
    model_meta, model_arrays = bundle.model.state()
    meta = {"model": model_meta, "window": int(bundle.window),
            "train_ids": list(bundle.train_ids), "info": bundle.info}
    arrays = {f"model.{k}": v for k, v in model_arrays.items()}
    arrays["stats.mean"] = bundle.stats.mean
    arrays["stats.std"] = bundle.stats.std
    return write_container(f"model/{bundle.kind}", meta, arrays)


def loads_model(data: bytes) -> ModelBundle:
    kind, meta, arrays = read_container(data, tuple(f"model/{k}" for k in _MODEL_KINDS))
    cls = _MODEL_KINDS[kind.split("/", 1)[1]]
    model_arrays = {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")}
    model = cls.from_state(meta["model"], model_arrays)
    stats = StandardizerStats(arrays["stats.mean"], arrays["stats.std"])
    return ModelBundle(model, stats, int(meta["window"]), list(meta["train_ids"]), meta["info"])


def dumps_dataset(data: SegmentDataset) -> bytes:
    feats = [t.features for t in data.trajectories]
    meta = {"window": data.window,
            "ids": [t.id for t in data.trajectories],
            "modes": [t.mode for t in data.trajectories],
            "excluded_short": dict(sorted(data.excluded_short.items()))}
    arrays = {
        "features": np.vstack(feats) if feats else np.zeros((0, data.dim)),
        "n_segments": np.array([len(f) for f in feats], dtype=np.int64),
    }
    return write_container("dataset", meta, arrays)


def loads_dataset(data: bytes) -> SegmentDataset:
    _, meta, arrays = read_container(data, "dataset")
    bounds = np.concatenate([[0], np.cumsum(arrays["n_segments"])])
    feats = arrays["features"]
    trajs = [TrajectorySegments(tid, mode, feats[bounds[i]:bounds[i + 1]])
             for i, (tid, mode) in enumerate(zip(meta["ids"], meta["modes"]))]
    return SegmentDataset(int(meta["window"]), trajs, dict(meta["excluded_short"]))


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    Path(path).write_bytes(dumps_model(bundle))


def load_model(path: str | Path) -> ModelBundle:
    return loads_model(Path(path).read_bytes())


def save_dataset(data: SegmentDataset, path: str | Path) -> None:
    Path(path).write_bytes(dumps_dataset(data))


def load_dataset(path: str | Path) -> SegmentDataset:
    return loads_dataset(Path(path).read_bytes())
