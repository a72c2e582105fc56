"""On-disk formats: binary waveform records with a CSV manifest, and CNN model files.

All binary data is little-endian; samples and weights are stored as float32.
"""

from __future__ import annotations

import csv
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cnn import PARAM_NAMES, CnnModel
from .errors import MissingArtifact, ValidationError
from .synth import CLASS_NAMES, SensorLayout, Waveform, kind_from_label

RECORD_MAGIC = b"GWSR"
RECORD_VERSION = 1
# magic, version, sample_rate, length, tx, rx, temperature, snr (nan = noiseless), seed, n_classes
_RECORD_HEADER = struct.Struct("<4sHdIHHddQB")

MODEL_MAGIC = b"GWCN"
MODEL_VERSION = 1
# magic, version, input_length, n_classes, kernel, filters, hidden, pool, dropout, input_scale, sections
_MODEL_HEADER = struct.Struct("<4sHIIIIIIddI")
_TAG = struct.Struct("<16sB")

MANIFEST = "manifest.csv"
MANIFEST_FIELDS = ["file", "path", "class", "T", "snr", "seed"]


def encode_record(w: Waveform) -> bytes:
    label = w.class_label
    snr = math.nan if w.snr_db is None else float(w.snr_db)
    tx, rx = w.path if w.path is not None else (0, 0)  # sensor id 0 marks "no path"
    head = _RECORD_HEADER.pack(RECORD_MAGIC, RECORD_VERSION, float(w.sample_rate), w.samples.size,
                               tx, rx, float(w.temperature), snr,
                               int(w.seed or 0), len(label))
    return head + bytes(int(v) for v in label) + np.asarray(w.samples, dtype="<f4").tobytes()


def decode_record(buf: bytes) -> Waveform:
    n_head = _RECORD_HEADER.size
    if len(buf) < n_head:
        raise ValidationError("record too short")
    magic, version, fs, length, tx, rx, T, snr, seed, n_cls = _RECORD_HEADER.unpack_from(buf)
    if magic != RECORD_MAGIC:
        raise ValidationError("not a waveform record (bad magic)")
    if version != RECORD_VERSION:
        raise ValidationError(f"unsupported record version {version}")
    label = tuple(buf[n_head:n_head + n_cls])
    payload = buf[n_head + n_cls:]
    if len(payload) != 4 * length:
        raise ValidationError("record payload length disagrees with its header")
    samples = np.frombuffer(payload, dtype="<f4").astype(float)
    return Waveform(samples=samples, sample_rate=fs, path=(tx, rx) if tx or rx else None, temperature=T,
                    snr_db=None if math.isnan(snr) else snr, class_label=label, seed=seed)


def save_dataset(records: Sequence[Waveform], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for i, w in enumerate(records):
            name = f"rec_{i:06d}.bin"
            (out / name).write_bytes(encode_record(w))
            cls = CLASS_NAMES[kind_from_label(w.class_label)]
            writer.writerow([name, SensorLayout.path_name(w.path), cls, repr(float(w.temperature)),
                             "" if w.snr_db is None else repr(float(w.snr_db)), w.seed])
    return out


def load_dataset(in_dir: str | Path, path: str | None = None) -> list[Waveform]:
    """Records listed in the manifest, optionally only those of one path (e.g. "P15")."""
    root = Path(in_dir)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise MissingArtifact(f"no manifest in {root}")
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [decode_record((root / r["file"]).read_bytes()) for r in rows
            if path is None or r["path"] == path]


def encode_model(model: CnnModel) -> bytes:
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.input_length, model.n_classes,
                                model.kernel, model.filters, model.hidden, model.pool,
                                float(model.dropout_rate), float(model.input_scale), len(PARAM_NAMES))]
    for name in PARAM_NAMES:
        arr = np.asarray(model.params[name], dtype="<f4")
        parts.append(_TAG.pack(name.encode("ascii"), arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_model(buf: bytes) -> CnnModel:
    fields = _MODEL_HEADER.unpack_from(buf)
    magic, version, n_in, n_cls, kernel, filters, hidden, pool, dropout, scale, n_sec = fields
    if magic != MODEL_MAGIC:
        raise ValidationError("not a model file (bad magic)")
    if version != MODEL_VERSION:
        raise ValidationError(f"unsupported model version {version}")
    pos = _MODEL_HEADER.size
    params = {}
    for _ in range(n_sec):
        tag, ndim = _TAG.unpack_from(buf, pos)
        pos += _TAG.size
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        count = int(np.prod(shape))
        params[tag.rstrip(b"\0").decode("ascii")] = np.frombuffer(
            buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise ValidationError(f"model file lacks sections {sorted(missing)}")
    model = CnnModel(n_in, n_cls, params, kernel, filters, hidden, pool, dropout, scale)
    expected = CnnModel.initialize(n_in, n_cls, kernel=kernel, filters=filters, hidden=hidden,
                                   pool=pool).params
    for name in PARAM_NAMES:
        if params[name].shape != expected[name].shape:
            raise ValidationError(f"section {name} has shape {params[name].shape}")
    return model


def save_model(model: CnnModel, path: str | Path, *, summary: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(model))
    if summary:
        text = model.summary() + f"\ninput scale: {model.input_scale!r}\n"
        path.with_suffix(path.suffix + ".txt").write_text(text)
    return path


def load_model(path: str | Path) -> CnnModel:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"model file {path} not found")
    return decode_model(path.read_bytes())


def save_features(features: np.ndarray, path: str | Path, rows: Iterable[str] | None = None) -> None:
    """Feature matrix as CSV with columns f0..f{d-1} (plus an optional id column)."""
    features = np.atleast_2d(features)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = [f"f{i}" for i in range(features.shape[1])]
        rows = list(rows) if rows is not None else None
        w.writerow((["id"] if rows else []) + head)
        for i, f in enumerate(features):
            w.writerow(([rows[i]] if rows else []) + [repr(float(v)) for v in f])


def load_features(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        skip = 1 if head and head[0] == "id" else 0
        return np.array([[float(v) for v in row[skip:]] for row in reader])
