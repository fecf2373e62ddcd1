"""On-disk formats: PPM images, dataset manifests, checkpoints and reports.

Checkpoint layout::

    uint64 LE   header length n
    n bytes     UTF-8 JSON header (sorted keys)
    payload     float64 LE parameter blocks, in header order

Each header tensor entry carries ``name``, ``shape``, ``offset`` and
``nbytes``; offsets are relative to the start of the payload.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .experiment import SPLITS, ComparisonTable, RunReport
from .models import MODEL_KINDS, MvModel, zero_model
from .synth import (
    HEIGHT,
    WIDTH,
    ImageRecord,
    MultiViewDataset,
    as_view,
    generate_identity,
)

CHECKPOINT_VERSION = 1
MANIFEST_HEADER = ["identity", "view", "instance", "split", "path"]
CURVE_HEADER = ["epoch", "train_err", "valid_err", "test_err", "train_loss"]


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# PPM
# --------------------------------------------------------------------------

def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, maxval 255.  ``image`` is (H, W, 3) floats in [0, 1]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(to_bytes(image).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raw.reshape(h, w, 3).astype(np.float64) / 255.0


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

def image_name(r: ImageRecord) -> str:
    return f"images/{r.identity:04d}_{r.view.value}_{r.instance}.ppm"


def save_dataset(dataset: MultiViewDataset, out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for r in dataset.records:
        rel = image_name(r)
        write_ppm(out / rel, r.image)
        rows.append([r.identity, r.view.value, r.instance, r.split, rel])
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        w.writerows(rows)
    meta = {"seed": dataset.seed, "num_identities": dataset.num_identities, "augmented": dataset.augmented}
    (out / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return out / "manifest.csv"


def load_dataset(data_dir) -> MultiViewDataset:
    """Read a dataset directory; malformed manifest rows raise ``FormatError``
    naming the row (1-based, header is row 1)."""
    root = Path(data_dir)
    meta_path = root / "dataset.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FormatError(f"{manifest}: missing manifest")
    records = []
    with open(manifest, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise FormatError(f"{manifest} row 1: header {header} != {MANIFEST_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            try:
                if len(row) != len(MANIFEST_HEADER):
                    raise ValueError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
                ident, view, inst, split, rel = row
                if split not in SPLITS:
                    raise ValueError(f"unknown split {split!r}")
                img = read_ppm(root / rel)
                if img.shape != (HEIGHT, WIDTH, 3):
                    raise ValueError(f"image {rel} has shape {img.shape}")
                records.append(ImageRecord(int(ident), as_view(view), int(inst), img, split))
            except (ValueError, OSError) as exc:
                raise FormatError(f"{manifest} row {lineno}: {exc}") from exc
    n = meta.get("num_identities", 1 + max((r.identity for r in records), default=-1))
    seed = meta.get("seed", 0)
    ids = [generate_identity(seed, i) for i in range(n)]
    return MultiViewDataset(ids, records, seed, meta.get("augmented", False))


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model: MvModel, path, seed_chain=()) -> None:
    params = model.named_params()
    tensors, blocks, offset = [], [], 0
    for name, arr in params.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "view_order": list(model.view_order),
        "num_classes": model.num_classes,
        "hidden": model.hidden,
        "widths": list(model.widths),
        "freeze_conv": model.freeze_conv,
        "seed_chain": list(seed_chain),
        "tensors": tensors,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(hb)))
        f.write(hb)
        for raw in blocks:
            f.write(raw)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        (n,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(n).decode("utf-8"))


def load_checkpoint(path) -> MvModel:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack_from("<Q", data)
    try:
        header = json.loads(data[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    if header["kind"] not in MODEL_KINDS:
        raise FormatError(f"{path}: unknown model kind {header['kind']!r}")
    model = zero_model(header["kind"], tuple(header["view_order"]), header["num_classes"],
                       tuple(header["widths"]), header["hidden"])
    model.freeze_conv = bool(header.get("freeze_conv", False))
    params = model.named_params()
    entries = {t["name"]: t for t in header["tensors"]}
    if set(entries) != set(params):
        raise FormatError(f"{path}: tensor names do not match a {header['kind']} model: "
                          f"{sorted(set(entries) ^ set(params))}")
    payload = 8 + n
    for name, arr in params.items():
        t = entries[name]
        if tuple(t["shape"]) != arr.shape or t["nbytes"] != arr.size * 8:
            raise FormatError(f"{path}: tensor {name} has shape {t['shape']}, "
                              f"a {header['kind']} model needs {list(arr.shape)}")
        start = payload + t["offset"]
        if start + t["nbytes"] > len(data):
            raise FormatError(f"{path}: tensor {name} runs past end of file")
        arr[...] = np.frombuffer(data, dtype="<f8", count=arr.size, offset=start).reshape(arr.shape)
    return model


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_report(report: RunReport, path) -> None:
    Path(path).write_text(_dump(report.to_dict()), encoding="utf-8")


def load_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_curve_csv(report: RunReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for r in report.curve:
            w.writerow([r.epoch, repr(r.train_error), repr(r.valid_error), repr(r.test_error), repr(r.train_loss)])


def save_comparison_csv(table: ComparisonTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f, lineterminator="\n").writerows(table.rows())


def read_comparison_csv(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))
