"""Core data types, image normalization and dataset manifest handling.

Images are numpy float arrays of shape (H, W, C) with values in [-1, 1].
AU (action unit) vectors are 1-D float arrays of length ``au_dim``.
Manifests are JSON-lines files: one header object, then one object per record.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

MANIFEST_VERSION = 1
DEFAULT_AU_DIM = 17
DEFAULT_AU_MAX = 5.0
DEFAULT_IMAGE_SIZE = 128


class ManifestError(Exception):
    """Manifest file is malformed or violates an invariant."""


def normalize_image(raw):
    """Map a [0, 255] byte image to a float image in [-1, 1]."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("raw image values must lie in [0, 255]")
    return (arr / 127.5 - 1.0).astype(np.float32)


def denormalize_image(img):
    """Map a [-1, 1] float image back to uint8 [0, 255]."""
    arr = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def load_image(path):
    """Load an 8-bit PNG as a normalized (H, W, 3) image."""
    with Image.open(path) as im:
        return normalize_image(np.asarray(im.convert("RGB")))


def save_image(path, img):
    Image.fromarray(denormalize_image(img)).save(path)


def check_au_vector(aus, au_dim, name="aus"):
    aus = np.asarray(aus, dtype=np.float64)
    if aus.ndim != 1 or aus.shape[0] != au_dim:
        raise ValueError(f"{name}: expected length {au_dim}, got shape {aus.shape}")
    if not np.all(np.isfinite(aus)):
        raise ValueError(f"{name}: non-finite values")
    return aus


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    aus: np.ndarray
    landmarks: dict  # name -> (x, y) in pixels
    identity_id: str
    expression_label: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    version: int
    au_dim: int
    image_size: int
    au_max: float = DEFAULT_AU_MAX
    records: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.records)

    def identities(self):
        seen = {}
        for rec in self.records:
            seen.setdefault(rec.identity_id, []).append(rec)
        return seen


def _parse_record(obj, au_dim, image_size, index, base_dir, check_files):
    try:
        aus = check_au_vector(obj["aus"], au_dim, name=f"record {index} aus")
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc
    landmarks = {}
    for name, pt in obj["landmarks"].items():
        x, y = float(pt[0]), float(pt[1])
        if not (0 <= x < image_size and 0 <= y < image_size):
            raise ManifestError(
                f"record {index}: landmark {name!r} ({x}, {y}) outside "
                f"{image_size}x{image_size} image bounds"
            )
        landmarks[name] = (x, y)
    identity = str(obj["identity_id"])
    if not identity:
        raise ManifestError(f"record {index}: empty identity_id")
    path = obj["image_path"]
    if check_files:
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(full):
            raise ManifestError(f"record {index}: image file not found: {full}")
    return SampleRecord(
        image_path=path,
        aus=aus,
        landmarks=landmarks,
        identity_id=identity,
        expression_label=obj.get("expression_label"),
    )


def load_manifest(path, check_files=True):
    """Load and validate a JSON-lines dataset manifest."""
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if not lines:
        raise ManifestError(f"{path}: empty manifest file (missing header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:1: bad header: {exc}") from exc
    for key in ("version", "au_dim", "image_size"):
        if key not in header:
            raise ManifestError(f"{path}: header missing {key!r}")
    au_dim = int(header["au_dim"])
    image_size = int(header["image_size"])
    records = []
    for i, line in enumerate(lines[1:]):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{i + 2}: bad record: {exc}") from exc
        records.append(_parse_record(obj, au_dim, image_size, i, base_dir, check_files))
    return DatasetManifest(
        version=int(header["version"]),
        au_dim=au_dim,
        image_size=image_size,
        au_max=float(header.get("au_max", DEFAULT_AU_MAX)),
        records=tuple(records),
    )


def save_manifest(path, manifest):
    """Write a manifest in the JSON-lines format read by load_manifest."""
    with open(path, "w") as fh:
        header = {
            "version": manifest.version,
            "au_dim": manifest.au_dim,
            "image_size": manifest.image_size,
            "au_max": manifest.au_max,
        }
        fh.write(json.dumps(header) + "\n")
        for rec in manifest.records:
            obj = {
                "image_path": rec.image_path,
                "aus": [float(v) for v in rec.aus],
                "landmarks": {k: [float(v[0]), float(v[1])] for k, v in rec.landmarks.items()},
                "identity_id": rec.identity_id,
            }
            if rec.expression_label is not None:
                obj["expression_label"] = rec.expression_label
            fh.write(json.dumps(obj) + "\n")


def resolve_image_path(manifest_path, record):
    if os.path.isabs(record.image_path):
        return record.image_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), record.image_path)
