"""In-memory image datasets and their on-disk formats.

Two dataset layouts are understood:

* ``dir``: a tree ``root/<label>/<id>.png`` of 8-bit grayscale or RGB PNGs.
* ``bin``: a flat little-endian file: magic ``b"FSKD"``, then u32 count,
  u32 H, u32 W, u32 C, then per sample a u32 label followed by H*W*C bytes
  in H, W, C order.

Verification pairs are read from a CSV with rows ``path_a,path_b,same``.
"""

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

BIN_MAGIC = b"FSKD"
_BIN_HEADER = struct.Struct("<4sIIII")


class DataError(Exception):
    """Raised when a dataset or pair list cannot be read."""


@dataclass
class Dataset:
    images: np.ndarray  # N x H x W x C, uint8
    labels: np.ndarray  # N, int64
    ids: List[str] = field(default_factory=list)
    is_face: bool = False
    classes: Optional[List[str]] = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise DataError(f"images must be an N x H x W x C uint8 array, got {self.images.dtype} {self.images.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != len(self.images):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if np.any(self.labels < 0):
            raise DataError("labels must be non-negative")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.images))]
        if self.classes is None:
            self.classes = [str(c) for c in np.unique(self.labels)]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.images[index],
            self.labels[index],
            [self.ids[i] for i in index],
            self.is_face,
            self.classes,
        )


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc


def _to_channels(images: Sequence[np.ndarray]) -> np.ndarray:
    rgb = any(im.ndim == 3 for im in images)
    out = []
    for im in images:
        if rgb and im.ndim == 2:
            im = np.repeat(im[..., None], 3, axis=2)
        elif not rgb:
            im = im[..., None]
        out.append(im)
    return np.stack(out)


def load_image_tree(root, is_face: bool = False) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    label_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not label_dirs:
        raise DataError(f"{root}: no label directories")
    names = [p.name for p in label_dirs]
    numeric = all(n.isdigit() for n in names)
    if numeric:
        label_dirs.sort(key=lambda p: int(p.name))
        names = [p.name for p in label_dirs]
    images, labels, ids = [], [], []
    for idx, d in enumerate(label_dirs):
        label = int(d.name) if numeric else idx
        for f in sorted(d.glob("*.png")):
            images.append(_read_png(f))
            labels.append(label)
            ids.append(f"{d.name}/{f.stem}")
    if not images:
        raise DataError(f"{root}: no PNG files found")
    shapes = {im.shape[:2] for im in images}
    if len(shapes) != 1:
        raise DataError(f"{root}: images have differing sizes {sorted(shapes)}")
    classes = names if not numeric else [str(i) for i in range(max(labels) + 1)]
    return Dataset(_to_channels(images), np.array(labels), ids, is_face, classes)


def save_image_tree(dataset: Dataset, root) -> None:
    root = Path(root)
    for img, label, ident in zip(dataset.images, dataset.labels, dataset.ids):
        stem = ident.rsplit("/", 1)[-1]
        d = root / str(int(label))
        d.mkdir(parents=True, exist_ok=True)
        arr = img[..., 0] if img.shape[-1] == 1 else img
        Image.fromarray(arr).save(d / f"{stem}.png")


def load_binary(path, is_face: bool = False) -> Dataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if len(raw) < _BIN_HEADER.size:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, count, h, w, c = _BIN_HEADER.unpack_from(raw, 0)
    if magic != BIN_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {BIN_MAGIC!r}")
    if min(h, w, c) == 0:
        raise DataError(f"{path}: zero image dimension in header ({h}x{w}x{c})")
    record = np.dtype([("label", "<u4"), ("pixels", "u1", (h, w, c))])
    need = _BIN_HEADER.size + count * record.itemsize
    if len(raw) != need:
        raise DataError(
            f"{path}: header promises {count} samples ({need} bytes) but file has {len(raw)} bytes"
        )
    recs = np.frombuffer(raw, dtype=record, count=count, offset=_BIN_HEADER.size)
    ids = [str(i) for i in range(count)]
    return Dataset(recs["pixels"].copy(), recs["label"].astype(np.int64), ids, is_face)


def save_binary(dataset: Dataset, path) -> None:
    n, h, w, c = dataset.images.shape
    record = np.dtype([("label", "<u4"), ("pixels", "u1", (h, w, c))])
    recs = np.empty(n, dtype=record)
    recs["label"] = dataset.labels
    recs["pixels"] = dataset.images
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(BIN_MAGIC, n, h, w, c))
        fh.write(recs.tobytes())


def load_dataset(path, format: str = "auto", is_face: bool = False) -> Dataset:
    """Load a dataset in ``dir`` or ``bin`` format (``auto`` picks by path type)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    if format == "auto":
        format = "dir" if path.is_dir() else "bin"
    if format == "dir":
        return load_image_tree(path, is_face)
    if format == "bin":
        return load_binary(path, is_face)
    raise DataError(f"unknown dataset format {format!r}")


@dataclass
class PairList:
    images_a: np.ndarray
    images_b: np.ndarray
    same: np.ndarray  # bool


def load_pair_list(path) -> PairList:
    """Read ``path_a,path_b,same`` rows; image paths are relative to the CSV."""
    path = Path(path)
    base = path.parent
    a, b, same = [], [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "path_a":
                continue
            if len(row) != 3 or row[2].strip() not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: expected 'path_a,path_b,same' with same in {{0,1}}, got {row}")
            try:
                a.append(_read_png(base / row[0].strip()))
                b.append(_read_png(base / row[1].strip()))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            same.append(row[2].strip() == "1")
    if not same:
        raise DataError(f"{path}: no pairs")
    imgs = _to_channels(a + b)
    n = len(same)
    return PairList(imgs[:n], imgs[n:], np.array(same, dtype=bool))


def write_pair_list(path, rows: Sequence[Tuple[str, str, bool]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_a", "path_b", "same"])
        for pa, pb, s in rows:
            writer.writerow([os.fspath(pa), os.fspath(pb), int(bool(s))])
