"""Synthetic "one informative cell" image dataset.

Each image is seeded uniform noise; exactly one grid cell holds a class
specific colour/texture pattern blended in with a random contrast. The label is
the pattern class and the cell index (raster order) is kept as ground truth
for saliency checks.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .weights_io import FormatError, atomic_write_bytes, read_tensors, write_tensors

PALETTE = np.array([
    [1.0, 0.1, 0.1],
    [0.1, 1.0, 0.1],
    [0.1, 0.1, 1.0],
    [1.0, 1.0, 0.1],
    [1.0, 0.1, 1.0],
    [0.1, 1.0, 1.0],
    [1.0, 1.0, 1.0],
    [1.0, 0.55, 0.0],
])
MANIFEST = "manifest.csv"


@dataclass
class ToyDataset:
    images: np.ndarray  # (N, channels, H, W)
    labels: np.ndarray  # (N,) int, -1 when unknown
    cells: np.ndarray  # (N,) int informative cell, -1 when unknown

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ToyDataset":
        idx = np.asarray(idx)
        return ToyDataset(self.images[idx], self.labels[idx], self.cells[idx])

    def has_labels(self) -> bool:
        return bool(np.all(self.labels >= 0))


def _texture(kind: int, p: int) -> np.ndarray:
    yy, xx = np.mgrid[0:p, 0:p]
    band = max(1, p // 4)
    return [
        np.ones((p, p)),
        ((yy // band) % 2 == 0).astype(float),
        ((xx // band) % 2 == 0).astype(float),
        (((yy // band) + (xx // band)) % 2 == 0).astype(float),
    ][kind % 4]


def class_pattern(label: int, patch_size: int) -> np.ndarray:
    """(3, p, p) pattern for ``label``: palette colour modulated by a texture."""
    colour = PALETTE[label % len(PALETTE)]
    tex = _texture(label // len(PALETTE) + label, patch_size)
    return colour[:, None, None] * (0.25 + 0.75 * tex)[None]


def make_toy_dataset(
    n: int,
    seed: int,
    num_classes: int = 8,
    image_size: int = 64,
    patch_size: int = 16,
    contrast: tuple[float, float] = (0.2, 1.0),
) -> ToyDataset:
    if num_classes > 4 * len(PALETTE):
        raise ValueError(f"at most {4 * len(PALETTE)} classes supported")
    rng = np.random.default_rng(seed)
    grid = image_size // patch_size
    images = rng.uniform(0.0, 1.0, size=(n, 3, image_size, image_size))
    labels = rng.integers(0, num_classes, size=n)
    cells = rng.integers(0, grid * grid, size=n)
    alphas = rng.uniform(*contrast, size=n)
    patterns = [class_pattern(k, patch_size) for k in range(num_classes)]
    for i in range(n):
        r, c = divmod(int(cells[i]), grid)
        ys = slice(r * patch_size, (r + 1) * patch_size)
        xs = slice(c * patch_size, (c + 1) * patch_size)
        a = alphas[i]
        images[i, :, ys, xs] = (1 - a) * images[i, :, ys, xs] + a * patterns[labels[i]]
    return ToyDataset(images, labels.astype(np.int64), cells.astype(np.int64))


def save_dataset(ds: ToyDataset, directory) -> None:
    """One TDW1 file per image plus ``manifest.csv`` (filename,label,cell)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["filename", "label", "cell"])
    for i in range(len(ds)):
        name = f"img_{i:05d}.tdw"
        write_tensors(directory / name, {"image": ds.images[i]})
        writer.writerow([name, int(ds.labels[i]), int(ds.cells[i])])
    atomic_write_bytes(directory / MANIFEST, buf.getvalue().encode("utf-8"))


def load_image(path) -> np.ndarray:
    _, tensors = read_tensors(path)
    if list(tensors) != ["image"]:
        raise FormatError(f"{path}: expected a single tensor named 'image', got {list(tensors)}")
    return tensors["image"]


def load_dataset(directory) -> ToyDataset:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    images, labels, cells = [], [], []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            images.append(load_image(directory / row["filename"]))
            label = row.get("label", "")
            labels.append(int(label) if label not in ("", None) else -1)
            cell = row.get("cell", "")
            cells.append(int(cell) if cell not in ("", None) else -1)
    if not images:
        raise FormatError(f"{manifest} lists no images")
    return ToyDataset(np.stack(images), np.array(labels, dtype=np.int64), np.array(cells, dtype=np.int64))
