"""IDX image/label parsing, dataset filtering and splitting, PGM output.

The IDX format: a big-endian header of 32-bit words starting with a magic
number (0x00000803 for u8 image tensors, 0x00000801 for u8 label vectors)
followed by the dimension sizes, then the raw bytes. Gzip-compressed
payloads are detected by their two-byte signature and inflated
transparently. Pixels are normalized to [0, 1] by dividing by 255; the
normalization is a bijection on the u8 grid, so round(255 * v) recovers
the original file bytes.
"""

import gzip
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_DIR_ENV = "MNIST_DIR"

_IMAGE_BASENAMES = ("train-images-idx3-ubyte", "train-images.idx3-ubyte")
_LABEL_BASENAMES = ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte")


@dataclass(frozen=True)
class ImageDataset:
    """Images as an (n, width*height) matrix of floats in [0, 1].

    labels is an (n,) integer array, or None for an unlabeled set.
    """

    images: np.ndarray
    labels: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        object.__setattr__(self, "images", images)
        if images.ndim != 2 or images.shape[1] != self.width * self.height:
            raise ValueError("images must be (n, width*height)")
        if images.size and (images.min() < 0 or images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            object.__setattr__(self, "labels", labels)
            if labels.shape != (images.shape[0],):
                raise ValueError("labels must be one per image")

    def __len__(self):
        return self.images.shape[0]


def _inflate(raw):
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _read_header(raw, expected_magic, n_dims, what):
    need = 4 * (1 + n_dims)
    if len(raw) < need:
        raise ValueError("truncated %s header: %d bytes, need %d"
                         % (what, len(raw), need))
    words = struct.unpack(">" + "i" * (1 + n_dims), raw[:need])
    if words[0] != expected_magic:
        raise ValueError("bad %s magic 0x%08x at offset 0, expected 0x%08x"
                         % (what, words[0] & 0xFFFFFFFF, expected_magic))
    return words[1:], need


def read_idx_images(raw):
    """Parse an IDX u8 image tensor into an unlabeled ImageDataset.

    Accepts gzip-compressed bytes. Raises ValueError with the byte offset
    on a bad magic or a truncated payload.
    """
    raw = _inflate(raw)
    (n, rows, cols), off = _read_header(raw, IMAGES_MAGIC, 3, "image")
    if min(n, rows, cols) < 0:
        raise ValueError("negative dimension in image header")
    count = n * rows * cols
    if len(raw) < off + count:
        raise ValueError("truncated image payload at offset %d: have %d "
                         "bytes, need %d" % (len(raw), len(raw) - off, count))
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=off)
    images = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return ImageDataset(images=images, labels=None, width=cols, height=rows)


def read_idx_labels(raw):
    """Parse an IDX u8 label vector into an (n,) integer array."""
    raw = _inflate(raw)
    (n,), off = _read_header(raw, LABELS_MAGIC, 1, "label")
    if n < 0:
        raise ValueError("negative count in label header")
    if len(raw) < off + n:
        raise ValueError("truncated label payload at offset %d: have %d "
                         "bytes, need %d" % (len(raw), len(raw) - off, n))
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).astype(int)


def write_idx_images(dataset):
    """Serialize an ImageDataset back to IDX bytes (inverse of the parser
    up to the u8 grid)."""
    n = len(dataset)
    u8 = np.rint(np.clip(dataset.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = struct.pack(">iiii", IMAGES_MAGIC, n, dataset.height, dataset.width)
    return header + u8.tobytes()


def write_idx_labels(labels):
    labels = np.asarray(labels)
    header = struct.pack(">ii", LABELS_MAGIC, len(labels))
    return header + labels.astype(np.uint8).tobytes()


def _find_file(directory, basenames):
    for base in basenames:
        for name in (base + ".gz", base):
            path = os.path.join(directory, name)
            if os.path.exists(path):
                return path
    raise FileNotFoundError(
        "no IDX file matching %s under %s" % (basenames[0], directory))


def load_mnist(directory=None):
    """Load the labeled training images from an MNIST-layout directory.

    The directory argument wins; otherwise the MNIST_DIR environment
    variable names it.
    """
    directory = directory or os.environ.get(MNIST_DIR_ENV)
    if not directory:
        raise ValueError(
            "no dataset directory: pass one or set %s" % MNIST_DIR_ENV)
    img_path = _find_file(directory, _IMAGE_BASENAMES)
    lab_path = _find_file(directory, _LABEL_BASENAMES)
    with open(img_path, "rb") as f:
        ds = read_idx_images(f.read())
    with open(lab_path, "rb") as f:
        labels = read_idx_labels(f.read())
    if len(labels) != len(ds):
        raise ValueError("label count %d != image count %d"
                         % (len(labels), len(ds)))
    return ImageDataset(images=ds.images, labels=labels,
                        width=ds.width, height=ds.height)


def filter_by_label(dataset, wanted):
    """Subset with labels in wanted, original order preserved. A label
    absent from the data yields an empty dataset, not an error."""
    if dataset.labels is None:
        raise ValueError("dataset is unlabeled")
    wanted = set(int(w) for w in wanted)
    mask = np.isin(dataset.labels, sorted(wanted))
    return ImageDataset(images=dataset.images[mask],
                        labels=dataset.labels[mask],
                        width=dataset.width, height=dataset.height)


def split_dataset(dataset, train_fraction, rng):
    """Deterministic shuffled split; train gets floor(fraction * n)."""
    if not (0.0 <= train_fraction <= 1.0):
        raise ValueError("train_fraction must lie in [0, 1]")
    n = len(dataset)
    perm = rng.permutation(n)
    n_train = int(math.floor(train_fraction * n))
    tr, te = perm[:n_train], perm[n_train:]

    def take(idx):
        labels = None if dataset.labels is None else dataset.labels[idx]
        return ImageDataset(images=dataset.images[idx], labels=labels,
                            width=dataset.width, height=dataset.height)

    return take(tr), take(te)


def write_image_grid(images, width, height, cols, path):
    """Tile images into a grid and write a binary PGM (P5, maxval 255).

    Values are clamped to [0, 1] before quantization; vacant cells in the
    last row are black.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 1:
        images = images[None, :]
    n = images.shape[0]
    if images.shape[1] != width * height:
        raise ValueError("images must be (n, width*height)")
    if cols < 1:
        raise ValueError("cols must be >= 1")
    rows = (n + cols - 1) // cols
    canvas = np.zeros((rows * height, cols * width), dtype=np.uint8)
    quant = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * height:(r + 1) * height, c * width:(c + 1) * width] = (
            quant[i].reshape(height, width))
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (canvas.shape[1], canvas.shape[0]))
        f.write(canvas.tobytes())
    return path
