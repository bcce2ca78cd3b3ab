"""Materialize MNIST in IDX format from the npm ``mnist`` package.

The npm package ``mnist`` (1.1.0) bundles roughly one thousand images per
digit class as JSON arrays of pixel values normalized to [0,1] at three
decimals.  Since the u8 grid spacing 1/255 is wider than twice the rounding
error, round(255*v) recovers the original bytes exactly.  The output is a
standard gzipped IDX pair (images magic 0x00000803, labels 0x00000801,
big-endian headers) with classes interleaved by a fixed shuffle, suitable
for any loader that reads the canonical MNIST distribution files.

Usage:
    python scripts/fetch_mnist.py --out data/mnist
    python scripts/fetch_mnist.py --from-dir /path/to/extracted/package

Without --from-dir the script runs ``npm pack mnist@1.1.0`` in a temp
directory, which needs npm and network access to a registry.
"""

import argparse
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

import numpy as np

SHUFFLE_SEED = 0


def load_digits(pkg_dir):
    """Read digits/{0..9}.json and return (images u8 [n,784], labels u8 [n])."""
    chunks, labels = [], []
    for digit in range(10):
        path = os.path.join(pkg_dir, "src", "digits", "%d.json" % digit)
        with open(path) as f:
            flat = json.load(f)["data"]
        if len(flat) % 784 != 0:
            raise ValueError("%s: %d values is not a multiple of 784" % (path, len(flat)))
        arr = np.asarray(flat, dtype=np.float64).reshape(-1, 784)
        u8 = np.rint(arr * 255.0)
        if u8.min() < 0 or u8.max() > 255:
            raise ValueError("%s: pixel values outside [0,1]" % path)
        chunks.append(u8.astype(np.uint8))
        labels.append(np.full(arr.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(chunks, axis=0)
    labels = np.concatenate(labels)
    perm = np.random.default_rng(SHUFFLE_SEED).permutation(images.shape[0])
    return images[perm], labels[perm]


def write_idx(out_dir, images, labels):
    os.makedirs(out_dir, exist_ok=True)
    n = images.shape[0]
    img_path = os.path.join(out_dir, "train-images-idx3-ubyte.gz")
    lab_path = os.path.join(out_dir, "train-labels-idx1-ubyte.gz")
    # mtime=0 so regeneration is byte-identical
    with gzip.GzipFile(img_path, "wb", mtime=0) as f:
        f.write(struct.pack(">iiii", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(lab_path, "wb", mtime=0) as f:
        f.write(struct.pack(">ii", 0x00000801, n))
        f.write(labels.tobytes())
    return img_path, lab_path


def npm_fetch(tmp):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                   stdout=subprocess.DEVNULL)
    tarball = os.path.join(tmp, "mnist-1.1.0.tgz")
    with tarfile.open(tarball) as tf:
        tf.extractall(tmp)
    return os.path.join(tmp, "package")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist", help="output directory")
    ap.add_argument("--from-dir", default=None,
                    help="already-extracted npm package directory (skips npm)")
    args = ap.parse_args()

    if args.from_dir:
        images, labels = load_digits(args.from_dir)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            images, labels = load_digits(npm_fetch(tmp))

    img_path, lab_path = write_idx(args.out, images, labels)
    counts = np.bincount(labels, minlength=10)
    print("wrote %s (%d images)" % (img_path, images.shape[0]))
    print("wrote %s" % lab_path)
    print("per-digit counts:", " ".join("%d:%d" % (d, c) for d, c in enumerate(counts)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
