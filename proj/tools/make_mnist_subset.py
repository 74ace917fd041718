#!/usr/bin/env python3
"""Convert the 5000-image MNIST subset shipped inside the mlxtend wheel to IDX files.

Usage:
    pip download mlxtend==0.24.0 --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-0.24.0-py3-none-any.whl data/mnist5k

Split: per class, the first 400 images go to train and the last 100 to test
(4000 / 1000 overall, balanced). Examples are written class by class in
round-robin order, so every prefix is close to balanced.
"""
import argparse
import gzip
import io
import struct
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.int64)

    per_class = [np.flatnonzero(labels == c) for c in range(10)]
    # Round-robin over classes so any prefix stays balanced.
    train_idx = np.stack([idx[:400] for idx in per_class], axis=1).reshape(-1)
    test_idx = np.stack([idx[400:500] for idx in per_class], axis=1).reshape(-1)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", pixels[train_idx])
    write_labels(out / "train-labels-idx1-ubyte", labels[train_idx])
    write_images(out / "test-images-idx3-ubyte", pixels[test_idx])
    write_labels(out / "test-labels-idx1-ubyte", labels[test_idx])
    print(f"train={len(train_idx)} test={len(test_idx)} -> {out}")


if __name__ == "__main__":
    main()
