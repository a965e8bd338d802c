#!/usr/bin/env python3
"""Build the offline MNIST subset fixture from the `mnist` npm package.

The npm package bundles 10 000 MNIST digits as normalized floats. They are
re-quantized to u8, shuffled with a fixed seed, split 8000/2000 and written as
gzip IDX files using the canonical file names.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits crates/qlif/testdata/mnist-subset
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload.tobytes())


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64)
        raw = raw.reshape(-1, 784)
        images.append(np.clip(np.rint(raw * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(raw), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(20240101).permutation(len(labels))
    images, labels = images[order], labels[order]
    os.makedirs(dst, exist_ok=True)
    for split, sl in (("train", slice(0, 8000)), ("t10k", slice(8000, 10000))):
        n = len(labels[sl])
        write_idx(os.path.join(dst, f"{split}-images-idx3-ubyte.gz"), 0x803, (n, 28, 28), images[sl])
        write_idx(os.path.join(dst, f"{split}-labels-idx1-ubyte.gz"), 0x801, (n,), labels[sl])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
