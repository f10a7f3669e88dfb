"""Convert the digit arrays bundled in the `mnist` npm package into an IDX pair.

Usage: python3 scripts/mnist_npm_to_idx.py <path-to-npm-package> data/mnist
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def main(pkg, out):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            data = np.asarray(json.load(f)["data"], dtype=np.float64)
        data = data.reshape(-1, 784)
        images.append(np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(data), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = len(labels)
    with gzip.GzipFile(os.path.join(out, "mnist10k-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(os.path.join(out, "mnist10k-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.tobytes())
    print(n, np.bincount(labels))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
