#!/usr/bin/env python3
"""Build a stratified FashionMNIST subset in IDX format.

Source: the `fashion-mnist` npm package, which ships the 70,000 images as
per-class JSON arrays of 784 u8 pixels. Fetch it with

    npm pack fashion-mnist@1.1.0 && tar xzf fashion-mnist-1.1.0.tgz

then run

    python3 scripts/make_fashion_subset.py package/src/clothes data/fashion-subset 400
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main():
    src, dst, per_class = Path(sys.argv[1]), Path(sys.argv[2]), int(sys.argv[3])
    samples = []
    for label in range(10):
        rows = json.loads((src / f"{label}.json").read_text())["data"]
        rng = random.Random(1000 + label)
        for idx in sorted(rng.sample(range(len(rows)), per_class)):
            samples.append((label, rows[idx]))
    random.Random(7).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for _, px in samples:
            f.write(bytes(px))
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for label, _ in samples))


if __name__ == "__main__":
    main()
