#!/usr/bin/env python3
"""Convert the digit/clothing images shipped in the `mnist` and `fashion-mnist`
npm packages into gzipped IDX files.

    npm pack mnist fashion-mnist  # then unpack both tarballs
    python3 tools/prepare_data.py --mnist <pkg>/src/digits \
        --fashion <pkg>/src/clothes --out data --fashion-count 12000
"""
import argparse
import gzip
import json
import os
import random
import struct


def write_idx(prefix, images, labels):
    with gzip.GzipFile(prefix + "-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(prefix + "-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def load_mnist(directory):
    items = []
    for digit in range(10):
        with open(os.path.join(directory, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for start in range(0, len(flat) - 783, 784):
            px = [min(255, max(0, round(v * 255))) for v in flat[start:start + 784]]
            items.append((px, digit))
    return items


def load_fashion(directory):
    items = []
    for cls in range(10):
        with open(os.path.join(directory, f"{cls}.json")) as f:
            rows = json.load(f)["data"]
        items.extend((row, cls) for row in rows if len(row) == 784)
    return items


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist", required=True)
    ap.add_argument("--fashion", required=True)
    ap.add_argument("--out", default="data")
    ap.add_argument("--fashion-count", type=int, default=12000)
    ap.add_argument("--seed", type=int, default=2019)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    rng = random.Random(args.seed)

    mnist = load_mnist(args.mnist)
    rng.shuffle(mnist)
    write_idx(os.path.join(args.out, "mnist"), [p for p, _ in mnist], [l for _, l in mnist])

    fashion = load_fashion(args.fashion)
    rng.shuffle(fashion)
    fashion = fashion[: args.fashion_count]
    write_idx(os.path.join(args.out, "fashion"), [p for p, _ in fashion], [l for _, l in fashion])
    print(f"mnist: {len(mnist)} images, fashion: {len(fashion)} images")


if __name__ == "__main__":
    main()
