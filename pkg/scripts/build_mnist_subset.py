#!/usr/bin/env python3
"""Build the bundled MNIST subset (IDX, gzipped) from two redistributed copies of MNIST.

Sources, both real MNIST digits:
  * ``mlxtend/data/data/mnist_5k.csv.gz`` from the mlxtend wheel: 5000 digits,
    500 per class, raw bytes + label per row.  Used as the training split.
  * ``src/digits/<d>.json`` from the npm ``mnist`` package: 10000 digits stored
    as byte/255 rounded to 3 decimals (round(v*255) recovers the byte exactly).
    It contains the mlxtend digits; the first 100 per class *not* in the
    training split become the test split.

Usage:
    pip download --no-deps mlxtend -d /tmp/dl && npm pack mnist
    python scripts/build_mnist_subset.py --wheel /tmp/dl/mlxtend-*.whl \
        --npm-digits package/src/digits --out data/mnist
"""

import argparse
import gzip
import io
import json
import os
import zipfile

import numpy as np

from ram.dataset import TEST_FILES, TRAIN_FILES, write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel", required=True)
    ap.add_argument("--npm-digits", required=True)
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        raw = zf.read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(gzip.open(io.BytesIO(raw)), delimiter=",", dtype=np.int64)
    train_x = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    train_y = table[:, -1].astype(np.uint8)
    seen = {row.tobytes() for row in train_x}

    test_x, test_y = [], []
    for digit in range(10):
        with open(os.path.join(args.npm_digits, f"{digit}.json")) as fh:
            vals = np.asarray(json.load(fh)["data"], dtype=np.float64)
        imgs = np.round(vals * 255).astype(np.uint8).reshape(-1, 28, 28)
        fresh = [img for img in imgs if img.tobytes() not in seen]
        test_x.extend(fresh[:args.test_per_class])
        test_y.extend([digit] * args.test_per_class)

    test_x, test_y = np.stack(test_x), np.asarray(test_y, dtype=np.uint8)
    # both sources are sorted by class; shuffle once so any prefix is class-balanced-ish
    rng = np.random.default_rng(0)
    tr, te = rng.permutation(len(train_y)), rng.permutation(len(test_y))

    os.makedirs(args.out, exist_ok=True)
    write_idx(train_x[tr], train_y[tr], *(os.path.join(args.out, n) for n in TRAIN_FILES))
    write_idx(test_x[te], test_y[te], *(os.path.join(args.out, n) for n in TEST_FILES))
    print(f"train {len(train_y)}  test {len(test_y)}  -> {args.out}")


if __name__ == "__main__":
    main()
