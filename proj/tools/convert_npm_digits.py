#!/usr/bin/env python3
"""Convert the per-class JSON payloads shipped by the `mnist` and
`fashion-mnist` npm packages into IDX files.

    npm pack mnist fashion-mnist
    tar xzf mnist-1.1.0.tgz && mv package mnist
    tar xzf fashion-mnist-1.1.0.tgz && mv package fashion
    python3 tools/convert_npm_digits.py mnist/src/digits data/mnist
    python3 tools/convert_npm_digits.py fashion/src/clothes data/fashion

The subset is class-stratified and deterministic for a fixed --seed.
"""

import argparse
import json
import pathlib
import struct

import numpy as np


def load_class(path: pathlib.Path) -> np.ndarray:
    payload = json.loads(path.read_text())["data"]
    if payload and isinstance(payload[0], list):
        # fashion-mnist: list of 784-long integer rows in [0, 255]
        rows = [row for row in payload if len(row) == 784]
        return np.asarray(rows, dtype=np.float64).round().astype(np.uint8)
    # mnist: one flat float array in [0, 1], three decimals
    flat = np.asarray(payload, dtype=np.float64)
    return np.clip(np.round(flat * 255.0), 0, 255).astype(np.uint8).reshape(-1, 784)


def write_images(path: pathlib.Path, images: np.ndarray) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.tobytes())


def write_labels(path: pathlib.Path, labels: np.ndarray) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("source", type=pathlib.Path, help="directory holding 0.json .. 9.json")
    parser.add_argument("prefix", type=pathlib.Path, help="output prefix, e.g. data/mnist")
    parser.add_argument("--train", type=int, default=2000)
    parser.add_argument("--test", type=int, default=500)
    parser.add_argument("--seed", type=int, default=20260101)
    args = parser.parse_args()

    rng = np.random.RandomState(args.seed)
    per_class_train = args.train // 10
    per_class_test = args.test // 10

    train_x, train_y, test_x, test_y = [], [], [], []
    for digit in range(10):
        images = load_class(args.source / f"{digit}.json")
        order = rng.permutation(images.shape[0])
        need = per_class_train + per_class_test
        if order.shape[0] < need:
            raise SystemExit(f"class {digit}: only {order.shape[0]} samples, need {need}")
        train_x.append(images[order[:per_class_train]])
        test_x.append(images[order[per_class_train:need]])
        train_y.append(np.full(per_class_train, digit))
        test_y.append(np.full(per_class_test, digit))

    def shuffled(xs, ys):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        perm = rng.permutation(x.shape[0])
        return x[perm], y[perm]

    tx, ty = shuffled(train_x, train_y)
    vx, vy = shuffled(test_x, test_y)
    args.prefix.parent.mkdir(parents=True, exist_ok=True)
    write_images(pathlib.Path(f"{args.prefix}-train-images.idx"), tx)
    write_labels(pathlib.Path(f"{args.prefix}-train-labels.idx"), ty)
    write_images(pathlib.Path(f"{args.prefix}-test-images.idx"), vx)
    write_labels(pathlib.Path(f"{args.prefix}-test-labels.idx"), vy)
    print(f"{args.prefix}: {tx.shape[0]} train / {vx.shape[0]} test")


if __name__ == "__main__":
    main()
