#!/usr/bin/env python3
"""Convert the per-digit JSON files of the `mnist` npm package into IDX files.

The npm package (https://www.npmjs.com/package/mnist) ships 10,000 MNIST
digits as normalized floats. Each digit file is split 80/20 into train/test
in file order, then pixels are re-quantized to bytes and written as standard
IDX ubyte files (magic 2051 for images, 2049 for labels).

usage: mnist_json_to_idx.py <package/src/digits> <out_dir>
"""
import json
import pathlib
import struct
import sys


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    digits_dir = pathlib.Path(sys.argv[1])
    out = pathlib.Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    split = {"train": ([], []), "t10k": ([], [])}
    for digit in range(10):
        data = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        images = [data[i:i + 784] for i in range(0, len(data), 784)]
        cut = (len(images) * 4) // 5
        for name, part in (("train", images[:cut]), ("t10k", images[cut:])):
            split[name][0].extend(part)
            split[name][1].extend([digit] * len(part))
    for name, (images, labels) in split.items():
        write_images(out / f"{name}-images-idx3-ubyte", images)
        write_labels(out / f"{name}-labels-idx1-ubyte", labels)
        print(f"{name}: {len(images)} images")


if __name__ == "__main__":
    main()
