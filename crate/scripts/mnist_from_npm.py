#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package (v1.1.0) into IDX files.

Usage: mnist_from_npm.py <package/src/digits dir> <out dir>

The package stores 10000 MNIST digits as 784-float rows scaled to [0,1]
(three decimals), grouped by digit. They are rescaled to bytes, interleaved
with a fixed-seed shuffle and written as t10k-images-idx3-ubyte /
t10k-labels-idx1-ubyte.
"""
import json
import random
import struct
import sys
from pathlib import Path


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(len(raw) // 784):
            row = raw[i * 784:(i + 1) * 784]
            pixels = bytes(max(0, min(255, round(v * 255))) for v in row)
            samples.append((pixels, digit))
    random.Random(0).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "t10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(out / "t10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {out}")


if __name__ == "__main__":
    main()
