#!/usr/bin/env python3
"""Convert the 5000-image MNIST subset shipped inside the mlxtend wheel to IDX files.

Usage:
    pip download mlxtend --no-deps -d /tmp/mlxtend
    python3 scripts/mnist_subset_to_idx.py /tmp/mlxtend/mlxtend-*.whl data/

Writes `mnist5k-images-idx3-ubyte.gz` and `mnist5k-labels-idx1-ubyte.gz`.
Rows keep their original order; shuffling happens at split time.
"""
import gzip
import struct
import sys
import zipfile


def main():
    wheel, out_dir = sys.argv[1], sys.argv[2]
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [line.split(",") for line in raw.splitlines() if line.strip()]
    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        assert len(row) == 785, len(row)
        pixels.extend(int(float(v)) for v in row[:784])
        labels.append(int(float(row[784])))
    n = len(rows)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + bytes(pixels)
    label_bytes = struct.pack(">II", 0x00000801, n) + bytes(labels)
    # mtime=0 keeps the archives byte-reproducible
    with open(f"{out_dir}/mnist5k-images-idx3-ubyte.gz", "wb") as f:
        f.write(gzip.compress(images, mtime=0))
    with open(f"{out_dir}/mnist5k-labels-idx1-ubyte.gz", "wb") as f:
        f.write(gzip.compress(label_bytes, mtime=0))
    print(f"wrote {n} images")


if __name__ == "__main__":
    main()
