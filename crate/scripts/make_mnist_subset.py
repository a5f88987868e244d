#!/usr/bin/env python3
"""Write a class-balanced subset of the 5000-digit MNIST sample bundled with the
mlxtend wheel as IDX files (images and labels). The bundled file is sorted by
class, so the first COUNT/10 rows of each class are taken and interleaved.

    python3 scripts/make_mnist_subset.py [--count 2560] [--out data]

The wheel is fetched with `pip download` unless --wheel is given.
"""
import argparse
import glob
import gzip
import struct
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "mlxtend", "--no-deps", "-q", "-d", dest],
        check=True,
    )
    return glob.glob(f"{dest}/mlxtend-*.whl")[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=2560)
    ap.add_argument("--out", default="data")
    ap.add_argument("--wheel")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        text = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()

    by_class = [[] for _ in range(10)]
    for line in text.splitlines():
        row = line.split(",")
        by_class[int(float(row[784]))].append(row)
    per_class = args.count // 10
    rows = [by_class[c][k] for k in range(per_class) for c in range(10)]
    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        pixels.extend(int(float(v)) for v in row[:784])
        labels.append(int(float(row[784])))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"mnist{len(rows)}"
    (out / f"{stem}-images-idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x803, len(rows), 28, 28) + bytes(pixels)
    )
    (out / f"{stem}-labels-idx1-ubyte").write_bytes(
        struct.pack(">II", 0x801, len(rows)) + bytes(labels)
    )
    print(f"wrote {len(rows)} images to {out}/{stem}-*")


if __name__ == "__main__":
    main()
