#!/usr/bin/env python3
"""Write the 5,000-digit MNIST sample shipped inside the mlxtend wheel as IDX files.

    python3 tools/make_mnist_subset.py --out data/mnist5k

The wheel is fetched with `pip download` unless --wheel points at a local copy.
Output: images.idx3-ubyte (5000x28x28) and labels.idx1-ubyte.
"""

import argparse
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(explicit):
    if explicit:
        return explicit
    tmp = tempfile.mkdtemp(prefix="mlxtend-")
    subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                           "--quiet", "mlxtend", "-d", tmp])
    wheels = glob.glob(os.path.join(tmp, "mlxtend-*.whl"))
    if not wheels:
        sys.exit("mlxtend wheel not found after pip download")
    return wheels[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--wheel", default=None)
    args = ap.parse_args()

    rows = gzip.decompress(zipfile.ZipFile(find_wheel(args.wheel)).read(MEMBER))
    rows = rows.decode().split()
    pixels = bytearray()
    labels = bytearray()
    for line in rows:
        vals = [int(float(v)) for v in line.split(",")]
        if len(vals) != 785:
            sys.exit("unexpected row width %d" % len(vals))
        pixels.extend(vals[:784])
        labels.append(vals[784])

    os.makedirs(args.out, exist_ok=True)
    n = len(labels)
    with open(os.path.join(args.out, "images.idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(pixels)
    with open(os.path.join(args.out, "labels.idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels)
    print("wrote %d images to %s" % (n, args.out))


if __name__ == "__main__":
    main()
