#!/usr/bin/env python3
"""Write the 5000-sample MNIST subset bundled with mlxtend as IDX files.

The full MNIST archives are not reachable from every build machine, but the
mlxtend wheel (BSD-3) ships 500 images per digit as CSV. This script fetches
that wheel with pip (or uses --wheel), and writes

    <out>/images-idx3-ubyte   magic 0x00000803, [5000, 28, 28] uint8
    <out>/labels-idx1-ubyte   magic 0x00000801, [5000] uint8

in the original row order.
"""
import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

WHEEL = "mlxtend==0.24.0"
MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(dest):
    subprocess.run([sys.executable, "-m", "pip", "download", WHEEL, "--no-deps", "-q", "-d", dest],
                   check=True)
    return next(pathlib.Path(dest).glob("mlxtend-*.whl"))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--wheel", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist5k"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        rows = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode().splitlines()

    images, labels = io.BytesIO(), io.BytesIO()
    images.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
    labels.write(struct.pack(">II", 0x801, len(rows)))
    for line in rows:
        v = [int(float(t)) for t in line.split(",")]
        assert len(v) == 785 and all(0 <= p <= 255 for p in v[:784])
        images.write(bytes(v[:784]))
        labels.write(bytes([v[784]]))

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "images-idx3-ubyte").write_bytes(images.getvalue())
    (args.out / "labels-idx1-ubyte").write_bytes(labels.getvalue())
    print(f"wrote {len(rows)} samples to {args.out}")


if __name__ == "__main__":
    main()
