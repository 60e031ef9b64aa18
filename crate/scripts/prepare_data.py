#!/usr/bin/env python3
"""Prepare dataset files for the `iro` command-line tool.

MNIST: converts the 5,000-image MNIST sample shipped with the mlxtend
package (rows of 784 pixel values followed by the digit label) to the IDX
files read by the coloured-digit experiments. The source can be the CSV
itself, gzip-compressed or not, or the mlxtend wheel, which can be fetched
with `pip download mlxtend --no-deps`. Full MNIST IDX files can be used
instead by placing them in the data directory under the same names.

Bike sharing: the UCI `hour.csv` file is not redistributed here; copy it
into the data directory as `hour.csv`.

Usage:
    python3 scripts/prepare_data.py --mnist mlxtend-0.24.0-py3-none-any.whl --out data
"""

import argparse
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
SIDE = 28


def read_rows(source: Path) -> list[list[int]]:
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as wheel:
            raw = gzip.decompress(wheel.read(MEMBER))
    elif source.suffix == ".gz":
        raw = gzip.decompress(source.read_bytes())
    else:
        raw = source.read_bytes()
    rows = []
    for number, line in enumerate(io.StringIO(raw.decode("ascii")), start=1):
        line = line.strip()
        if not line:
            continue
        values = [int(float(v)) for v in line.split(",")]
        if len(values) != SIDE * SIDE + 1:
            sys.exit(f"{source}: line {number} has {len(values)} fields, expected {SIDE * SIDE + 1}")
        rows.append(values)
    return rows


def write_idx(rows: list[list[int]], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    images = bytearray(struct.pack(">IIII", 0x0803, len(rows), SIDE, SIDE))
    labels = bytearray(struct.pack(">II", 0x0801, len(rows)))
    for values in rows:
        images.extend(bytes(values[:-1]))
        labels.append(values[-1])
    (out / "train-images-idx3-ubyte").write_bytes(images)
    (out / "train-labels-idx1-ubyte").write_bytes(labels)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--mnist", type=Path, required=True, help="mlxtend wheel or mnist_5k.csv[.gz]")
    parser.add_argument("--out", type=Path, default=Path("data"))
    args = parser.parse_args()
    rows = read_rows(args.mnist)
    write_idx(rows, args.out)
    print(f"wrote {len(rows)} images to {args.out}")
    if not (args.out / "hour.csv").exists():
        print(f"note: {args.out / 'hour.csv'} is absent; bike experiments need it")


if __name__ == "__main__":
    main()
