"""Fetch MNIST and Fashion-MNIST through the npm registry and write gzipped IDX files.

Usage: python scripts/fetch_data.py [OUT_DIR]   (default: ./data)

MNIST comes from the ``mnist-data`` package, which ships the original IDX
files. Fashion-MNIST comes from the ``fashion-mnist`` package, which ships
per-class JSON arrays; the first 6000 images of each class become the train
split, the remainder the test split, both shuffled with a fixed seed.
"""

import gzip
import json
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np


def _npm_pack(name, workdir):
    out = subprocess.run(["npm", "pack", name], cwd=workdir, check=True,
                         capture_output=True, text=True).stdout.strip().splitlines()[-1]
    with tarfile.open(Path(workdir) / out) as tar:
        tar.extractall(Path(workdir) / name)
    return Path(workdir) / name / "package"


def _write_idx(path, images, labels):
    n, rows, cols = images.shape
    with gzip.open(f"{path}-images-idx3-ubyte.gz", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())
    with gzip.open(f"{path}-labels-idx1-ubyte.gz", "wb") as fh:
        fh.write(struct.pack(">II", 0x801, n))
        fh.write(labels.astype(np.uint8).tobytes())


def main(out_dir="data"):
    out = Path(out_dir)
    with tempfile.TemporaryDirectory() as tmp:
        mnist = _npm_pack("mnist-data", tmp)
        (out / "mnist").mkdir(parents=True, exist_ok=True)
        for f in sorted((mnist / "data").glob("*-ubyte")):
            with open(f, "rb") as src, gzip.open(out / "mnist" / (f.name + ".gz"), "wb") as dst:
                shutil.copyfileobj(src, dst)

        fashion = _npm_pack("fashion-mnist", tmp)
        train_x, train_y, test_x, test_y = [], [], [], []
        for label in range(10):
            rows = json.loads((fashion / "src" / "clothes" / f"{label}.json").read_text())["data"]
            # class 0 carries two empty placeholder rows
            data = np.asarray([r for r in rows if len(r) == 784], dtype=np.uint8).reshape(-1, 28, 28)
            train_x.append(data[:6000])
            test_x.append(data[6000:])
            train_y.append(np.full(len(data[:6000]), label))
            test_y.append(np.full(len(data[6000:]), label))
        rng = np.random.default_rng(0)
        (out / "fashion").mkdir(parents=True, exist_ok=True)
        for split, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
            x, y = np.concatenate(xs), np.concatenate(ys)
            order = rng.permutation(len(x))
            _write_idx(out / "fashion" / split, x[order], y[order])
    print(f"wrote datasets under {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])
