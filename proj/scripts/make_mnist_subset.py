#!/usr/bin/env python3
"""Build IDX-format MNIST files from the digit subset shipped in the npm `mnist` package.

The package stores 10,000 MNIST digits as per-class JSON arrays of pixel
intensities quantized to 1/255 steps. Each class is split deterministically:
the first 80% of its samples go to the training files, the rest to the test
files. Output uses the canonical MNIST file names so the loader treats the
result exactly like the original distribution.

    python3 scripts/make_mnist_subset.py --out data/mnist
    python3 scripts/make_mnist_subset.py --package /path/to/unpacked/package --out data/mnist
"""

import argparse
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 28


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tarball = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tarball) as tf:
        tf.extractall(workdir)
    return workdir / "package"


def write_idx(out: pathlib.Path, prefix: str, samples):
    images = bytearray(struct.pack(">IIII", IMAGE_MAGIC, len(samples), SIDE, SIDE))
    labels = bytearray(struct.pack(">II", LABEL_MAGIC, len(samples)))
    for label, pixels in samples:
        images.extend(pixels)
        labels.append(label)
    (out / f"{prefix}-images-idx3-ubyte").write_bytes(bytes(images))
    (out / f"{prefix}-labels-idx1-ubyte").write_bytes(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--package", type=pathlib.Path, help="unpacked npm package dir")
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    ap.add_argument("--train-fraction", type=float, default=0.8)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package or fetch_package(pathlib.Path(tmp))
        train, test = [], []
        for digit in range(10):
            values = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
            count = len(values) // (SIDE * SIDE)
            cut = int(round(count * args.train_fraction))
            for i in range(count):
                chunk = values[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
                pixels = bytes(min(255, max(0, round(v * 255))) for v in chunk)
                (train if i < cut else test).append((digit, pixels))

    # interleave classes so that file order is not sorted by label
    def interleave(samples):
        by_class = [[s for s in samples if s[0] == d] for d in range(10)]
        out, idx = [], 0
        while any(by_class):
            bucket = by_class[idx % 10]
            if bucket:
                out.append(bucket.pop(0))
            idx += 1
        return out

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out, "train", interleave(train))
    write_idx(args.out, "t10k", interleave(test))
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")


if __name__ == "__main__":
    main()
