"""Convert the digit subset shipped in the `mnist` npm package (v1.1.0) into
gzip-compressed IDX files.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/npm_mnist_to_idx.py package/src/digits data/mnist-10k

Pixels are stored in the package as byte/255 rounded to three decimals, so
rounding back to bytes is lossless. Samples are interleaved with a fixed
shuffle so that any prefix is roughly class balanced.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

src, dst = Path(sys.argv[1]), Path(sys.argv[2])
samples = []
for digit in range(10):
    flat = json.loads((src / f"{digit}.json").read_text())["data"]
    for i in range(len(flat) // 784):
        pixels = bytes(round(v * 255) for v in flat[i * 784:(i + 1) * 784])
        samples.append((pixels, digit))
random.Random(20190101).shuffle(samples)

dst.mkdir(parents=True, exist_ok=True)
with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
    f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
    for pixels, _ in samples:
        f.write(pixels)
with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
    f.write(struct.pack(">II", 0x801, len(samples)))
    f.write(bytes(label for _, label in samples))
