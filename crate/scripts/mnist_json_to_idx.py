#!/usr/bin/env python3
"""Convert the per-digit JSON files shipped by the `mnist` npm package into IDX files.

Usage: mnist_json_to_idx.py <digits_json_dir> <out_dir> [digit ...]

Pixel intensities in the JSON files are byte/255 rounded to three decimals;
they are mapped back to bytes with round(255 * v).
"""
import json
import struct
import sys
from pathlib import Path


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    digits = [int(d) for d in sys.argv[3:]] or list(range(10))
    out.mkdir(parents=True, exist_ok=True)
    pixels, labels = bytearray(), bytearray()
    for d in digits:
        data = json.loads((src / f"{d}.json").read_text())["data"]
        assert len(data) % 784 == 0
        pixels.extend(min(255, max(0, round(v * 255))) for v in data)
        labels.extend([d] * (len(data) // 784))
    count = len(labels)
    tag = "".join(map(str, digits)) if len(digits) < 10 else "all"
    (out / f"mnist-{tag}-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 2051, count, 28, 28) + bytes(pixels))
    (out / f"mnist-{tag}-labels-idx1-ubyte").write_bytes(struct.pack(">II", 2049, count) + bytes(labels))
    print(f"wrote {count} images to {out}")


if __name__ == "__main__":
    main()
