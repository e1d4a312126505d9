"""Standalone decoder for replacement-cache spill files (no package imports).

Each record is little-endian int32: instance_id, n, n positions, n token ids.

    python scripts/decode_cache.py runs/sas/cache/epoch_002.bin --instance 7
"""
import argparse
import struct


def decode(path):
    with open(path, "rb") as f:
        raw = f.read()
    off = 0
    records = {}
    while off < len(raw):
        iid, n = struct.unpack("<ii", raw[off:off + 8])
        off += 8
        pos = list(struct.unpack(f"<{n}i", raw[off:off + 4 * n]))
        off += 4 * n
        ids = list(struct.unpack(f"<{n}i", raw[off:off + 4 * n]))
        off += 4 * n
        records[iid] = list(zip(pos, ids))
    return records


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("path")
    ap.add_argument("--instance", type=int)
    a = ap.parse_args()
    recs = decode(a.path)
    for iid in sorted(recs) if a.instance is None else [a.instance]:
        for p, t in recs[iid]:
            print(f"{iid}\t{p}\t{t}")
