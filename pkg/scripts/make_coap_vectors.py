#!/usr/bin/env python3
"""Regenerate tests/vectors/coap_golden.json from the bit-level oracle.

The oracle in tests/oracles.py builds datagrams field by field and never
touches vsn.wirecodec, so these bytes are an independent reference.
Run with --check to compare against the committed file instead of writing.
"""

import argparse
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import coap_bits, uint_bytes  # noqa: E402

OUT = ROOT / "tests" / "vectors" / "coap_golden.json"

# name, type, code, message id, token, uri path, content format, payload, note
CASES = [
    ("bare-get", 0, 1, 0x1234, "", [], None, "", "header only"),
    ("post-senml", 0, 2, 1, "0102", ["agents", "a1"], 110, "5b5d", "two path segments and CF 110"),
    ("ack-content-json", 2, 69, 0xBEEF, "deadbeef", [], 50, "7b7d", "piggybacked response"),
    ("cf-zero", 0, 3, 7, "", ["x"], 0, "01", "zero-length uint option value"),
    ("long-segment", 0, 1, 0x1234, "", ["abcdefghijklmnopqrst"], None, "", "one-byte length extension"),
    ("segment-269", 0, 2, 0xFFFF, "09", ["s" * 300], None, "7a", "two-byte length extension"),
    ("created-empty", 2, 65, 2, "0001020304050607", [], None, "", "8-byte token"),
    ("not-found", 2, 132, 3, "01", [], None, "", "4.04"),
]


def build() -> list[dict]:
    out = []
    for name, mtype, code, mid, token, path, cf, payload, note in CASES:
        opts = [(11, s.encode()) for s in path]
        if cf is not None:
            opts.append((12, uint_bytes(cf)))
        data = coap_bits(mtype, code, mid, bytes.fromhex(token), opts, bytes.fromhex(payload))
        out.append({"name": name, "hex": data.hex(), "type": mtype, "code": code, "message_id": mid,
                    "token": token, "uri_path": path, "content_format": cf, "payload": payload,
                    "note": note})
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args(argv)
    vectors = build()
    if args.check:
        same = json.loads(OUT.read_text()) == vectors
        print("vectors match the oracle" if same else "vectors differ from the oracle")
        return 0 if same else 1
    OUT.write_text(json.dumps(vectors, indent=1) + "\n")
    print(f"wrote {len(vectors)} vectors to {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
