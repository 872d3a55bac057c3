#!/usr/bin/env python3
"""Golden DFD1 frames built with struct straight from the frame layout.

Writes tests/golden/protocol_frames.json. Digests are sha256 of short ASCII
labels so the C++ side can rebuild each message.
"""
import hashlib
import json
import os
import struct
import sys


def frame(msg_type, body):
    return b"DFD1" + struct.pack("<BI", msg_type, len(body)) + body


def dig(label):
    return hashlib.sha256(label.encode()).digest()


def bitmap(flags):
    out = bytearray((len(flags) + 7) // 8)
    for i, f in enumerate(flags):
        if f:
            out[i // 8] |= 1 << (i % 8)
    return bytes(out)


def main():
    payload = bytes(range(256)) * 3
    manifest = b'{"case_id":"c"}'
    cases = [
        ("hello", {"version": 1}, frame(1, struct.pack("<H", 1))),
        ("hello_v2", {"version": 2}, frame(1, struct.pack("<H", 2))),
        ("hello_ack", {"version": 1}, frame(2, struct.pack("<H", 1))),
        ("check3", {"digests": ["a", "b", "c"]},
         frame(3, struct.pack("<H", 3) + dig("a") + dig("b") + dig("c"))),
        ("check0", {"digests": []}, frame(3, struct.pack("<H", 0))),
        ("check_resp", {"flags": [1, 0, 1, 1, 0, 0, 0, 0, 1, 1]},
         frame(4, bitmap([1, 0, 1, 1, 0, 0, 0, 0, 1, 1]))),
        ("put", {"digest": "payload", "payload_hex": payload.hex()},
         frame(5, dig("payload") + struct.pack("<Q", len(payload)) + payload)),
        ("put_ack_stored", {"status": 0}, frame(6, bytes([0]))),
        ("put_ack_present", {"status": 1}, frame(6, bytes([1]))),
        ("put_ack_mismatch", {"status": 2}, frame(6, bytes([2]))),
        ("manifest_commit", {"text": manifest.decode()}, frame(7, manifest)),
        ("manifest_ack", {"digest": "m"}, frame(8, dig("m"))),
        ("get", {"digest": "g"}, frame(9, dig("g"))),
        ("data", {"payload_hex": payload.hex()}, frame(10, struct.pack("<Q", len(payload)) + payload)),
        ("get_manifest", {"digest": "m"}, frame(11, dig("m"))),
        ("manifest_doc", {"text": manifest.decode()}, frame(12, manifest)),
        ("stats_req", {}, frame(13, b"")),
        ("stats_resp", {"values": [1, 2, 3, 2**40 + 5]},
         frame(14, struct.pack("<4Q", 1, 2, 3, 2**40 + 5))),
        ("error", {"code": 16, "text": "no blob"},
         frame(15, struct.pack("<HH", 16, 7) + b"no blob")),
    ]
    out = [{"name": n, "fields": f, "hex": b.hex()} for n, f, b in cases]
    target = os.path.join(os.path.dirname(__file__), "..", "golden", "protocol_frames.json")
    with open(sys.argv[1] if len(sys.argv) > 1 else target, "w") as fh:
        json.dump(out, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
