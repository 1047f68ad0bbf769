"""Deterministic seed derivation.

All randomness in the harness flows from one root seed through named
sub-streams: the stream seed is the first 8 bytes of
SHA-256(b"<root>:<name>") as an unsigned big-endian integer. Per-item
streams (clouds, attack victims, restarts) put the item index in the name.
"""

import hashlib


def derive(root: int, name: str) -> int:
    digest = hashlib.sha256(f"{root}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
