"""Shared on-disk container: JSON manifest + concatenated float32 arrays.

Layout: 8-byte magic, little-endian u64 manifest length, UTF-8 JSON manifest,
then every array back to back as little-endian float32. The manifest records
each array's name, shape, and byte offset into the payload, plus whatever
extra metadata the caller supplies. The total length is checked on load so a
truncated file fails loudly instead of loading partially.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, IntegrityError

MAGIC = b"CLEPACK1"
FORMAT_VERSION = 1


def write_arrays(path, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({
            "name": name,
            "shape": list(data.shape),
            "offset": len(payload),
        })
        payload += data.tobytes()
    manifest = {"format_version": FORMAT_VERSION, "arrays": entries,
                "payload_bytes": len(payload)}
    if extra:
        manifest.update(extra)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(bytes(payload))


def read_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path} is not a recognized array container")
    (manifest_len,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + manifest_len
    if len(raw) < header_end:
        raise IntegrityError(f"{path} is truncated inside the manifest")
    try:
        manifest = json.loads(raw[len(MAGIC) + 8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path} has an unreadable manifest: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path} has format version {version}, expected {FORMAT_VERSION}")
    expected = header_end + manifest.get("payload_bytes", 0)
    if len(raw) != expected:
        raise IntegrityError(
            f"{path} has {len(raw)} bytes, manifest requires {expected}")
    payload = raw[header_end:]
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise IntegrityError(f"array {entry['name']} overruns the payload")
        arrays[entry["name"]] = np.frombuffer(
            payload[start:end], dtype="<f4").reshape(shape).copy()
    return manifest, arrays
