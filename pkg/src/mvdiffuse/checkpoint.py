"""Versioned npz checkpoint container.

One format serves plain network snapshots and full optimizer state: a
metadata JSON blob under a reserved key plus named float tensors. JSON
round-trips Python ints and repr-exact floats, npz round-trips arrays
bit for bit, so save followed by load reproduces a state exactly.

Files are written through zipfile directly rather than np.savez so the
member timestamps are pinned to the zip epoch; identical states produce
byte-identical files no matter when they are saved.
"""

import io
import json
import zipfile

import numpy as np

from .errors import ConfigError, DataError

CONTAINER_VERSION = 1
META_KEY = "__meta__"


def save_container(path, meta, tensors):
    """Write tensors plus a JSON metadata record to an npz file.

    meta must be JSON-serializable and not contain the key "version";
    tensor names must not collide with the reserved metadata key.
    """
    if META_KEY in tensors:
        raise ConfigError(f"tensor name {META_KEY!r} is reserved")
    record = {"version": CONTAINER_VERSION}
    record.update(meta)
    blob = np.frombuffer(json.dumps(record, sort_keys=True).encode("utf-8"),
                         dtype=np.uint8)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in {META_KEY: blob, **tensors}.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arr),
                                      allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy"), buf.getvalue())


def load_container(path):
    """Read back (meta, tensors). Rejects unknown container versions."""
    with np.load(path) as z:
        if META_KEY not in z.files:
            raise DataError(f"{path}: not a checkpoint container (no metadata)")
        meta = json.loads(bytes(z[META_KEY]).decode("utf-8"))
        tensors = {k: z[k] for k in z.files if k != META_KEY}
    version = meta.get("version")
    if version != CONTAINER_VERSION:
        raise DataError(
            f"{path}: container version {version} not supported "
            f"(expected {CONTAINER_VERSION})")
    return meta, tensors


def check_config_match(meta, expected, keys):
    """Compare selected config entries; mismatch names every bad key."""
    stored = meta.get("config", {})
    bad = [k for k in keys if stored.get(k) != expected.get(k)]
    if bad:
        detail = ", ".join(
            f"{k}: checkpoint={stored.get(k)!r} requested={expected.get(k)!r}"
            for k in bad)
        raise ConfigError(f"checkpoint config mismatch: {detail}")
