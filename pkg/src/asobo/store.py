"""Deterministic tensor container.

A zip archive holding one ``.npy`` member per named array plus a ``meta.json``
member. Member timestamps are pinned so identical content gives identical bytes.
"""

import hashlib
import io
import json
import zipfile

import numpy as np

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_tensors(path, arrays, meta=None, kind="tensors"):
    """Write ``arrays`` (name -> ndarray) and ``meta`` (JSON-able dict) to ``path``."""
    header = {"format": "asobo", "kind": kind, "version": FORMAT_VERSION,
              "arrays": sorted(arrays), "meta": meta or {}}
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_member("meta.json"), json.dumps(header, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(_member(name + ".npy"), buf.getvalue())


def load_tensors(path, kind=None):
    """Inverse of :func:`save_tensors`; returns ``(arrays, meta)``."""
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("meta.json"))
        if header.get("format") != "asobo":
            raise ValueError(f"{path}: not an asobo tensor container")
        if header["version"] > FORMAT_VERSION:
            raise ValueError(f"{path}: container version {header['version']} is newer than supported")
        if kind is not None and header["kind"] != kind:
            raise ValueError(f"{path}: expected a {kind!r} container, found {header['kind']!r}")
        arrays = {}
        for name in header["arrays"]:
            with zf.open(name + ".npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return arrays, header["meta"]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
