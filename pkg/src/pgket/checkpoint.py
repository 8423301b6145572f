"""PGKT checkpoint stream.

Layout (little-endian)::

    b"PGKT" | version:u8 | record*
    record  = length:u32 | name_len:u16 | name:utf-8 | ndim:u8 | dims:u64*ndim | data:f64*prod(dims)

``length`` counts the bytes after itself.  Mesh angles are stored as one
``(count, 5)`` tensor per layer with rows ``(layer, mode_k, mode_l, theta, phi)``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .kernel import MeshParams

MAGIC = b"PGKT"
VERSION = 1


def write_checkpoint(path, tensors):
    chunks = [MAGIC, bytes([VERSION])]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        body = (struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", arr.ndim)
                + struct.pack(f"<{arr.ndim}Q", *arr.shape) + arr.tobytes())
        chunks.append(struct.pack("<I", len(body)) + body)
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a PGKT checkpoint", 0)
    if len(raw) < 5 or raw[4] != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version", 4)
    out, pos = {}, 5
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise FormatError(f"{path}: truncated record length", pos)
        (length,) = struct.unpack_from("<I", raw, pos)
        start, end = pos + 4, pos + 4 + length
        if end > len(raw):
            raise FormatError(f"{path}: record overruns file", pos)
        try:
            (name_len,) = struct.unpack_from("<H", raw, start)
            cur = start + 2
            name = raw[cur:cur + name_len].decode("utf-8")
            cur += name_len
            ndim = raw[cur]
            cur += 1
            dims = struct.unpack_from(f"<{ndim}Q", raw, cur)
            cur += 8 * ndim
        except (struct.error, IndexError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: malformed record header ({exc})", pos) from exc
        count = int(np.prod(dims)) if ndim else 1
        if cur + 8 * count != end:
            raise FormatError(f"{path}: record '{name}' payload size mismatch", cur)
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=cur).reshape(dims).astype(np.float64)
        pos = end
    return out


def mesh_to_records(mesh):
    return np.array([[ell, k, l, th, ph] for ell, (k, l), th, ph in mesh.records()]).reshape(-1, 5)


def mesh_from_records(num_modes, table):
    recs = [(int(r[0]), (int(r[1]), int(r[2])), r[3], r[4]) for r in np.asarray(table)]
    return MeshParams.from_records(num_modes, recs)


def model_tensors(model):
    """Parameter tensors of an encoder with mesh angles folded into record tables."""
    out = {}
    for name, value in model.params.items():
        if name.endswith("mesh.phi"):
            continue
        if name.endswith("mesh.theta"):
            layer = int(name[len("layer"):name.index(".")])
            out[name[: -len(".theta")]] = mesh_to_records(model.mesh(layer))
        else:
            out[name] = value
    return out


def params_from_tensors(tensors):
    params = {}
    for name, value in tensors.items():
        if name.endswith(".mesh"):
            params[name + ".theta"] = np.ascontiguousarray(value[:, 3])
            params[name + ".phi"] = np.ascontiguousarray(value[:, 4])
        else:
            params[name] = value
    return params


def save_model(path, model):
    write_checkpoint(path, model_tensors(model))


def load_params(path):
    return params_from_tensors(read_checkpoint(path))
