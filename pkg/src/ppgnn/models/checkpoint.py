"""PPGM parameter checkpoints.

Little-endian layout::

    "PPGM" | version u32 | kind u8 | config_len u32 | config (JSON, utf-8)
    | num_tensors u32
    | per tensor: name_len u16, name, ndim u8, dims u32 * ndim
    | float32 blobs, in table order
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import DataError

MAGIC = b"PPGM"
VERSION = 1
KIND_CODES = {"sgc": 0, "sign": 1, "hoga": 2}


def save_checkpoint(model, path) -> None:
    cfg = json.dumps(model.config(), sort_keys=True).encode()
    out = [MAGIC, struct.pack("<IBI", VERSION, KIND_CODES[model.kind], len(cfg)), cfg,
           struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
    for arr in model.params.values():
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_checkpoint(path):
    from . import MODEL_CLASSES

    with open(path, "rb") as fh:
        data = fh.read()
    try:
        if data[:4] != MAGIC:
            raise DataError(f"{path}: not a PPGM checkpoint")
        version, kind_code, cfg_len = struct.unpack_from("<IBI", data, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported PPGM version {version}")
        pos = 13
        cfg = json.loads(data[pos:pos + cfg_len])
        pos += cfg_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        table = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + nlen].decode()
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
            pos += 1 + 4 * ndim
            table.append((name, shape))
        params = {}
        for name, shape in table:
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            params[name] = arr.astype(np.float32)
            pos += 4 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes after tensor data")
    kind = {v: k for k, v in KIND_CODES.items()}.get(kind_code)
    if kind is None:
        raise DataError(f"{path}: unknown model kind code {kind_code}")
    model = MODEL_CLASSES[kind](**cfg)
    if set(params) != set(model.params) or any(
        params[k].shape != model.params[k].shape for k in params
    ):
        raise DataError(f"{path}: tensor table does not match a {kind} model")
    model.params = {k: params[k] for k in model.params}
    return model
